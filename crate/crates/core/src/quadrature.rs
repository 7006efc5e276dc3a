//! Globally adaptive 7/15-point Gauss–Kronrod integration on finite intervals.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

#[allow(clippy::excessive_precision)]
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];

#[allow(clippy::excessive_precision)]
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];

// Gauss weights for XGK[1], XGK[3], XGK[5] and the center.
#[allow(clippy::excessive_precision)]
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

#[derive(Debug, Clone, Copy)]
pub struct Integral {
    pub value: f64,
    pub error: f64,
    pub intervals: usize,
}

#[derive(Debug, Clone, Copy)]
struct Panel {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    // Largest error first; ties broken by position for determinism.
    fn cmp(&self, other: &Self) -> Ordering {
        self.error
            .total_cmp(&other.error)
            .then_with(|| other.a.total_cmp(&self.a))
    }
}

fn kronrod15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Panel {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut res_k = fc * WGK[7];
    let mut res_g = fc * WG[3];
    let mut res_abs = res_k.abs();
    let mut fv1 = [0.0; 7];
    let mut fv2 = [0.0; 7];
    for j in 0..7 {
        let dx = half * XGK[j];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        fv1[j] = f1;
        fv2[j] = f2;
        res_k += WGK[j] * (f1 + f2);
        res_abs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            res_g += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = res_k * 0.5;
    let mut res_asc = WGK[7] * (fc - mean).abs();
    for j in 0..7 {
        res_asc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }
    let value = res_k * half;
    let res_abs = res_abs * half.abs();
    let res_asc = res_asc * half.abs();
    let mut error = ((res_k - res_g) * half).abs();
    if res_asc != 0.0 && error != 0.0 {
        error = res_asc * (200.0 * error / res_asc).powf(1.5).min(1.0);
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        error = error.max(50.0 * f64::EPSILON * res_abs);
    }
    Panel { a, b, value, error }
}

/// Integrates `f` over `[points[0], points[last]]`, starting from the panels
/// delimited by `points` (sorted, at least two entries). Stops when the summed
/// error estimate drops to `tol` or `max_panels` is reached.
pub fn integrate<F: Fn(f64) -> f64>(
    f: F,
    points: &[f64],
    tol: f64,
    max_panels: usize,
) -> Result<Integral> {
    debug_assert!(points.len() >= 2);
    debug_assert!(points.windows(2).all(|w| w[0] <= w[1]));
    let mut heap = BinaryHeap::new();
    for w in points.windows(2) {
        if w[1] > w[0] {
            heap.push(kronrod15(&f, w[0], w[1]));
        }
    }
    if heap.is_empty() {
        return Ok(Integral {
            value: 0.0,
            error: 0.0,
            intervals: 0,
        });
    }
    loop {
        let error: f64 = heap.iter().map(|p| p.error).sum();
        let count = heap.len();
        if error <= tol {
            return Ok(finish(heap, error));
        }
        if count >= max_panels {
            let est = finish(heap, error);
            return Err(Error::QuadratureNonConvergence {
                estimate: est.value,
                error_bound: est.error,
                intervals: est.intervals,
            });
        }
        let worst = heap.pop().expect("non-empty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // Panel at floating-point resolution; its error cannot shrink.
            heap.push(worst);
            let est = finish(heap, error);
            return Err(Error::QuadratureNonConvergence {
                estimate: est.value,
                error_bound: est.error,
                intervals: est.intervals,
            });
        }
        heap.push(kronrod15(&f, worst.a, mid));
        heap.push(kronrod15(&f, mid, worst.b));
    }
}

fn finish(heap: BinaryHeap<Panel>, error: f64) -> Integral {
    let mut panels = heap.into_vec();
    // Fixed summation order.
    panels.sort_by(|x, y| x.a.total_cmp(&y.a));
    Integral {
        value: panels.iter().map(|p| p.value).sum(),
        error,
        intervals: panels.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_is_exact_on_one_panel() {
        let r = integrate(|x| x.powi(5) - 3.0 * x * x + 1.0, &[0.0, 2.0], 1e-12, 1).unwrap();
        assert!((r.value - (64.0 / 6.0 - 8.0 + 2.0)).abs() < 1e-12);
    }

    #[test]
    fn gaussian_density_integrates_to_one() {
        let r = integrate(crate::normal::pdf, &[-12.0, 0.0, 12.0], 1e-12, 200).unwrap();
        assert!((r.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kink_is_resolved_adaptively() {
        let r = integrate(|x: f64| (x - 0.3).abs(), &[0.0, 1.0], 1e-10, 500).unwrap();
        assert!((r.value - (0.045 + 0.245)).abs() < 1e-9);
    }

    #[test]
    fn budget_exhaustion_reports_best_estimate() {
        let err = integrate(|x: f64| x.sin() * 1e3, &[0.0, 300.0], 1e-14, 2).unwrap_err();
        match err {
            Error::QuadratureNonConvergence { intervals, .. } => assert_eq!(intervals, 2),
            e => panic!("unexpected {e}"),
        }
    }
}
