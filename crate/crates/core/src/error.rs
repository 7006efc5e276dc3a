use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument or document violated a documented invariant. `field` names
    /// the offending location, e.g. `means[3]` or `sets[1][0]`.
    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },

    /// Adaptive quadrature ran out of subdivisions before reaching tolerance.
    #[error(
        "quadrature did not converge: best estimate {estimate} with error bound {error_bound:e} \
         after {intervals} subintervals"
    )]
    QuadratureNonConvergence {
        estimate: f64,
        error_bound: f64,
        intervals: usize,
    },

    #[error("covariance factorization failed: {0}")]
    Factorization(String),

    /// A grid enumeration would visit more candidates than its configured budget.
    #[error("{what} requires {required} candidates, budget is {budget}")]
    BudgetExceeded {
        what: &'static str,
        required: u64,
        budget: u64,
    },

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Strips `Context` layers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            e => e,
        }
    }
}
