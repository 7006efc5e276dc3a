fn main() {
    std::process::exit(varalloc_cli::run(std::env::args_os()));
}
