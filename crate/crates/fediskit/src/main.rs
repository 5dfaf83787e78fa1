fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let code = fediskit::cli::main_with(
        std::env::args_os(),
        std::env::var_os(fediskit::cli::OUT_ENV),
    );
    std::process::exit(code);
}
