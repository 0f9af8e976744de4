fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let stdout = std::io::stdout();
    let code = v2g::cli::run(std::env::args_os(), &mut stdout.lock());
    std::process::exit(code);
}
