fn main() {
    top_cli::init_logging();
    let code = top_cli::run(std::env::args_os(), &mut std::io::stdout().lock());
    std::process::exit(code);
}
