fn main() {
    std::process::exit(hizfo_cli::app::run_app(std::env::args_os()));
}
