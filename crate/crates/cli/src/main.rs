fn main() {
    std::process::exit(stgg_cli::app::run(std::env::args_os()));
}
