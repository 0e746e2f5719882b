fn main() {
    std::process::exit(sac_cli::cli::run(std::env::args_os()));
}
