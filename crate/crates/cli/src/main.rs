fn main() {
    std::process::exit(gpcn_cli::run(std::env::args_os()));
}
