fn main() {
    std::process::exit(infbsde_cli::run(std::env::args_os()));
}
