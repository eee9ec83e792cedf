fn main() {
    std::process::exit(hcgr_cli::run(std::env::args_os()));
}
