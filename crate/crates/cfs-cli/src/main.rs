fn main() {
    std::process::exit(cfs_cli::run_from(std::env::args_os()));
}
