fn main() {
    std::process::exit(keynav_cli::run(std::env::args_os()));
}
