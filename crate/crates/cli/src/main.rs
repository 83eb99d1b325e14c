fn main() {
    std::process::exit(distopt_cli::run(std::env::args_os()));
}
