fn main() {
    std::process::exit(fprune_cli::run(std::env::args_os()));
}
