fn main() {
    std::process::exit(alignkit_cli::run(std::env::args_os().collect()));
}
