fn main() {
    std::process::exit(lsmtune_cli::run(std::env::args_os()));
}
