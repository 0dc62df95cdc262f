fn main() {
    std::process::exit(divattn_cli::run(std::env::args_os()));
}
