fn main() {
    std::process::exit(cyclip::cli::cli_main(std::env::args_os()));
}
