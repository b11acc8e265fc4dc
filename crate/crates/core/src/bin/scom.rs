fn main() {
    std::process::exit(scom::cli::run(std::env::args_os()));
}
