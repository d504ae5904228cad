fn main() {
    std::process::exit(sfrnn::cli::run(std::env::args_os()));
}
