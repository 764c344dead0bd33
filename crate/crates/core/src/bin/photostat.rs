fn main() {
    std::process::exit(photostat::cli::run(std::env::args_os()));
}
