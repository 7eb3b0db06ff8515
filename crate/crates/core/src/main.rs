fn main() {
    std::process::exit(faceformer::cli::run(std::env::args_os()));
}
