fn main() {
    std::process::exit(lesion_kit::cli::run(std::env::args_os()));
}
