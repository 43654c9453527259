fn main() {
    std::process::exit(multiverse_filter::cli::run(std::env::args_os()));
}
