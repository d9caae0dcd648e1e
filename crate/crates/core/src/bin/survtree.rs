fn main() {
    std::process::exit(survtree::cli::run(std::env::args_os()));
}
