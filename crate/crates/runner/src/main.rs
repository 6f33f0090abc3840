fn main() {
    std::process::exit(gcalab_runner::cli::run(std::env::args_os()));
}
