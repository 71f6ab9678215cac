fn main() {
    std::process::exit(podtpi_cli::cli::run(std::env::args_os()));
}
