fn main() {
    std::process::exit(ppi_affinity_cli::run(std::env::args_os()));
}
