fn main() {
    std::process::exit(fedbio_cli::cli_entry(std::env::args_os()));
}
