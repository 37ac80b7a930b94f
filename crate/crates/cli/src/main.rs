fn main() {
    std::process::exit(seqdr_cli::cli_main(std::env::args().collect()));
}
