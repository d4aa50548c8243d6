fn main() {
    std::process::exit(htlstm_cli::run(std::env::args_os()));
}
