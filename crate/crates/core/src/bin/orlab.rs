fn main() {
    std::process::exit(offline_rl_lab::cli::cli_main(std::env::args()));
}
