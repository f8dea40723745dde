fn main() {
    std::process::exit(stratlearn::cli::run_command(std::env::args_os()));
}
