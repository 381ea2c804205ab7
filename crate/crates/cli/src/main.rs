fn main() {
    std::process::exit(spdnorm_cli::commands::main_with_args(std::env::args_os()));
}
