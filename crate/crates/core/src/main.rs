fn main() {
    std::process::exit(bowden_exo::cli::main_with_args(std::env::args_os()));
}
