fn main() {
    std::process::exit(stochom::cli::main_with_args(std::env::args_os()));
}
