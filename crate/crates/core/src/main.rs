fn main() {
    std::process::exit(causal_pomdp::cli::main_with_args(std::env::args_os()));
}
