fn main() {
    std::process::exit(hemslab::cli::main_with_args(std::env::args_os()));
}
