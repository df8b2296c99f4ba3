fn main() {
    std::process::exit(huecortex::cli::main_with_args(std::env::args_os()));
}
