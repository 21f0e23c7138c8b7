fn main() {
    std::process::exit(reparam_cli::execute(std::env::args_os()));
}
