fn main() {
    std::process::exit(retarded_ou::cli::main_with(std::env::args_os()));
}
