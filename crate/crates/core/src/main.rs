fn main() {
    std::process::exit(lseg::cli::main_with(std::env::args_os()));
}
