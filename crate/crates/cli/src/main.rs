fn main() {
    std::process::exit(rearr_cli::main_with(std::env::args_os()));
}
