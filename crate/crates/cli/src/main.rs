fn main() {
    std::process::exit(stn_cli::main_with_args(std::env::args_os()));
}
