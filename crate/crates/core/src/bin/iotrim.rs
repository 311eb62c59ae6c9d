fn main() {
    std::process::exit(iotrim::cli::main_from_args(std::env::args_os()));
}
