fn main() {
    std::process::exit(fault_engine_cli::run(std::env::args_os()));
}
