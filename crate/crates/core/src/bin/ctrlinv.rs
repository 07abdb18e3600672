fn main() {
    std::process::exit(ctrlinv::cli::main_with_args(std::env::args_os()));
}
