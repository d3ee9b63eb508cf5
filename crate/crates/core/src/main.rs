fn main() {
    std::process::exit(cmavit::cli::main_with_args(std::env::args_os()));
}
