fn main() {
    std::process::exit(extralonger::cli::run(std::env::args_os()));
}
