fn main() {
    std::process::exit(cfdecode::cli::run(std::env::args_os()));
}
