fn main() {
    std::process::exit(mbs::cli::run(std::env::args_os()));
}
