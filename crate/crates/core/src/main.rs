fn main() {
    std::process::exit(mobilabel::cli::run(std::env::args_os()));
}
