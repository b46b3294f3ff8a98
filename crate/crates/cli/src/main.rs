fn main() {
    let code = placerank_cli::run(std::env::args_os());
    std::process::exit(code);
}
