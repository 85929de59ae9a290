fn main() {
    let mut stdout = std::io::stdout();
    let code = verse::cli::main_with(std::env::args_os(), &mut stdout);
    std::process::exit(code);
}
