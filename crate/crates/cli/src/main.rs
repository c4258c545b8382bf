fn main() {
    let argv: Vec<String> = std::env::args().collect();
    std::process::exit(detailnet_cli::run(&argv));
}
