fn main() {
    std::process::exit(lca_cli::run(std::env::args_os()));
}
