fn main() {
    std::process::exit(aidledger_node::cli::run(std::env::args_os()));
}
