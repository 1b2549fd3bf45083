fn main() {
    std::process::exit(graphwave::cli::main_entry());
}
