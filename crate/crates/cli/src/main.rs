fn main() {
    std::process::exit(creativity_cli::commands::run());
}
