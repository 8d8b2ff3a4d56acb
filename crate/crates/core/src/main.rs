fn main() {
    std::process::exit(irtcal::cli::main());
}
