fn main() {
    std::process::exit(attrmanip::cli::main());
}
