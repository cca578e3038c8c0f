fn main() {
    std::process::exit(cityadapt::cli::main());
}
