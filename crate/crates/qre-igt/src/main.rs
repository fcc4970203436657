fn main() {
    std::process::exit(qre_igt::cli::main());
}
