fn main() {
    std::process::exit(ngpm::cli::main());
}
