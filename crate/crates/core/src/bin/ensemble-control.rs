fn main() {
    std::process::exit(ensemble_control::cli::main())
}
