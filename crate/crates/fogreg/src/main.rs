fn main() -> std::process::ExitCode {
    fogreg::cli::main()
}
