fn main() -> std::process::ExitCode {
    signdigit::cli::main()
}
