fn main() -> std::process::ExitCode {
    optimas_cli::cli::main()
}
