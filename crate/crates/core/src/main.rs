fn main() -> std::process::ExitCode {
    agentic_rag::cli::main()
}
