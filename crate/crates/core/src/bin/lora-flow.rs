fn main() -> std::process::ExitCode {
    lora_flow::cli::main()
}
