fn main() -> std::process::ExitCode {
    tablesage::cli::main()
}
