fn main() -> std::process::ExitCode {
    treefuse::cli::main()
}
