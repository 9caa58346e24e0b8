fn main() -> std::process::ExitCode {
    ervmix::cli::main()
}
