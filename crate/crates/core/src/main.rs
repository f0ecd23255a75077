fn main() -> std::process::ExitCode {
    toneprobe::cli::main()
}
