fn main() -> std::process::ExitCode {
    ehi_cli::run(std::env::args_os())
}
