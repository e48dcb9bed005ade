fn main() -> std::process::ExitCode {
    cmdae::cli::main_with_args(std::env::args_os())
}
