fn main() -> std::process::ExitCode {
    layoutkit::cli::main_from_env()
}
