fn main() -> std::process::ExitCode {
    precip_downscale::cli::run_from(std::env::args_os())
}
