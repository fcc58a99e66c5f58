fn main() {
    std::process::exit(sms_diffusion::cli::main_with_args(std::env::args_os()));
}
