fn main() {
    env_logger::init();
    std::process::exit(rsl_core::cli::run(std::env::args_os()));
}
