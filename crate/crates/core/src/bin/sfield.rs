use env_logger::Env;

fn main() {
    env_logger::Builder::from_env(Env::new().filter_or("SFIELD_LOG", "warn")).init();
    std::process::exit(sfield::cli::main_with_args(std::env::args_os()));
}
