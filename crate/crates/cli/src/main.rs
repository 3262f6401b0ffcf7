use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter("VITSIM_LOG")).init();
    let cli = vitsim::Cli::parse();
    if let Err(e) = vitsim::run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(vitsim::exit_code(&e));
    }
}
