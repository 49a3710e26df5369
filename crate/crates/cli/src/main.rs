use clap::Parser;

fn main() {
    let cli = m3_cli::Cli::parse();
    if let Err(e) = m3_cli::configure_threads().and_then(|()| m3_cli::run(cli)) {
        eprintln!("m3: {e}");
        std::process::exit(e.exit_code());
    }
}
