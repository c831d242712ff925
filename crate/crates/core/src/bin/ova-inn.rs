use clap::Parser;
use ova_inn::cli::{self, Cli, ExitCode};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { ExitCode::Config } else { ExitCode::Success };
            let _ = e.print();
            std::process::exit(code as i32);
        }
    };
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    if let Err(e) = cli::run(&cli, &mut out) {
        eprintln!("error: {e}");
        std::process::exit(e.code as i32);
    }
}
