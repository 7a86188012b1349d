use clap::Parser;

fn main() {
    let cli = funridge::cli::Cli::parse();
    match funridge::cli::run(cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(1);
        }
    }
}
