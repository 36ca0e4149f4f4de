use clap::Parser;

fn main() {
    let cli = match treeqp::cli::Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Usage problems exit 1; code 2 is reserved for check failures.
            let _ = e.print();
            std::process::exit(if e.use_stderr() { 1 } else { 0 });
        }
    };
    std::process::exit(treeqp::cli::run(cli));
}
