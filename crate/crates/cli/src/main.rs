use clap::Parser;
use phdfit_cli::{run, Args};

fn main() {
    let args = Args::parse();
    match run(&args) {
        Ok(report) => {
            println!(
                "{} rows, mean OSPA {:.3} m, ACC {:.2}",
                report.summary.rows, report.summary.mean_ospa, report.summary.acc
            );
            println!("wrote {} and {}", report.results_path.display(), report.summary_path.display());
        }
        Err(e) => {
            eprintln!("phdfit: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
