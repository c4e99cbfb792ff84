use clap::{Parser, Subcommand};
use pvnav::pipeline::{self, FivePoint, PipelineError, RunConfig, RunReport, SimulationSpec, Summary};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Visual localization replay over photovoltaic plant flights.
#[derive(Parser)]
#[command(name = "pvnav", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replay a flight and write frames.csv, summary.json and timings.json.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Generate a synthetic flight directory (log, frames, plant model).
    Simulate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a report directory and print its statistics.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

fn load_spec(path: &Path) -> Result<SimulationSpec, PipelineError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "-".into())
}

fn five(name: &str, f: &Option<FivePoint>) {
    if let Some(f) = f {
        println!(
            "{name:<18} min {:.3}  q1 {:.3}  median {:.3}  q3 {:.3}  max {:.3}",
            f.min, f.q1, f.median, f.q3, f.max
        );
    }
}

fn print_summary(s: &Summary) {
    println!("frames             {}", s.frames);
    match (&s.initialized_at, &s.anchor) {
        (Some(f), Some(a)) => println!("initialized        frame {f} at {a}"),
        _ => println!("initialized        no"),
    }
    println!("detection rate     {:.1} %", s.detection_rate);
    println!("valid PnP          {} ({:.1} %)", s.valid_pnp, s.valid_pnp_pct);
    println!("under th_r         {:.1} % (th_r {:.3} px)", s.under_th_r_pct, s.th_r);
    println!("under th_d         {:.1} %", s.under_th_d_pct);
    println!("median eps_r       {} px", opt(s.median_eps_r));
    println!("mean / P90 eps_d   {} / {} m", opt(s.mean_eps_d), opt(s.p90_eps_d));
    println!("filtered vs truth  mean {} m, P90 {} m", opt(s.mean_err_filtered), opt(s.p90_err_filtered));
    println!("PnP vs truth       mean {} m, P90 {} m", opt(s.mean_err_pnp), opt(s.p90_err_pnp));
    println!("filtered vs GNSS   mean {} m, P90 {} m", opt(s.mean_dev_gnss), opt(s.p90_dev_gnss));
    five("position [m]", &s.position_error);
    five("orientation [rad]", &s.orientation_error);
}

fn print_timings(report: &RunReport) {
    let m = pipeline::time_stages(&report.timings);
    if m.frames > 0 {
        println!(
            "stage means [ms]   detection {:.1}  tracking {:.1}  association {:.2}  PnP {:.2}  filter {:.3}  total {:.1}",
            m.detection, m.tracking, m.association, m.pnp, m.filter, m.total
        );
    }
}

fn execute(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Run { config } => {
            let cfg = RunConfig::load(&config)?;
            let report = pipeline::run(&cfg)?;
            print_summary(&report.summary());
            print_timings(&report);
            println!("report written to {}", cfg.output.display());
        }
        Command::Simulate { spec, out } => {
            let spec = load_spec(&spec)?;
            pipeline::simulate_to_dir(&spec, &out)?;
            println!("flight written to {}", out.display());
        }
        Command::Report { input } => {
            let (report, summary) = RunReport::read(&input)?;
            print_summary(&summary);
            print_timings(&report);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
