//! Reference classifier. Without `--train` it reads `F` lines on stdin and
//! writes `R` lines on stdout; with `--train` it builds a model from one
//! recording per class.

use std::io::{self, BufWriter};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use csiscope::centroid::{load_model, run_classifier, save_model, train_from_recordings};
use csiscope_core::classify::FeatureSpec;

#[derive(Parser)]
#[command(name = "csiscope-centroid", version, about = "Nearest-centroid CSI classifier")]
struct Cli {
    #[arg(long, required_unless_present = "train")]
    model: Option<PathBuf>,
    /// Incoming lines carry phases after the amplitudes.
    #[arg(long)]
    phases: bool,
    /// Train from recordings, one per class in class-id order.
    #[arg(long, requires = "out")]
    train: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Frames per window when training.
    #[arg(long)]
    window: Option<usize>,
    recordings: Vec<PathBuf>,
}

fn run(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    if cli.train {
        if cli.recordings.is_empty() {
            return Err("--train needs at least one recording".into());
        }
        let mut spec = FeatureSpec::default();
        if let Some(w) = cli.window {
            spec.window = w;
        }
        let model = train_from_recordings(&cli.recordings, &spec)?;
        let out = cli.out.expect("clap requires --out");
        save_model(&out, &model)?;
        eprintln!("{} classes: {}", model.n_classes(), model.labels.join(", "));
        return Ok(());
    }
    let model = load_model(cli.model.as_ref().expect("clap requires --model"))?;
    let run = run_classifier(
        &model,
        io::stdin().lock(),
        BufWriter::new(io::stdout().lock()),
        cli.phases,
    )?;
    if run.bad_lines > 0 || run.bad_windows > 0 {
        eprintln!(
            "csiscope-centroid: skipped {} bad lines, {} bad windows",
            run.bad_lines, run.bad_windows
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("csiscope-centroid: {e}");
            ExitCode::FAILURE
        }
    }
}
