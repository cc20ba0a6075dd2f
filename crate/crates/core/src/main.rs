use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cplearn::cli::data::{gaussian_clusters, ClusterSpec, Dataset};
use cplearn::cli::run::{run_train, RunConfig};
use cplearn::cli::verify::{render, verify, Suite};
use cplearn::config::{parse_kv, parse_list, KvEntry};
use cplearn::diagnostics::{collapse_report, DiagnosticsConfig, MC_SAMPLES};
use cplearn::trainer::checkpoint;
use cplearn::trainer::probe::{linear_probe, PROBE_EPOCHS, PROBE_LR};
use cplearn::{Error, Result};

const OUTPUT_DIR_ENV: &str = "CPLEARN_OUTPUT_DIR";

#[derive(Parser)]
#[command(name = "cplearn", version, about = "Collapse-proof non-contrastive representation learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic Gaussian-cluster dataset as CSV.
    GenData {
        #[arg(long, default_value_t = 4)]
        clusters: usize,
        #[arg(long, default_value_t = 16)]
        dim: usize,
        #[arg(long, default_value_t = 250)]
        per_cluster: usize,
        #[arg(long, default_value_t = 0.15)]
        spread: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train, evaluate and write metrics.csv, checkpoint.bin, report.json.
    ///
    /// Settings come from defaults, then the config file, then trailing
    /// `--key value` overrides. The output directory defaults to
    /// $CPLEARN_OUTPUT_DIR when set.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory; wins over the config and the environment.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
        overrides: Vec<String>,
    },
    /// Run the optimum and dictionary self-checks; nonzero exit on failure.
    Verify {
        #[arg(default_value = "all")]
        suite: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Recompute collapse diagnostics for a checkpoint on a dataset.
    Diagnose {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "10,20,50")]
        gmm_grid: String,
        #[arg(long, default_value_t = MC_SAMPLES)]
        mc_samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Linear probe on the backbone representations of a labeled CSV.
    Probe {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = PROBE_EPOCHS)]
        epochs: usize,
        #[arg(long, default_value_t = PROBE_LR)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn parse_overrides(args: &[String]) -> Result<Vec<KvEntry>> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(flag) = it.next() {
        let key = flag.strip_prefix("--").ok_or_else(|| Error::Config {
            location: "command line".into(),
            reason: format!("expected `--key value`, got `{flag}`"),
        })?;
        let (key, value) = match key.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = it.next().ok_or_else(|| Error::Config {
                    location: "command line".into(),
                    reason: format!("`--{key}` needs a value"),
                })?;
                (key.to_string(), v.clone())
            }
        };
        let name = match key.as_str() {
            "out" => "output_dir".to_string(),
            k => k.replace('-', "_"),
        };
        out.push(KvEntry::new(name, value, format!("--{key}")));
    }
    Ok(out)
}

fn train(config: Option<PathBuf>, out: Option<PathBuf>, overrides: &[String]) -> Result<()> {
    let text = match &config {
        Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
        None => String::new(),
    };
    let source = config
        .as_ref()
        .map_or_else(|| "<none>".to_string(), |p| p.display().to_string());
    let mut entries = Vec::new();
    if let Ok(dir) = std::env::var(OUTPUT_DIR_ENV) {
        entries.push(KvEntry::new("output_dir", dir, OUTPUT_DIR_ENV));
    }
    entries.extend(parse_kv(&text, &source)?);
    entries.extend(parse_overrides(overrides)?);
    if let Some(dir) = out {
        entries.push(KvEntry::new("output_dir", dir.display().to_string(), "--out"));
    }
    let cfg = RunConfig::from_sources("", &source, &entries)?;
    let report = run_train(&cfg)?;
    let last = report.epochs.last();
    println!("wrote {}", cfg.output_dir.display());
    if let Some(e) = last {
        println!("final epoch {}: total loss {:.6} (bound {:.6})", e.epoch, e.total, e.lower_bound);
    }
    if let Some(v) = report.nmi {
        println!("nmi {v:.4}");
    }
    if let Some(v) = report.probe_accuracy {
        println!("probe accuracy {v:.4}");
    }
    println!("lemma1 converged: {}", report.lemma1.converged);
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::GenData {
            clusters,
            dim,
            per_cluster,
            spread,
            seed,
            out,
        } => {
            let spec = ClusterSpec {
                clusters,
                dim,
                per_cluster,
                spread,
            };
            let ds = gaussian_clusters(&spec, seed)?;
            ds.save(&out)?;
            println!("wrote {} rows to {}", ds.len(), out.display());
        }
        Command::Train {
            config,
            out,
            overrides,
        } => train(config, out, &overrides)?,
        Command::Verify { suite, seed } => {
            let suite: Suite = suite.parse().map_err(|reason| Error::Config {
                location: "verify".into(),
                reason,
            })?;
            let report = verify(suite, seed)?;
            print!("{}", render(&report));
            if !report.passed() {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Diagnose {
            checkpoint: ckpt,
            data,
            gmm_grid,
            mc_samples,
            seed,
        } => {
            let trainer = checkpoint::load(&ckpt)?;
            let ds = Dataset::load(&data)?;
            let grid = parse_list(&KvEntry::new("gmm_grid", gmm_grid, "--gmm-grid"))?;
            let z = trainer.represent(&ds.features)?;
            let h = trainer.embed(&ds.features)?;
            let p = trainer.probabilities_of(&h)?;
            let cfg = DiagnosticsConfig {
                component_grid: grid,
                mc_samples,
                seed,
                ..DiagnosticsConfig::default()
            };
            let report = collapse_report(&h, &p, &z, &trainer.dictionary, &cfg)?;
            let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Format(e.to_string()))?;
            println!("{json}");
        }
        Command::Probe {
            checkpoint: ckpt,
            data,
            epochs,
            lr,
            seed,
        } => {
            let trainer = checkpoint::load(&ckpt)?;
            let ds = Dataset::load(&data)?;
            let (rows, labels) = ds.labeled();
            let classes = labels.iter().max().map_or(0, |m| m + 1);
            let z = trainer.represent(&ds.features.select_rows(&rows))?;
            let acc = linear_probe(&z, &labels, classes, epochs, lr, seed)?;
            println!("probe accuracy {acc:.4}");
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
