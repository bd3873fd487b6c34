use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dacomp::harness::{
    load_dataset, mean_final_accuracy, read_results, run_and_write, run_config, summarize, Config, ScheduleChoice, SchemeKind,
    SchemeOutcome,
};
use dacomp::Result;

/// Magnitude-aware augmentation experiments for compressed CNNs.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    /// Experiment file; the built-in desk experiment when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "results")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Magnitude grid search per pruning ratio.
    Grid {
        #[arg(long)]
        model: Option<String>,
        #[arg(long, value_delimiter = ',')]
        ratios: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        magnitudes: Option<Vec<u8>>,
        #[arg(long, value_delimiter = ',')]
        seed: Option<Vec<u64>>,
    },
    /// Iterative pruning under a magnitude schedule.
    Prune {
        /// `decay`, `fixed:M` or `compare`.
        #[arg(long)]
        schedule: Option<ScheduleChoice>,
        #[arg(long, value_delimiter = ',')]
        ratios: Option<Vec<f64>>,
    },
    /// Two-stage scheme comparison.
    Scheme {
        /// Scheme kinds, or a family name: prune, extra, kd.
        #[arg(long, value_delimiter = ',')]
        kind: Option<Vec<String>>,
        #[arg(long = "strong-m")]
        strong_m: Option<u8>,
        #[arg(long = "weak-m")]
        weak_m: Option<u8>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Distillation with teacher-filtered augmentation.
    Distill {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        tau: Option<f64>,
    },
    /// Every section of the config, each into its own subdirectory.
    All,
    /// Summarise an existing results directory.
    Report,
}

fn expand_kinds(names: &[String]) -> Result<Vec<SchemeKind>> {
    let mut kinds = Vec::new();
    for n in names {
        let family: &[&str] = match n.as_str() {
            "prune" => &["prune_inherit", "prune_baseline_b", "prune_baseline_a"],
            "extra" => &["extra_inherit", "extra_baseline_b", "extra_baseline_a"],
            "kd" => &["kd_filtered", "kd_baseline_b", "kd_baseline_a"],
            other => &[other][..],
        };
        for k in family {
            kinds.push(k.parse()?);
        }
    }
    Ok(kinds)
}

fn missing(section: &str) -> dacomp::Error {
    dacomp::Error::Config(format!("config has no [{section}] section"))
}

fn report(out: &Path) -> Result<()> {
    let records = read_results(out)?;
    println!("{:<40} {:>6} {:>8} {:>10} {:>10}", "run", "seed", "ratio", "magnitude", "accuracy");
    for s in summarize(&records) {
        let m = s.magnitude.map(|m| format!("{m:.2}")).unwrap_or_else(|| "-".into());
        println!("{:<40} {:>6} {:>8} {:>10} {:>10.4}", s.run, s.seed, s.pruning_ratio, m, s.final_accuracy);
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::builtin(),
    };
    let specs = match cli.command {
        Command::Report => return report(&cli.out),
        Command::All => {
            for (section, outcomes) in run_config(&cfg, &cli.out)? {
                print_means(&section, &outcomes);
            }
            return Ok(());
        }
        Command::Grid { model, ratios, magnitudes, seed } => {
            let g = cfg.grid.as_mut().ok_or_else(|| missing("grid"))?;
            g.model = model.unwrap_or(std::mem::take(&mut g.model));
            g.ratios = ratios.unwrap_or(std::mem::take(&mut g.ratios));
            g.magnitudes = magnitudes.unwrap_or(std::mem::take(&mut g.magnitudes));
            g.seeds = seed.unwrap_or(std::mem::take(&mut g.seeds));
            cfg.grid_specs()?
        }
        Command::Prune { schedule, ratios } => {
            let p = cfg.prune.as_mut().ok_or_else(|| missing("prune"))?;
            if let Some(r) = ratios {
                p.ratios = r;
            }
            let choice = match schedule {
                Some(c) => c,
                None => p.schedule.parse()?,
            };
            cfg.prune_specs(choice)?
        }
        Command::Scheme { kind, strong_m, weak_m, seeds } => {
            let s = cfg.scheme.as_mut().ok_or_else(|| missing("scheme"))?;
            if let Some(k) = kind {
                s.kinds = expand_kinds(&k)?;
            }
            s.strong_magnitude = strong_m.unwrap_or(s.strong_magnitude);
            s.weak_magnitude = weak_m.unwrap_or(s.weak_magnitude);
            s.seeds = seeds.unwrap_or(std::mem::take(&mut s.seeds));
            cfg.scheme_specs()?
        }
        Command::Distill { n, alpha, beta, tau } => {
            let d = cfg.distill.as_mut().ok_or_else(|| missing("distill"))?;
            d.selection.n = n.unwrap_or(d.selection.n);
            d.selection.alpha = alpha.unwrap_or(d.selection.alpha);
            d.selection.beta = beta.unwrap_or(d.selection.beta);
            d.selection.tau = tau.unwrap_or(d.selection.tau);
            cfg.distill_specs()?
        }
    };
    log::info!("{}: {} runs into {}", cfg.name, specs.len(), cli.out.display());
    let data = load_dataset(&cfg.data)?;
    let outcomes = run_and_write(&specs, &data, &cli.out)?;
    print_means(&cfg.name, &outcomes);
    Ok(())
}

fn print_means(label: &str, outcomes: &[SchemeOutcome]) {
    for (scheme, mean, per_seed) in mean_final_accuracy(outcomes) {
        let seeds: Vec<String> = per_seed.iter().map(|(s, a)| format!("s{s}={a:.4}")).collect();
        println!("{label}: {scheme:<20} mean={mean:.4} {}", seeds.join(" "));
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
