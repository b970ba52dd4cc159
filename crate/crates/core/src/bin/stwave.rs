use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use stwave::forms::{DualStab, PrimalStab};
use stwave::problems::ExampleId;
use stwave::study::{run_adaptive, run_convergence_study, write_adaptive, write_study, StudyManifest};

/// Spacetime finite element reconstruction of 1D waves from interior data:
/// convergence studies and adaptive runs.
#[derive(Debug, Parser)]
#[command(name = "stwave", version)]
struct Cli {
    /// TOML study manifest; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = ["1", "2"])]
    example: Option<String>,
    /// Primal degree (requires --q).
    #[arg(long, requires = "q")]
    p: Option<usize>,
    /// Dual degree (requires --p).
    #[arg(long, requires = "p")]
    q: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    gamma_star: Option<f64>,
    /// Level range `a..b` (inclusive).
    #[arg(long)]
    levels: Option<String>,
    #[arg(long, value_parser = ["residual-jump", "face-only"])]
    stab_primal: Option<String>,
    #[arg(long, value_parser = ["gradient", "residual"])]
    stab_dual: Option<String>,
    /// Run estimator-driven refinement instead of a uniform study.
    #[arg(long)]
    adaptive: bool,
    #[arg(long)]
    cycles: Option<usize>,
    /// Dorfler marking fraction.
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    allow_locking: bool,
    #[arg(long)]
    allow_unstable: bool,
    /// Allow the finest mesh level.
    #[arg(long)]
    deep: bool,
}

fn parse_levels(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once("..").ok_or_else(|| format!("expected a..b, got {s}"))?;
    let a = a.trim().parse().map_err(|e| format!("{a}: {e}"))?;
    let b = b.trim().trim_start_matches('=').parse().map_err(|e| format!("{b}: {e}"))?;
    Ok((a, b))
}

fn manifest(cli: &Cli) -> Result<StudyManifest, String> {
    let mut m = match &cli.config {
        Some(path) => StudyManifest::load(path).map_err(|e| format!("{}: {e}", path.display()))?,
        None => StudyManifest::default(),
    };
    if let Some(e) = &cli.example {
        m.example = ExampleId::from_number(e.parse().unwrap()).map_err(|e| e.to_string())?;
    }
    if let (Some(p), Some(q)) = (cli.p, cli.q) {
        m.pairs = vec![(p, q)];
    }
    if let Some(g) = cli.gamma {
        m.gamma = g;
    }
    if let Some(g) = cli.gamma_star {
        m.gamma_star = g;
    }
    if let Some(l) = &cli.levels {
        m.levels = parse_levels(l)?;
    }
    if let Some(s) = &cli.stab_primal {
        m.stab_primal = if s == "face-only" { PrimalStab::FaceOnly } else { PrimalStab::ResidualJump };
    }
    if let Some(s) = &cli.stab_dual {
        m.stab_dual = if s == "residual" { DualStab::ResidualStyle } else { DualStab::GradientPenalty };
    }
    m.adaptive.enabled |= cli.adaptive;
    if let Some(c) = cli.cycles {
        m.adaptive.cycles = c;
    }
    if let Some(t) = cli.theta {
        m.adaptive.theta = t;
    }
    if let Some(o) = &cli.out {
        m.out_dir = o.clone();
    }
    m.allow_locking |= cli.allow_locking;
    m.allow_unstable |= cli.allow_unstable;
    m.deep |= cli.deep;
    m.validate().map_err(|e| e.to_string())?;
    Ok(m)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let m = match manifest(&cli) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };

    if m.adaptive.enabled {
        let outcome = match run_adaptive(&m) {
            Ok(o) => o,
            Err(e) => {
                eprintln!("error: adaptive run failed: {e}");
                return ExitCode::from(2);
            }
        };
        print!("{}", outcome.csv);
        if let Err(e) = write_adaptive(&outcome, &m.out_dir) {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
        return ExitCode::SUCCESS;
    }

    let outcome = match run_convergence_study(&m) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    for pair in &outcome.pairs {
        println!("# V{} x V{}", pair.p, pair.q);
        print!("{}", pair.csv);
        for (level, msg) in &pair.failures {
            eprintln!("level {level} failed: {msg}");
        }
        for (metric, fit) in &pair.rates {
            println!("# {metric}: tau={:.3} beta={:.3e} r2={:.4}", fit.tau, fit.beta, fit.r2);
        }
    }
    if let Err(e) = write_study(&outcome, m.example, &m.out_dir) {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    if outcome.any_failure() {
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    }
}
