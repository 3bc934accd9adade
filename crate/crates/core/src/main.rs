use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use ceres::experiments::{run_subcommand, Knobs, StudyOutput};
use ceres::fixtures;
use ceres::scm::ScmSpec;
use ceres::CeresError;

#[derive(Parser)]
#[command(name = "ceres", version, about = "Causal adjustment and attention-estimator verification studies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Backdoor identity sweep and NWGM gap study
    BackdoorExp(RunArgs),
    /// Front-door identity sweep, mediator robustness and gate contract
    FrontdoorExp(RunArgs),
    /// QP oracles, temperature sweep and isotropic slack
    QpVerify(RunArgs),
    /// Memory-bank weight bounds and convergence rates
    MembankExp(RunArgs),
    /// NWGM exactness conditions
    NwgmGap(RunArgs),
    /// Every study of the acceptance suite
    All(RunArgs),
    /// Write the bundled fixtures
    GenFixtures {
        /// Target directory (defaults to the fixture directory)
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Clone, Default)]
struct RunArgs {
    #[arg(long)]
    seed: Option<u64>,
    /// JSON file with any of the knobs below; flags take precedence
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    /// Descending temperatures, e.g. 1,0.3,0.1
    #[arg(long, value_delimiter = ',')]
    tau_grid: Option<Vec<f64>>,
    #[arg(long)]
    tol: Option<f64>,
    /// Worker threads (default: logical cores)
    #[arg(long)]
    jobs: Option<usize>,
    /// SCM spec JSON added to the identity sweeps and used for robustness
    #[arg(long)]
    spec: Option<PathBuf>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    out: Option<PathBuf>,
    trials: Option<usize>,
    window: Option<usize>,
    kappa: Option<f64>,
    rho: Option<f64>,
    tau_grid: Option<Vec<f64>>,
    tol: Option<f64>,
    jobs: Option<usize>,
    spec: Option<PathBuf>,
}

struct Resolved {
    knobs: Knobs,
    out: PathBuf,
    jobs: usize,
    spec_json: Option<String>,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<CeresError> for Failure {
    fn from(e: CeresError) -> Self {
        match e {
            CeresError::InvalidInput(_) | CeresError::SpecError(_) | CeresError::ParseError(_) => {
                Failure::Usage(e.to_string())
            }
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn resolve(args: RunArgs) -> Result<Resolved, Failure> {
    let file = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
            serde_json::from_str::<FileConfig>(&text)
                .map_err(|e| Failure::Usage(format!("bad config {}: {e}", path.display())))?
        }
        None => FileConfig::default(),
    };
    let defaults = Knobs::default();
    let spec_path = args.spec.or(file.spec);
    let (spec, spec_json) = match &spec_path {
        Some(p) => {
            let spec = ScmSpec::load(p).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?;
            let canonical = spec.to_json_string();
            (Some(spec), Some(canonical))
        }
        None => (None, None),
    };
    let knobs = Knobs {
        seed: args.seed.or(file.seed).unwrap_or(defaults.seed),
        trials: args.trials.or(file.trials),
        window: args.window.or(file.window).unwrap_or(defaults.window),
        kappa: args.kappa.or(file.kappa).unwrap_or(defaults.kappa),
        rho: args.rho.or(file.rho).unwrap_or(defaults.rho),
        tau_grid: args.tau_grid.or(file.tau_grid).unwrap_or(defaults.tau_grid),
        tol: args.tol.or(file.tol).unwrap_or(defaults.tol),
        spec,
    };
    knobs.validate()?;
    Ok(Resolved {
        knobs,
        out: args.out.or(file.out).unwrap_or_else(|| PathBuf::from("ceres-out")),
        jobs: args.jobs.or(file.jobs).unwrap_or(0),
        spec_json,
    })
}

/// Hash of everything that determines the output bytes: the subcommand,
/// the knobs and the canonical form of any supplied spec.
fn config_hash(subcommand: &str, r: &Resolved) -> String {
    let doc = json!({
        "subcommand": subcommand,
        "knobs": r.knobs,
        "spec": r.spec_json,
    });
    let digest = Sha256::digest(doc.to_string().as_bytes());
    hex::encode(&digest[..8])
}

fn write_outputs(dir: &Path, subcommand: &str, hash: &str, r: &Resolved, studies: &[StudyOutput]) -> Result<(), Failure> {
    let io = |e: std::io::Error| Failure::Runtime(format!("{}: {e}", dir.display()));
    std::fs::create_dir_all(dir).map_err(io)?;
    for study in studies {
        for table in &study.tables {
            let path = dir.join(format!("{}.csv", table.name));
            let mut buf = format!("# config_hash={hash} seed={}\n", r.knobs.seed).into_bytes();
            {
                let mut w = csv::Writer::from_writer(&mut buf);
                let csv_err = |e: csv::Error| Failure::Runtime(format!("{}: {e}", path.display()));
                w.write_record(&table.header).map_err(csv_err)?;
                for row in &table.rows {
                    w.write_record(row).map_err(csv_err)?;
                }
                w.flush().map_err(io)?;
            }
            std::fs::write(&path, buf).map_err(io)?;
        }
    }
    let summary = json!({
        "subcommand": subcommand,
        "config_hash": hash,
        "config": r.knobs,
        "spec": r.spec_json.as_ref().map(|_| "supplied"),
        "studies": studies.iter().map(|s| json!({
            "name": s.name,
            "tables": s.tables.iter().map(|t| format!("{}.csv", t.name)).collect::<Vec<_>>(),
            "summary": s.summary,
            "verdicts": s.verdicts,
        })).collect::<Vec<_>>(),
        "passed": studies.iter().all(StudyOutput::passed),
    });
    let mut text = serde_json::to_string_pretty(&summary).map_err(|e| Failure::Runtime(e.to_string()))?;
    text.push('\n');
    std::fs::write(dir.join("summary.json"), text).map_err(io)?;
    Ok(())
}

fn run(subcommand: &str, args: RunArgs) -> Result<bool, Failure> {
    let resolved = resolve(args)?;
    let hash = config_hash(subcommand, &resolved);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(resolved.jobs)
        .build()
        .map_err(|e| Failure::Runtime(e.to_string()))?;
    let start = Instant::now();
    let studies = pool.install(|| run_subcommand(subcommand, &resolved.knobs))?;
    write_outputs(&resolved.out, subcommand, &hash, &resolved, &studies)?;
    let mut passed = true;
    for v in studies.iter().flat_map(|s| &s.verdicts) {
        passed &= v.passed;
        let tag = if v.passed { "PASS" } else { "FAIL" };
        println!("criterion {} ({}): {tag}: {}", v.criterion, v.name, v.detail);
    }
    eprintln!("{subcommand} finished in {:.2?}; outputs in {}", start.elapsed(), resolved.out.display());
    Ok(passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, args) = match cli.command {
        Command::GenFixtures { out } => {
            let dir = out.unwrap_or_else(fixtures::fixture_dir);
            return match fixtures::write_all(&dir) {
                Ok(paths) => {
                    for p in paths {
                        println!("{}", p.display());
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(1)
                }
            };
        }
        Command::BackdoorExp(a) => ("backdoor-exp", a),
        Command::FrontdoorExp(a) => ("frontdoor-exp", a),
        Command::QpVerify(a) => ("qp-verify", a),
        Command::MembankExp(a) => ("membank-exp", a),
        Command::NwgmGap(a) => ("nwgm-gap", a),
        Command::All(a) => ("all", a),
    };
    match run(name, args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
