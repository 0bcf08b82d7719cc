use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use flexpd::experiments::{
    build_instance, emit_all, format_summary, load_dataset, run_experiment, size_sweep, topology_sweep,
    ExperimentConfig, MethodKind, StepsizeMode,
};
use flexpd::objective::synthetic_binary_dataset;
use flexpd::stepsize::certify;
use flexpd::{Error, Topology, Variant};

#[derive(Parser)]
#[command(name = "flexpd", version, about = "Flexible primal-dual consensus optimisation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment description in JSON.
    #[arg(long)]
    config: PathBuf,
    /// Seed range `a..b` (half-open), replacing the config's seeds.
    #[arg(long)]
    seeds: Option<String>,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured method on every seed and write one CSV trace each.
    Run {
        #[command(flatten)]
        common: Common,
        /// Output directory for traces.
        #[arg(long)]
        out: PathBuf,
    },
    /// Iterations and communications to epsilon across topologies.
    SweepTopology {
        #[command(flatten)]
        common: Common,
        /// Comma-separated list: path, ring, complete, k-regular:K, er:P.
        #[arg(long, default_value = "path,ring,k-regular:4,er:0.3,complete")]
        topologies: String,
        /// Summary CSV; printed to stdout if absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Iterations and communications to epsilon across network sizes.
    SweepSize {
        #[command(flatten)]
        common: Common,
        /// Comma-separated list of network sizes.
        #[arg(long, default_value = "5,10,20,30")]
        sizes: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic binary classification dataset in LIBSVM format.
    SynthDataset {
        #[arg(long, default_value_t = 768)]
        samples: usize,
        #[arg(long, default_value_t = 8)]
        features: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the stepsize certificate of each FlexPD method on the first seed.
    Certify {
        #[command(flatten)]
        common: Common,
    },
}

fn parse_seeds(s: &str) -> Result<Vec<u64>, Error> {
    let (a, b) = s.split_once("..").ok_or_else(|| Error::Config(format!("seed range '{s}' is not of the form a..b")))?;
    let parse = |v: &str| v.trim().parse::<u64>().map_err(|e| Error::Config(format!("seed range '{s}': {e}")));
    Ok((parse(a)?..parse(b)?).collect())
}

fn load(common: &Common) -> Result<ExperimentConfig, Error> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(s) = &common.seeds {
        cfg.seeds = parse_seeds(s)?;
    }
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    Ok(cfg)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) | Error::Parse { .. } => 3,
        Error::Divergence { .. } | Error::InvariantViolation(_) => 2,
        _ => 1,
    }
}

fn write_or_print(out: Option<&PathBuf>, text: &str) -> Result<(), Error> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Run { common, out } => {
            let cfg = load(&common)?;
            let records = run_experiment(&cfg)?;
            let written = emit_all(&records, &out)?;
            let mut code = 0;
            for r in &records {
                match &r.outcome {
                    Ok(t) => match t.converged_at {
                        Some(k) => println!("{} seed {}: converged at iteration {k}", r.method, r.seed),
                        None => println!("{} seed {}: not converged", r.method, r.seed),
                    },
                    Err(e) => {
                        eprintln!("{} seed {}: {e}", r.method, r.seed);
                        if r.certified && matches!(e, Error::Divergence { .. } | Error::InvariantViolation(_)) {
                            code = 2;
                        }
                    }
                }
            }
            println!("wrote {} traces to {}", written.len(), out.display());
            Ok(code)
        }
        Command::SweepTopology { common, topologies, out } => {
            let cfg = load(&common)?;
            let topos = topologies.split(',').map(str::parse::<Topology>).collect::<Result<Vec<_>, _>>()?;
            let rows = topology_sweep(&cfg, &topos)?;
            write_or_print(out.as_ref(), &format_summary(&rows))?;
            Ok(0)
        }
        Command::SweepSize { common, sizes, out } => {
            let cfg = load(&common)?;
            let sizes = sizes
                .split(',')
                .map(|s| s.trim().parse::<usize>().map_err(|e| Error::Config(format!("size '{s}': {e}"))))
                .collect::<Result<Vec<_>, _>>()?;
            let rows = size_sweep(&cfg, &sizes)?;
            write_or_print(out.as_ref(), &format_summary(&rows))?;
            Ok(0)
        }
        Command::SynthDataset { samples, features, seed, out } => {
            std::fs::write(&out, synthetic_binary_dataset(samples, features, seed).to_libsvm())?;
            Ok(0)
        }
        Command::Certify { common } => {
            let cfg = load(&common)?;
            let seed = cfg.seeds.first().copied().unwrap_or(0);
            let dataset = load_dataset(&cfg.problem)?;
            let inst = build_instance(&cfg.problem, &cfg.topology, seed, dataset.as_ref())?;
            for spec in &cfg.variants {
                let variant = match spec.method {
                    MethodKind::F => Variant::F,
                    MethodKind::G => Variant::G,
                    MethodKind::C => Variant::C,
                    MethodKind::Extra | MethodKind::Mm => continue,
                };
                let opts = match &spec.stepsize {
                    StepsizeMode::Certificate { options } => options.clone(),
                    _ => Default::default(),
                };
                println!("[{}]", spec.label());
                match certify(variant, &inst.net, &inst.obj, spec.t, &opts) {
                    Ok(c) => println!("{}", c.to_kv()),
                    Err(e) => println!("# {e}"),
                }
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
