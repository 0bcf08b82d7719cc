//! Experiment orchestration: build problem instances per seed, run every
//! configured method on each, and summarise sweeps.

pub mod config;
pub mod csv;

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;

pub use config::{ExperimentConfig, MethodKind, MethodSpec, ProblemSpec, StepsizeMode, StopSpec};
pub use csv::{emit_csv, format_trace, parse_trace, read_trace, trace_file_name, ParsedTrace};

use crate::algorithm::{reference_solution, run, solve, AlgorithmState, Reference, RunTrace, StepParams, StopRule, Variant};
use crate::baselines::{Extra, ExtraConfig, Mm, MmConfig};
use crate::error::{Error, Result};
use crate::graph::{build_topology, spectral_gap, Network, Topology};
use crate::objective::{load_libsvm, partition, synthetic_binary_dataset, Dataset, ObjectiveSet};
use crate::stepsize::{certify, random_search, tuned_stepsize, Coupling, CertifyOptions, SearchConfig};

/// One problem realisation: graph, objectives and the optimal pair.
#[derive(Debug, Clone)]
pub struct Instance {
    pub seed: u64,
    /// Network with `B = A'A`.
    pub net: Network,
    pub obj: ObjectiveSet,
    pub reference: Reference,
}

/// Builds the instance for `seed`. Random topologies and random problem data
/// are both derived from `problem.seed + seed`.
pub fn build_instance(problem: &ProblemSpec, topology: &Topology, seed: u64, dataset: Option<&Dataset>) -> Result<Instance> {
    let n = problem.n();
    let (obj, effective) = match problem {
        ProblemSpec::Quadratic { coef_range, offset_range, seed: base, .. } => {
            let s = base.wrapping_add(seed);
            (ObjectiveSet::random_quadratic(n, *coef_range, *offset_range, s)?, s)
        }
        ProblemSpec::Logistic { kappa, seed: base, samples, features, .. } => {
            let s = base.wrapping_add(seed);
            let owned;
            let ds = match dataset {
                Some(ds) => ds,
                None => {
                    owned = synthetic_binary_dataset(*samples, *features, s);
                    &owned
                }
            };
            let parts = partition(ds, n, s)?;
            (ObjectiveSet::logistic(ds, &parts, *kappa)?, s)
        }
    };
    let graph = build_topology(&topology.with_seed(topology_seed(topology).wrapping_add(effective)), n)?;
    let net = Network::new(graph, 1.0)?;
    let reference = reference_solution(&net, &obj)?;
    Ok(Instance { seed, net, obj, reference })
}

fn topology_seed(t: &Topology) -> u64 {
    match t {
        Topology::KRegular { seed, .. } | Topology::ErdosRenyi { seed, .. } => *seed,
        _ => 0,
    }
}

/// Loads the dataset named by a logistic problem, if any.
pub fn load_dataset(problem: &ProblemSpec) -> Result<Option<Dataset>> {
    match problem {
        ProblemSpec::Logistic { dataset_path: Some(p), features, .. } => Ok(Some(load_libsvm(p, Some(*features))?)),
        _ => Ok(None),
    }
}

#[derive(Debug)]
pub struct RunRecord {
    /// Position of the method in the config's `variants` list.
    pub spec_index: usize,
    pub method: String,
    pub kind: MethodKind,
    pub t: usize,
    pub seed: u64,
    /// True for certificate-mode runs, whose failures are invariant violations.
    pub certified: bool,
    pub outcome: Result<RunTrace>,
}

impl RunRecord {
    pub fn iterations(&self) -> Option<usize> {
        self.outcome.as_ref().ok().and_then(|t| t.converged_at)
    }
}

fn variant_of(kind: MethodKind) -> Option<Variant> {
    match kind {
        MethodKind::F => Some(Variant::F),
        MethodKind::G => Some(Variant::G),
        MethodKind::C => Some(Variant::C),
        _ => None,
    }
}

fn search_config(mode: &StepsizeMode, cfg: &ExperimentConfig) -> SearchConfig {
    let StepsizeMode::Tuned { budget, seed, tol, max_iters, alpha_range, beta_range, alpha_units, coupling } = mode else {
        unreachable!("only called for tuned mode")
    };
    let d = SearchConfig::default();
    SearchConfig {
        budget: *budget,
        seed: *seed,
        tol: tol.unwrap_or(cfg.stop.epsilon),
        max_iters: max_iters.unwrap_or(cfg.stop.max_iters),
        alpha_range: alpha_range.unwrap_or(d.alpha_range),
        beta_range: beta_range.unwrap_or(d.beta_range),
        alpha_units: *alpha_units,
        coupling: *coupling,
        ..d
    }
}

/// Runs a single method on a single instance.
pub fn run_method(spec: &MethodSpec, inst: &Instance, cfg: &ExperimentConfig) -> Result<RunTrace> {
    let scale = match spec.penalty_rho_over_m {
        Some(f) => f * inst.obj.constants().0 / inst.net.rho_ata(),
        None => spec.penalty_scale.unwrap_or(cfg.penalty_scale),
    };
    let base = if scale == 1.0 { inst.net.clone() } else { inst.net.rescaled(scale)? };
    let obj = &inst.obj;
    let n = base.n();
    let x0 = DMatrix::zeros(n, obj.p());
    let stop = StopRule {
        record_every: cfg.record_every,
        monotone_check: false,
        ..StopRule::relative(cfg.stop.epsilon, cfg.stop.max_iters)
    };
    let mut meta: Vec<(String, String)> = vec![
        ("seed".into(), inst.seed.to_string()),
        ("topology".into(), base.graph().topology().name()),
        ("n".into(), n.to_string()),
        ("config".into(), cfg.to_json()),
    ];
    let mut trace = match (variant_of(spec.method), &spec.stepsize) {
        (Some(v), StepsizeMode::Certificate { options }) => {
            let cert = certify(v, &base, obj, spec.t, options)?;
            let net = cert.network(&base)?;
            meta.push(("certificate".into(), cert.to_kv()));
            let stop = StopRule { monotone_check: cert.admissible, ..stop };
            solve(v, &net, obj, cert.params(), x0, &stop, Some(&inst.reference))?
        }
        (Some(v), mode @ StepsizeMode::Tuned { .. }) => {
            let sc = search_config(mode, cfg);
            let opts = CertifyOptions { coupling: sc.coupling, ..CertifyOptions::default() };
            let cert = certify(v, &base, obj, spec.t, &opts).ok().map(|c| (c.alpha, c.beta));
            let tuned = tuned_stepsize(v, &base, obj, spec.t, &sc, &inst.reference, cert)?;
            meta.push(("tuned".into(), format!("alpha = {:e}\nbeta = {:e}\nfrom_certificate = {}", tuned.alpha, tuned.beta, tuned.from_certificate)));
            let net = match sc.coupling {
                Coupling::Tied => base.rescaled(tuned.beta)?,
                Coupling::Fixed => base,
            };
            solve(v, &net, obj, StepParams::new(tuned.alpha, tuned.beta, spec.t)?, x0, &stop, Some(&inst.reference))?
        }
        (Some(v), StepsizeMode::Fixed { alpha, beta }) => {
            solve(v, &base, obj, StepParams::new(*alpha, *beta, spec.t)?, x0, &stop, Some(&inst.reference))?
        }
        (None, mode) if spec.method == MethodKind::Extra => {
            let alpha = match mode {
                StepsizeMode::Fixed { alpha, .. } => *alpha,
                StepsizeMode::Tuned { .. } => {
                    let sc = SearchConfig { beta_range: (1.0, 1.0), ..search_config(mode, cfg) }.resolved(obj.constants().1);
                    let tuned = random_search(&sc, None, |a, _, cap| {
                        let cfg = ExtraConfig::new(&base, a).ok()?;
                        let mut m = Extra::new(cfg, obj);
                        let st = StopRule { record_every: usize::MAX, ..StopRule::relative(sc.tol, cap) };
                        run(&mut m, AlgorithmState::new(x0.clone(), base.edge_count()), &base, obj, &st, Some(&inst.reference))
                            .ok()?
                            .converged_at
                    })?;
                    meta.push(("tuned".into(), format!("alpha = {:e}", tuned.alpha)));
                    tuned.alpha
                }
                StepsizeMode::Certificate { .. } => unreachable!("rejected by validation"),
            };
            meta.push(("alpha".into(), format!("{alpha:e}")));
            let mut m = Extra::new(ExtraConfig::new(&base, alpha)?, obj);
            run(&mut m, AlgorithmState::new(x0, base.edge_count()), &base, obj, &stop, Some(&inst.reference))?
        }
        (None, mode) => {
            let StepsizeMode::Fixed { beta, .. } = mode else {
                return Err(Error::Config("MM takes a fixed beta".into()));
            };
            let mm_cfg = MmConfig { exact_quadratic: true, ..MmConfig::new(*beta, spec.inner_tol, 1_000_000)? };
            meta.push(("beta".into(), format!("{beta:e}")));
            let mut m = Mm::new(mm_cfg, &base, obj);
            run(&mut m, AlgorithmState::new(x0, base.edge_count()), &base, obj, &stop, Some(&inst.reference))?
        }
    };
    trace.metadata[0] = ("method".into(), spec.label());
    trace.metadata.extend(meta);
    if !trace.metadata.iter().any(|(k, _)| k == "x_star") {
        trace.metadata.push(("x_star".into(), inst.reference.provenance.clone()));
    }
    Ok(trace)
}

/// One trace per `(variant, seed)`, ordered by variant then seed.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    let dataset = load_dataset(&cfg.problem)?;
    let instances: Vec<Instance> = cfg
        .seeds
        .par_iter()
        .map(|&s| build_instance(&cfg.problem, &cfg.topology, s, dataset.as_ref()))
        .collect::<Result<_>>()?;
    Ok(run_on_instances(cfg, &instances))
}

fn run_on_instances(cfg: &ExperimentConfig, instances: &[Instance]) -> Vec<RunRecord> {
    let jobs: Vec<(usize, &Instance)> = (0..cfg.variants.len()).flat_map(|v| instances.iter().map(move |i| (v, i))).collect();
    jobs.par_iter()
        .map(|&(v, inst)| {
            let spec = &cfg.variants[v];
            RunRecord {
                spec_index: v,
                method: spec.label(),
                kind: spec.method,
                t: spec.t,
                seed: inst.seed,
                certified: matches!(spec.stepsize, StepsizeMode::Certificate { .. }),
                outcome: run_method(spec, inst, cfg),
            }
        })
        .collect()
}

/// Writes every successful trace into `dir`, returning the paths written.
pub fn emit_all(records: &[RunRecord], dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut out = Vec::new();
    for r in records {
        if let Ok(trace) = &r.outcome {
            let path = dir.join(trace_file_name(r.kind.label(), r.t, r.seed));
            emit_csv(trace, &path)?;
            out.push(path);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    /// Topology name or network size.
    pub label: String,
    pub n: usize,
    /// Mean spectral gap of the consensus matrix over the seeds.
    pub spectral_gap: f64,
    pub method: String,
    pub t: usize,
    /// Mean outer iterations to reach epsilon, over converged runs.
    pub mean_iterations: f64,
    /// Mean communication rounds per agent.
    pub mean_comm_rounds: f64,
    /// Mean total communications, rounds times agents.
    pub mean_communications: f64,
    pub converged: usize,
    pub failed: usize,
}

fn summarise(cfg: &ExperimentConfig, records: &[RunRecord], label: &str, n: usize, gap: f64) -> Vec<SweepRow> {
    (0..cfg.variants.len())
        .map(|v| {
            let mut its = Vec::new();
            let mut comms = Vec::new();
            let mut failed = 0;
            for r in records.iter().filter(|r| r.spec_index == v) {
                match (&r.outcome, r.iterations()) {
                    (Ok(tr), Some(it)) => {
                        its.push(it as f64);
                        comms.push(tr.final_state.comm_rounds as f64);
                    }
                    _ => failed += 1,
                }
            }
            let mean = |v: &[f64]| if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 };
            let spec = &cfg.variants[v];
            SweepRow {
                label: label.to_string(),
                n,
                spectral_gap: gap,
                method: spec.method.label().to_string(),
                t: spec.t,
                mean_iterations: mean(&its),
                mean_comm_rounds: mean(&comms),
                mean_communications: mean(&comms) * n as f64,
                converged: its.len(),
                failed,
            }
        })
        .collect()
}

fn sweep_point(cfg: &ExperimentConfig, dataset: Option<&Dataset>, label: &str) -> Result<Vec<SweepRow>> {
    let instances: Vec<Instance> = cfg
        .seeds
        .par_iter()
        .map(|&s| build_instance(&cfg.problem, &cfg.topology, s, dataset))
        .collect::<Result<_>>()?;
    let gap = if instances.is_empty() {
        f64::NAN
    } else {
        instances.iter().map(|i| spectral_gap(i.net.graph())).sum::<Result<f64>>()? / instances.len() as f64
    };
    let records = run_on_instances(cfg, &instances);
    Ok(summarise(cfg, &records, label, cfg.problem.n(), gap))
}

/// Runs the experiment once per topology (same `n`), one row per topology and method.
pub fn topology_sweep(cfg: &ExperimentConfig, topologies: &[Topology]) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let dataset = load_dataset(&cfg.problem)?;
    let sweep_cfg = ExperimentConfig { record_every: usize::MAX, ..cfg.clone() };
    let mut rows = Vec::new();
    for topo in topologies {
        let c = ExperimentConfig { topology: topo.clone(), ..sweep_cfg.clone() };
        rows.extend(sweep_point(&c, dataset.as_ref(), &topo.name())?);
    }
    Ok(rows)
}

/// Runs the experiment once per network size, one row per size and method.
pub fn size_sweep(cfg: &ExperimentConfig, sizes: &[usize]) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let dataset = load_dataset(&cfg.problem)?;
    let mut rows = Vec::new();
    for &n in sizes {
        let c = ExperimentConfig { problem: cfg.problem.with_n(n), record_every: usize::MAX, ..cfg.clone() };
        c.validate()?;
        rows.extend(sweep_point(&c, dataset.as_ref(), &n.to_string())?);
    }
    Ok(rows)
}

pub const SUMMARY_HEADER: &str =
    "label,n,spectral_gap,method,T,mean_iterations,mean_comm_rounds,mean_communications,converged,failed";

pub fn format_summary(rows: &[SweepRow]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{:.16e},{},{},{:.16e},{:.16e},{:.16e},{},{}",
            r.label,
            r.n,
            r.spectral_gap,
            r.method,
            r.t,
            r.mean_iterations,
            r.mean_comm_rounds,
            r.mean_communications,
            r.converged,
            r.failed
        );
    }
    out
}

/// `values[last] / values[first] < sizes[last] / sizes[first]`.
pub fn grows_sublinearly(sizes: &[usize], values: &[f64]) -> bool {
    match (sizes.first(), sizes.last(), values.first(), values.last()) {
        (Some(&s0), Some(&s1), Some(&v0), Some(&v1)) if s0 > 0 && v0 > 0.0 => v1 / v0 < s1 as f64 / s0 as f64,
        _ => false,
    }
}

/// Smallest and largest ratio of `values[i]` to the best linear fit `c * sizes[i]`,
/// with `c` the geometric mean of `values[i] / sizes[i]`.
pub fn linear_envelope(sizes: &[usize], values: &[f64]) -> (f64, f64) {
    let logs: Vec<f64> = sizes.iter().zip(values).map(|(&s, &v)| (v / s as f64).ln()).collect();
    let c = (logs.iter().sum::<f64>() / logs.len() as f64).exp();
    sizes.iter().zip(values).fold((f64::INFINITY, 0.0_f64), |(lo, hi), (&s, &v)| {
        let r = v / (c * s as f64);
        (lo.min(r), hi.max(r))
    })
}
