//! The FlexPD iterations: T primal gradient steps on the augmented Lagrangian
//! `f(x) + lambda'Ax + x'Bx/2` followed by one dual ascent step.
//!
//! * FlexPD-F refreshes gradients and neighbour values at every inner step.
//! * FlexPD-G refreshes gradients but keeps the penalty term `Bx^k` frozen.
//! * FlexPD-C keeps the gradient `grad f(x^k)` frozen and refreshes neighbours.
//!
//! With `T = 1` the three coincide.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Network;
use crate::linalg;
use crate::objective::ObjectiveSet;

/// Iterates whose largest entry exceeds this magnitude are treated as diverged.
pub const DIVERGENCE_NORM: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    F,
    G,
    C,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Variant::F => "FlexPD-F",
            Variant::G => "FlexPD-G",
            Variant::C => "FlexPD-C",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepParams {
    pub alpha: f64,
    pub beta: f64,
    pub t: usize,
}

impl StepParams {
    pub fn new(alpha: f64, beta: f64, t: usize) -> Result<Self> {
        if t == 0 {
            return Err(Error::InvalidParameter("T must be at least 1".into()));
        }
        if !(alpha > 0.0 && alpha.is_finite()) || !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::InvalidParameter(format!("bad stepsizes alpha={alpha} beta={beta}")));
        }
        Ok(StepParams { alpha, beta, t })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlgorithmState {
    /// Primal iterate, `n x p`.
    pub x: DMatrix<f64>,
    /// Dual iterate, one row per edge, `edges x p`.
    pub lambda: DMatrix<f64>,
    pub k: usize,
    pub grad_evals: u64,
    pub comm_rounds: u64,
}

impl AlgorithmState {
    /// Starts at `x0` with `lambda = 0`.
    pub fn new(x0: DMatrix<f64>, edges: usize) -> Self {
        let p = x0.ncols();
        AlgorithmState { x: x0, lambda: DMatrix::zeros(edges, p), k: 0, grad_evals: 0, comm_rounds: 0 }
    }

    pub fn zeros(net: &Network, p: usize) -> Self {
        Self::new(DMatrix::zeros(net.n(), p), net.edge_count())
    }
}

/// `U = I - alpha B`, `C = sum_{t<T} U^t`, `M = C^{-1} U^T`, `N = (C^{-1} - M) / alpha`.
#[derive(Debug, Clone)]
pub struct DerivedMatrices {
    pub u: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub m: DMatrix<f64>,
    pub n: DMatrix<f64>,
    /// `U^T`, cached for the compact FlexPD-C update.
    pub u_pow: DMatrix<f64>,
}

/// Lower and upper eigenvalue bounds on `M` for a given `alpha * rho(B)` and `T`.
pub fn m_eigen_bounds(alpha_rho_b: f64, t: usize) -> (f64, f64) {
    let r = 1.0 - alpha_rho_b;
    let denom: f64 = (0..t).map(|i| r.powi(i as i32)).sum();
    (r.powi(t as i32) / denom, 1.0 / t as f64)
}

pub fn derived_matrices(net: &Network, alpha: f64, t: usize) -> Result<DerivedMatrices> {
    if t == 0 {
        return Err(Error::InvalidParameter("T must be at least 1".into()));
    }
    if !(alpha > 0.0) || alpha * net.rho_b() >= 1.0 {
        return Err(Error::InvalidParameter(format!(
            "alpha={alpha} must lie in (0, 1/rho(B)) with rho(B)={}",
            net.rho_b()
        )));
    }
    let n = net.n();
    let eye = DMatrix::<f64>::identity(n, n);
    let u = &eye - net.b() * alpha;
    let mut c = DMatrix::zeros(n, n);
    let mut power = eye.clone();
    for _ in 0..t {
        c += &power;
        power = &power * &u;
    }
    let u_pow = power;
    let c_sym = (&c + c.transpose()) * 0.5;
    let c_inv = c_sym
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::InvariantViolation("C is singular".into()))?;
    let m_raw = &c_inv * &u_pow;
    let m = (&m_raw + m_raw.transpose()) * 0.5;
    let n_raw = (&c_inv - &m) / alpha;
    let n_mat = (&n_raw + n_raw.transpose()) * 0.5;

    let (lo, hi) = m_eigen_bounds(alpha * net.rho_b(), t);
    let ev = linalg::symmetric_eigenvalues(&m)?;
    let tol = 1e-10;
    if ev[0] < lo - tol || ev[n - 1] > hi + tol {
        return Err(Error::InvariantViolation(format!(
            "eig(M) in [{}, {}] escapes [{lo}, {hi}]",
            ev[0],
            ev[n - 1]
        )));
    }
    // N divides a difference of O(1) matrices by alpha, so rounding grows like 1/alpha.
    let tol_n = tol + 64.0 * f64::EPSILON * (n * t) as f64 / alpha;
    if linalg::symmetric_eigenvalues(&n_mat)?[0] < -tol_n {
        return Err(Error::InvariantViolation("N is not positive semi-definite".into()));
    }
    Ok(DerivedMatrices { u, c: c_sym, m, n: n_mat, u_pow })
}

pub fn dual_step(lambda: &DMatrix<f64>, x_new: &DMatrix<f64>, net: &Network, beta: f64) -> DMatrix<f64> {
    let mut ax = DMatrix::zeros(net.edge_count(), x_new.ncols());
    net.apply_a(x_new, &mut ax);
    lambda + ax * beta
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResidual {
    /// `||grad f(x) + A' lambda||`
    pub stationarity: f64,
    /// `||A x||`
    pub feasibility: f64,
    /// `||B x||`
    pub penalty_null: f64,
}

pub fn kkt_residual(state: &AlgorithmState, net: &Network, obj: &ObjectiveSet) -> Result<KktResidual> {
    let g = obj.grad(&state.x)?;
    let mut atl = DMatrix::zeros(net.n(), state.x.ncols());
    net.apply_at(&state.lambda, &mut atl);
    let mut ax = DMatrix::zeros(net.edge_count(), state.x.ncols());
    net.apply_a(&state.x, &mut ax);
    Ok(KktResidual {
        stationarity: (g + atl).norm(),
        feasibility: ax.norm(),
        penalty_null: (net.b() * &state.x).norm(),
    })
}

/// Optimal primal-dual pair with `lambda*` in the column space of `A`.
#[derive(Debug, Clone)]
pub struct Reference {
    pub x_star: DMatrix<f64>,
    pub lambda_star: DMatrix<f64>,
    /// Consensus value `x~*` (length p).
    pub consensus: Vec<f64>,
    pub provenance: String,
}

/// Solves `min_z sum_i f_i(z)` centrally, then recovers
/// `lambda* = -(AA')^+ A grad f(x*)`.
pub fn reference_solution(net: &Network, obj: &ObjectiveSet) -> Result<Reference> {
    let p = obj.p();
    let (z, provenance) = match obj.quadratic_optimum() {
        Some(z) => (z, "closed form sum(c_i b_i)/sum(c_i)".to_string()),
        None => centralized_newton(obj)?,
    };
    let x_star = DMatrix::from_fn(obj.n(), p, |_, c| z[c]);
    let g = obj.grad(&x_star)?;
    let aat = net.a() * net.a().transpose();
    let pinv = linalg::pseudo_inverse_psd(&aat)?;
    let lambda_star = -(pinv * (net.a() * g));
    Ok(Reference { x_star, lambda_star, consensus: z, provenance })
}

/// Newton's method on `F(z) = sum_i f_i(z)`, stopped once the gradient
/// stops shrinking or falls below 1e-13.
fn centralized_newton(obj: &ObjectiveSet) -> Result<(Vec<f64>, String)> {
    let p = obj.p();
    let norm = |g: &[f64]| g.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut z = vec![0.0; p];
    let mut g = obj.grad_sum(&z);
    let mut gnorm = norm(&g);
    let mut iters = 0;
    while gnorm > 1e-13 && iters < 100 {
        let h = obj.hessian_sum(&z);
        let dir = h
            .cholesky()
            .ok_or_else(|| Error::InvariantViolation("Hessian of the centralized objective is not PD".into()))?
            .solve(&DVector::from_column_slice(&g));
        // Halve the step until the gradient norm drops.
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial: Vec<f64> = z.iter().zip(dir.iter()).map(|(a, d)| a - step * d).collect();
            let tg = obj.grad_sum(&trial);
            let tn = norm(&tg);
            if tn < gnorm {
                accepted = Some((trial, tg, tn));
                break;
            }
            step *= 0.5;
        }
        let Some((trial, tg, tn)) = accepted else { break };
        z = trial;
        g = tg;
        gnorm = tn;
        iters += 1;
    }
    Ok((z, format!("centralized Newton, {iters} iterations, |grad|={gnorm:.3e}")))
}

/// Weight matrix of the variant-matched Lyapunov function.
#[derive(Debug, Clone)]
pub enum LyapunovWeight {
    /// `U = I - alpha B` (FlexPD-F).
    U(DMatrix<f64>),
    /// `c1 I` with `c1 = 1 + alpha rho(B)` (FlexPD-G).
    Scaled(f64),
    /// `M` (FlexPD-C).
    M(DMatrix<f64>),
}

impl LyapunovWeight {
    pub fn for_variant(variant: Variant, net: &Network, params: &StepParams) -> Result<Self> {
        let n = net.n();
        Ok(match variant {
            Variant::F => LyapunovWeight::U(DMatrix::identity(n, n) - net.b() * params.alpha),
            Variant::G => LyapunovWeight::Scaled(1.0 + params.alpha * net.rho_b()),
            Variant::C => LyapunovWeight::M(derived_matrices(net, params.alpha, params.t)?.m),
        })
    }
}

/// `||x - x*||_W^2 + (alpha/beta) ||lambda - lambda*||^2`.
pub fn lyapunov(state: &AlgorithmState, reference: &Reference, weight: &LyapunovWeight, alpha: f64, beta: f64) -> f64 {
    let dx = &state.x - &reference.x_star;
    let primal = match weight {
        LyapunovWeight::Scaled(c) => c * dx.norm_squared(),
        LyapunovWeight::U(w) | LyapunovWeight::M(w) => (dx.transpose() * w * &dx).trace(),
    };
    let dl = &state.lambda - &reference.lambda_star;
    primal + alpha / beta * dl.norm_squared()
}

/// A stateful iteration that can be driven by [`run`].
pub trait Method {
    fn step(&mut self, state: &mut AlgorithmState) -> Result<()>;
    /// Merit value recorded in traces. `None` when no reference is known.
    fn merit(&self, state: &AlgorithmState, reference: &Reference) -> f64;
    fn label(&self) -> String;
}

/// Advances any FlexPD variant in place with preallocated scratch space.
pub struct PrimalDual<'a> {
    variant: Variant,
    params: StepParams,
    net: &'a Network,
    obj: &'a ObjectiveSet,
    weight: Option<LyapunovWeight>,
    grad: DMatrix<f64>,
    atl: DMatrix<f64>,
    bx: DMatrix<f64>,
    ax: DMatrix<f64>,
}

impl<'a> PrimalDual<'a> {
    pub fn new(variant: Variant, net: &'a Network, obj: &'a ObjectiveSet, params: StepParams) -> Result<Self> {
        if obj.n() != net.n() {
            return Err(Error::Dimension(format!("{} objectives for {} agents", obj.n(), net.n())));
        }
        if params.t == 0 {
            return Err(Error::InvalidParameter("T must be at least 1".into()));
        }
        let (n, p, e) = (net.n(), obj.p(), net.edge_count());
        Ok(PrimalDual {
            variant,
            params,
            net,
            obj,
            weight: None,
            grad: DMatrix::zeros(n, p),
            atl: DMatrix::zeros(n, p),
            bx: DMatrix::zeros(n, p),
            ax: DMatrix::zeros(e, p),
        })
    }

    /// Caches the Lyapunov weight so that [`Method::merit`] is cheap.
    pub fn with_lyapunov(mut self) -> Result<Self> {
        self.weight = Some(LyapunovWeight::for_variant(self.variant, self.net, &self.params)?);
        Ok(self)
    }

    fn primal(&mut self, x: &mut DMatrix<f64>) {
        let alpha = self.params.alpha;
        match self.variant {
            Variant::F => {
                for _ in 0..self.params.t {
                    self.obj.grad_into(x, &mut self.grad);
                    self.net.apply_b(x, &mut self.bx);
                    for ((xi, g), (a, bxi)) in x.iter_mut().zip(self.grad.iter()).zip(self.atl.iter().zip(self.bx.iter())) {
                        *xi -= alpha * (g + a + bxi);
                    }
                }
            }
            Variant::G => {
                self.net.apply_b(x, &mut self.bx);
                for _ in 0..self.params.t {
                    self.obj.grad_into(x, &mut self.grad);
                    for ((xi, g), (a, bxi)) in x.iter_mut().zip(self.grad.iter()).zip(self.atl.iter().zip(self.bx.iter())) {
                        *xi -= alpha * (g + a + bxi);
                    }
                }
            }
            Variant::C => {
                self.obj.grad_into(x, &mut self.grad);
                for _ in 0..self.params.t {
                    self.net.apply_b(x, &mut self.bx);
                    for ((xi, g), (a, bxi)) in x.iter_mut().zip(self.grad.iter()).zip(self.atl.iter().zip(self.bx.iter())) {
                        *xi -= alpha * (g + a + bxi);
                    }
                }
            }
        }
    }
}

pub(crate) fn check_finite(x: &DMatrix<f64>, iteration: usize) -> Result<()> {
    let mut worst = 0.0_f64;
    for v in x.iter() {
        if !v.is_finite() {
            return Err(Error::Divergence { iteration, detail: "non-finite iterate".into() });
        }
        worst = worst.max(v.abs());
    }
    if worst > DIVERGENCE_NORM {
        return Err(Error::Divergence { iteration, detail: format!("iterate magnitude {worst:.3e}") });
    }
    Ok(())
}

impl Method for PrimalDual<'_> {
    fn step(&mut self, state: &mut AlgorithmState) -> Result<()> {
        self.net.apply_at(&state.lambda, &mut self.atl);
        self.primal(&mut state.x);
        self.net.apply_a(&state.x, &mut self.ax);
        for (l, a) in state.lambda.iter_mut().zip(self.ax.iter()) {
            *l += self.params.beta * a;
        }
        let (n, t) = (self.net.n() as u64, self.params.t as u64);
        let (grads, comms) = match self.variant {
            Variant::F => (t * n, t),
            Variant::G => (t * n, 1),
            Variant::C => (n, t),
        };
        state.k += 1;
        state.grad_evals += grads;
        state.comm_rounds += comms;
        check_finite(&state.x, state.k)?;
        check_finite(&state.lambda, state.k)
    }

    fn merit(&self, state: &AlgorithmState, reference: &Reference) -> f64 {
        match &self.weight {
            Some(w) => lyapunov(state, reference, w, self.params.alpha, self.params.beta),
            None => f64::NAN,
        }
    }

    fn label(&self) -> String {
        format!("{}(T={})", self.variant, self.params.t)
    }
}

fn one_step(variant: Variant, state: &AlgorithmState, net: &Network, obj: &ObjectiveSet, params: StepParams) -> Result<AlgorithmState> {
    let mut pd = PrimalDual::new(variant, net, obj, params)?;
    let mut next = state.clone();
    pd.step(&mut next)?;
    Ok(next)
}

pub fn flexpd_f_step(state: &AlgorithmState, net: &Network, obj: &ObjectiveSet, params: StepParams) -> Result<AlgorithmState> {
    one_step(Variant::F, state, net, obj, params)
}

/// Rejects networks violating `rho(B) < m`.
pub fn flexpd_g_step(state: &AlgorithmState, net: &Network, obj: &ObjectiveSet, params: StepParams) -> Result<AlgorithmState> {
    let (m, _) = obj.constants();
    if net.rho_b() >= m {
        return Err(Error::ConfigRejected(format!(
            "FlexPD-G needs rho(B) < m, got rho(B)={} and m={m}; rescale B",
            net.rho_b()
        )));
    }
    one_step(Variant::G, state, net, obj, params)
}

pub fn flexpd_c_step(state: &AlgorithmState, net: &Network, obj: &ObjectiveSet, params: StepParams) -> Result<AlgorithmState> {
    one_step(Variant::C, state, net, obj, params)
}

/// FlexPD-C through `x+ = U^T x - alpha C grad f(x) - alpha C A' lambda`.
pub fn flexpd_c_step_compact(
    state: &AlgorithmState,
    net: &Network,
    obj: &ObjectiveSet,
    derived: &DerivedMatrices,
    params: StepParams,
) -> Result<AlgorithmState> {
    let g = obj.grad(&state.x)?;
    let mut atl = DMatrix::zeros(net.n(), state.x.ncols());
    net.apply_at(&state.lambda, &mut atl);
    let x = &derived.u_pow * &state.x - &derived.c * (g + atl) * params.alpha;
    let lambda = dual_step(&state.lambda, &x, net, params.beta);
    let next = AlgorithmState {
        x,
        lambda,
        k: state.k + 1,
        grad_evals: state.grad_evals + net.n() as u64,
        comm_rounds: state.comm_rounds + params.t as u64,
    };
    check_finite(&next.x, next.k)?;
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopCriterion {
    /// `||x^k - x*|| / ||x^0 - x*|| < tol`; needs a reference.
    RelativeError(f64),
    /// `stationarity + feasibility < tol`.
    Kkt(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopRule {
    pub criterion: StopCriterion,
    pub max_iters: usize,
    /// Record one trace row every this many iterations (first and last always kept).
    pub record_every: usize,
    /// Fail when the merit value rises for 10 consecutive iterations.
    pub monotone_check: bool,
}

impl StopRule {
    pub fn relative(tol: f64, max_iters: usize) -> Self {
        StopRule { criterion: StopCriterion::RelativeError(tol), max_iters, record_every: 1, monotone_check: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub k: usize,
    pub rel_error: f64,
    pub lyapunov: f64,
    pub grad_evals: u64,
    pub comm_rounds: u64,
    pub kkt_stat: f64,
    pub kkt_feas: f64,
}

#[derive(Debug, Clone)]
pub struct RunTrace {
    /// Ordered key/value pairs (configuration echo, certificate, reference provenance).
    pub metadata: Vec<(String, String)>,
    pub rows: Vec<TraceRow>,
    /// First iteration at which the stop criterion held.
    pub converged_at: Option<usize>,
    pub final_state: AlgorithmState,
}

impl RunTrace {
    pub fn last(&self) -> &TraceRow {
        self.rows.last().expect("trace always holds the initial row")
    }
}

/// Number of consecutive merit increases tolerated before the run is aborted.
pub const MONOTONE_PATIENCE: usize = 10;

/// Drives `method` from `state` until the stop rule fires.
pub fn run<M: Method>(
    method: &mut M,
    mut state: AlgorithmState,
    net: &Network,
    obj: &ObjectiveSet,
    stop: &StopRule,
    reference: Option<&Reference>,
) -> Result<RunTrace> {
    if matches!(stop.criterion, StopCriterion::RelativeError(_)) && reference.is_none() {
        return Err(Error::InvalidParameter("relative-error stopping needs a reference solution".into()));
    }
    let every = stop.record_every.max(1);
    let e0 = reference.map(|r| (&state.x - &r.x_star).norm());
    let merit0 = reference.map(|r| method.merit(&state, r)).unwrap_or(f64::NAN);
    let row = |state: &AlgorithmState, method: &M, rel: f64| -> Result<TraceRow> {
        let kkt = kkt_residual(state, net, obj)?;
        Ok(TraceRow {
            k: state.k,
            rel_error: rel,
            lyapunov: reference.map(|r| method.merit(state, r)).unwrap_or(f64::NAN),
            grad_evals: state.grad_evals,
            comm_rounds: state.comm_rounds,
            kkt_stat: kkt.stationarity,
            kkt_feas: kkt.feasibility,
        })
    };
    let rel_of = |state: &AlgorithmState| -> f64 {
        match (reference, e0) {
            (Some(r), Some(e0)) if e0 > 0.0 => (&state.x - &r.x_star).norm() / e0,
            (Some(_), Some(_)) => 0.0,
            _ => f64::NAN,
        }
    };
    let done = |state: &AlgorithmState, rel: f64| -> Result<bool> {
        Ok(match stop.criterion {
            StopCriterion::RelativeError(tol) => rel < tol,
            StopCriterion::Kkt(tol) => {
                let kkt = kkt_residual(state, net, obj)?;
                kkt.stationarity + kkt.feasibility < tol
            }
        })
    };

    let mut rows = vec![row(&state, method, rel_of(&state))?];
    let mut converged_at = if done(&state, rel_of(&state))? { Some(0) } else { None };
    let mut prev_merit = merit0;
    let mut rises = 0usize;
    while converged_at.is_none() && state.k < stop.max_iters {
        method.step(&mut state)?;
        let rel = rel_of(&state);
        if stop.monotone_check {
            if let Some(r) = reference {
                let v = method.merit(&state, r);
                if v > prev_merit && v > 1e-12 * merit0 {
                    rises += 1;
                    if rises >= MONOTONE_PATIENCE {
                        return Err(Error::InvariantViolation(format!(
                            "{}: Lyapunov value increased {MONOTONE_PATIENCE} iterations in a row (k={})",
                            method.label(),
                            state.k
                        )));
                    }
                } else {
                    rises = 0;
                }
                prev_merit = v;
            }
        }
        let finished = done(&state, rel)?;
        if finished {
            converged_at = Some(state.k);
        }
        if finished || state.k % every == 0 || state.k == stop.max_iters {
            rows.push(row(&state, method, rel)?);
        }
    }
    Ok(RunTrace {
        metadata: vec![("method".into(), method.label())],
        rows,
        converged_at,
        final_state: state,
    })
}

/// Runs a FlexPD variant from `x0` with `lambda^0 = 0`.
pub fn solve(
    variant: Variant,
    net: &Network,
    obj: &ObjectiveSet,
    params: StepParams,
    x0: DMatrix<f64>,
    stop: &StopRule,
    reference: Option<&Reference>,
) -> Result<RunTrace> {
    if variant == Variant::G {
        let (m, _) = obj.constants();
        if net.rho_b() >= m {
            return Err(Error::ConfigRejected(format!(
                "FlexPD-G needs rho(B) < m, got rho(B)={} and m={m}; rescale B",
                net.rho_b()
            )));
        }
    }
    let mut pd = PrimalDual::new(variant, net, obj, params)?;
    if reference.is_some() && (variant != Variant::C || params.alpha * net.rho_b() < 1.0) {
        pd = pd.with_lyapunov()?;
    }
    let state = AlgorithmState::new(x0, net.edge_count());
    let mut trace = run(&mut pd, state, net, obj, stop, reference)?;
    trace.metadata.push(("alpha".into(), format!("{:e}", params.alpha)));
    trace.metadata.push(("beta".into(), format!("{:e}", params.beta)));
    trace.metadata.push(("T".into(), params.t.to_string()));
    if let Some(r) = reference {
        trace.metadata.push(("x_star".into(), r.provenance.clone()));
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_topology, Topology};
    use approx::assert_relative_eq;

    fn two_agent_problem() -> (Network, ObjectiveSet) {
        let g = build_topology(&Topology::Path, 2).unwrap();
        let net = Network::new(g, 1.0).unwrap();
        let obj = ObjectiveSet::quadratic(vec![1.0, 1.0], DMatrix::from_column_slice(2, 1, &[0.0, 10.0])).unwrap();
        (net, obj)
    }

    #[test]
    fn dual_step_examples() {
        let (net, _) = two_agent_problem();
        let l0 = DMatrix::zeros(1, 1);
        let x = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        assert_eq!(dual_step(&l0, &x, &net, 1.0)[(0, 0)], 1.0);
        assert_eq!(dual_step(&l0, &x, &net, 0.0)[(0, 0)], 0.0);
        let cons = DMatrix::from_element(2, 1, 3.0);
        let l = DMatrix::from_element(1, 1, 2.5);
        assert_eq!(dual_step(&l, &cons, &net, 1.0), l);
    }

    #[test]
    fn derived_matrices_special_cases() {
        let g = build_topology(&Topology::Path, 3).unwrap();
        let net = Network::new(g, 1.0).unwrap();
        let d = derived_matrices(&net, 0.1, 1).unwrap();
        let eye = DMatrix::<f64>::identity(3, 3);
        assert!((&d.c - &eye).norm() < 1e-15);
        assert!((&d.m - (&eye - net.b() * 0.1)).norm() < 1e-14);
        assert!((&d.n - net.b()).norm() < 1e-12);
        assert!(derived_matrices(&net, 0.34, 2).is_err());
    }

    #[test]
    fn kkt_at_optimum_and_consensus() {
        let (net, obj) = two_agent_problem();
        let r = reference_solution(&net, &obj).unwrap();
        let st = AlgorithmState { x: r.x_star.clone(), lambda: r.lambda_star.clone(), k: 0, grad_evals: 0, comm_rounds: 0 };
        let kkt = kkt_residual(&st, &net, &obj).unwrap();
        assert!(kkt.stationarity < 1e-9 && kkt.feasibility < 1e-12 && kkt.penalty_null < 1e-12);
        let st = AlgorithmState::new(DMatrix::from_element(2, 1, 1.0), 1);
        let kkt = kkt_residual(&st, &net, &obj).unwrap();
        assert_eq!(kkt.feasibility, 0.0);
        assert!(kkt.stationarity > 0.0);
    }

    #[test]
    fn lyapunov_definition() {
        let (net, obj) = two_agent_problem();
        let r = reference_solution(&net, &obj).unwrap();
        let mut st = AlgorithmState::new(r.x_star.clone(), 1);
        st.lambda = r.lambda_star.clone();
        let w = LyapunovWeight::Scaled(1.0);
        assert_eq!(lyapunov(&st, &r, &w, 0.1, 0.1), 0.0);
        st.x[(0, 0)] += 2.0;
        assert_relative_eq!(lyapunov(&st, &r, &w, 0.1, 0.1), 4.0, epsilon = 1e-12);
    }

    #[test]
    fn g_step_rejects_large_penalty() {
        let (net, obj) = two_agent_problem();
        // rho(B) = 2 for the 2-path Laplacian, m = 2.
        let st = AlgorithmState::zeros(&net, 1);
        let p = StepParams::new(0.01, 0.1, 2).unwrap();
        assert!(matches!(flexpd_g_step(&st, &net, &obj, p), Err(Error::ConfigRejected(_))));
    }

    #[test]
    fn divergence_is_flagged() {
        let (net, obj) = two_agent_problem();
        let p = StepParams::new(5.0, 1.0, 1).unwrap();
        let r = reference_solution(&net, &obj).unwrap();
        let err = solve(Variant::F, &net, &obj, p, DMatrix::zeros(2, 1), &StopRule::relative(1e-3, 10_000), Some(&r));
        assert!(matches!(err, Err(Error::Divergence { .. })));
    }

    #[test]
    fn zero_iterations_gives_initial_row() {
        let (net, obj) = two_agent_problem();
        let r = reference_solution(&net, &obj).unwrap();
        let p = StepParams::new(0.05, 0.5, 2).unwrap();
        let tr = solve(Variant::C, &net, &obj, p, DMatrix::zeros(2, 1), &StopRule::relative(1e-3, 0), Some(&r)).unwrap();
        assert_eq!(tr.rows.len(), 1);
        assert_eq!(tr.rows[0].k, 0);
        assert_eq!(tr.rows[0].rel_error, 1.0);
    }
}
