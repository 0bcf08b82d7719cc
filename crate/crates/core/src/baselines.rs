//! Reference methods: EXTRA and the method of multipliers (MM).

use nalgebra::DMatrix;

use crate::algorithm::{check_finite, AlgorithmState, Method, Reference};
use crate::error::{Error, Result};
use crate::graph::{consensus_matrix, Network};
use crate::linalg;
use crate::objective::{ObjectiveKind, ObjectiveSet};

#[derive(Debug, Clone)]
pub struct ExtraConfig {
    pub w: DMatrix<f64>,
    pub w_tilde: DMatrix<f64>,
    pub alpha: f64,
}

impl ExtraConfig {
    /// `W = I - L / (1 + d_max)`, `W~ = (I + W) / 2`.
    pub fn new(net: &Network, alpha: f64) -> Result<Self> {
        let w = consensus_matrix(net.graph());
        let n = w.nrows();
        let w_tilde = (DMatrix::identity(n, n) + &w) * 0.5;
        Self::with_matrices(w, w_tilde, alpha)
    }

    pub fn with_matrices(w: DMatrix<f64>, w_tilde: DMatrix<f64>, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!("EXTRA stepsize must be positive, got {alpha}")));
        }
        if (&w - w.transpose()).amax() > 1e-12 {
            return Err(Error::InvalidParameter("W must be symmetric".into()));
        }
        for r in 0..w.nrows() {
            if (w.row(r).sum() - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidParameter(format!("row {r} of W does not sum to 1")));
            }
        }
        if linalg::symmetric_eigenvalues(&w_tilde)?[0] <= 0.0 {
            return Err(Error::InvalidParameter("W~ must be positive definite".into()));
        }
        Ok(ExtraConfig { w, w_tilde, alpha })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtraState {
    pub x: DMatrix<f64>,
    /// `(x^{k-1}, grad f(x^{k-1}))`, absent before the first step.
    pub history: Option<(DMatrix<f64>, DMatrix<f64>)>,
    pub k: usize,
    pub grad_evals: u64,
    pub comm_rounds: u64,
}

impl ExtraState {
    pub fn new(x0: DMatrix<f64>) -> Self {
        ExtraState { x: x0, history: None, k: 0, grad_evals: 0, comm_rounds: 0 }
    }
}

/// First step `x1 = W x0 - alpha grad f(x0)`; afterwards
/// `x+ = (I + W) x - W~ x_prev - alpha (grad f(x) - grad f(x_prev))`.
pub fn extra_step(state: &ExtraState, cfg: &ExtraConfig, obj: &ObjectiveSet) -> Result<ExtraState> {
    let g = obj.grad(&state.x)?;
    let wx = &cfg.w * &state.x;
    let x = match &state.history {
        None => wx - &g * cfg.alpha,
        Some((x_prev, g_prev)) => &state.x + wx - &cfg.w_tilde * x_prev - (&g - g_prev) * cfg.alpha,
    };
    check_finite(&x, state.k + 1)?;
    Ok(ExtraState {
        history: Some((state.x.clone(), g)),
        x,
        k: state.k + 1,
        grad_evals: state.grad_evals + obj.n() as u64,
        comm_rounds: state.comm_rounds + 1,
    })
}

/// EXTRA packaged for [`crate::algorithm::run`]; the dual part of the state stays zero.
pub struct Extra<'a> {
    cfg: ExtraConfig,
    obj: &'a ObjectiveSet,
    history: Option<(DMatrix<f64>, DMatrix<f64>)>,
}

impl<'a> Extra<'a> {
    pub fn new(cfg: ExtraConfig, obj: &'a ObjectiveSet) -> Self {
        Extra { cfg, obj, history: None }
    }
}

impl Method for Extra<'_> {
    fn step(&mut self, state: &mut AlgorithmState) -> Result<()> {
        let cur = ExtraState {
            x: std::mem::replace(&mut state.x, DMatrix::zeros(0, 0)),
            history: self.history.take(),
            k: state.k,
            grad_evals: state.grad_evals,
            comm_rounds: state.comm_rounds,
        };
        let next = extra_step(&cur, &self.cfg, self.obj)?;
        state.x = next.x;
        state.k = next.k;
        state.grad_evals = next.grad_evals;
        state.comm_rounds = next.comm_rounds;
        self.history = next.history;
        Ok(())
    }

    /// `||x - x*||^2`
    fn merit(&self, state: &AlgorithmState, reference: &Reference) -> f64 {
        (&state.x - &reference.x_star).norm_squared()
    }

    fn label(&self) -> String {
        "EXTRA".into()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MmConfig {
    pub beta: f64,
    /// Stop the inner solve once `||grad_x L_a|| <= inner_tol`.
    pub inner_tol: f64,
    pub inner_max: usize,
    /// Solve quadratic inner problems by a linear solve instead of gradient descent.
    pub exact_quadratic: bool,
}

impl MmConfig {
    pub fn new(beta: f64, inner_tol: f64, inner_max: usize) -> Result<Self> {
        if !(inner_tol > 0.0) {
            return Err(Error::InvalidParameter(format!("inner_tol must be positive, got {inner_tol}")));
        }
        if !(beta > 0.0) {
            return Err(Error::InvalidParameter(format!("beta must be positive, got {beta}")));
        }
        Ok(MmConfig { beta, inner_tol, inner_max, exact_quadratic: false })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MmReport {
    pub inner_iterations: usize,
    pub grad_norm: f64,
    /// False when `inner_max` was hit before `inner_tol`.
    pub converged: bool,
}

/// `argmin_x f(x) + lambda'Ax + x'Bx/2` for quadratic objectives:
/// `(2 diag(c) + B) x = 2 diag(c) b - A' lambda`.
pub fn mm_inner_exact(net: &Network, obj: &ObjectiveSet, lambda: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let ObjectiveKind::Quadratic(q) = obj.kind() else {
        return Err(Error::InvalidParameter("closed-form inner solve needs a quadratic objective".into()));
    };
    let n = net.n();
    let h = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(n, q.c.iter().map(|c| 2.0 * c))) + net.b();
    let mut rhs = DMatrix::from_fn(n, q.b.ncols(), |i, j| 2.0 * q.c[i] * q.b[(i, j)]);
    rhs -= net.a().transpose() * lambda;
    h.cholesky()
        .map(|ch| ch.solve(&rhs))
        .ok_or_else(|| Error::InvariantViolation("inner Hessian is not positive definite".into()))
}

/// One outer MM iteration: approximately minimise the augmented Lagrangian in
/// `x` from the current iterate, then take the dual ascent step.
pub fn mm_step(state: &AlgorithmState, net: &Network, obj: &ObjectiveSet, cfg: &MmConfig) -> Result<(AlgorithmState, MmReport)> {
    let n = net.n();
    let p = state.x.ncols();
    let mut atl = DMatrix::zeros(n, p);
    net.apply_at(&state.lambda, &mut atl);
    let mut x = state.x.clone();
    let mut g = DMatrix::zeros(n, p);
    let mut bx = DMatrix::zeros(n, p);
    let gradient = |x: &DMatrix<f64>, g: &mut DMatrix<f64>, bx: &mut DMatrix<f64>| {
        obj.grad_into(x, g);
        net.apply_b(x, bx);
        *g += &atl;
        *g += &*bx;
        g.norm()
    };
    let report = if cfg.exact_quadratic && matches!(obj.kind(), ObjectiveKind::Quadratic(_)) {
        x = mm_inner_exact(net, obj, &state.lambda)?;
        let gn = gradient(&x, &mut g, &mut bx);
        MmReport { inner_iterations: 1, grad_norm: gn, converged: true }
    } else {
        let (_, l) = obj.constants();
        let step = 1.0 / (l + net.rho_b());
        let mut gn = gradient(&x, &mut g, &mut bx);
        let mut it = 0;
        while gn > cfg.inner_tol && it < cfg.inner_max {
            x -= &g * step;
            gn = gradient(&x, &mut g, &mut bx);
            it += 1;
        }
        MmReport { inner_iterations: it, grad_norm: gn, converged: gn <= cfg.inner_tol }
    };
    let mut ax = DMatrix::zeros(net.edge_count(), p);
    net.apply_a(&x, &mut ax);
    let lambda = &state.lambda + ax * cfg.beta;
    let inner = report.inner_iterations.max(1) as u64;
    let next = AlgorithmState {
        x,
        lambda,
        k: state.k + 1,
        grad_evals: state.grad_evals + inner * n as u64,
        comm_rounds: state.comm_rounds + inner,
    };
    check_finite(&next.x, next.k)?;
    Ok((next, report))
}

pub struct Mm<'a> {
    cfg: MmConfig,
    net: &'a Network,
    obj: &'a ObjectiveSet,
    pub last_report: Option<MmReport>,
}

impl<'a> Mm<'a> {
    pub fn new(cfg: MmConfig, net: &'a Network, obj: &'a ObjectiveSet) -> Self {
        Mm { cfg, net, obj, last_report: None }
    }
}

impl Method for Mm<'_> {
    fn step(&mut self, state: &mut AlgorithmState) -> Result<()> {
        let (next, report) = mm_step(state, self.net, self.obj, &self.cfg)?;
        *state = next;
        self.last_report = Some(report);
        Ok(())
    }

    /// `||x - x*||^2 + ||lambda - lambda*||^2`
    fn merit(&self, state: &AlgorithmState, reference: &Reference) -> f64 {
        (&state.x - &reference.x_star).norm_squared() + (&state.lambda - &reference.lambda_star).norm_squared()
    }

    fn label(&self) -> String {
        "MM".into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algorithm::{reference_solution, run, StopRule};
    use crate::graph::{build_topology, Topology};

    fn two_agents() -> (Network, ObjectiveSet) {
        let g = build_topology(&Topology::Path, 2).unwrap();
        let net = Network::new(g, 1.0).unwrap();
        let obj = ObjectiveSet::quadratic(vec![1.0, 1.0], DMatrix::from_column_slice(2, 1, &[0.0, 10.0])).unwrap();
        (net, obj)
    }

    #[test]
    fn extra_first_step_with_identity_is_gradient_descent() {
        let (_, obj) = two_agents();
        let cfg = ExtraConfig::with_matrices(DMatrix::identity(2, 2), DMatrix::identity(2, 2), 0.1).unwrap();
        let x0 = DMatrix::from_column_slice(2, 1, &[1.0, 2.0]);
        let next = extra_step(&ExtraState::new(x0.clone()), &cfg, &obj).unwrap();
        let expected = &x0 - obj.grad(&x0).unwrap() * 0.1;
        assert!((next.x - expected).norm() < 1e-15);
    }

    #[test]
    fn extra_converges_on_two_agents() {
        let (net, obj) = two_agents();
        let r = reference_solution(&net, &obj).unwrap();
        let mut m = Extra::new(ExtraConfig::new(&net, 0.2).unwrap(), &obj);
        let tr = run(&mut m, AlgorithmState::zeros(&net, 1), &net, &obj, &StopRule::relative(1e-9, 10_000), Some(&r)).unwrap();
        assert!(tr.converged_at.is_some());
        assert!((&tr.final_state.x - DMatrix::from_element(2, 1, 5.0)).amax() < 1e-6);
    }

    #[test]
    fn mm_gradient_descent_matches_closed_form() {
        let g = build_topology(&Topology::Ring, 5).unwrap();
        let net = Network::new(g, 1.0).unwrap();
        let obj = ObjectiveSet::random_quadratic(5, (1, 10), (1, 100), 4).unwrap();
        let mut st = AlgorithmState::zeros(&net, 1);
        st.lambda = DMatrix::from_fn(5, 1, |i, _| i as f64 - 2.0);
        let cfg = MmConfig::new(1.0, 1e-10, 1_000_000).unwrap();
        let (gd, rep) = mm_step(&st, &net, &obj, &cfg).unwrap();
        assert!(rep.converged);
        let exact = mm_step(&st, &net, &obj, &MmConfig { exact_quadratic: true, ..cfg }).unwrap().0;
        let h = DMatrix::from_diagonal(&nalgebra::DVector::from_fn(5, |i, _| 2.0 * if let ObjectiveKind::Quadratic(q) = obj.kind() { q.c[i] } else { 0.0 })) + net.b();
        let ev = linalg::symmetric_eigenvalues(&h).unwrap();
        let kappa = ev[4] / ev[0];
        assert!((gd.x - exact.x).norm() <= cfg.inner_tol * kappa);
    }

    #[test]
    fn mm_reports_inner_cap() {
        let (net, obj) = two_agents();
        let cfg = MmConfig::new(1.0, 1e-14, 3).unwrap();
        let (next, rep) = mm_step(&AlgorithmState::zeros(&net, 1), &net, &obj, &cfg).unwrap();
        assert!(!rep.converged);
        assert_eq!(rep.inner_iterations, 3);
        assert_eq!(next.k, 1);
    }

    #[test]
    fn mm_outer_loop_converges_quickly() {
        let g = build_topology(&Topology::KRegular { k: 4, seed: 0 }, 10).unwrap();
        let net = Network::new(g, 1.0).unwrap();
        // With beta = 1 the dual contraction degrades with max c; c <= 10 keeps it fast.
        let obj = ObjectiveSet::random_quadratic(10, (1, 10), (1, 100), 9).unwrap();
        let r = reference_solution(&net, &obj).unwrap();
        let cfg = MmConfig { exact_quadratic: true, ..MmConfig::new(1.0, 1e-10, 100_000).unwrap() };
        let mut mm = Mm::new(cfg, &net, &obj);
        let tr = run(&mut mm, AlgorithmState::zeros(&net, 1), &net, &obj, &StopRule::relative(1e-2, 100), Some(&r)).unwrap();
        assert!(tr.converged_at.is_some(), "MM needed more than 100 outer steps");
    }
}
