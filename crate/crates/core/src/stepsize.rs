//! Stepsize certificates: admissible `(alpha, beta)` pairs together with the
//! contraction constants that justify them, plus a random-search tuner.
//!
//! Open bounds `x < b` are realised as `x = frac * b` with `frac = 0.9` by default.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algorithm::{derived_matrices, solve, Reference, StepParams, StopRule, Variant};
use crate::error::{Error, Result};
use crate::graph::Network;
use crate::linalg::{self, golden_section_min};
use crate::objective::ObjectiveSet;

/// How the penalty matrix relates to the dual stepsize.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    /// `B = beta * A'A`; the certificate also fixes the penalty scale.
    #[default]
    Tied,
    /// Use the network's penalty matrix as given.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CertifyOptions {
    /// `eta_1` for F, `eta_4` for C. Defaults to `m`.
    pub eta: Option<f64>,
    pub eta2: Option<f64>,
    pub eta3: Option<f64>,
    pub alpha_frac: f64,
    pub beta_frac: f64,
    /// `delta_tilde = delta_frac * delta`.
    pub delta_frac: f64,
    pub coupling: Coupling,
    /// Use this `beta` instead of the certified one; alpha is still derived
    /// from its own bound. The certificate is then flagged when `beta`
    /// violates its bound.
    pub beta_override: Option<f64>,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        CertifyOptions {
            eta: None,
            eta2: None,
            eta3: None,
            alpha_frac: 0.9,
            beta_frac: 0.9,
            delta_frac: 0.5,
            coupling: Coupling::Tied,
            beta_override: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepsizeCertificate {
    pub variant: Variant,
    pub alpha: f64,
    pub beta: f64,
    pub t: usize,
    /// Free analysis parameters (`eta1`, `eta2`/`eta3`, or `eta4`).
    pub eta: Vec<(String, f64)>,
    pub delta: f64,
    pub delta_tilde: Option<f64>,
    pub gamma: Option<f64>,
    /// Free parameters of the Gamma constant (`p`, or `p_bar`/`q_bar`).
    pub gamma_params: Vec<(String, f64)>,
    pub bounds_used: Vec<Bound>,
    /// `Some(s)` when the certificate requires `B = s * A'A`.
    pub penalty_scale: Option<f64>,
    pub m: f64,
    pub l: f64,
    pub rho_b: f64,
    /// False when an override pushed `beta` outside its certified range.
    pub admissible: bool,
}

impl StepsizeCertificate {
    pub fn params(&self) -> StepParams {
        StepParams { alpha: self.alpha, beta: self.beta, t: self.t }
    }

    /// The network the certificate was computed for.
    pub fn network(&self, net: &Network) -> Result<Network> {
        match self.penalty_scale {
            Some(s) => net.rescaled(s),
            None => Ok(net.clone()),
        }
    }

    /// Human-readable `key = value` block.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "variant = {}", self.variant);
        let _ = writeln!(s, "T = {}", self.t);
        let _ = writeln!(s, "alpha = {:e}", self.alpha);
        let _ = writeln!(s, "beta = {:e}", self.beta);
        let _ = writeln!(s, "admissible = {}", self.admissible);
        let _ = writeln!(s, "m = {:e}", self.m);
        let _ = writeln!(s, "L = {:e}", self.l);
        let _ = writeln!(s, "rho_B = {:e}", self.rho_b);
        if let Some(p) = self.penalty_scale {
            let _ = writeln!(s, "penalty = {p:e} * A'A");
        }
        for (k, v) in &self.eta {
            let _ = writeln!(s, "{k} = {v:e}");
        }
        let _ = writeln!(s, "delta = {:e}", self.delta);
        if let Some(d) = self.delta_tilde {
            let _ = writeln!(s, "delta_tilde = {d:e}");
        }
        if let Some(g) = self.gamma {
            let _ = writeln!(s, "gamma = {g:e}");
        }
        for (k, v) in &self.gamma_params {
            let _ = writeln!(s, "{k} = {v:e}");
        }
        for b in &self.bounds_used {
            let _ = writeln!(s, "bound.{} = {:e}", b.name, b.value);
        }
        s
    }

    fn eta(&self, key: &str) -> f64 {
        self.eta.iter().find(|(k, _)| k == key).map(|(_, v)| *v).unwrap_or(f64::NAN)
    }

    fn gamma_param(&self, key: &str) -> f64 {
        self.gamma_params.iter().find(|(k, _)| k == key).map(|(_, v)| *v).unwrap_or(f64::NAN)
    }

    /// Re-derives every invariant from `net` (with the certified penalty
    /// already applied) and `obj`, independently of how the certificate was built.
    pub fn check(&self, net: &Network, obj: &ObjectiveSet) -> Result<()> {
        let fail = |msg: String| Err(Error::InvariantViolation(format!("{} certificate: {msg}", self.variant)));
        let (m, l) = obj.constants();
        let (rho_a, s, rho_b) = (net.rho_ata(), net.s_aat(), net.rho_b());
        let (alpha, beta, t) = (self.alpha, self.beta, self.t);
        if !(alpha > 0.0 && beta > 0.0) {
            return fail(format!("non-positive stepsizes {alpha}, {beta}"));
        }
        match self.variant {
            Variant::C => {
                let eta4 = self.eta("eta4");
                if !(eta4 > 0.0 && eta4 < 2.0 * m) {
                    return fail(format!("eta4={eta4} outside (0, 2m)"));
                }
                if self.admissible && beta >= (2.0 * m - eta4) / rho_a {
                    return fail("beta bound violated".into());
                }
                if alpha >= c_alpha_bound(l, eta4, rho_b, t) {
                    return fail("alpha bound violated".into());
                }
            }
            Variant::F => {
                let eta1 = self.eta("eta1");
                if !(eta1 > 0.0 && eta1 < 2.0 * m) {
                    return fail(format!("eta1={eta1} outside (0, 2m)"));
                }
                if beta >= (2.0 * m - eta1) / rho_a {
                    return fail("beta bound violated".into());
                }
                if alpha >= 1.0 / (l * l / eta1 + rho_b) {
                    return fail("alpha bound 1 violated".into());
                }
                if t > 1 {
                    let dt = self.delta_tilde.unwrap_or(0.0);
                    let k = FConsts::new(net, obj, eta1, beta);
                    let delta = k.delta(alpha).0;
                    if !(dt > 0.0 && dt < delta) {
                        return fail(format!("delta_tilde={dt} not in (0, {delta})"));
                    }
                    let (b2, b3) = f_tail_bounds(dt, t, l, rho_b, beta, rho_a);
                    if alpha >= b2 || alpha >= b3 {
                        return fail("alpha bound 2 or 3 violated".into());
                    }
                    let g = k.gamma(alpha, self.gamma_param("p"));
                    if !(g >= 1.0 && g.powi(t as i32 - 1) / (1.0 + dt) < 1.0) {
                        return fail(format!("Gamma^(T-1)/(1+delta_tilde) = {} >= 1", g.powi(t as i32 - 1) / (1.0 + dt)));
                    }
                }
            }
            Variant::G => {
                let (eta2, eta3) = (self.eta("eta2"), self.eta("eta3"));
                if rho_b >= m {
                    return fail(format!("rho(B)={rho_b} >= m={m}"));
                }
                if !(eta2 > 0.0 && eta3 > rho_b && eta2 + eta3 < 2.0 * m - rho_b) {
                    return fail(format!("eta2={eta2}, eta3={eta3} outside the admissible region"));
                }
                if beta >= (2.0 * m - eta2 - eta3 - rho_b) / rho_a {
                    return fail("beta bound violated".into());
                }
                if alpha >= eta2 / (l * l) {
                    return fail("alpha bound 1 violated".into());
                }
                if t > 1 {
                    let dt = self.delta_tilde.unwrap_or(0.0);
                    let k = GConsts { m, l, rho_a, s, rho_b, eta2, eta3, beta };
                    let delta = k.delta(alpha).0;
                    if !(dt > 0.0 && dt < delta) {
                        return fail(format!("delta_tilde={dt} not in (0, {delta})"));
                    }
                    if alpha >= g_tail_bounds(dt, t, l, rho_b, beta, rho_a).into_iter().fold(f64::INFINITY, f64::min) {
                        return fail("alpha bounds 2-4 violated".into());
                    }
                    let g = k.gamma(alpha, self.gamma_param("p_bar"), self.gamma_param("q_bar"));
                    if !(g >= 1.0 && g.powi(t as i32 - 1) / (1.0 + dt) < 1.0) {
                        return fail("Gamma^(T-1)/(1+delta_tilde) >= 1".into());
                    }
                }
            }
        }
        Ok(())
    }
}

/// `(1 - (L^2 / (L^2 + eta rho))^(1/T)) / rho`, evaluated without cancellation.
pub fn c_alpha_bound(l: f64, eta4: f64, rho_b: f64, t: usize) -> f64 {
    if rho_b <= 0.0 {
        return f64::INFINITY;
    }
    -(-(eta4 * rho_b / (l * l)).ln_1p() / t as f64).exp_m1() / rho_b
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must lie in (0, 1), got {v}")))
    }
}

fn check_options(opts: &CertifyOptions) -> Result<()> {
    check_unit("alpha_frac", opts.alpha_frac)?;
    check_unit("beta_frac", opts.beta_frac)?;
    check_unit("delta_frac", opts.delta_frac)
}

/// Resolves the penalty spectral radius implied by `beta` under `coupling`.
fn rho_b_for(net: &Network, coupling: Coupling, beta: f64) -> f64 {
    match coupling {
        Coupling::Tied => beta * net.rho_ata(),
        Coupling::Fixed => net.rho_b(),
    }
}

/// Maximises `f` over `x > 1` by golden-section search on `ln(x - 1)`.
fn maximise_above_one<F: FnMut(f64) -> f64>(mut f: F) -> (f64, f64) {
    let (u, v) = golden_section_min(|u| -f(1.0 + u.exp()), -30.0, 30.0, 120);
    (1.0 + u.exp(), -v)
}

fn minimise_above_one<F: FnMut(f64) -> f64>(mut f: F) -> (f64, f64) {
    let (u, v) = golden_section_min(|u| f(1.0 + u.exp()), -30.0, 30.0, 120);
    (1.0 + u.exp(), v)
}

pub fn certify_c(net: &Network, obj: &ObjectiveSet, t: usize, opts: &CertifyOptions) -> Result<StepsizeCertificate> {
    check_options(opts)?;
    if t == 0 {
        return Err(Error::InvalidParameter("T must be at least 1".into()));
    }
    let (m, l) = obj.constants();
    let eta4 = opts.eta.unwrap_or(m);
    if !(eta4 > 0.0 && eta4 < 2.0 * m) {
        return Err(Error::InvalidParameter(format!("eta4={eta4} must lie in (0, 2m) with m={m}")));
    }
    let beta_bound = (2.0 * m - eta4) / net.rho_ata();
    let beta = opts.beta_override.unwrap_or(opts.beta_frac * beta_bound);
    let admissible = beta < beta_bound;
    let rho_b = rho_b_for(net, opts.coupling, beta);
    let alpha_bound = c_alpha_bound(l, eta4, rho_b, t);
    let alpha = opts.alpha_frac * alpha_bound;
    let penalty_scale = (opts.coupling == Coupling::Tied).then_some(beta);
    let cert_net = match penalty_scale {
        Some(s) => net.rescaled(s)?,
        None => net.clone(),
    };
    let delta = delta_c(&cert_net, obj, eta4, alpha, beta, t)?;
    Ok(StepsizeCertificate {
        variant: Variant::C,
        alpha,
        beta,
        t,
        eta: vec![("eta4".into(), eta4)],
        delta,
        delta_tilde: None,
        gamma: None,
        gamma_params: vec![],
        bounds_used: vec![
            Bound { name: "beta".into(), value: beta_bound },
            Bound { name: "alpha".into(), value: alpha_bound },
        ],
        penalty_scale,
        m,
        l,
        rho_b,
        admissible,
    })
}

/// Contraction margin of FlexPD-C, maximised over the free splitting parameter.
fn delta_c(net: &Network, obj: &ObjectiveSet, eta4: f64, alpha: f64, beta: f64, t: usize) -> Result<f64> {
    let (m, l) = obj.constants();
    let (rho_a, s, rho_b) = (net.rho_ata(), net.s_aat(), net.rho_b());
    let d = derived_matrices(net, alpha, t)?;
    let ata = net.a().transpose() * net.a();
    let rho_diff = linalg::spectral_radius_sym(&(ata * beta - &d.n))?;
    let (mu_min, _) = crate::algorithm::m_eigen_bounds(alpha * rho_b, t);
    let tf = t as f64;
    let first = alpha * beta * (mu_min - alpha * l * l / eta4) * s / (1.0 / tf + alpha * l).powi(2);
    let num2 = beta * (2.0 * alpha * m - alpha * eta4 - alpha * beta * rho_a);
    let k2 = alpha / s * (rho_diff + l).powi(2);
    let (_, delta) = maximise_above_one(|dd| {
        let d1 = first / dd;
        let d2 = num2 / (dd / (dd - 1.0) * k2 + beta / tf);
        d1.min(d2)
    });
    Ok(delta)
}

struct FConsts {
    m: f64,
    l: f64,
    rho_a: f64,
    s: f64,
    rho_b: f64,
    /// `rho(beta A'A - B)`
    rho_diff: f64,
    eta1: f64,
    beta: f64,
}

impl FConsts {
    fn new(net: &Network, obj: &ObjectiveSet, eta1: f64, beta: f64) -> Self {
        let (m, l) = obj.constants();
        let ata = net.a().transpose() * net.a();
        let rho_diff = linalg::spectral_radius_sym(&(ata * beta - net.b())).unwrap_or(f64::INFINITY);
        FConsts { m, l, rho_a: net.rho_ata(), s: net.s_aat(), rho_b: net.rho_b(), rho_diff, eta1, beta }
    }

    /// `(delta_F, d)` maximising the smaller of the two margins.
    fn delta(&self, alpha: f64) -> (f64, f64) {
        let FConsts { m, l, rho_a, s, rho_b, rho_diff, eta1, beta } = *self;
        let first = beta * (1.0 - alpha * rho_b - alpha * l * l / eta1) * s / (1.0 + alpha * l).powi(2);
        let num2 = beta * (2.0 * alpha * m - alpha * eta1 - alpha * beta * rho_a);
        let k2 = alpha * alpha * (rho_diff + l).powi(2) / s;
        let tail = beta * (1.0 - alpha * rho_b);
        let (d, delta) = maximise_above_one(|d| (first / d).min(num2 / (d / (d - 1.0) * k2 + tail)));
        (delta, d)
    }

    fn gamma(&self, alpha: f64, p: f64) -> f64 {
        let a = alpha * self.beta * self.rho_a;
        // rho(U) = 1 because B has a null direction; rho(U^{-1}) = 1/(1 - alpha rho(B)).
        let k = (1.0 + alpha * self.l / (1.0 - alpha * self.rho_b).sqrt()).powi(2);
        (1.0 + p * a / (p - 1.0)).max(p * k)
    }

    fn best_gamma(&self, alpha: f64) -> (f64, f64) {
        let (p, g) = minimise_above_one(|p| self.gamma(alpha, p));
        (g, p)
    }
}

fn root_minus_one(base: f64, exponent: f64) -> f64 {
    (base.ln_1p() * exponent).exp_m1()
}

fn f_tail_bounds(dt: f64, t: usize, l: f64, rho_b: f64, beta: f64, rho_a: f64) -> (f64, f64) {
    let half = root_minus_one(dt, 1.0 / (2.0 * (t as f64 - 1.0)));
    let full = root_minus_one(dt, 1.0 / (t as f64 - 1.0));
    (half / (l + rho_b * half), full / (beta * rho_a))
}

fn g_tail_bounds(dt: f64, t: usize, l: f64, rho_b: f64, beta: f64, rho_a: f64) -> [f64; 3] {
    let half = root_minus_one(dt, 1.0 / (2.0 * (t as f64 - 1.0)));
    let full = root_minus_one(dt, 1.0 / (t as f64 - 1.0));
    [half / l, full / (beta * rho_a), if rho_b > 0.0 { full / rho_b } else { f64::INFINITY }]
}

/// Number of candidates tried on the downward alpha grid for T > 1.
const ALPHA_GRID: usize = 400;
const ALPHA_SHRINK: f64 = 0.9;

pub fn certify_f(net: &Network, obj: &ObjectiveSet, t: usize, opts: &CertifyOptions) -> Result<StepsizeCertificate> {
    check_options(opts)?;
    if t == 0 {
        return Err(Error::InvalidParameter("T must be at least 1".into()));
    }
    let (m, l) = obj.constants();
    let eta1 = opts.eta.unwrap_or(m);
    if !(eta1 > 0.0 && eta1 < 2.0 * m) {
        return Err(Error::InvalidParameter(format!("eta1={eta1} must lie in (0, 2m) with m={m}")));
    }
    let beta_bound = (2.0 * m - eta1) / net.rho_ata();
    let beta = opts.beta_override.unwrap_or(opts.beta_frac * beta_bound);
    let penalty_scale = (opts.coupling == Coupling::Tied).then_some(beta);
    let cert_net = match penalty_scale {
        Some(s) => net.rescaled(s)?,
        None => net.clone(),
    };
    let k = FConsts::new(&cert_net, obj, eta1, beta);
    let b1 = 1.0 / (l * l / eta1 + k.rho_b);
    let mut bounds = vec![Bound { name: "beta".into(), value: beta_bound }, Bound { name: "alpha1".into(), value: b1 }];
    let mut cert = StepsizeCertificate {
        variant: Variant::F,
        alpha: opts.alpha_frac * b1,
        beta,
        t,
        eta: vec![("eta1".into(), eta1)],
        delta: 0.0,
        delta_tilde: None,
        gamma: None,
        gamma_params: vec![],
        bounds_used: vec![],
        penalty_scale,
        m,
        l,
        rho_b: k.rho_b,
        admissible: beta < beta_bound,
    };
    if t == 1 {
        let (delta, d) = k.delta(cert.alpha);
        cert.delta = delta;
        cert.gamma_params.push(("d".into(), d));
        cert.bounds_used = bounds;
        return Ok(cert);
    }
    let mut alpha = opts.alpha_frac * b1;
    let mut best_ratio = f64::INFINITY;
    for _ in 0..ALPHA_GRID {
        let (delta, d) = k.delta(alpha);
        if delta > 0.0 {
            let dt = opts.delta_frac * delta;
            let (b2, b3) = f_tail_bounds(dt, t, l, k.rho_b, beta, k.rho_a);
            let (g, p) = k.best_gamma(alpha);
            let ratio = g.powi(t as i32 - 1) / (1.0 + dt);
            best_ratio = best_ratio.min(ratio);
            if alpha <= opts.alpha_frac * b2.min(b3) && ratio < 1.0 {
                bounds.push(Bound { name: "alpha2".into(), value: b2 });
                bounds.push(Bound { name: "alpha3".into(), value: b3 });
                cert.alpha = alpha;
                cert.delta = delta;
                cert.delta_tilde = Some(dt);
                cert.gamma = Some(g);
                cert.gamma_params = vec![("p".into(), p), ("d".into(), d)];
                cert.bounds_used = bounds;
                return Ok(cert);
            }
        }
        alpha *= ALPHA_SHRINK;
    }
    Err(Error::EmptyParameterSet(format!(
        "FlexPD-F with T={t}: no alpha below {b1:.3e} satisfies all bounds; smallest Gamma^(T-1)/(1+delta_tilde) seen was {best_ratio:.6}"
    )))
}

#[derive(Clone, Copy)]
struct GConsts {
    m: f64,
    l: f64,
    rho_a: f64,
    s: f64,
    rho_b: f64,
    eta2: f64,
    eta3: f64,
    beta: f64,
}

impl GConsts {
    /// `(delta_G, d_bar, c_bar)`.
    fn delta(&self, alpha: f64) -> (f64, f64, f64) {
        let GConsts { m, l, rho_a, s, rho_b, eta2, eta3, beta } = *self;
        let e1 = alpha * beta * s * (1.0 - alpha * l * l / eta2) / (1.0 + alpha * l).powi(2);
        let e2 = if rho_b > 0.0 { beta * s * (1.0 - rho_b / eta3) / rho_b } else { f64::INFINITY };
        let num3 = beta * (2.0 * m - (eta2 + eta3) - beta * rho_a - rho_b);
        let k3 = (beta * rho_a + l).powi(2) / s;
        let tail = beta / alpha * (1.0 + alpha * rho_b);
        let eval = |d: f64, c: f64| {
            let d1 = e1 / (d * c);
            let d2 = e2 * (d - 1.0) / d;
            let d3 = num3 / (d * c / (c - 1.0) * k3 + tail);
            d1.min(d2).min(d3)
        };
        let (d, delta) = maximise_above_one(|d| maximise_above_one(|c| eval(d, c)).1);
        let (c, _) = maximise_above_one(|c| eval(d, c));
        (delta, d, c)
    }

    fn gamma(&self, alpha: f64, p: f64, q: f64) -> f64 {
        let g1 = p * (1.0 + alpha * self.l).powi(2);
        let g2 = 1.0 + p * q * alpha * self.beta * self.rho_a / (p - 1.0);
        let g3 = 1.0 + p * q * alpha * self.rho_b / ((p - 1.0) * (q - 1.0));
        g1.max(g2).max(g3)
    }

    /// `(Gamma_G, p_bar, q_bar)` minimised over both free parameters.
    fn best_gamma(&self, alpha: f64) -> (f64, f64, f64) {
        let (p, g) = minimise_above_one(|p| minimise_above_one(|q| self.gamma(alpha, p, q)).1);
        let (q, _) = minimise_above_one(|q| self.gamma(alpha, p, q));
        (g, p, q)
    }
}

/// Resolves `(eta2, eta3)` for a given `rho(B)`; defaults sit mid-range.
fn g_etas(opts: &CertifyOptions, m: f64, rho_b: f64) -> (f64, f64) {
    let eta3 = opts.eta3.unwrap_or(0.5 * (rho_b + 2.0 * m - rho_b));
    let eta2 = opts.eta2.unwrap_or(0.5 * (2.0 * m - rho_b - eta3));
    (eta2, eta3)
}

fn g_feasible(m: f64, rho_a: f64, rho_b: f64, eta2: f64, eta3: f64, beta: f64) -> bool {
    rho_b < m && eta2 > 0.0 && eta3 > rho_b && eta2 + eta3 < 2.0 * m - rho_b && beta < (2.0 * m - eta2 - eta3 - rho_b) / rho_a
}

pub fn certify_g(net: &Network, obj: &ObjectiveSet, t: usize, opts: &CertifyOptions) -> Result<StepsizeCertificate> {
    check_options(opts)?;
    if t == 0 {
        return Err(Error::InvalidParameter("T must be at least 1".into()));
    }
    let (m, l) = obj.constants();
    let rho_a = net.rho_ata();
    let (beta, beta_bound, rho_b) = match opts.coupling {
        Coupling::Fixed => {
            let rho_b = net.rho_b();
            if rho_b >= m {
                return Err(Error::ConfigRejected(format!(
                    "FlexPD-G needs rho(B) < m, got rho(B)={rho_b:.4e} and m={m:.4e}; scale B down by a factor above {:.4e}",
                    rho_b / m
                )));
            }
            let (eta2, eta3) = g_etas(opts, m, rho_b);
            let bound = (2.0 * m - eta2 - eta3 - rho_b) / rho_a;
            (opts.beta_override.unwrap_or(opts.beta_frac * bound), bound, rho_b)
        }
        Coupling::Tied => {
            // Largest feasible beta by bisection; rho(B) = beta * rho(A'A) moves with beta.
            let feasible = |b: f64| {
                let (e2, e3) = g_etas(opts, m, b * rho_a);
                g_feasible(m, rho_a, b * rho_a, e2, e3, b)
            };
            let (mut lo, mut hi) = (0.0, m / rho_a);
            if !feasible(hi * 1e-9) {
                return Err(Error::EmptyParameterSet("FlexPD-G: no positive beta satisfies the penalty conditions".into()));
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if feasible(mid) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let beta = opts.beta_override.unwrap_or(opts.beta_frac * lo);
            (beta, lo, beta * rho_a)
        }
    };
    let (eta2, eta3) = g_etas(opts, m, rho_b);
    let admissible = g_feasible(m, rho_a, rho_b, eta2, eta3, beta);
    if !admissible && opts.beta_override.is_none() {
        return Err(Error::EmptyParameterSet(format!(
            "FlexPD-G: eta2={eta2:.4e}, eta3={eta3:.4e} infeasible for rho(B)={rho_b:.4e}, m={m:.4e}"
        )));
    }
    let k = GConsts { m, l, rho_a, s: net.s_aat(), rho_b, eta2, eta3, beta };
    let b1 = eta2 / (l * l);
    let mut bounds = vec![Bound { name: "beta".into(), value: beta_bound }, Bound { name: "alpha1".into(), value: b1 }];
    let mut cert = StepsizeCertificate {
        variant: Variant::G,
        alpha: opts.alpha_frac * b1,
        beta,
        t,
        eta: vec![("eta2".into(), eta2), ("eta3".into(), eta3)],
        delta: 0.0,
        delta_tilde: None,
        gamma: None,
        gamma_params: vec![],
        bounds_used: vec![],
        penalty_scale: (opts.coupling == Coupling::Tied).then_some(beta),
        m,
        l,
        rho_b,
        admissible,
    };
    if t == 1 {
        cert.delta = k.delta(cert.alpha).0;
        cert.bounds_used = bounds;
        return Ok(cert);
    }
    let mut alpha = opts.alpha_frac * b1;
    let mut best_ratio = f64::INFINITY;
    for _ in 0..ALPHA_GRID {
        let (delta, d, c) = k.delta(alpha);
        if delta > 0.0 {
            let dt = opts.delta_frac * delta;
            let tails = g_tail_bounds(dt, t, l, rho_b, beta, rho_a);
            let (g, p, q) = k.best_gamma(alpha);
            let ratio = g.powi(t as i32 - 1) / (1.0 + dt);
            best_ratio = best_ratio.min(ratio);
            if alpha <= opts.alpha_frac * tails.iter().fold(f64::INFINITY, |a, &b| a.min(b)) && ratio < 1.0 {
                for (i, v) in tails.iter().enumerate() {
                    bounds.push(Bound { name: format!("alpha{}", i + 2), value: *v });
                }
                cert.alpha = alpha;
                cert.delta = delta;
                cert.delta_tilde = Some(dt);
                cert.gamma = Some(g);
                cert.gamma_params = vec![("p_bar".into(), p), ("q_bar".into(), q), ("d_bar".into(), d), ("c_bar".into(), c)];
                cert.bounds_used = bounds;
                return Ok(cert);
            }
        }
        alpha *= ALPHA_SHRINK;
    }
    Err(Error::EmptyParameterSet(format!(
        "FlexPD-G with T={t}: no alpha below {b1:.3e} satisfies all bounds; smallest Gamma^(T-1)/(1+delta_tilde) seen was {best_ratio:.6}"
    )))
}

pub fn certify(variant: Variant, net: &Network, obj: &ObjectiveSet, t: usize, opts: &CertifyOptions) -> Result<StepsizeCertificate> {
    match variant {
        Variant::F => certify_f(net, obj, t, opts),
        Variant::G => certify_g(net, obj, t, opts),
        Variant::C => certify_c(net, obj, t, opts),
    }
}

/// Unit of [`SearchConfig::alpha_range`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AlphaUnits {
    #[default]
    Absolute,
    /// Multiples of `1/L`, so the range is a range of `alpha * L`.
    InverseL,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub budget: usize,
    pub seed: u64,
    /// Relative-error target used to score a candidate.
    pub tol: f64,
    pub max_iters: usize,
    pub alpha_range: (f64, f64),
    pub beta_range: (f64, f64),
    pub alpha_units: AlphaUnits,
    /// With `Tied`, each candidate runs with `B = beta * A'A`.
    pub coupling: Coupling,
    /// Candidates evaluated concurrently before the iteration cap is tightened.
    pub batch: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            budget: 64,
            seed: 0,
            tol: 1e-2,
            max_iters: 100_000,
            alpha_range: (1e-4, 1.0),
            beta_range: (1e-3, 10.0),
            alpha_units: AlphaUnits::Absolute,
            coupling: Coupling::Fixed,
            batch: 16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tuned {
    pub alpha: f64,
    pub beta: f64,
    /// Outer iterations to reach the tolerance; `None` if no candidate did.
    pub iterations: Option<usize>,
    /// True when the winning pair is the certificate pair.
    pub from_certificate: bool,
}

impl SearchConfig {
    /// Copy with `alpha_range` in absolute units for smoothness constant `l`.
    pub fn resolved(&self, l: f64) -> SearchConfig {
        match self.alpha_units {
            AlphaUnits::Absolute => *self,
            AlphaUnits::InverseL => SearchConfig {
                alpha_range: (self.alpha_range.0 / l, self.alpha_range.1 / l),
                alpha_units: AlphaUnits::Absolute,
                ..*self
            },
        }
    }
}

fn log_uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    (rng.gen_range(lo.ln()..=hi.ln())).exp()
}

/// Random search over log-uniform `(alpha, beta)`, scored by outer iterations
/// to `search.tol`. The penalty matrix is the network's own or `beta * A'A`,
/// following `search.coupling`. The optional certificate pair joins the
/// candidate set.
pub fn tuned_stepsize(
    variant: Variant,
    net: &Network,
    obj: &ObjectiveSet,
    t: usize,
    search: &SearchConfig,
    reference: &Reference,
    certificate: Option<(f64, f64)>,
) -> Result<Tuned> {
    let x0 = DMatrix::zeros(net.n(), obj.p());
    let search = search.resolved(obj.constants().1);
    random_search(&search, certificate, |a, b, cap| {
        let params = StepParams::new(a, b, t).ok()?;
        let stop = StopRule { record_every: usize::MAX, ..StopRule::relative(search.tol, cap) };
        let tied;
        let net = match search.coupling {
            Coupling::Fixed => net,
            Coupling::Tied => {
                tied = net.rescaled(b).ok()?;
                &tied
            }
        };
        solve(variant, net, obj, params, x0.clone(), &stop, Some(reference)).ok()?.converged_at
    })
    .map_err(|e| match e {
        Error::EmptyParameterSet(msg) => Error::EmptyParameterSet(format!("{variant} T={t}: {msg}")),
        other => other,
    })
}

/// Generic driver behind [`tuned_stepsize`]. `evaluate(alpha, beta, cap)`
/// returns the iterations needed, or `None` on divergence or when `cap` is
/// reached. Candidates run in parallel batches; the cap only tightens between
/// batches, so the result does not depend on the thread count.
pub fn random_search<E>(search: &SearchConfig, certificate: Option<(f64, f64)>, evaluate: E) -> Result<Tuned>
where
    E: Fn(f64, f64, usize) -> Option<usize> + Sync,
{
    if search.budget == 0 {
        return Err(Error::InvalidParameter("search budget must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(search.seed);
    let mut candidates: Vec<(f64, f64, bool)> = Vec::with_capacity(search.budget + 1);
    if let Some((a, b)) = certificate {
        candidates.push((a, b, true));
    }
    for _ in 0..search.budget {
        let a = log_uniform(&mut rng, search.alpha_range);
        let b = log_uniform(&mut rng, search.beta_range);
        candidates.push((a, b, false));
    }
    let batch = search.batch.max(1);
    let mut best: Option<(usize, usize)> = None;
    for (chunk_idx, chunk) in candidates.chunks(batch).enumerate() {
        let cap = best.map(|(it, _)| it).unwrap_or(search.max_iters);
        let results: Vec<Option<usize>> = chunk.par_iter().map(|&(a, b, _)| evaluate(a, b, cap)).collect();
        for (i, r) in results.into_iter().enumerate() {
            if let Some(it) = r {
                if best.is_none_or(|(b, _)| it < b) {
                    best = Some((it, chunk_idx * batch + i));
                }
            }
        }
    }
    match (best, certificate) {
        (Some((it, idx)), _) => {
            let (alpha, beta, from_certificate) = candidates[idx];
            Ok(Tuned { alpha, beta, iterations: Some(it), from_certificate })
        }
        (None, Some((alpha, beta))) => Ok(Tuned { alpha, beta, iterations: None, from_certificate: true }),
        (None, None) => Err(Error::EmptyParameterSet(format!(
            "none of {} sampled stepsize pairs reached rel_error {} within {} iterations",
            search.budget, search.tol, search.max_iters
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_topology, Topology};
    use approx::assert_relative_eq;

    fn problem(n: usize, topo: Topology, seed: u64) -> (Network, ObjectiveSet) {
        let g = build_topology(&topo, n).unwrap();
        (Network::new(g, 1.0).unwrap(), ObjectiveSet::random_quadratic(n, (1, 10), (1, 100), seed).unwrap())
    }

    #[test]
    fn c_bound_spot_values() {
        assert_relative_eq!(c_alpha_bound(2.0, 2.0, 3.0, 1), 0.2, epsilon = 1e-15);
        // T * alpha * rho(B) tends to -ln(L^2 / (L^2 + eta rho(B))).
        let limit = -(0.4_f64).ln();
        assert!((50.0 * 3.0 * c_alpha_bound(2.0, 2.0, 3.0, 50) - limit).abs() / limit < 0.05);
    }

    #[test]
    fn c_certificate_is_self_consistent() {
        let (net, obj) = problem(6, Topology::Ring, 3);
        for t in 1..=4 {
            let cert = certify_c(&net, &obj, t, &CertifyOptions::default()).unwrap();
            let cnet = cert.network(&net).unwrap();
            cert.check(&cnet, &obj).unwrap();
            assert!(cert.delta > 0.0);
            assert_relative_eq!(cnet.rho_b(), cert.rho_b, max_relative = 1e-9);
        }
    }

    #[test]
    fn eta_out_of_range_rejected() {
        let (net, obj) = problem(4, Topology::Path, 1);
        let (m, _) = obj.constants();
        let opts = CertifyOptions { eta: Some(2.0 * m), ..Default::default() };
        assert!(matches!(certify_c(&net, &obj, 2, &opts), Err(Error::InvalidParameter(_))));
        assert!(matches!(certify_f(&net, &obj, 1, &opts), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn f_and_g_single_step_certificates() {
        let (net, obj) = problem(5, Topology::Ring, 7);
        let f = certify_f(&net, &obj, 1, &CertifyOptions::default()).unwrap();
        f.check(&f.network(&net).unwrap(), &obj).unwrap();
        let g = certify_g(&net, &obj, 1, &CertifyOptions::default()).unwrap();
        let gnet = g.network(&net).unwrap();
        g.check(&gnet, &obj).unwrap();
        assert!(gnet.rho_b() < obj.constants().0 / 3.0);
    }

    #[test]
    fn g_fixed_penalty_too_large_is_rejected() {
        let (net, obj) = problem(5, Topology::Complete, 7);
        let big = net.rescaled(100.0).unwrap();
        let opts = CertifyOptions { coupling: Coupling::Fixed, ..Default::default() };
        assert!(matches!(certify_g(&big, &obj, 1, &opts), Err(Error::ConfigRejected(_))));
    }

    #[test]
    fn kv_dump_lists_bounds() {
        let (net, obj) = problem(4, Topology::Path, 2);
        let kv = certify_c(&net, &obj, 2, &CertifyOptions::default()).unwrap().to_kv();
        assert!(kv.contains("variant = FlexPD-C"));
        assert!(kv.contains("bound.alpha = "));
    }

    #[test]
    fn inverse_l_alpha_range_resolves() {
        let sc = SearchConfig { alpha_range: (1e-2, 1.0), alpha_units: AlphaUnits::InverseL, ..SearchConfig::default() };
        let r = sc.resolved(4.0);
        assert_eq!((r.alpha_range, r.alpha_units), ((2.5e-3, 0.25), AlphaUnits::Absolute));
        assert_eq!(SearchConfig::default().resolved(4.0), SearchConfig::default());
    }
}
