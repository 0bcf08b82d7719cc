//! Local objective families with gradients and certified strong-convexity /
//! gradient-Lipschitz constants, plus LIBSVM ingestion.
//!
//! Decision variables are `n x p` matrices: row `i` is agent `i`'s copy of the
//! `p`-dimensional decision vector. All algebra acts column-wise.

use std::io::BufRead;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticParams {
    /// Positive curvature per agent.
    pub c: Vec<f64>,
    /// Per-agent centre, `n x p`.
    pub b: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticParams {
    /// Per-agent dense feature rows (`k_i x p`).
    pub features: Vec<DMatrix<f64>>,
    /// Per-agent labels in {-1, +1}.
    pub labels: Vec<Vec<f64>>,
    pub kappa: f64,
    /// Total number of samples across agents.
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ObjectiveKind {
    /// `f_i(x) = c_i ||x - b_i||^2`
    Quadratic(QuadraticParams),
    /// `f_i(x) = kappa/(2n) ||x||^2 + (1/K) sum_j log(1 + exp(-v_ij u_ij' x))`
    Logistic(LogisticParams),
}

/// The collection of local objectives `f_1, ..., f_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveSet {
    n: usize,
    p: usize,
    kind: ObjectiveKind,
    m: f64,
    l: f64,
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl ObjectiveSet {
    pub fn quadratic(c: Vec<f64>, b: DMatrix<f64>) -> Result<Self> {
        if c.is_empty() || c.len() != b.nrows() {
            return Err(Error::Dimension(format!("{} curvatures for {} centres", c.len(), b.nrows())));
        }
        if let Some(bad) = c.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidParameter(format!("quadratic curvature must be positive, got {bad}")));
        }
        let cmin = c.iter().copied().fold(f64::INFINITY, f64::min);
        let cmax = c.iter().copied().fold(0.0, f64::max);
        Ok(ObjectiveSet {
            n: c.len(),
            p: b.ncols(),
            m: 2.0 * cmin,
            l: 2.0 * cmax,
            kind: ObjectiveKind::Quadratic(QuadraticParams { c, b }),
        })
    }

    /// Scalar quadratic with integer `c_i` and `b_i` drawn uniformly from the
    /// inclusive ranges.
    pub fn random_quadratic(n: usize, c_range: (i64, i64), b_range: (i64, i64), seed: u64) -> Result<Self> {
        if c_range.0 < 1 || c_range.1 < c_range.0 || b_range.1 < b_range.0 {
            return Err(Error::InvalidParameter(format!(
                "bad coefficient ranges c={c_range:?} b={b_range:?}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c: Vec<f64> = (0..n).map(|_| rng.gen_range(c_range.0..=c_range.1) as f64).collect();
        let b = DMatrix::from_fn(n, 1, |_, _| rng.gen_range(b_range.0..=b_range.1) as f64);
        Self::quadratic(c, b)
    }

    /// Regularised logistic loss with the samples of `ds` split per `parts`.
    pub fn logistic(ds: &Dataset, parts: &[Vec<usize>], kappa: f64) -> Result<Self> {
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(Error::InvalidParameter(format!("kappa must be positive, got {kappa}")));
        }
        let n = parts.len();
        if n == 0 {
            return Err(Error::InvalidParameter("no agents".into()));
        }
        let p = ds.p;
        let total = ds.samples.len();
        let mut features = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        let mut l_max: f64 = 0.0;
        for part in parts {
            let mut u = DMatrix::zeros(part.len(), p);
            let mut v = Vec::with_capacity(part.len());
            for (r, &idx) in part.iter().enumerate() {
                let s = ds.samples.get(idx).ok_or_else(|| {
                    Error::InvalidParameter(format!("sample index {idx} out of range"))
                })?;
                for &(j, val) in &s.features {
                    u[(r, j - 1)] = val;
                }
                v.push(s.label);
            }
            let gram = u.transpose() * &u;
            let rho = if part.is_empty() { 0.0 } else { linalg::symmetric_eigenvalues(&gram)?[p - 1].max(0.0) };
            l_max = l_max.max(kappa / n as f64 + rho / (4.0 * total as f64));
            features.push(u);
            labels.push(v);
        }
        Ok(ObjectiveSet {
            n,
            p,
            m: kappa / n as f64,
            l: l_max,
            kind: ObjectiveKind::Logistic(LogisticParams { features, labels, kappa, total }),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn p(&self) -> usize {
        self.p
    }
    pub fn kind(&self) -> &ObjectiveKind {
        &self.kind
    }

    /// `(m, L)`: every `f_i` is m-strongly convex with L-Lipschitz gradient.
    pub fn constants(&self) -> (f64, f64) {
        (self.m, self.l)
    }

    fn check_shape(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.nrows() != self.n || x.ncols() != self.p {
            return Err(Error::Dimension(format!(
                "iterate is {}x{}, objective expects {}x{}",
                x.nrows(),
                x.ncols(),
                self.n,
                self.p
            )));
        }
        Ok(())
    }

    pub fn eval_f(&self, x: &DMatrix<f64>) -> Result<f64> {
        self.check_shape(x)?;
        Ok((0..self.n).map(|i| self.eval_agent(i, x, i)).sum())
    }

    /// `f_i` evaluated at row `row` of `x`.
    fn eval_agent(&self, i: usize, x: &DMatrix<f64>, row: usize) -> f64 {
        match &self.kind {
            ObjectiveKind::Quadratic(q) => {
                let mut s = 0.0;
                for c in 0..self.p {
                    let d = x[(row, c)] - q.b[(i, c)];
                    s += d * d;
                }
                q.c[i] * s
            }
            ObjectiveKind::Logistic(lg) => {
                let mut sq = 0.0;
                for c in 0..self.p {
                    sq += x[(row, c)] * x[(row, c)];
                }
                let u = &lg.features[i];
                let mut loss = 0.0;
                for r in 0..u.nrows() {
                    let mut z = 0.0;
                    for c in 0..self.p {
                        z += u[(r, c)] * x[(row, c)];
                    }
                    loss += softplus(-lg.labels[i][r] * z);
                }
                lg.kappa / (2.0 * self.n as f64) * sq + loss / lg.total as f64
            }
        }
    }

    pub fn grad(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_shape(x)?;
        let mut out = DMatrix::zeros(self.n, self.p);
        self.grad_into(x, &mut out);
        Ok(out)
    }

    /// Row `i` of `out` receives `grad f_i(x_i)`. Shapes are not checked.
    pub fn grad_into(&self, x: &DMatrix<f64>, out: &mut DMatrix<f64>) {
        match &self.kind {
            ObjectiveKind::Quadratic(q) => {
                for c in 0..self.p {
                    for i in 0..self.n {
                        out[(i, c)] = 2.0 * q.c[i] * (x[(i, c)] - q.b[(i, c)]);
                    }
                }
            }
            ObjectiveKind::Logistic(lg) => {
                let reg = lg.kappa / self.n as f64;
                let inv_k = 1.0 / lg.total as f64;
                for i in 0..self.n {
                    for c in 0..self.p {
                        out[(i, c)] = reg * x[(i, c)];
                    }
                    let u = &lg.features[i];
                    for r in 0..u.nrows() {
                        let v = lg.labels[i][r];
                        let mut z = 0.0;
                        for c in 0..self.p {
                            z += u[(r, c)] * x[(i, c)];
                        }
                        let w = -v * sigmoid(-v * z) * inv_k;
                        for c in 0..self.p {
                            out[(i, c)] += w * u[(r, c)];
                        }
                    }
                }
            }
        }
    }

    /// Gradient of the centralised objective `F(z) = sum_i f_i(z)` at `z` (length p).
    pub fn grad_sum(&self, z: &[f64]) -> Vec<f64> {
        let x = DMatrix::from_fn(self.n, self.p, |_, c| z[c]);
        let mut g = DMatrix::zeros(self.n, self.p);
        self.grad_into(&x, &mut g);
        (0..self.p).map(|c| g.column(c).sum()).collect()
    }

    /// Hessian of `F(z) = sum_i f_i(z)`, a `p x p` matrix.
    pub fn hessian_sum(&self, z: &[f64]) -> DMatrix<f64> {
        let p = self.p;
        match &self.kind {
            ObjectiveKind::Quadratic(q) => DMatrix::identity(p, p) * (2.0 * q.c.iter().sum::<f64>()),
            ObjectiveKind::Logistic(lg) => {
                let mut h = DMatrix::identity(p, p) * lg.kappa;
                let inv_k = 1.0 / lg.total as f64;
                for u in &lg.features {
                    for r in 0..u.nrows() {
                        let zr: f64 = (0..p).map(|c| u[(r, c)] * z[c]).sum();
                        let s = sigmoid(zr);
                        let w = s * (1.0 - s) * inv_k;
                        for a in 0..p {
                            for b in 0..p {
                                h[(a, b)] += w * u[(r, a)] * u[(r, b)];
                            }
                        }
                    }
                }
                h
            }
        }
    }

    /// Closed-form consensus optimum `sum c_i b_i / sum c_i` for quadratics.
    pub fn quadratic_optimum(&self) -> Option<Vec<f64>> {
        match &self.kind {
            ObjectiveKind::Quadratic(q) => {
                let sc: f64 = q.c.iter().sum();
                Some((0..self.p).map(|col| (0..self.n).map(|i| q.c[i] * q.b[(i, col)]).sum::<f64>() / sc).collect())
            }
            ObjectiveKind::Logistic(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// -1 or +1.
    pub label: f64,
    /// `(index, value)` pairs with 1-based ascending indices.
    pub features: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub p: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Serialises back to LIBSVM text with shortest round-trip float formatting.
    pub fn to_libsvm(&self) -> String {
        let mut out = String::new();
        for s in &self.samples {
            out.push_str(if s.label > 0.0 { "+1" } else { "-1" });
            for &(j, v) in &s.features {
                out.push_str(&format!(" {j}:{v}"));
            }
            out.push('\n');
        }
        out
    }
}

fn parse_label(tok: &str, line: usize) -> Result<f64> {
    let v: f64 = tok
        .parse()
        .map_err(|_| Error::Parse { line, msg: format!("non-numeric label '{tok}'") })?;
    if v == 1.0 {
        Ok(1.0)
    } else if v == -1.0 || v == 0.0 {
        Ok(-1.0)
    } else {
        Err(Error::Parse { line, msg: format!("label {tok} is not binary (expected -1/+1 or 0/1)") })
    }
}

/// Parses LIBSVM/SVMlight text: `<label> <idx>:<val> ...` per line, indices
/// 1-based and strictly ascending, `#` starts a comment, blank lines skipped.
pub fn parse_libsvm<R: BufRead>(reader: R, p_hint: Option<usize>) -> Result<Dataset> {
    let mut samples = Vec::new();
    let mut max_idx = 0usize;
    for (lineno, line) in reader.lines().enumerate() {
        let line_no = lineno + 1;
        let line = line?;
        let content = match line.find('#') {
            Some(pos) => &line[..pos],
            None => &line[..],
        };
        let mut toks = content.split_whitespace();
        let Some(label_tok) = toks.next() else { continue };
        let label = parse_label(label_tok, line_no)?;
        let mut features: Vec<(usize, f64)> = Vec::new();
        for tok in toks {
            let (idx_s, val_s) = tok
                .split_once(':')
                .ok_or_else(|| Error::Parse { line: line_no, msg: format!("expected index:value, got '{tok}'") })?;
            let idx: usize = idx_s
                .parse()
                .map_err(|_| Error::Parse { line: line_no, msg: format!("bad feature index '{idx_s}'") })?;
            let val: f64 = val_s
                .parse()
                .map_err(|_| Error::Parse { line: line_no, msg: format!("non-numeric value '{val_s}'") })?;
            if idx == 0 {
                return Err(Error::Parse { line: line_no, msg: "feature indices are 1-based".into() });
            }
            if !val.is_finite() {
                return Err(Error::Parse { line: line_no, msg: format!("non-finite value '{val_s}'") });
            }
            if let Some(&(prev, _)) = features.last() {
                if idx == prev {
                    return Err(Error::Parse { line: line_no, msg: format!("duplicate feature index {idx}") });
                }
                if idx < prev {
                    return Err(Error::Parse { line: line_no, msg: format!("feature index {idx} after {prev}") });
                }
            }
            max_idx = max_idx.max(idx);
            features.push((idx, val));
        }
        samples.push(Sample { label, features });
    }
    let p = match p_hint {
        Some(h) if h < max_idx => {
            return Err(Error::Parse { line: 0, msg: format!("feature index {max_idx} exceeds declared dimension {h}") })
        }
        Some(h) => h,
        None => max_idx,
    };
    Ok(Dataset { samples, p })
}

pub fn load_libsvm(path: &std::path::Path, p_hint: Option<usize>) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    parse_libsvm(std::io::BufReader::new(file), p_hint)
}

/// Uniform random split of sample indices over `n` agents; part sizes differ by
/// at most one and the first `len % n` agents receive the larger parts.
pub fn partition(ds: &Dataset, n: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if n == 0 {
        return Err(Error::InvalidParameter("need at least one agent".into()));
    }
    if n > ds.len() {
        return Err(Error::InvalidParameter(format!("{n} agents for {} samples", ds.len())));
    }
    let mut idx: Vec<usize> = (0..ds.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let base = ds.len() / n;
    let extra = ds.len() % n;
    let mut parts = Vec::with_capacity(n);
    let mut start = 0;
    for a in 0..n {
        let size = base + usize::from(a < extra);
        parts.push(idx[start..start + size].to_vec());
        start += size;
    }
    Ok(parts)
}

/// Synthetic binary classification data shaped like a pre-scaled LIBSVM set:
/// features uniform in [-1, 1], labels from a noisy linear rule.
pub fn synthetic_binary_dataset(samples: usize, p: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<f64> = (0..p).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let bias = 0.5;
    let data = (0..samples)
        .map(|_| {
            let u: Vec<f64> = (0..p).map(|_| (rng.gen_range(-1.0..1.0) * 1e4_f64).round() / 1e4).collect();
            let z: f64 = u.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + bias;
            let q: f64 = rng.gen_range(1e-9..1.0 - 1e-9);
            let noise = (q / (1.0 - q)).ln();
            let label = if z + noise > 0.0 { 1.0 } else { -1.0 };
            let features = u.into_iter().enumerate().filter(|(_, v)| *v != 0.0).map(|(j, v)| (j + 1, v)).collect();
            Sample { label, features }
        })
        .collect();
    Dataset { samples: data, p }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn quad(c: &[f64], b: &[f64]) -> ObjectiveSet {
        ObjectiveSet::quadratic(c.to_vec(), DMatrix::from_column_slice(b.len(), 1, b)).unwrap()
    }

    #[test]
    fn quadratic_values() {
        let o = quad(&[1.0, 1.0], &[0.0, 10.0]);
        assert_eq!(o.eval_f(&DMatrix::from_column_slice(2, 1, &[0.0, 10.0])).unwrap(), 0.0);
        assert_eq!(o.eval_f(&DMatrix::from_column_slice(2, 1, &[5.0, 5.0])).unwrap(), 50.0);
        let o = quad(&[1.0], &[3.0]);
        assert_eq!(o.grad(&DMatrix::from_element(1, 1, 5.0)).unwrap()[(0, 0)], 4.0);
    }

    #[test]
    fn quadratic_constants() {
        assert_eq!(quad(&[1.0, 5.0], &[0.0, 0.0]).constants(), (2.0, 10.0));
        assert_eq!(quad(&[1.0, 1.0], &[0.0, 0.0]).constants(), (2.0, 2.0));
    }

    #[test]
    fn bad_quadratic_rejected() {
        assert!(ObjectiveSet::quadratic(vec![0.0], DMatrix::zeros(1, 1)).is_err());
        assert!(ObjectiveSet::quadratic(vec![1.0, 2.0], DMatrix::zeros(1, 1)).is_err());
    }

    fn toy_logistic(kappa: f64) -> (Dataset, ObjectiveSet) {
        let ds = synthetic_binary_dataset(40, 3, 5);
        let parts = partition(&ds, 10, 1).unwrap();
        let o = ObjectiveSet::logistic(&ds, &parts, kappa).unwrap();
        (ds, o)
    }

    #[test]
    fn logistic_at_zero() {
        let (ds, o) = toy_logistic(1.0);
        let x = DMatrix::zeros(10, 3);
        // Each sample contributes log 2 / K; K samples in total.
        assert_relative_eq!(o.eval_f(&x).unwrap(), std::f64::consts::LN_2, epsilon = 1e-12);
        let g = o.grad(&x).unwrap();
        let ObjectiveKind::Logistic(lg) = o.kind() else { unreachable!() };
        for i in 0..10 {
            for c in 0..3 {
                let expect: f64 = (0..lg.features[i].nrows())
                    .map(|r| -lg.labels[i][r] * lg.features[i][(r, c)] / 2.0)
                    .sum::<f64>()
                    / ds.len() as f64;
                assert_relative_eq!(g[(i, c)], expect, epsilon = 1e-15);
            }
        }
        assert_relative_eq!(o.constants().0, 0.1, epsilon = 1e-15);
    }

    #[test]
    fn stable_for_large_margins() {
        let (_, o) = toy_logistic(1.0);
        let x = DMatrix::from_element(10, 3, 1e4);
        assert!(o.eval_f(&x).unwrap().is_finite());
        assert!(o.grad(&x).unwrap().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn parse_examples() {
        let ds = parse_libsvm("+1 1:0.5 3:-1.2\n".as_bytes(), None).unwrap();
        assert_eq!(ds.p, 3);
        assert_eq!(ds.samples, vec![Sample { label: 1.0, features: vec![(1, 0.5), (3, -1.2)] }]);
        let ds = parse_libsvm("0 2:1\n".as_bytes(), None).unwrap();
        assert_eq!(ds.samples[0].label, -1.0);
        let ds = parse_libsvm("\n# comment\n-1 1:2 # trailing\n\n".as_bytes(), Some(4)).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.p, 4);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = parse_libsvm("+1 1:1\n+1 2:x\n".as_bytes(), None).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let err = parse_libsvm("+1 1:1 1:2\n".as_bytes(), None).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, ref msg } if msg.contains("duplicate")));
        assert!(parse_libsvm("+1 2:1 1:1\n".as_bytes(), None).is_err());
        assert!(parse_libsvm("+1 3\n".as_bytes(), None).is_err());
        assert!(parse_libsvm("abc 1:1\n".as_bytes(), None).is_err());
        assert!(parse_libsvm("+1 5:1\n".as_bytes(), Some(3)).is_err());
    }

    #[test]
    fn partition_sizes() {
        let ds = synthetic_binary_dataset(768, 8, 1);
        let parts = partition(&ds, 10, 42).unwrap();
        let mut sizes: Vec<usize> = parts.iter().map(Vec::len).collect();
        sizes.sort();
        assert_eq!(sizes, vec![76, 76, 77, 77, 77, 77, 77, 77, 77, 77]);
        assert_eq!(parts, partition(&ds, 10, 42).unwrap());
        let one = partition(&ds, 1, 0).unwrap();
        assert_eq!(one[0].len(), 768);
        assert!(partition(&ds, 769, 0).is_err());
    }

    #[test]
    fn libsvm_roundtrip() {
        let ds = synthetic_binary_dataset(30, 5, 9);
        let back = parse_libsvm(ds.to_libsvm().as_bytes(), Some(5)).unwrap();
        assert_eq!(back, ds);
    }
}
