//! Prescribed right-hand sides V(x, y) of τ(f) = V.

use std::fmt;
use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{Chart, TargetManifold};
use crate::linalg::symmetric_eigenvalues;

type Evaluator = dyn Fn([f64; 2], &[f64], &mut [f64]) + Send + Sync;
type Potential = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// Finite-difference step for frame derivatives.
pub const FD_STEP: f64 = 1e-5;
/// Default number of (y, X) samples for μ.
pub const DEFAULT_MU_SAMPLES: usize = 10_000;

#[derive(Clone)]
pub struct PrescribedField {
    target: Arc<TargetManifold>,
    eval: Arc<Evaluator>,
    potential: Option<Arc<Potential>>,
    analytic_mu: Option<f64>,
    analytic_sup: Option<f64>,
    label: String,
}

impl fmt::Debug for PrescribedField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PrescribedField")
            .field("label", &self.label)
            .field("variational", &self.is_variational())
            .field("analytic_mu", &self.analytic_mu)
            .finish()
    }
}

/// Sampled and analytic values of the monotonicity constant μ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MuEstimate {
    pub sampled: f64,
    pub analytic: Option<f64>,
    pub samples: usize,
}

impl MuEstimate {
    /// The analytic value when declared, the sampled value otherwise.
    pub fn value(&self) -> f64 {
        self.analytic.unwrap_or(self.sampled)
    }

    /// Larger of the two, used for gating.
    pub fn conservative(&self) -> f64 {
        self.analytic.map_or(self.sampled, |a| a.max(self.sampled))
    }
}

impl PrescribedField {
    pub fn new<F>(target: Arc<TargetManifold>, label: impl Into<String>, eval: F) -> Self
    where
        F: Fn([f64; 2], &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        Self {
            target,
            eval: Arc::new(eval),
            potential: None,
            analytic_mu: None,
            analytic_sup: None,
            label: label.into(),
        }
    }

    pub fn zero(target: Arc<TargetManifold>) -> Self {
        let mut f = Self::new(target, "zero", |_, _, out| out.iter_mut().for_each(|v| *v = 0.0));
        f.potential = Some(Arc::new(|_| 0.0));
        f.analytic_mu = Some(0.0);
        f.analytic_sup = Some(0.0);
        f
    }

    /// V(y) = A y on a Euclidean target; variational when A is symmetric.
    pub fn linear(target: Arc<TargetManifold>, a: Vec<Vec<f64>>) -> Result<Self> {
        if target.chart() != Chart::Euclidean {
            return Err(Error::InvalidField("linear fields need a Euclidean target".into()));
        }
        let n = target.dim();
        if a.len() != n || a.iter().any(|r| r.len() != n) {
            return Err(Error::DimensionMismatch { expected: n * n, got: a.iter().map(Vec::len).sum() });
        }
        let symmetric = (0..n).all(|i| (0..n).all(|j| a[i][j] == a[j][i]));
        let sym: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| 0.5 * (a[i][j] + a[j][i])).collect()).collect();
        let lam_min = symmetric_eigenvalues(&sym)[0];
        let a2 = a.clone();
        let mut f = Self::new(target, "linear", move |_, y, out| {
            for i in 0..n {
                out[i] = (0..n).map(|j| a2[i][j] * y[j]).sum();
            }
        });
        if symmetric {
            f.potential = Some(Arc::new(move |y: &[f64]| {
                0.5 * (0..n).map(|i| (0..n).map(|j| y[i] * a[i][j] * y[j]).sum::<f64>()).sum::<f64>()
            }));
        }
        f.analytic_mu = Some((-lam_min).max(0.0));
        Ok(f)
    }

    /// V = ∇φ computed by frame finite differences with one Richardson level.
    pub fn from_potential<P>(target: Arc<TargetManifold>, label: impl Into<String>, phi: P) -> Self
    where
        P: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        let phi: Arc<Potential> = Arc::new(phi);
        let t = target.clone();
        let p2 = phi.clone();
        let eval = move |_: [f64; 2], y: &[f64], out: &mut [f64]| {
            let k = t.ambient_dim();
            let mut buf = vec![0.0; k];
            let mut step = vec![0.0; k];
            out.iter_mut().for_each(|v| *v = 0.0);
            for e in t.tangent_frame(y) {
                let mut diff = |s: f64| {
                    for i in 0..k {
                        step[i] = s * e[i];
                    }
                    t.exp_into(y, &step, &mut buf);
                    let plus = p2(&buf);
                    for v in step.iter_mut() {
                        *v = -*v;
                    }
                    t.exp_into(y, &step, &mut buf);
                    (plus - p2(&buf)) / (2.0 * s)
                };
                let coarse = diff(FD_STEP);
                let fine = diff(0.5 * FD_STEP);
                let g = (4.0 * fine - coarse) / 3.0;
                for i in 0..k {
                    out[i] += g * e[i];
                }
            }
        };
        let mut f = Self::new(target, label, eval);
        f.potential = Some(phi);
        f
    }

    /// Potential (c/2)·d²(y, o); its gradient is -c·log_y(o).
    pub fn potential_dist_sq(target: Arc<TargetManifold>, center: &[f64], c: f64) -> Result<Self> {
        if target.chart() == Chart::FlatTorus {
            return Err(Error::InvalidField("distance potentials are not periodic".into()));
        }
        let o = target.from_chart(center);
        let t = target.clone();
        let mut f = Self::from_potential(target.clone(), "potential_dist_sq", move |y| 0.5 * c * t.dist(y, &o).powi(2));
        if target.is_flat() {
            f.analytic_mu = Some((-c).max(0.0));
        } else if c >= 0.0 {
            f.analytic_mu = Some(0.0);
        }
        Ok(f)
    }

    /// V(y) = s · J(y - o), the quarter rotation of the radial field -log_y(o).
    pub fn rotational(target: Arc<TargetManifold>, strength: f64, center: &[f64]) -> Result<Self> {
        if target.dim() != 2 {
            return Err(Error::DimensionMismatch { expected: 2, got: target.dim() });
        }
        if target.chart() == Chart::FlatTorus {
            return Err(Error::InvalidField("rotational fields are not periodic".into()));
        }
        let o = target.from_chart(center);
        let t = target.clone();
        let mut f = Self::new(target.clone(), "rotational", move |_, y, out| {
            let k = y.len();
            let mut r = vec![0.0; k];
            t.log_into(y, &o, &mut r);
            r.iter_mut().for_each(|v| *v = -strength * *v);
            t.rotate_quarter(y, &r, out).expect("2-D target");
        });
        if strength == 0.0 {
            f.potential = Some(Arc::new(|_| 0.0));
            f.analytic_mu = Some(0.0);
            f.analytic_sup = Some(0.0);
        } else if target.is_flat() {
            f.analytic_mu = Some(0.0);
        }
        Ok(f)
    }

    /// Weighted sum Σ w_i V_i; variational when every term is.
    pub fn sum(terms: Vec<(f64, PrescribedField)>) -> Result<Self> {
        let first = terms.first().ok_or(Error::InvalidField("empty field sum".into()))?;
        let target = first.1.target.clone();
        if terms.iter().any(|(_, f)| f.target != target) {
            return Err(Error::InvalidField("summands live on different targets".into()));
        }
        let evals: Vec<(f64, Arc<Evaluator>)> = terms.iter().map(|(w, f)| (*w, f.eval.clone())).collect();
        let mut f = Self::new(target, "sum", move |x, y, out| {
            let mut buf = vec![0.0; out.len()];
            out.iter_mut().for_each(|v| *v = 0.0);
            for (w, e) in &evals {
                e(x, y, &mut buf);
                for i in 0..out.len() {
                    out[i] += w * buf[i];
                }
            }
        });
        if terms.iter().all(|(_, f)| f.potential.is_some()) {
            let pots: Vec<(f64, Arc<Potential>)> =
                terms.iter().map(|(w, f)| (*w, f.potential.clone().unwrap())).collect();
            f.potential = Some(Arc::new(move |y| pots.iter().map(|(w, p)| w * p(y)).sum()));
        }
        if terms.iter().all(|(w, f)| *w >= 0.0 && f.analytic_mu.is_some()) {
            f.analytic_mu = Some(terms.iter().map(|(w, f)| w * f.analytic_mu.unwrap()).sum());
        }
        Ok(f)
    }

    pub fn target(&self) -> &Arc<TargetManifold> {
        &self.target
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn is_variational(&self) -> bool {
        self.potential.is_some()
    }

    pub fn analytic_mu(&self) -> Option<f64> {
        self.analytic_mu
    }

    pub fn with_analytic_mu(mut self, mu: Option<f64>) -> Self {
        if mu.is_some() {
            self.analytic_mu = mu;
        }
        self
    }

    pub fn analytic_sup(&self) -> Option<f64> {
        self.analytic_sup
    }

    pub fn with_analytic_sup(mut self, sup: Option<f64>) -> Self {
        if sup.is_some() {
            self.analytic_sup = sup;
        }
        self
    }

    /// Potential value φ(y) for variational fields.
    pub fn potential(&self, y: &[f64]) -> Result<f64> {
        self.potential.as_ref().map(|p| p(y)).ok_or(Error::NotVariational)
    }

    /// Evaluates V(x, y) into `out`, projected to T_y N.
    #[inline]
    pub fn eval_into(&self, x: [f64; 2], y: &[f64], out: &mut [f64]) {
        (self.eval)(x, y, out);
        self.target.project_tangent(y, out);
    }

    pub fn eval(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.target.ambient_dim()];
        self.eval_into([0.0; 2], y, &mut out);
        out
    }

    /// ∇_X V at y by central differences with transport back to y and one
    /// Richardson level.
    pub fn covariant_derivative(&self, y: &[f64], x: &[f64]) -> Vec<f64> {
        let t = &self.target;
        let k = t.ambient_dim();
        let mut q = vec![0.0; k];
        let mut v = vec![0.0; k];
        let mut pv = vec![0.0; k];
        let mut step = vec![0.0; k];
        let mut diff = |s: f64| -> Vec<f64> {
            let mut acc = vec![0.0; k];
            for sign in [1.0, -1.0] {
                for i in 0..k {
                    step[i] = sign * s * x[i];
                }
                t.exp_into(y, &step, &mut q);
                self.eval_into([0.0; 2], &q, &mut v);
                t.transport_into(&q, y, &v, &mut pv);
                for i in 0..k {
                    acc[i] += sign * pv[i] / (2.0 * s);
                }
            }
            acc
        };
        let coarse = diff(FD_STEP);
        let fine = diff(0.5 * FD_STEP);
        (0..k).map(|i| (4.0 * fine[i] - coarse[i]) / 3.0).collect()
    }

    /// Matrix ⟨∇_{e_i} V, e_j⟩ in an orthonormal frame at y.
    pub fn derivative_matrix(&self, y: &[f64]) -> Vec<Vec<f64>> {
        let frame = self.target.tangent_frame(y);
        let cols: Vec<Vec<f64>> = frame.iter().map(|e| self.covariant_derivative(y, e)).collect();
        frame
            .iter()
            .enumerate()
            .map(|(i, _)| frame.iter().map(|ej| self.target.inner(&cols[i], ej)).collect())
            .collect()
    }
}

/// Estimates μ = max(0, -inf ⟨∇_X V, X⟩/|X|²) over `samples` random points
/// within `radius` of `center` (chart coordinates). At each point the
/// infimum over X is the least eigenvalue of the symmetrized derivative.
pub fn estimate_mu<R: Rng + ?Sized>(
    v: &PrescribedField,
    samples: usize,
    center: &[f64],
    radius: f64,
    rng: &mut R,
) -> MuEstimate {
    let t = &v.target;
    let c = t.from_chart(center);
    let mut worst = f64::INFINITY;
    for i in 0..samples.max(1) {
        let y = if i == 0 { c.clone() } else { t.random_point(rng, &c, radius) };
        let m = v.derivative_matrix(&y);
        worst = worst.min(symmetric_eigenvalues(&m)[0]);
    }
    MuEstimate { sampled: (-worst).max(0.0), analytic: v.analytic_mu, samples: samples.max(1) }
}

/// max |V(y)| over the probe points.
pub fn sup_norm(v: &PrescribedField, probe: &[Vec<f64>]) -> Result<f64> {
    if probe.is_empty() {
        return Err(Error::EmptyProbe);
    }
    Ok(probe.iter().map(|y| v.target.norm(&v.eval(y))).fold(0.0, f64::max))
}

/// Probe set for a closed geodesic ball: the centre, the 2n frame points
/// on the sphere, a ring of sphere points (2-D targets) and random
/// interior points.
pub fn ball_probe<R: Rng + ?Sized>(
    target: &TargetManifold,
    center: &[f64],
    radius: f64,
    random: usize,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    let c = target.from_chart(center);
    let k = target.ambient_dim();
    let frame = target.tangent_frame(&c);
    let mut out = vec![c.clone()];
    let mut q = vec![0.0; k];
    let mut push_dir = |dir: Vec<f64>, out: &mut Vec<Vec<f64>>| {
        target.exp_into(&c, &dir, &mut q);
        out.push(q.clone());
    };
    for e in &frame {
        for s in [radius, -radius] {
            push_dir(e.iter().map(|x| s * x).collect(), &mut out);
        }
    }
    if frame.len() == 2 {
        for j in 0..64 {
            let a = std::f64::consts::TAU * j as f64 / 64.0;
            let dir = (0..k).map(|i| radius * (a.cos() * frame[0][i] + a.sin() * frame[1][i])).collect();
            push_dir(dir, &mut out);
        }
    }
    for _ in 0..random {
        out.push(target.random_point(rng, &c, radius));
    }
    out
}
