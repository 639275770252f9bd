//! Closed-form Riemannian geometry of the nonpositively curved targets.
//!
//! Three charts are supported: Euclidean space, hyperbolic space in the
//! hyperboloid model (curvature -1, ambient Minkowski coordinates with the
//! timelike coordinate first) and the flat torus, whose points are stored as
//! lifts in the universal cover.
//!
//! The hot paths (`exp_into`, `log_into`, `dist`, `transport_into`) work on
//! raw coordinate slices; the typed [`TargetPoint`] / [`TangentVector`] API is
//! a checked wrapper around them.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Chart {
    Euclidean,
    Hyperboloid,
    FlatTorus,
}

impl std::fmt::Display for Chart {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Chart::Euclidean => "euclidean",
            Chart::Hyperboloid => "hyperboloid",
            Chart::FlatTorus => "flat_torus",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetKind {
    Euclidean,
    Hyperboloid,
    /// Period lattice: one positive period per coordinate.
    FlatTorus {
        periods: Vec<f64>,
    },
}

/// A point of the target (or of its universal cover, for the torus).
#[derive(Debug, Clone, PartialEq)]
pub struct TargetPoint {
    pub chart: Chart,
    pub coords: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    pub base: TargetPoint,
    pub components: Vec<f64>,
}

/// Geometry of the target manifold N.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetManifold {
    kind: TargetKind,
    dim: usize,
}

/// Minkowski product with signature (-, +, ..., +).
#[inline]
pub fn minkowski(a: &[f64], b: &[f64]) -> f64 {
    let mut s = -a[0] * b[0];
    for i in 1..a.len() {
        s += a[i] * b[i];
    }
    s
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// x / sinh(x), accurate near zero.
#[inline]
fn x_over_sinh(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        1.0 - x * x / 6.0
    } else {
        x / x.sinh()
    }
}

/// sinh(x) / x, accurate near zero.
#[inline]
fn sinhc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        1.0 + x * x / 6.0
    } else {
        x.sinh() / x
    }
}

impl TargetManifold {
    pub fn euclidean(dim: usize) -> Result<Self> {
        Self::new(TargetKind::Euclidean, dim)
    }

    pub fn hyperboloid(dim: usize) -> Result<Self> {
        Self::new(TargetKind::Hyperboloid, dim)
    }

    pub fn flat_torus(periods: Vec<f64>) -> Result<Self> {
        let dim = periods.len();
        Self::new(TargetKind::FlatTorus { periods }, dim)
    }

    pub fn new(kind: TargetKind, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidField("target dimension must be positive".into()));
        }
        if let TargetKind::FlatTorus { periods } = &kind {
            if periods.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: periods.len() });
            }
            if periods.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
                return Err(Error::InvalidField("torus periods must be positive".into()));
            }
        }
        Ok(Self { kind, dim })
    }

    pub fn kind(&self) -> &TargetKind {
        &self.kind
    }

    pub fn chart(&self) -> Chart {
        match self.kind {
            TargetKind::Euclidean => Chart::Euclidean,
            TargetKind::Hyperboloid => Chart::Hyperboloid,
            TargetKind::FlatTorus { .. } => Chart::FlatTorus,
        }
    }

    /// Intrinsic dimension n.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of stored coordinates per point.
    pub fn ambient_dim(&self) -> usize {
        match self.kind {
            TargetKind::Hyperboloid => self.dim + 1,
            _ => self.dim,
        }
    }

    pub fn periods(&self) -> Option<&[f64]> {
        match &self.kind {
            TargetKind::FlatTorus { periods } => Some(periods),
            _ => None,
        }
    }

    pub fn is_flat(&self) -> bool {
        !matches!(self.kind, TargetKind::Hyperboloid)
    }

    /// Same manifold with every length multiplied by `s` (flat charts only).
    pub fn rescaled(&self, s: f64) -> Result<Self> {
        match &self.kind {
            TargetKind::Euclidean => Ok(self.clone()),
            TargetKind::FlatTorus { periods } => Self::flat_torus(periods.iter().map(|p| p * s).collect()),
            TargetKind::Hyperboloid => Err(Error::InvalidField("rescaling is only supported for flat targets".into())),
        }
    }

    // ----- slice kernels -------------------------------------------------

    /// Riemannian inner product of two tangent vectors (base point implicit).
    #[inline]
    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        match self.kind {
            TargetKind::Hyperboloid => minkowski(u, v),
            _ => dot(u, v),
        }
    }

    #[inline]
    pub fn norm_sq(&self, v: &[f64]) -> f64 {
        self.inner(v, v).max(0.0)
    }

    #[inline]
    pub fn norm(&self, v: &[f64]) -> f64 {
        self.norm_sq(v).sqrt()
    }

    /// Re-project a hyperboloid point onto <p,p> = -1, p0 > 0.
    #[inline]
    pub fn normalize_point(&self, p: &mut [f64]) {
        if let TargetKind::Hyperboloid = self.kind {
            let s: f64 = p[1..].iter().map(|x| x * x).sum();
            p[0] = (1.0 + s).sqrt();
        }
    }

    /// Orthogonal projection of an ambient vector onto T_p N.
    #[inline]
    pub fn project_tangent(&self, p: &[f64], v: &mut [f64]) {
        if let TargetKind::Hyperboloid = self.kind {
            let c = minkowski(p, v);
            for (vi, pi) in v.iter_mut().zip(p) {
                *vi += c * pi;
            }
        }
    }

    pub fn exp_into(&self, p: &[f64], v: &[f64], out: &mut [f64]) {
        match self.kind {
            TargetKind::Hyperboloid => {
                let nv = self.norm(v);
                if nv == 0.0 {
                    out.copy_from_slice(p);
                    return;
                }
                let c = nv.cosh();
                let s = sinhc(nv);
                for i in 0..p.len() {
                    out[i] = c * p[i] + s * v[i];
                }
                self.normalize_point(out);
            }
            _ => {
                for i in 0..p.len() {
                    out[i] = p[i] + v[i];
                }
            }
        }
    }

    pub fn log_into(&self, p: &[f64], q: &[f64], out: &mut [f64]) {
        match self.kind {
            TargetKind::Hyperboloid => {
                let k = p.len();
                let mut m = 0.0;
                for i in 0..k {
                    out[i] = q[i] - p[i];
                }
                m += -out[0] * out[0];
                for x in &out[1..k] {
                    m += x * x;
                }
                let m = m.max(0.0);
                if m == 0.0 {
                    out.iter_mut().for_each(|x| *x = 0.0);
                    return;
                }
                // <q-p, q-p>_L = 4 sinh^2(d/2) and <p, q-p>_L = -m/2.
                let d = 2.0 * (0.5 * m.sqrt()).asinh();
                let factor = x_over_sinh(d);
                let half = 0.5 * m;
                for i in 0..k {
                    out[i] = factor * (out[i] - half * p[i]);
                }
                // remove the residual normal component left by rounding
                self.project_tangent(p, out);
            }
            _ => {
                for i in 0..p.len() {
                    out[i] = q[i] - p[i];
                }
            }
        }
    }

    pub fn dist(&self, p: &[f64], q: &[f64]) -> f64 {
        match self.kind {
            TargetKind::Hyperboloid => {
                let mut m = 0.0;
                let d0 = q[0] - p[0];
                m -= d0 * d0;
                for i in 1..p.len() {
                    let di = q[i] - p[i];
                    m += di * di;
                }
                2.0 * (0.5 * m.max(0.0).sqrt()).asinh()
            }
            _ => p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt(),
        }
    }

    /// Distance between the torus points (not the lifts) of `p` and `q`.
    pub fn wrapped_dist(&self, p: &[f64], q: &[f64]) -> f64 {
        match &self.kind {
            TargetKind::FlatTorus { periods } => p
                .iter()
                .zip(q)
                .zip(periods)
                .map(|((a, b), l)| {
                    let d = b - a;
                    let w = d - l * (d / l).round();
                    w * w
                })
                .sum::<f64>()
                .sqrt(),
            _ => self.dist(p, q),
        }
    }

    /// Minimum-image difference q - p on the torus; plain difference otherwise.
    pub fn wrapped_difference(&self, p: &[f64], q: &[f64], out: &mut [f64]) {
        match &self.kind {
            TargetKind::FlatTorus { periods } => {
                for i in 0..p.len() {
                    let d = q[i] - p[i];
                    out[i] = d - periods[i] * (d / periods[i]).round();
                }
            }
            _ => self.log_into(p, q, out),
        }
    }

    /// Parallel transport of `v` from `p` to `q` along the connecting geodesic.
    pub fn transport_into(&self, p: &[f64], q: &[f64], v: &[f64], out: &mut [f64]) {
        match self.kind {
            TargetKind::Hyperboloid => {
                let pq = minkowski(p, q);
                let qv = minkowski(q, v);
                let c = qv / (1.0 - pq);
                for i in 0..v.len() {
                    out[i] = v[i] + c * (p[i] + q[i]);
                }
                self.project_tangent(q, out);
            }
            _ => out.copy_from_slice(v),
        }
    }

    /// Ambient point from chart coordinates (spatial part for the hyperboloid).
    pub fn from_chart(&self, y: &[f64]) -> Vec<f64> {
        match self.kind {
            TargetKind::Hyperboloid => {
                let mut p = Vec::with_capacity(y.len() + 1);
                p.push(0.0);
                p.extend_from_slice(y);
                self.normalize_point(&mut p);
                p
            }
            _ => y.to_vec(),
        }
    }

    pub fn to_chart(&self, p: &[f64]) -> Vec<f64> {
        match self.kind {
            TargetKind::Hyperboloid => p[1..].to_vec(),
            _ => p.to_vec(),
        }
    }

    /// Push-forward of a chart-coordinate direction to T_p N.
    pub fn chart_direction(&self, p: &[f64], dir: &[f64]) -> Vec<f64> {
        match self.kind {
            TargetKind::Hyperboloid => {
                let mut v = Vec::with_capacity(p.len());
                let s: f64 = p[1..].iter().zip(dir).map(|(a, b)| a * b).sum();
                v.push(s / p[0]);
                v.extend_from_slice(dir);
                v
            }
            _ => dir.to_vec(),
        }
    }

    /// Orthonormal frame of T_p N, returned as `dim` ambient vectors.
    pub fn tangent_frame(&self, p: &[f64]) -> Vec<Vec<f64>> {
        let k = self.ambient_dim();
        match self.kind {
            TargetKind::Hyperboloid => {
                let mut frame: Vec<Vec<f64>> = Vec::with_capacity(self.dim);
                for i in 1..k {
                    let mut e = vec![0.0; k];
                    e[i] = 1.0;
                    self.project_tangent(p, &mut e);
                    for f in &frame {
                        let c = minkowski(&e, f);
                        for j in 0..k {
                            e[j] -= c * f[j];
                        }
                    }
                    let n = self.norm(&e);
                    e.iter_mut().for_each(|x| *x /= n);
                    frame.push(e);
                }
                frame
            }
            _ => (0..k)
                .map(|i| {
                    let mut e = vec![0.0; k];
                    e[i] = 1.0;
                    e
                })
                .collect(),
        }
    }

    /// Deviation of a stored point from the chart constraint.
    pub fn constraint_violation(&self, p: &[f64]) -> f64 {
        match self.kind {
            TargetKind::Hyperboloid => {
                let c = (minkowski(p, p) + 1.0).abs();
                if p[0] <= 0.0 {
                    f64::INFINITY
                } else {
                    c
                }
            }
            _ => {
                if p.iter().all(|x| x.is_finite()) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    /// Rotation by +90 degrees in the oriented tangent plane (2-D targets).
    pub fn rotate_quarter(&self, p: &[f64], v: &[f64], out: &mut [f64]) -> Result<()> {
        if self.dim != 2 {
            return Err(Error::DimensionMismatch { expected: 2, got: self.dim });
        }
        match self.kind {
            TargetKind::Hyperboloid => {
                // J v = diag(-1, 1, 1) (p x v), the Lorentzian cross product.
                out[0] = -(p[1] * v[2] - p[2] * v[1]);
                out[1] = p[2] * v[0] - p[0] * v[2];
                out[2] = p[0] * v[1] - p[1] * v[0];
            }
            _ => {
                out[0] = -v[1];
                out[1] = v[0];
            }
        }
        Ok(())
    }

    // ----- sampling ------------------------------------------------------

    /// Random tangent vector at `p` with i.i.d. normal frame components.
    pub fn random_tangent<R: Rng + ?Sized>(&self, rng: &mut R, p: &[f64], scale: f64) -> Vec<f64> {
        let k = self.ambient_dim();
        let mut v = vec![0.0; k];
        for e in self.tangent_frame(p) {
            let c: f64 = rng.sample(StandardNormal);
            for j in 0..k {
                v[j] += scale * c * e[j];
            }
        }
        v
    }

    /// Random point within geodesic distance `radius` of `center`.
    pub fn random_point<R: Rng + ?Sized>(&self, rng: &mut R, center: &[f64], radius: f64) -> Vec<f64> {
        let mut v = self.random_tangent(rng, center, 1.0);
        let n = self.norm(&v);
        let r = radius * rng.random::<f64>().powf(1.0 / self.dim as f64);
        if n > 0.0 {
            v.iter_mut().for_each(|x| *x *= r / n);
        }
        let mut out = vec![0.0; self.ambient_dim()];
        self.exp_into(center, &v, &mut out);
        out
    }

    /// Base point: the chart origin.
    pub fn origin(&self) -> Vec<f64> {
        self.from_chart(&vec![0.0; self.dim])
    }

    // ----- typed API -----------------------------------------------------

    fn check_point(&self, p: &TargetPoint) -> Result<()> {
        if p.chart != self.chart() {
            return Err(Error::ChartMismatch { expected: self.chart().to_string(), got: p.chart.to_string() });
        }
        if p.coords.len() != self.ambient_dim() {
            return Err(Error::DimensionMismatch { expected: self.ambient_dim(), got: p.coords.len() });
        }
        Ok(())
    }

    fn check_vector(&self, p: &TargetPoint, v: &TangentVector) -> Result<()> {
        self.check_point(p)?;
        self.check_point(&v.base)?;
        if v.components.len() != self.ambient_dim() {
            return Err(Error::DimensionMismatch { expected: self.ambient_dim(), got: v.components.len() });
        }
        Ok(())
    }

    pub fn point(&self, coords: Vec<f64>) -> Result<TargetPoint> {
        let p = TargetPoint { chart: self.chart(), coords };
        self.check_point(&p)?;
        let viol = self.constraint_violation(&p.coords);
        if viol > 1e-9 {
            return Err(Error::OffManifold(format!("constraint violation {viol:e}")));
        }
        Ok(p)
    }

    pub fn point_from_chart(&self, y: &[f64]) -> Result<TargetPoint> {
        if y.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: y.len() });
        }
        Ok(TargetPoint { chart: self.chart(), coords: self.from_chart(y) })
    }

    pub fn tangent(&self, base: &TargetPoint, components: Vec<f64>) -> Result<TangentVector> {
        self.check_point(base)?;
        if components.len() != self.ambient_dim() {
            return Err(Error::DimensionMismatch { expected: self.ambient_dim(), got: components.len() });
        }
        Ok(TangentVector { base: base.clone(), components })
    }

    pub fn zero_tangent(&self, base: &TargetPoint) -> TangentVector {
        TangentVector { base: base.clone(), components: vec![0.0; self.ambient_dim()] }
    }

    pub fn exp_map(&self, p: &TargetPoint, v: &TangentVector) -> Result<TargetPoint> {
        self.check_vector(p, v)?;
        let mut out = vec![0.0; self.ambient_dim()];
        self.exp_into(&p.coords, &v.components, &mut out);
        Ok(TargetPoint { chart: p.chart, coords: out })
    }

    pub fn log_map(&self, p: &TargetPoint, q: &TargetPoint) -> Result<TangentVector> {
        self.check_point(p)?;
        self.check_point(q)?;
        let mut out = vec![0.0; self.ambient_dim()];
        self.log_into(&p.coords, &q.coords, &mut out);
        Ok(TangentVector { base: p.clone(), components: out })
    }

    pub fn distance(&self, p: &TargetPoint, q: &TargetPoint) -> Result<f64> {
        self.check_point(p)?;
        self.check_point(q)?;
        Ok(self.dist(&p.coords, &q.coords))
    }

    pub fn parallel_transport(&self, p: &TargetPoint, q: &TargetPoint, v: &TangentVector) -> Result<TangentVector> {
        self.check_vector(p, v)?;
        self.check_point(q)?;
        if p == q {
            return Ok(TangentVector { base: q.clone(), components: v.components.clone() });
        }
        let mut out = vec![0.0; self.ambient_dim()];
        self.transport_into(&p.coords, &q.coords, &v.components, &mut out);
        Ok(TangentVector { base: q.clone(), components: out })
    }

    pub fn sectional_curvature(&self, p: &TargetPoint, u: &TangentVector, w: &TangentVector) -> Result<f64> {
        self.check_vector(p, u)?;
        self.check_vector(p, w)?;
        let uu = self.inner(&u.components, &u.components);
        let ww = self.inner(&w.components, &w.components);
        let uw = self.inner(&u.components, &w.components);
        let area = (uu * ww - uw * uw).max(0.0).sqrt();
        if area < 1e-12 {
            return Err(Error::DegeneratePlane(area));
        }
        Ok(match self.kind {
            TargetKind::Hyperboloid => -1.0,
            _ => 0.0,
        })
    }

    /// Point at parameter `t` on the geodesic from `p` to `q`; `t` outside
    /// [0, 1] extends the geodesic.
    pub fn geodesic_point(&self, p: &TargetPoint, q: &TargetPoint, t: f64) -> Result<TargetPoint> {
        self.check_point(p)?;
        self.check_point(q)?;
        if t == 0.0 {
            return Ok(p.clone());
        }
        if t == 1.0 {
            return Ok(q.clone());
        }
        let mut out = vec![0.0; self.ambient_dim()];
        self.geodesic_into(&p.coords, &q.coords, t, &mut out);
        Ok(TargetPoint { chart: p.chart, coords: out })
    }

    /// Strict variant: rejects `t` outside [0, 1].
    pub fn geodesic_point_strict(&self, p: &TargetPoint, q: &TargetPoint, t: f64) -> Result<TargetPoint> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::OutOfRange { name: "t", value: t });
        }
        self.geodesic_point(p, q, t)
    }

    pub fn geodesic_into(&self, p: &[f64], q: &[f64], t: f64, out: &mut [f64]) {
        if t == 0.0 {
            out.copy_from_slice(p);
            return;
        }
        if t == 1.0 {
            out.copy_from_slice(q);
            return;
        }
        let mut v = vec![0.0; p.len()];
        self.log_into(p, q, &mut v);
        v.iter_mut().for_each(|x| *x *= t);
        self.exp_into(p, &v, out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn h2() -> TargetManifold {
        TargetManifold::hyperboloid(2).unwrap()
    }

    /// RK4 integration of x'' = <x', x'>_L x on the hyperboloid.
    fn rk4_geodesic(p: &[f64], v: &[f64], steps: usize) -> (Vec<f64>, Vec<f64>, f64) {
        let h = 1.0 / steps as f64;
        let mut x = p.to_vec();
        let mut u = v.to_vec();
        let mut len = 0.0;
        let acc = |x: &[f64], u: &[f64]| -> Vec<f64> {
            let s = minkowski(u, u);
            x.iter().map(|xi| s * xi).collect()
        };
        for _ in 0..steps {
            let k1x = u.clone();
            let k1u = acc(&x, &u);
            let x2: Vec<f64> = (0..3).map(|i| x[i] + 0.5 * h * k1x[i]).collect();
            let u2: Vec<f64> = (0..3).map(|i| u[i] + 0.5 * h * k1u[i]).collect();
            let k2u = acc(&x2, &u2);
            let x3: Vec<f64> = (0..3).map(|i| x[i] + 0.5 * h * u2[i]).collect();
            let u3: Vec<f64> = (0..3).map(|i| u[i] + 0.5 * h * k2u[i]).collect();
            let k3u = acc(&x3, &u3);
            let x4: Vec<f64> = (0..3).map(|i| x[i] + h * u3[i]).collect();
            let u4: Vec<f64> = (0..3).map(|i| u[i] + h * k3u[i]).collect();
            let k4u = acc(&x4, &u4);
            len += h * minkowski(&u, &u).sqrt();
            for i in 0..3 {
                x[i] += h / 6.0 * (k1x[i] + 2.0 * u2[i] + 2.0 * u3[i] + u4[i]);
                u[i] += h / 6.0 * (k1u[i] + 2.0 * k2u[i] + 2.0 * k3u[i] + k4u[i]);
            }
        }
        (x, u, len)
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn euclidean_exp_log_dist() {
        let e = TargetManifold::euclidean(2).unwrap();
        let p = e.point(vec![1.0, 2.0]).unwrap();
        let v = e.tangent(&p, vec![0.5, 0.0]).unwrap();
        assert_eq!(e.exp_map(&p, &v).unwrap().coords, vec![1.5, 2.0]);
        let q = e.point(vec![4.0, 6.0]).unwrap();
        assert_eq!(e.log_map(&p, &q).unwrap().components, vec![3.0, 4.0]);
        assert_eq!(e.distance(&p, &q).unwrap(), 5.0);
        let w = e.tangent(&p, vec![0.3, -0.2]).unwrap();
        assert_eq!(e.parallel_transport(&p, &q, &w).unwrap().components, w.components);
        let mid = e.geodesic_point(&p, &q, 0.25).unwrap();
        assert!(close(&mid.coords, &[1.75, 3.0], 1e-15));
    }

    #[test]
    fn zero_velocity_is_identity() {
        for m in [TargetManifold::euclidean(2).unwrap(), h2(), TargetManifold::flat_torus(vec![1.0, 2.0]).unwrap()] {
            let p = m.point_from_chart(&[0.3, -0.7]).unwrap();
            let z = m.zero_tangent(&p);
            assert_eq!(m.exp_map(&p, &z).unwrap(), p);
            assert!(m.log_map(&p, &p).unwrap().components.iter().all(|x| *x == 0.0));
            assert_eq!(m.distance(&p, &p).unwrap(), 0.0);
        }
    }

    #[test]
    fn hyperboloid_exp_matches_rk4() {
        let m = h2();
        let p = m.point(vec![1.0, 0.0, 0.0]).unwrap();
        let v = m.tangent(&p, vec![0.0, 1.0, 0.0]).unwrap();
        let q = m.exp_map(&p, &v).unwrap();
        let (x, _, _) = rk4_geodesic(&p.coords, &v.components, 10_000);
        assert!(close(&q.coords, &x, 1e-9), "{:?} vs {:?}", q.coords, x);
        assert!(close(&q.coords, &[1f64.cosh(), 1f64.sinh(), 0.0], 1e-12));
        // generic direction at a generic base point
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = m.random_point(&mut rng, &m.origin(), 1.5);
        let w = m.random_tangent(&mut rng, &b, 0.8);
        let mut out = vec![0.0; 3];
        m.exp_into(&b, &w, &mut out);
        let (x, _, _) = rk4_geodesic(&b, &w, 10_000);
        assert!(close(&out, &x, 1e-8));
    }

    #[test]
    fn hyperboloid_log_and_dist() {
        let m = h2();
        let p = m.point(vec![1.0, 0.0, 0.0]).unwrap();
        let q = m.point(vec![1f64.cosh(), 1f64.sinh(), 0.0]).unwrap();
        let v = m.log_map(&p, &q).unwrap();
        assert!(close(&v.components, &[0.0, 1.0, 0.0], 1e-12));
        let q2 = m.point(vec![2f64.cosh(), 2f64.sinh(), 0.0]).unwrap();
        assert!((m.distance(&p, &q2).unwrap() - 2.0).abs() < 1e-12);
        // arc-length oracle
        let v2 = m.log_map(&p, &q2).unwrap();
        let (_, _, len) = rk4_geodesic(&p.coords, &v2.components, 10_000);
        assert!((len - 2.0).abs() < 1e-9);
        let mid = m.geodesic_point(&p, &q2, 0.5).unwrap();
        assert!(close(&mid.coords, &q.coords, 1e-12));
        assert_eq!(m.geodesic_point(&p, &q2, 0.0).unwrap(), p);
        assert_eq!(m.geodesic_point(&p, &q2, 1.0).unwrap(), q2);
        assert!(m.geodesic_point_strict(&p, &q2, 1.5).is_err());
        assert!(m.geodesic_point(&p, &q2, 1.5).is_ok());
    }

    #[test]
    fn transport_of_velocity_matches_closed_form_and_ladder() {
        let m = h2();
        let p = m.point(vec![1.0, 0.0, 0.0]).unwrap();
        let q = m.point(vec![2f64.cosh(), 2f64.sinh(), 0.0]).unwrap();
        let v = m.log_map(&p, &q).unwrap();
        let t = m.parallel_transport(&p, &q, &v).unwrap();
        // velocity of the unit-time geodesic at its endpoint
        let mut back = vec![0.0; 3];
        m.log_into(&q.coords, &p.coords, &mut back);
        let expected: Vec<f64> = back.iter().map(|x| -x).collect();
        assert!(close(&t.components, &expected, 1e-12));

        // Schild's ladder for a vector transverse to the geodesic, with one
        // Richardson step in the rung size to remove the O(eps) bias.
        let w = vec![0.0, 0.3, 0.4];
        let ladder = |eps: f64| {
            let rungs = 4_000;
            let mut xk = p.coords.clone();
            let mut wk = w.clone();
            let mut a = vec![0.0; 3];
            let mut mid = vec![0.0; 3];
            let mut b = vec![0.0; 3];
            let mut next = vec![0.0; 3];
            for k in 1..=rungs {
                m.geodesic_into(&p.coords, &q.coords, k as f64 / rungs as f64, &mut next);
                let step: Vec<f64> = wk.iter().map(|x| x * eps).collect();
                m.exp_into(&xk, &step, &mut a);
                m.geodesic_into(&a, &next, 0.5, &mut mid);
                m.geodesic_into(&xk, &mid, 2.0, &mut b);
                let mut l = vec![0.0; 3];
                m.log_into(&next, &b, &mut l);
                wk = l.iter().map(|x| x / eps).collect();
                xk.copy_from_slice(&next);
            }
            wk
        };
        let (w1, w2) = (ladder(2e-3), ladder(1e-3));
        let wk: Vec<f64> = w1.iter().zip(&w2).map(|(a, b)| 2.0 * b - a).collect();
        let mut tw = vec![0.0; 3];
        m.transport_into(&p.coords, &q.coords, &w, &mut tw);
        assert!(close(&tw, &wk, 1e-5), "{tw:?} vs {wk:?}");
    }

    #[test]
    fn curvature_matches_angle_defect() {
        let m = h2();
        let p = m.point(vec![1.0, 0.0, 0.0]).unwrap();
        let u = m.tangent(&p, vec![0.0, 1.0, 0.0]).unwrap();
        let w = m.tangent(&p, vec![0.0, 0.0, 1.0]).unwrap();
        let k = m.sectional_curvature(&p, &u, &w).unwrap();
        assert_eq!(k, -1.0);
        assert!(m.sectional_curvature(&p, &u, &u).is_err());

        let s = 0.02;
        let a = p.coords.clone();
        let mut b = vec![0.0; 3];
        let mut c = vec![0.0; 3];
        m.exp_into(&a, &[0.0, s, 0.0], &mut b);
        m.exp_into(&a, &[0.0, 0.3 * s, s], &mut c);
        let angle = |x: &[f64], y: &[f64], z: &[f64]| {
            let mut l1 = vec![0.0; 3];
            let mut l2 = vec![0.0; 3];
            m.log_into(x, y, &mut l1);
            m.log_into(x, z, &mut l2);
            (m.inner(&l1, &l2) / (m.norm(&l1) * m.norm(&l2))).acos()
        };
        let sum = angle(&a, &b, &c) + angle(&b, &c, &a) + angle(&c, &a, &b);
        let (ab, ac, bc) = (m.dist(&a, &b), m.dist(&a, &c), m.dist(&b, &c));
        let sp = 0.5 * (ab + ac + bc);
        let area = (sp * (sp - ab) * (sp - ac) * (sp - bc)).sqrt();
        let k_est = (sum - std::f64::consts::PI) / area;
        assert!((k_est - k).abs() < 1e-2, "estimated {k_est}");

        let e = TargetManifold::flat_torus(vec![1.0, 1.0]).unwrap();
        let q = e.point(vec![0.2, 0.1]).unwrap();
        let u = e.tangent(&q, vec![1.0, 0.0]).unwrap();
        let w = e.tangent(&q, vec![0.0, 1.0]).unwrap();
        assert_eq!(e.sectional_curvature(&q, &u, &w).unwrap(), 0.0);
    }

    #[test]
    fn chart_mismatch_is_an_error() {
        let m = h2();
        let e = TargetManifold::euclidean(2).unwrap();
        let p = e.point(vec![0.0, 0.0]).unwrap();
        assert!(matches!(m.distance(&p, &p), Err(Error::ChartMismatch { .. })));
        assert!(m.point(vec![2.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn rotation_is_orthogonal_isometry() {
        let m = h2();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let p = m.random_point(&mut rng, &m.origin(), 2.0);
            let v = m.random_tangent(&mut rng, &p, 1.0);
            let mut jv = vec![0.0; 3];
            m.rotate_quarter(&p, &v, &mut jv).unwrap();
            assert!(minkowski(&p, &jv).abs() < 1e-10);
            assert!(m.inner(&v, &jv).abs() < 1e-10);
            assert!((m.norm(&v) - m.norm(&jv)).abs() < 1e-10);
        }
    }

    #[test]
    fn wrapped_distance_uses_minimum_image() {
        let t = TargetManifold::flat_torus(vec![1.0, 2.0]).unwrap();
        assert!((t.wrapped_dist(&[0.05, 0.0], &[0.95, 1.9]) - (0.01f64 + 0.01).sqrt()).abs() < 1e-12);
        assert!((t.dist(&[0.0, 0.0], &[3.0, 4.0]) - 5.0).abs() < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn pt(m: &TargetManifold, y: &[f64]) -> Vec<f64> {
            m.from_chart(y)
        }

        fn tangent_at(m: &TargetManifold, p: &[f64], y: &[f64]) -> Vec<f64> {
            let mut v = m.chart_direction(p, y);
            m.project_tangent(p, &mut v);
            v
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(300))]

            #[test]
            fn round_trip_exp_log(a in -2.0..2.0f64, b in -2.0..2.0f64,
                                  c in -3.0..3.0f64, d in -3.0..3.0f64) {
                let m = TargetManifold::hyperboloid(2).unwrap();
                let p = pt(&m, &[a, b]);
                let mut v = tangent_at(&m, &p, &[c, d]);
                let n = m.norm(&v);
                if n > 5.0 { v.iter_mut().for_each(|x| *x *= 5.0 / n); }
                let mut q = vec![0.0; 3];
                m.exp_into(&p, &v, &mut q);
                prop_assert!(m.constraint_violation(&q) < 1e-9 * (1.0 + q[0] * q[0]));
                let mut w = vec![0.0; 3];
                m.log_into(&p, &q, &mut w);
                for i in 0..3 {
                    prop_assert!((w[i] - v[i]).abs() < 1e-8 * (1.0 + p[0]).powi(2), "{w:?} {v:?}");
                }
                prop_assert!((m.norm(&w) - m.dist(&p, &q)).abs() < 1e-9);
            }

            #[test]
            fn transport_is_isometric(a in -2.0..2.0f64, b in -2.0..2.0f64,
                                      c in -2.0..2.0f64, d in -2.0..2.0f64,
                                      e in -1.0..1.0f64, f in -1.0..1.0f64,
                                      g in -1.0..1.0f64, h in -1.0..1.0f64) {
                let m = TargetManifold::hyperboloid(2).unwrap();
                let p = pt(&m, &[a, b]);
                let q = pt(&m, &[c, d]);
                let u = tangent_at(&m, &p, &[e, f]);
                let w = tangent_at(&m, &p, &[g, h]);
                let mut tu = vec![0.0; 3];
                let mut tw = vec![0.0; 3];
                m.transport_into(&p, &q, &u, &mut tu);
                m.transport_into(&p, &q, &w, &mut tw);
                prop_assert!((m.norm(&tu) - m.norm(&u)).abs() < 1e-9);
                prop_assert!((m.inner(&tu, &tw) - m.inner(&u, &w)).abs() < 1e-9);
                prop_assert!(minkowski(&q, &tu).abs() < 1e-9 * (1.0 + q[0]));
            }

            #[test]
            fn dist_is_symmetric_and_triangular(a in -2.0..2.0f64, b in -2.0..2.0f64,
                                                c in -2.0..2.0f64, d in -2.0..2.0f64,
                                                e in -2.0..2.0f64, f in -2.0..2.0f64) {
                let m = TargetManifold::hyperboloid(2).unwrap();
                let (p, q, r) = (pt(&m, &[a, b]), pt(&m, &[c, d]), pt(&m, &[e, f]));
                prop_assert!((m.dist(&p, &q) - m.dist(&q, &p)).abs() < 1e-12);
                prop_assert!(m.dist(&p, &r) <= m.dist(&p, &q) + m.dist(&q, &r) + 1e-9);
            }

            #[test]
            fn squared_distance_convex_along_geodesic_pairs(
                a in -1.5..1.5f64, b in -1.5..1.5f64, c in -1.5..1.5f64, d in -1.5..1.5f64,
                e in -1.5..1.5f64, f in -1.5..1.5f64, g in -1.5..1.5f64, h in -1.5..1.5f64) {
                let m = TargetManifold::hyperboloid(2).unwrap();
                let (p0, p1, q0, q1) = (pt(&m, &[a, b]), pt(&m, &[c, d]), pt(&m, &[e, f]), pt(&m, &[g, h]));
                let n = 20;
                let mut x = vec![0.0; 3];
                let mut y = vec![0.0; 3];
                let vals: Vec<f64> = (0..=n).map(|k| {
                    let t = k as f64 / n as f64;
                    m.geodesic_into(&p0, &p1, t, &mut x);
                    m.geodesic_into(&q0, &q1, t, &mut y);
                    m.dist(&x, &y).powi(2)
                }).collect();
                for k in 1..n {
                    prop_assert!(vals[k - 1] - 2.0 * vals[k] + vals[k + 1] >= -1e-7);
                }
            }
        }
    }
}
