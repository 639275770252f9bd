//! Structured finite-difference meshes on the domain manifold.
//!
//! Nodes are laid out x-fastest: `node = i + nx * j`. One-dimensional meshes
//! have a single row (`ny = 1`).

use std::io::Write;
use std::ops::{Deref, DerefMut};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{conjugate_gradient, dot};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    IntervalDirichlet,
    RectangleDirichlet,
    TorusPeriodic,
}

/// Conformal factor φ = a · sin(m_x π x / L_x) · sin(m_y π y / L_y).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConformalFactor {
    pub amplitude: f64,
    pub modes: [u32; 2],
}

impl ConformalFactor {
    pub fn eval(&self, x: [f64; 2], lengths: [f64; 2]) -> f64 {
        let pi = std::f64::consts::PI;
        self.amplitude
            * (self.modes[0] as f64 * pi * x[0] / lengths[0]).sin()
            * (self.modes[1] as f64 * pi * x[1] / lengths[1]).sin()
    }
}

/// Nodes outside the disk become boundary nodes with zero weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiskMask {
    pub center: [f64; 2],
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSpec {
    pub topology: Topology,
    pub nodes: Vec<usize>,
    pub lengths: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conformal: Option<ConformalFactor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disk: Option<DiskMask>,
}

impl MeshSpec {
    pub fn interval(length: f64, nodes: usize) -> Self {
        Self {
            topology: Topology::IntervalDirichlet,
            nodes: vec![nodes],
            lengths: vec![length],
            conformal: None,
            disk: None,
        }
    }

    pub fn rectangle(lengths: [f64; 2], nodes: [usize; 2]) -> Self {
        Self {
            topology: Topology::RectangleDirichlet,
            nodes: nodes.to_vec(),
            lengths: lengths.to_vec(),
            conformal: None,
            disk: None,
        }
    }

    pub fn torus(lengths: &[f64], nodes: &[usize]) -> Self {
        Self {
            topology: Topology::TorusPeriodic,
            nodes: nodes.to_vec(),
            lengths: lengths.to_vec(),
            conformal: None,
            disk: None,
        }
    }

    pub fn with_conformal(mut self, amplitude: f64, modes: [u32; 2]) -> Self {
        self.conformal = Some(ConformalFactor { amplitude, modes });
        self
    }

    pub fn with_disk(mut self, center: [f64; 2], radius: f64) -> Self {
        self.disk = Some(DiskMask { center, radius });
        self
    }

    /// Same spec with `n` nodes on every axis.
    pub fn with_resolution(mut self, n: usize) -> Self {
        self.nodes.iter_mut().for_each(|k| *k = n);
        self
    }
}

/// One real value per mesh node.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScalarField(pub Vec<f64>);

impl Deref for ScalarField {
    type Target = Vec<f64>;
    fn deref(&self) -> &Vec<f64> {
        &self.0
    }
}

impl DerefMut for ScalarField {
    fn deref_mut(&mut self) -> &mut Vec<f64> {
        &mut self.0
    }
}

impl From<Vec<f64>> for ScalarField {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl ScalarField {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }
}

/// A grid neighbour together with the number of periods crossed per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Neighbor {
    pub node: usize,
    pub wraps: [i64; 2],
}

#[derive(Debug, Clone)]
pub struct DomainMesh {
    spec: MeshSpec,
    dim: usize,
    n: [usize; 2],
    h: [f64; 2],
    lengths: [f64; 2],
    phi: Vec<f64>,
    e2phi: Vec<f64>,
    boundary: Vec<bool>,
    weights: Vec<f64>,
    eigen: OnceLock<std::result::Result<(f64, ScalarField), usize>>,
    boundary_distance: OnceLock<Vec<f64>>,
}

pub fn build_mesh(spec: &MeshSpec) -> Result<DomainMesh> {
    let dim = spec.nodes.len();
    let expected_dim = match spec.topology {
        Topology::IntervalDirichlet => Some(1),
        Topology::RectangleDirichlet => Some(2),
        Topology::TorusPeriodic => None,
    };
    if !(1..=2).contains(&dim) || expected_dim.is_some_and(|d| d != dim) {
        return Err(Error::InvalidMesh(format!("{:?} mesh cannot have {dim} axes", spec.topology)));
    }
    if spec.lengths.len() != dim {
        return Err(Error::InvalidMesh("one length per axis is required".into()));
    }
    if spec.nodes.iter().any(|&k| k < 3) {
        return Err(Error::InvalidMesh("at least 3 nodes per axis are required".into()));
    }
    if spec.lengths.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
        return Err(Error::InvalidMesh("axis lengths must be positive".into()));
    }
    let periodic = spec.topology == Topology::TorusPeriodic;
    let mut n = [1usize; 2];
    let mut h = [1.0f64; 2];
    let mut lengths = [1.0f64; 2];
    for a in 0..dim {
        n[a] = spec.nodes[a];
        lengths[a] = spec.lengths[a];
        h[a] = if periodic { lengths[a] / n[a] as f64 } else { lengths[a] / (n[a] - 1) as f64 };
    }
    if let Some(c) = &spec.conformal {
        if dim == 1 {
            return Err(Error::InvalidMesh("a conformal factor on a 1-D domain is trivially flat".into()));
        }
        if !c.amplitude.is_finite() {
            return Err(Error::InvalidMesh("conformal amplitude must be finite".into()));
        }
        if periodic && c.modes.iter().any(|m| m % 2 != 0) {
            return Err(Error::InvalidMesh("conformal factor has mismatched periodicity on the torus".into()));
        }
    }
    if let Some(d) = &spec.disk {
        if dim != 2 || periodic {
            return Err(Error::InvalidMesh("disk masks need a rectangle mesh".into()));
        }
        if !(d.radius > 0.0) {
            return Err(Error::InvalidMesh("disk radius must be positive".into()));
        }
    }

    let len = n[0] * n[1];
    let mut phi = vec![0.0; len];
    let mut boundary = vec![false; len];
    let mut weights = vec![0.0; len];
    for j in 0..n[1] {
        for i in 0..n[0] {
            let k = i + n[0] * j;
            let x = [i as f64 * h[0], if dim == 2 { j as f64 * h[1] } else { 0.0 }];
            if let Some(c) = &spec.conformal {
                phi[k] = c.eval(x, lengths);
            }
            let mut w = 1.0;
            let mut on_edge = false;
            if !periodic {
                for (a, idx) in [i, j].into_iter().enumerate().take(dim) {
                    if idx == 0 || idx == n[a] - 1 {
                        on_edge = true;
                        w *= 0.5;
                    }
                }
            }
            w *= h[0] * if dim == 2 { h[1] } else { 1.0 };
            let outside = spec.disk.as_ref().is_some_and(|d| {
                let dx = x[0] - d.center[0];
                let dy = x[1] - d.center[1];
                (dx * dx + dy * dy).sqrt() > d.radius
            });
            boundary[k] = on_edge || outside;
            weights[k] = if outside { 0.0 } else { w * (2.0 * phi[k]).exp() };
        }
    }
    if spec.disk.is_some() && boundary.iter().all(|b| *b) {
        return Err(Error::InvalidMesh("disk mask leaves no interior nodes".into()));
    }
    let e2phi = phi.iter().map(|p| (2.0 * p).exp()).collect();
    Ok(DomainMesh {
        spec: spec.clone(),
        dim,
        n,
        h,
        lengths,
        phi,
        e2phi,
        boundary,
        weights,
        eigen: OnceLock::new(),
        boundary_distance: OnceLock::new(),
    })
}

impl DomainMesh {
    pub fn spec(&self) -> &MeshSpec {
        &self.spec
    }

    pub fn topology(&self) -> Topology {
        self.spec.topology
    }

    pub fn is_periodic(&self) -> bool {
        self.spec.topology == Topology::TorusPeriodic
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.n[0] * self.n[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn nodes_per_axis(&self) -> &[usize] {
        &self.n[..self.dim]
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.h[axis]
    }

    pub fn min_spacing(&self) -> f64 {
        self.h[..self.dim].iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths[..self.dim]
    }

    pub fn volume(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    /// e^{2φ} per node.
    pub fn conformal_weight(&self) -> &[f64] {
        &self.e2phi
    }

    pub fn is_flat(&self) -> bool {
        self.phi.iter().all(|p| *p == 0.0)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn boundary_mask(&self) -> &[bool] {
        &self.boundary
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        self.boundary[node]
    }

    pub fn interior_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&k| !self.boundary[k])
    }

    pub fn boundary_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&k| self.boundary[k])
    }

    pub fn grid_index(&self, node: usize) -> [usize; 2] {
        [node % self.n[0], node / self.n[0]]
    }

    pub fn node_at(&self, i: usize, j: usize) -> usize {
        i + self.n[0] * j
    }

    pub fn coords(&self, node: usize) -> [f64; 2] {
        let [i, j] = self.grid_index(node);
        [i as f64 * self.h[0], if self.dim == 2 { j as f64 * self.h[1] } else { 0.0 }]
    }

    pub fn sample<F: Fn([f64; 2]) -> f64>(&self, f: F) -> ScalarField {
        ScalarField((0..self.len()).map(|k| f(self.coords(k))).collect())
    }

    /// Grid node displaced by (di, dj); `None` past a Dirichlet edge.
    pub fn offset(&self, node: usize, di: isize, dj: isize) -> Option<Neighbor> {
        let [i, j] = self.grid_index(node);
        let mut wraps = [0i64; 2];
        let mut idx = [0usize; 2];
        for (a, (base, d)) in [(i, di), (j, dj)].into_iter().enumerate() {
            if a >= self.dim {
                if d != 0 {
                    return None;
                }
                idx[a] = 0;
                continue;
            }
            let n = self.n[a] as isize;
            let t = base as isize + d;
            if self.is_periodic() {
                wraps[a] = t.div_euclid(n) as i64;
                idx[a] = t.rem_euclid(n) as usize;
            } else if (0..n).contains(&t) {
                idx[a] = t as usize;
            } else {
                return None;
            }
        }
        Some(Neighbor { node: self.node_at(idx[0], idx[1]), wraps })
    }

    pub fn step(&self, node: usize, axis: usize, d: isize) -> Option<Neighbor> {
        if axis == 0 {
            self.offset(node, d, 0)
        } else {
            self.offset(node, 0, d)
        }
    }

    /// Second-order first-derivative stencil along `axis`, omitting the
    /// centre term: central in the interior and on tori, one-sided at
    /// Dirichlet edges.
    pub fn first_derivative_stencil(&self, node: usize, axis: usize) -> [(Neighbor, f64); 2] {
        let h = self.h[axis];
        match (self.step(node, axis, -1), self.step(node, axis, 1)) {
            (Some(m), Some(p)) => [(p, 0.5 / h), (m, -0.5 / h)],
            (None, Some(p)) => {
                let p2 = self.step(node, axis, 2).expect("at least 3 nodes per axis");
                [(p, 2.0 / h), (p2, -0.5 / h)]
            }
            (Some(m), None) => {
                let m2 = self.step(node, axis, -2).expect("at least 3 nodes per axis");
                [(m, -2.0 / h), (m2, 0.5 / h)]
            }
            (None, None) => unreachable!("axis has at least 3 nodes"),
        }
    }

    fn check_size(&self, f: &[f64]) -> Result<()> {
        if f.len() != self.len() {
            return Err(Error::SizeMismatch { expected: self.len(), got: f.len() });
        }
        Ok(())
    }

    fn require_dirichlet(&self) -> Result<()> {
        if self.is_periodic() {
            return Err(Error::Topology { required: "Dirichlet" });
        }
        Ok(())
    }

    /// Flat five-point (three-point in 1-D) Laplacian at a node whose full
    /// stencil exists.
    pub(crate) fn flat_laplacian_at(&self, f: &[f64], k: usize) -> f64 {
        let mut s = 0.0;
        for a in 0..self.dim {
            let p = self.step(k, a, 1).expect("interior stencil").node;
            let m = self.step(k, a, -1).expect("interior stencil").node;
            s += (f[p] + f[m] - 2.0 * f[k]) / (self.h[a] * self.h[a]);
        }
        s
    }

    /// -Δ₀ on interior nodes, zero on boundary nodes.
    fn apply_dirichlet_neg_laplacian(&self, v: &[f64], out: &mut [f64]) {
        for k in 0..self.len() {
            out[k] = if self.boundary[k] { 0.0 } else { -self.flat_laplacian_at(v, k) };
        }
    }

    /// Continuum-style gradient energy ∫|∇w|² assembled from edge
    /// differences; equals ⟨-Δw, w⟩ for interior-supported w.
    pub fn gradient_energy(&self, w: &[f64]) -> Result<f64> {
        self.check_size(w)?;
        let cell = self.h[..self.dim].iter().product::<f64>();
        let masked = self.spec.disk.is_some();
        let mut total = 0.0;
        for k in 0..self.len() {
            for a in 0..self.dim {
                let Some(nb) = self.step(k, a, 1) else {
                    continue;
                };
                let mut weight = cell;
                if masked {
                    if self.boundary[k] && self.boundary[nb.node] {
                        continue;
                    }
                } else if !self.is_periodic() && self.dim == 2 {
                    let other = self.grid_index(k)[1 - a];
                    if other == 0 || other == self.n[1 - a] - 1 {
                        weight *= 0.5;
                    }
                }
                let d = (w[nb.node] - w[k]) / self.h[a];
                total += weight * d * d;
            }
        }
        Ok(total)
    }

    /// Distance from each node to the nearest boundary node; zero on tori.
    pub fn distance_to_boundary(&self) -> &[f64] {
        self.boundary_distance.get_or_init(|| {
            if self.is_periodic() {
                return vec![0.0; self.len()];
            }
            let frontier: Vec<[f64; 2]> = self
                .boundary_nodes()
                .filter(|&b| {
                    let edge = (0..self.dim).any(|a| self.step(b, a, 1).is_none() || self.step(b, a, -1).is_none());
                    edge || (0..self.dim).any(|a| {
                        [-1, 1].into_iter().any(|d| self.step(b, a, d).is_some_and(|nb| !self.boundary[nb.node]))
                    })
                })
                .map(|b| self.coords(b))
                .collect();
            (0..self.len())
                .map(|k| {
                    if self.boundary[k] {
                        return 0.0;
                    }
                    let x = self.coords(k);
                    frontier
                        .iter()
                        .map(|y| ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2)).sqrt())
                        .fold(f64::INFINITY, f64::min)
                })
                .collect()
        })
    }

    pub fn write_csv<W: Write>(&self, columns: &[(&str, &[f64])], mut out: W) -> Result<()> {
        for (_, c) in columns {
            self.check_size(c)?;
        }
        let mut header = vec!["x"];
        if self.dim == 2 {
            header.push("y");
        }
        header.extend(columns.iter().map(|(n, _)| *n));
        writeln!(out, "{}", header.join(","))?;
        for k in 0..self.len() {
            let x = self.coords(k);
            let mut row: Vec<String> = vec![format!("{:.17e}", x[0])];
            if self.dim == 2 {
                row.push(format!("{:.17e}", x[1]));
            }
            row.extend(columns.iter().map(|(_, c)| format!("{:.17e}", c[k])));
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Laplace–Beltrami operator e^{-2φ} Δ₀; boundary entries are 0 on
/// Dirichlet meshes.
pub fn laplace_beltrami(mesh: &DomainMesh, field: &[f64]) -> Result<ScalarField> {
    mesh.check_size(field)?;
    Ok(ScalarField(
        (0..mesh.len())
            .map(|k| if mesh.boundary[k] { 0.0 } else { mesh.flat_laplacian_at(field, k) / mesh.e2phi[k] })
            .collect(),
    ))
}

pub fn integrate(mesh: &DomainMesh, field: &[f64]) -> Result<f64> {
    mesh.check_size(field)?;
    Ok(dot(&mesh.weights, field))
}

const EIGEN_MAX_ITER: usize = 10_000;

/// Smallest Dirichlet eigenvalue of -Δ by inverse power iteration; the
/// eigenfield has unit L² norm and positive mean. Cached on the mesh.
pub fn first_dirichlet_eigenvalue(mesh: &DomainMesh) -> Result<(f64, ScalarField)> {
    mesh.require_dirichlet()?;
    let cached = mesh.eigen.get_or_init(|| inverse_iteration(mesh));
    match cached {
        Ok(pair) => Ok(pair.clone()),
        Err(it) => Err(Error::NoConvergence { what: "inverse power iteration", iterations: *it }),
    }
}

fn inverse_iteration(mesh: &DomainMesh) -> std::result::Result<(f64, ScalarField), usize> {
    let n = mesh.len();
    let b_norm = |v: &[f64]| -> f64 { (0..n).map(|k| mesh.weights[k] * v[k] * v[k]).sum::<f64>().sqrt() };
    let mut x: Vec<f64> = (0..n).map(|k| if mesh.boundary[k] { 0.0 } else { 1.0 }).collect();
    let s = b_norm(&x);
    x.iter_mut().for_each(|v| *v /= s);
    let mut rho_prev = f64::INFINITY;
    let mut ax = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    let cg_cap = 50 * n + 1000;
    for it in 1..=EIGEN_MAX_ITER {
        // A y = B x with A = -Δ₀ h^d and B = diag(weights)
        let cell: f64 = mesh.h[..mesh.dim].iter().product();
        for k in 0..n {
            rhs[k] = mesh.weights[k] * x[k] / cell;
        }
        let mut y = x.clone();
        if rho_prev.is_finite() {
            y.iter_mut().for_each(|v| *v /= rho_prev);
        }
        conjugate_gradient(|v, out| mesh.apply_dirichlet_neg_laplacian(v, out), &rhs, &mut y, 1e-13, cg_cap)
            .map_err(|_| it)?;
        let s = b_norm(&y);
        y.iter_mut().for_each(|v| *v /= s);
        mesh.apply_dirichlet_neg_laplacian(&y, &mut ax);
        let rho = cell * dot(&ax, &y);
        x = y;
        if (rho - rho_prev).abs() < 1e-10 * rho.abs().max(1.0) {
            if x.iter().sum::<f64>() < 0.0 {
                x.iter_mut().for_each(|v| *v = -*v);
            }
            return Ok((rho, ScalarField(x)));
        }
        rho_prev = rho;
    }
    Err(EIGEN_MAX_ITER)
}

/// Solves Δu = rhs (Laplace–Beltrami) at interior nodes with u = 0 on the
/// boundary.
pub fn solve_poisson_dirichlet(mesh: &DomainMesh, rhs: &[f64]) -> Result<ScalarField> {
    mesh.require_dirichlet()?;
    mesh.check_size(rhs)?;
    let n = mesh.len();
    let b: Vec<f64> = (0..n).map(|k| if mesh.boundary[k] { 0.0 } else { -mesh.e2phi[k] * rhs[k] }).collect();
    let mut u = vec![0.0; n];
    conjugate_gradient(|v, out| mesh.apply_dirichlet_neg_laplacian(v, out), &b, &mut u, 1e-14, 50 * n + 1000)?;
    Ok(ScalarField(u))
}

/// ‖Ric‖_∞ of the domain metric: max |Δ₀φ| e^{-2φ} for conformal 2-D
/// metrics, 0 when flat.
pub fn ricci_bound(mesh: &DomainMesh) -> Result<f64> {
    if mesh.dim == 1 {
        if mesh.spec.conformal.is_some() {
            return Err(Error::InvalidMesh("1-D domains are trivially flat".into()));
        }
        return Ok(0.0);
    }
    if mesh.is_flat() {
        return Ok(0.0);
    }
    let phi = &mesh.phi;
    let mut worst = 0.0f64;
    for k in 0..mesh.len() {
        let mut lap = 0.0;
        for a in 0..2 {
            let h2 = mesh.h[a] * mesh.h[a];
            let at = |d: isize| mesh.step(k, a, d).map(|nb| phi[nb.node]);
            lap += match (at(-1), at(1)) {
                (Some(m), Some(p)) => (p + m - 2.0 * phi[k]) / h2,
                (None, Some(p1)) => {
                    let (p2, p3) = (at(2).unwrap(), at(3).unwrap_or(0.0));
                    if at(3).is_some() {
                        (2.0 * phi[k] - 5.0 * p1 + 4.0 * p2 - p3) / h2
                    } else {
                        (phi[k] - 2.0 * p1 + p2) / h2
                    }
                }
                (Some(m1), None) => {
                    let (m2, m3) = (at(-2).unwrap(), at(-3).unwrap_or(0.0));
                    if at(-3).is_some() {
                        (2.0 * phi[k] - 5.0 * m1 + 4.0 * m2 - m3) / h2
                    } else {
                        (phi[k] - 2.0 * m1 + m2) / h2
                    }
                }
                (None, None) => 0.0,
            };
        }
        worst = worst.max(lap.abs() / mesh.e2phi[k]);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn interval_layout() {
        let m = build_mesh(&MeshSpec::interval(PI, 5)).unwrap();
        assert!((m.spacing(0) - PI / 4.0).abs() < 1e-15);
        let b: Vec<usize> = m.boundary_nodes().collect();
        assert_eq!(b, vec![0, 4]);
        assert!((m.volume() - PI).abs() < 1e-12);
    }

    #[test]
    fn torus_layout() {
        let m = build_mesh(&MeshSpec::torus(&[1.0, 1.0], &[4, 4])).unwrap();
        assert_eq!(m.len(), 16);
        assert_eq!(m.boundary_nodes().count(), 0);
        assert!((integrate(&m, &vec![1.0; 16]).unwrap() - 1.0).abs() < 1e-12);
        let nb = m.offset(3, 1, 0).unwrap();
        assert_eq!(nb, Neighbor { node: 0, wraps: [1, 0] });
        let nb = m.offset(0, 0, -1).unwrap();
        assert_eq!(nb, Neighbor { node: 12, wraps: [0, -1] });
    }

    #[test]
    fn rectangle_weights() {
        let m = build_mesh(&MeshSpec::rectangle([PI, PI], [65, 65])).unwrap();
        let h = PI / 64.0;
        assert_eq!(m.interior_nodes().count(), 63 * 63);
        for k in m.interior_nodes() {
            assert!((m.weights()[k] - h * h).abs() < 1e-15);
        }
        assert!((m.volume() - PI * PI).abs() < 1e-9);
    }

    #[test]
    fn invalid_specs() {
        assert!(build_mesh(&MeshSpec::interval(1.0, 2)).is_err());
        assert!(build_mesh(&MeshSpec::interval(-1.0, 5)).is_err());
        let odd = MeshSpec::torus(&[1.0, 1.0], &[8, 8]).with_conformal(0.1, [1, 2]);
        assert!(build_mesh(&odd).is_err());
        let even = MeshSpec::torus(&[1.0, 1.0], &[8, 8]).with_conformal(0.1, [2, 2]);
        assert!(build_mesh(&even).is_ok());
        let mut one_d = MeshSpec::interval(1.0, 5);
        one_d.conformal = Some(ConformalFactor { amplitude: 0.1, modes: [1, 1] });
        assert!(build_mesh(&one_d).is_err());
    }

    #[test]
    fn laplacian_examples() {
        let m = build_mesh(&MeshSpec::interval(2.0, 11)).unwrap();
        let affine = m.sample(|x| 3.0 * x[0] - 1.0);
        assert!(laplace_beltrami(&m, &affine).unwrap().max_abs() < 1e-10);

        let err = |n: usize| {
            let m = build_mesh(&MeshSpec::interval(PI, n)).unwrap();
            let f = m.sample(|x| x[0].sin());
            let l = laplace_beltrami(&m, &f).unwrap();
            m.interior_nodes().map(|k| (l[k] + f[k]).abs()).fold(0.0, f64::max)
        };
        assert!(err(257) < 1e-4);
        assert!(err(129) / err(257) >= 3.5);

        let t = build_mesh(&MeshSpec::torus(&[1.0, 2.0], &[6, 7])).unwrap();
        assert!(laplace_beltrami(&t, &vec![2.5; t.len()]).unwrap().max_abs() == 0.0);
        assert!(laplace_beltrami(&t, &[1.0]).is_err());
    }

    #[test]
    fn eigenvalue_examples() {
        let m = build_mesh(&MeshSpec::interval(PI, 513)).unwrap();
        let (lam, v) = first_dirichlet_eigenvalue(&m).unwrap();
        assert!((lam - 1.0).abs() < 1e-3);
        let l2: f64 = integrate(&m, &v.iter().map(|x| x * x).collect::<Vec<_>>()).unwrap();
        assert!((l2 - 1.0).abs() < 1e-12);

        let m = build_mesh(&MeshSpec::interval(2.0 * PI, 257)).unwrap();
        assert!((first_dirichlet_eigenvalue(&m).unwrap().0 - 0.25).abs() < 1e-3);

        let m = build_mesh(&MeshSpec::rectangle([PI, PI], [33, 33])).unwrap();
        assert!((first_dirichlet_eigenvalue(&m).unwrap().0 - 2.0).abs() < 5e-3);

        let t = build_mesh(&MeshSpec::torus(&[1.0], &[8])).unwrap();
        assert!(matches!(first_dirichlet_eigenvalue(&t), Err(Error::Topology { .. })));
    }

    #[test]
    fn eigenvalue_matches_dense_oracle() {
        let n = 65;
        let m = build_mesh(&MeshSpec::interval(PI, n)).unwrap();
        let h = m.spacing(0);
        let k = n - 2;
        let a = nalgebra::DMatrix::from_fn(k, k, |i, j| {
            if i == j {
                2.0 / (h * h)
            } else if i.abs_diff(j) == 1 {
                -1.0 / (h * h)
            } else {
                0.0
            }
        });
        let dense = a.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min);
        let (lam, _) = first_dirichlet_eigenvalue(&m).unwrap();
        assert!((lam - dense).abs() < 1e-9, "{lam} vs {dense}");
        assert!((lam - 1.0).abs() < 1e-3);
    }

    #[test]
    fn conformal_eigenvalue_matches_generalized_dense_oracle() {
        let spec = MeshSpec::rectangle([PI, PI], [9, 9]).with_conformal(0.2, [1, 1]);
        let m = build_mesh(&spec).unwrap();
        let interior: Vec<usize> = m.interior_nodes().collect();
        let k = interior.len();
        let h = m.spacing(0);
        let pos = |node: usize| interior.iter().position(|&x| x == node);
        // symmetric form B^{-1/2} A B^{-1/2}
        let mut a = nalgebra::DMatrix::<f64>::zeros(k, k);
        for (r, &node) in interior.iter().enumerate() {
            a[(r, r)] = 4.0 / (h * h);
            for (di, dj) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
                let nb = m.offset(node, di, dj).unwrap().node;
                if let Some(c) = pos(nb) {
                    a[(r, c)] = -1.0 / (h * h);
                }
            }
        }
        let s: Vec<f64> = interior.iter().map(|&n| (-m.phi()[n]).exp()).collect();
        let sym = nalgebra::DMatrix::from_fn(k, k, |i, j| s[i] * a[(i, j)] * s[j]);
        let dense = sym.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min);
        let (lam, v) = first_dirichlet_eigenvalue(&m).unwrap();
        assert!((lam - dense).abs() < 1e-8, "{lam} vs {dense}");
        let rq = m.gradient_energy(&v).unwrap() / integrate(&m, &v.iter().map(|x| x * x).collect::<Vec<_>>()).unwrap();
        assert!((rq - lam).abs() < 1e-6 * lam);
    }

    #[test]
    fn poisson_examples() {
        let m = build_mesh(&MeshSpec::interval(1.0, 101)).unwrap();
        let u = solve_poisson_dirichlet(&m, &vec![-2.0; m.len()]).unwrap();
        for k in 0..m.len() {
            let x = m.coords(k)[0];
            assert!((u[k] - x * (1.0 - x)).abs() < 1e-6);
        }
        let z = solve_poisson_dirichlet(&m, &vec![0.0; m.len()]).unwrap();
        assert!(z.max_abs() == 0.0);

        let m = build_mesh(&MeshSpec::interval(PI, 257)).unwrap();
        let rhs = m.sample(|x| -2.0 * x[0].sin());
        let u = solve_poisson_dirichlet(&m, &rhs).unwrap();
        for k in 0..m.len() {
            assert!((u[k] - 2.0 * m.coords(k)[0].sin()).abs() < 1e-4);
        }
        let res = laplace_beltrami(&m, &u).unwrap();
        let worst = m.interior_nodes().map(|k| (res[k] - rhs[k]).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-10);
    }

    #[test]
    fn poisson_matches_dense_solve_on_conformal_rectangle() {
        let spec = MeshSpec::rectangle([2.0, 1.5], [9, 7]).with_conformal(0.3, [1, 2]);
        let m = build_mesh(&spec).unwrap();
        let rhs = m.sample(|x| (x[0] * x[1]).cos());
        let u = solve_poisson_dirichlet(&m, &rhs).unwrap();
        let lap = laplace_beltrami(&m, &u).unwrap();
        for k in m.interior_nodes() {
            assert!((lap[k] - rhs[k]).abs() < 1e-9);
        }
        for k in m.boundary_nodes() {
            assert_eq!(u[k], 0.0);
        }
    }

    #[test]
    fn integration_examples() {
        let m = build_mesh(&MeshSpec::interval(3.0, 7)).unwrap();
        assert!((integrate(&m, &vec![1.0; 7]).unwrap() - 3.0).abs() < 1e-12);
        let m = build_mesh(&MeshSpec::interval(PI, 65)).unwrap();
        let s2 = m.sample(|x| x[0].sin().powi(2));
        assert!((integrate(&m, &s2).unwrap() - PI / 2.0).abs() < 1e-6);
    }

    #[test]
    fn ricci_examples() {
        let flat = build_mesh(&MeshSpec::rectangle([1.0, 1.0], [5, 5])).unwrap();
        assert_eq!(ricci_bound(&flat).unwrap(), 0.0);
        let t = build_mesh(&MeshSpec::torus(&[1.0, 1.0], &[5, 5])).unwrap();
        assert_eq!(ricci_bound(&t).unwrap(), 0.0);

        let spec = MeshSpec::rectangle([PI, PI], [129, 129]).with_conformal(0.1, [1, 1]);
        let m = build_mesh(&spec).unwrap();
        let analytic = (0..m.len())
            .map(|k| {
                let x = m.coords(k);
                let s = x[0].sin() * x[1].sin();
                0.2 * s * (-0.2 * s).exp()
            })
            .fold(0.0, f64::max);
        let num = ricci_bound(&m).unwrap();
        assert!((num - analytic).abs() < 1e-4, "{num} vs {analytic}");
    }

    #[test]
    fn disk_mask_and_boundary_distance() {
        let spec = MeshSpec::rectangle([2.0, 2.0], [41, 41]).with_disk([1.0, 1.0], 0.9);
        let m = build_mesh(&spec).unwrap();
        let c = m.node_at(20, 20);
        assert!(!m.is_boundary(c));
        assert!(m.is_boundary(m.node_at(1, 1)));
        assert_eq!(m.weights()[m.node_at(1, 1)], 0.0);
        let d = m.distance_to_boundary()[c];
        assert!((d - 0.9).abs() < 0.06, "{d}");
        let (lam, _) = first_dirichlet_eigenvalue(&m).unwrap();
        // disk of radius 0.9: j_{0,1}^2 / r^2
        let exact = 2.404825557695773f64.powi(2) / 0.81;
        assert!((lam - exact).abs() / exact < 0.08, "{lam} vs {exact}");

        let r = build_mesh(&MeshSpec::rectangle([2.0, 1.0], [21, 11])).unwrap();
        let k = r.node_at(5, 3);
        assert!((r.distance_to_boundary()[k] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn csv_export_has_header_and_rows() {
        let m = build_mesh(&MeshSpec::rectangle([1.0, 1.0], [3, 3])).unwrap();
        let f = vec![1.0; 9];
        let mut buf = Vec::new();
        m.write_csv(&[("u", &f)], &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("x,y,u\n"));
        assert_eq!(s.lines().count(), 10);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn interior_field(m: &DomainMesh, vals: &[f64]) -> Vec<f64> {
            (0..m.len()).map(|k| if m.is_boundary(k) { 0.0 } else { vals[k % vals.len()] }).collect()
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(100))]

            #[test]
            fn laplacian_is_symmetric(a in proptest::collection::vec(-1.0..1.0f64, 49),
                                      b in proptest::collection::vec(-1.0..1.0f64, 49),
                                      amp in 0.0..0.4f64) {
                let spec = MeshSpec::rectangle([1.3, 0.9], [7, 7]).with_conformal(amp, [1, 2]);
                let m = build_mesh(&spec).unwrap();
                let (fa, fb) = (interior_field(&m, &a), interior_field(&m, &b));
                let la = laplace_beltrami(&m, &fa).unwrap();
                let lb = laplace_beltrami(&m, &fb).unwrap();
                let lhs = integrate(&m, &la.iter().zip(&fb).map(|(x, y)| x * y).collect::<Vec<_>>()).unwrap();
                let rhs = integrate(&m, &lb.iter().zip(&fa).map(|(x, y)| x * y).collect::<Vec<_>>()).unwrap();
                prop_assert!((lhs - rhs).abs() <= 1e-9);
            }

            #[test]
            fn poincare_witness(vals in proptest::collection::vec(-1.0..1.0f64, 63)) {
                let m = build_mesh(&MeshSpec::interval(PI, 65)).unwrap();
                let (lam, _) = first_dirichlet_eigenvalue(&m).unwrap();
                let w = interior_field(&m, &vals);
                let grad = m.gradient_energy(&w).unwrap();
                let l2 = integrate(&m, &w.iter().map(|x| x * x).collect::<Vec<_>>()).unwrap();
                prop_assert!(grad >= (lam - 5e-3) * l2);
            }
        }
    }
}
