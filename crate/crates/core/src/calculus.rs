//! Discrete calculus of maps from a mesh into a target manifold.
//!
//! Every covariant difference is formed in normal coordinates at the base
//! value f(x): neighbour values enter through `log_{f(x)}`, so no Christoffel
//! symbols of the target are needed.

use std::io::{BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Chart, TargetKind, TargetManifold, TargetPoint};
use crate::mesh::{DomainMesh, Neighbor, ScalarField, Topology};

/// Homotopy descriptor of a map.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Homotopy {
    /// Simply connected target, Dirichlet domain, or a periodic map.
    Trivial,
    /// Torus to torus: the lift gains `A[i][α] · L_target[i]` in coordinate
    /// `i` when crossing the domain seam `α`.
    Torus { matrix: Vec<Vec<i64>> },
}

/// One target point per mesh node, stored as flat ambient coordinates.
#[derive(Debug, Clone)]
pub struct MapField {
    mesh: Arc<DomainMesh>,
    target: Arc<TargetManifold>,
    homotopy: Homotopy,
    coords: Vec<f64>,
    seam: [Vec<f64>; 2],
}

/// One tangent vector per node, based at the matching map value.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentField {
    ambient: usize,
    values: Vec<f64>,
}

impl TangentField {
    pub fn zeros(nodes: usize, ambient: usize) -> Self {
        Self { ambient, values: vec![0.0; nodes * ambient] }
    }

    pub fn from_values(ambient: usize, values: Vec<f64>) -> Self {
        Self { ambient, values }
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.ambient
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient
    }

    pub fn at(&self, node: usize) -> &[f64] {
        &self.values[node * self.ambient..(node + 1) * self.ambient]
    }

    pub fn at_mut(&mut self, node: usize) -> &mut [f64] {
        &mut self.values[node * self.ambient..(node + 1) * self.ambient]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn norms(&self, target: &TargetManifold) -> ScalarField {
        ScalarField((0..self.len()).map(|k| target.norm(self.at(k))).collect())
    }
}

/// Covariant first differences D_α f at every node.
#[derive(Debug, Clone)]
pub struct Differential {
    axes: usize,
    ambient: usize,
    data: Vec<f64>,
}

impl Differential {
    pub fn axes(&self) -> usize {
        self.axes
    }

    pub fn get(&self, node: usize, axis: usize) -> &[f64] {
        let start = (node * self.axes + axis) * self.ambient;
        &self.data[start..start + self.ambient]
    }
}

impl MapField {
    /// Builds a map from stored ambient coordinates (flat, node-major).
    pub fn new(
        mesh: Arc<DomainMesh>,
        target: Arc<TargetManifold>,
        homotopy: Homotopy,
        coords: Vec<f64>,
    ) -> Result<Self> {
        let k = target.ambient_dim();
        if coords.len() != mesh.len() * k {
            return Err(Error::SizeMismatch { expected: mesh.len() * k, got: coords.len() });
        }
        let seam = seam_shifts(&mesh, &target, &homotopy)?;
        for (node, p) in coords.chunks_exact(k).enumerate() {
            let scale = p[0].abs().max(1.0);
            let v = target.constraint_violation(p);
            if v > 1e-9 * scale * scale {
                return Err(Error::OffManifold(format!("node {node}: violation {v:e}")));
            }
        }
        Ok(Self { mesh, target, homotopy, coords, seam })
    }

    /// Builds a map from a function of the node coordinates returning chart
    /// coordinates (spatial coordinates for the hyperboloid, lifts for tori).
    pub fn from_chart_fn<F>(
        mesh: Arc<DomainMesh>,
        target: Arc<TargetManifold>,
        homotopy: Homotopy,
        f: F,
    ) -> Result<Self>
    where
        F: Fn([f64; 2]) -> Vec<f64>,
    {
        let mut coords = Vec::with_capacity(mesh.len() * target.ambient_dim());
        for node in 0..mesh.len() {
            let y = f(mesh.coords(node));
            if y.len() != target.dim() {
                return Err(Error::DimensionMismatch { expected: target.dim(), got: y.len() });
            }
            coords.extend(target.from_chart(&y));
        }
        Self::new(mesh, target, homotopy, coords)
    }

    pub fn constant(mesh: Arc<DomainMesh>, target: Arc<TargetManifold>, p: &[f64]) -> Result<Self> {
        let homotopy = default_homotopy(&mesh, &target);
        let coords = p.iter().copied().cycle().take(p.len() * mesh.len()).collect();
        Self::new(mesh, target, homotopy, coords)
    }

    pub fn mesh(&self) -> &Arc<DomainMesh> {
        &self.mesh
    }

    pub fn target(&self) -> &Arc<TargetManifold> {
        &self.target
    }

    pub fn homotopy(&self) -> &Homotopy {
        &self.homotopy
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn coords_mut(&mut self) -> &mut [f64] {
        &mut self.coords
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }

    /// Same mesh, target and homotopy class with new coordinates.
    pub fn with_coords(&self, coords: Vec<f64>) -> Result<Self> {
        Self::new(self.mesh.clone(), self.target.clone(), self.homotopy.clone(), coords)
    }

    pub fn ambient_dim(&self) -> usize {
        self.target.ambient_dim()
    }

    pub fn at(&self, node: usize) -> &[f64] {
        let k = self.ambient_dim();
        &self.coords[node * k..(node + 1) * k]
    }

    pub fn point(&self, node: usize) -> TargetPoint {
        TargetPoint { chart: self.target.chart(), coords: self.at(node).to_vec() }
    }

    /// Lift of the value at a neighbour, continued across periodic seams.
    pub fn neighbor_lift_into(&self, nb: Neighbor, out: &mut [f64]) {
        out.copy_from_slice(self.at(nb.node));
        for a in 0..2 {
            if nb.wraps[a] != 0 && !self.seam[a].is_empty() {
                for (o, s) in out.iter_mut().zip(&self.seam[a]) {
                    *o += nb.wraps[a] as f64 * s;
                }
            }
        }
    }

    /// log_{f(x)} of the (lifted) neighbour value.
    fn log_to(&self, node: usize, nb: Neighbor, lift: &mut [f64], out: &mut [f64]) {
        self.neighbor_lift_into(nb, lift);
        self.target.log_into(self.at(node), lift, out);
    }

    fn check_compatible(&self, other: &MapField) -> Result<()> {
        if !Arc::ptr_eq(&self.mesh, &other.mesh) && self.mesh.spec() != other.mesh.spec() {
            return Err(Error::HomotopyMismatch("maps live on different meshes".into()));
        }
        if self.target != other.target {
            return Err(Error::HomotopyMismatch("maps have different targets".into()));
        }
        if self.homotopy != other.homotopy {
            return Err(Error::HomotopyMismatch(format!("{:?} vs {:?}", self.homotopy, other.homotopy)));
        }
        Ok(())
    }

    /// Largest boundary-node distance between two maps.
    pub fn boundary_gap(&self, other: &MapField) -> Result<f64> {
        self.check_compatible(other)?;
        Ok(self.mesh.boundary_nodes().map(|b| self.target.dist(self.at(b), other.at(b))).fold(0.0, f64::max))
    }

    pub fn sup_coordinate(&self) -> f64 {
        self.coords.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }

    // ----- file format ---------------------------------------------------

    /// Writes the column format: `#` header lines with the mesh, target and
    /// homotopy descriptors, then `node,x[,y],chart,c0,c1,...`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let target = serde_json::json!({"dim": self.target.dim(), "geometry": self.target.kind()});
        let to_err = |e: serde_json::Error| Error::Config(e.to_string());
        writeln!(w, "# mesh: {}", serde_json::to_string(self.mesh.spec()).map_err(to_err)?)?;
        writeln!(w, "# target: {target}")?;
        writeln!(w, "# homotopy: {}", serde_json::to_string(&self.homotopy).map_err(to_err)?)?;
        let mut header = vec!["node".to_string(), "x".to_string()];
        if self.mesh.dim() == 2 {
            header.push("y".into());
        }
        header.push("chart".into());
        header.extend((0..self.ambient_dim()).map(|i| format!("c{i}")));
        writeln!(w, "{}", header.join(","))?;
        for node in 0..self.mesh.len() {
            let x = self.mesh.coords(node);
            let mut row = vec![node.to_string(), format!("{:.17e}", x[0])];
            if self.mesh.dim() == 2 {
                row.push(format!("{:.17e}", x[1]));
            }
            row.push(self.target.chart().to_string());
            row.extend(self.at(node).iter().map(|c| format!("{c:.17e}")));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    /// Reads the column format written by [`MapField::write_csv`]. The
    /// embedded descriptors must match `mesh` and `target`.
    pub fn read_csv<R: BufRead>(r: R, mesh: Arc<DomainMesh>, target: Arc<TargetManifold>) -> Result<Self> {
        let bad = |m: String| Error::Config(format!("map file: {m}"));
        let mut homotopy = default_homotopy(&mesh, &target);
        let mut coords = Vec::new();
        let mut header_seen = false;
        let k = target.ambient_dim();
        let chart = target.chart().to_string();
        for line in r.lines() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let rest = rest.trim();
                if let Some(j) = rest.strip_prefix("homotopy:") {
                    homotopy = serde_json::from_str(j.trim()).map_err(|e| bad(e.to_string()))?;
                } else if let Some(j) = rest.strip_prefix("mesh:") {
                    let spec: crate::mesh::MeshSpec = serde_json::from_str(j.trim()).map_err(|e| bad(e.to_string()))?;
                    if &spec != mesh.spec() {
                        return Err(bad("mesh descriptor does not match the configured mesh".into()));
                    }
                } else if let Some(j) = rest.strip_prefix("target:") {
                    let v: serde_json::Value = serde_json::from_str(j.trim()).map_err(|e| bad(e.to_string()))?;
                    let kind: TargetKind =
                        serde_json::from_value(v["geometry"].clone()).map_err(|e| bad(e.to_string()))?;
                    if &kind != target.kind() || v["dim"].as_u64() != Some(target.dim() as u64) {
                        return Err(bad("target descriptor does not match".into()));
                    }
                }
                continue;
            }
            if !header_seen {
                header_seen = true;
                if line.starts_with("node") {
                    continue;
                }
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let lead = 1 + mesh.dim();
            if fields.len() != lead + 1 + k {
                return Err(bad(format!("expected {} columns, got {}", lead + 1 + k, fields.len())));
            }
            if fields[lead] != chart {
                return Err(Error::ChartMismatch { expected: chart, got: fields[lead].into() });
            }
            for f in &fields[lead + 1..] {
                coords.push(f.parse::<f64>().map_err(|e| bad(e.to_string()))?);
            }
        }
        Self::new(mesh, target, homotopy, coords)
    }
}

/// Trivial homotopy, or the zero matrix for torus-to-torus configurations.
pub fn default_homotopy(mesh: &DomainMesh, target: &TargetManifold) -> Homotopy {
    if mesh.is_periodic() && target.chart() == Chart::FlatTorus {
        Homotopy::Torus { matrix: vec![vec![0; mesh.dim()]; target.dim()] }
    } else {
        Homotopy::Trivial
    }
}

fn seam_shifts(mesh: &DomainMesh, target: &TargetManifold, h: &Homotopy) -> Result<[Vec<f64>; 2]> {
    let torus_pair = mesh.is_periodic() && target.chart() == Chart::FlatTorus;
    match (h, torus_pair) {
        (Homotopy::Trivial, false) => Ok([Vec::new(), Vec::new()]),
        (Homotopy::Trivial, true) => Err(Error::HomotopyMismatch("torus-to-torus maps need a homotopy matrix".into())),
        (Homotopy::Torus { .. }, false) => Err(Error::NonTorusConfiguration),
        (Homotopy::Torus { matrix }, true) => {
            let periods = target.periods().expect("torus target");
            if matrix.len() != target.dim() || matrix.iter().any(|r| r.len() != mesh.dim()) {
                return Err(Error::DimensionMismatch {
                    expected: target.dim() * mesh.dim(),
                    got: matrix.iter().map(Vec::len).sum(),
                });
            }
            let mut seam = [Vec::new(), Vec::new()];
            for (a, s) in seam.iter_mut().enumerate().take(mesh.dim()) {
                *s = (0..target.dim()).map(|i| matrix[i][a] as f64 * periods[i]).collect();
            }
            Ok(seam)
        }
    }
}

// ----- operators -----------------------------------------------------------

pub fn differential(f: &MapField) -> Differential {
    let mesh = &f.mesh;
    let k = f.ambient_dim();
    let m = mesh.dim();
    let mut data = vec![0.0; mesh.len() * m * k];
    let mut lift = vec![0.0; k];
    let mut l = vec![0.0; k];
    for node in 0..mesh.len() {
        for a in 0..m {
            let out = &mut data[(node * m + a) * k..(node * m + a + 1) * k];
            for (nb, c) in mesh.first_derivative_stencil(node, a) {
                f.log_to(node, nb, &mut lift, &mut l);
                for i in 0..k {
                    out[i] += c * l[i];
                }
            }
        }
    }
    Differential { axes: m, ambient: k, data }
}

/// e(f) = ½ e^{-2φ} Σ_α |D_α f|².
pub fn energy_density(f: &MapField) -> ScalarField {
    let d = differential(f);
    let mesh = &f.mesh;
    let w = mesh.conformal_weight();
    ScalarField(
        (0..mesh.len())
            .map(|node| {
                let s: f64 = (0..d.axes).map(|a| f.target.norm_sq(d.get(node, a))).sum();
                0.5 * s / w[node]
            })
            .collect(),
    )
}

pub fn energy(f: &MapField) -> f64 {
    let e = energy_density(f);
    crate::mesh::integrate(&f.mesh, &e).expect("sized field")
}

/// Discrete tension field; zero at Dirichlet boundary nodes. Writes into
/// `out` (length nodes × ambient) to allow reuse in time stepping.
pub fn tension_into(f: &MapField, out: &mut [f64]) {
    let mesh = &f.mesh;
    let k = f.ambient_dim();
    let w = mesh.conformal_weight();
    let mut lift = vec![0.0; k];
    let mut l = vec![0.0; k];
    for node in 0..mesh.len() {
        let o = &mut out[node * k..(node + 1) * k];
        o.iter_mut().for_each(|x| *x = 0.0);
        if mesh.is_boundary(node) {
            continue;
        }
        for a in 0..mesh.dim() {
            let h2 = mesh.spacing(a) * mesh.spacing(a);
            for d in [-1, 1] {
                let nb = mesh.step(node, a, d).expect("interior stencil");
                f.log_to(node, nb, &mut lift, &mut l);
                for i in 0..k {
                    o[i] += l[i] / h2;
                }
            }
        }
        for x in o.iter_mut() {
            *x /= w[node];
        }
    }
}

pub fn tension_field(f: &MapField) -> TangentField {
    let mut t = TangentField::zeros(f.mesh.len(), f.ambient_dim());
    tension_into(f, &mut t.values);
    t
}

/// |∇df|² per node; zero at Dirichlet boundary nodes.
pub fn hessian_norm_sq(f: &MapField) -> ScalarField {
    let mesh = &f.mesh;
    let k = f.ambient_dim();
    let m = mesh.dim();
    let phi = mesh.phi();
    let flat = mesh.is_flat();
    let d1 = if flat { None } else { Some(differential(f)) };
    let mut lift = vec![0.0; k];
    let mut l = vec![0.0; k];
    let mut out = vec![0.0; mesh.len()];
    let mut hess = vec![vec![vec![0.0; k]; m]; m];
    for node in 0..mesh.len() {
        if mesh.is_boundary(node) {
            continue;
        }
        for a in 0..m {
            for b in 0..m {
                hess[a][b].iter_mut().for_each(|x| *x = 0.0);
            }
        }
        for a in 0..m {
            let h2 = mesh.spacing(a) * mesh.spacing(a);
            for d in [-1, 1] {
                let nb = mesh.step(node, a, d).expect("interior stencil");
                f.log_to(node, nb, &mut lift, &mut l);
                for i in 0..k {
                    hess[a][a][i] += l[i] / h2;
                }
            }
        }
        if m == 2 {
            let scale = 0.25 / (mesh.spacing(0) * mesh.spacing(1));
            for (di, dj, s) in [(1, 1, 1.0), (1, -1, -1.0), (-1, 1, -1.0), (-1, -1, 1.0)] {
                let nb = mesh.offset(node, di, dj).expect("interior stencil");
                f.log_to(node, nb, &mut lift, &mut l);
                for i in 0..k {
                    hess[0][1][i] += s * scale * l[i];
                }
            }
            hess[1][0] = hess[0][1].clone();
        }
        if let Some(d1) = &d1 {
            // domain Christoffel symbols of e^{2φ}δ:
            // Γ^c_{ab} = δ_ca ∂_b φ + δ_cb ∂_a φ - δ_ab ∂_c φ
            let mut dphi = [0.0; 2];
            for (a, g) in dphi.iter_mut().enumerate() {
                for (nb, c) in mesh.first_derivative_stencil(node, a) {
                    *g += c * (phi[nb.node] - phi[node]);
                }
            }
            for a in 0..2 {
                for b in 0..2 {
                    for c in 0..2 {
                        let gamma = if c == a { dphi[b] } else { 0.0 } + if c == b { dphi[a] } else { 0.0 }
                            - if a == b { dphi[c] } else { 0.0 };
                        if gamma != 0.0 {
                            let dc = d1.get(node, c);
                            for i in 0..k {
                                hess[a][b][i] -= gamma * dc[i];
                            }
                        }
                    }
                }
            }
        }
        let mut s = 0.0;
        for row in &hess {
            for v in row {
                s += f.target.norm_sq(v);
            }
        }
        let w = (-4.0 * phi[node]).exp();
        out[node] = s * w;
    }
    ScalarField(out)
}

/// Node-wise distance between the lifts of two homotopic maps.
pub fn distance_field(f1: &MapField, f2: &MapField) -> Result<ScalarField> {
    f1.check_compatible(f2)?;
    Ok(ScalarField((0..f1.mesh.len()).map(|n| f1.target.dist(f1.at(n), f2.at(n))).collect()))
}

/// Pointwise ½ e^{-2φ} Σ_α |D_α f₁ − P D_α f₂|², with P the transport
/// from f₂(x) to f₁(x).
pub fn difference_energy_density(f1: &MapField, f2: &MapField) -> Result<ScalarField> {
    f1.check_compatible(f2)?;
    let (d1, d2) = (differential(f1), differential(f2));
    let mesh = &f1.mesh;
    let k = f1.ambient_dim();
    let w = mesh.conformal_weight();
    let mut t = vec![0.0; k];
    let mut diff = vec![0.0; k];
    Ok(ScalarField(
        (0..mesh.len())
            .map(|node| {
                let mut s = 0.0;
                for a in 0..d1.axes {
                    f1.target.transport_into(f2.at(node), f1.at(node), d2.get(node, a), &mut t);
                    let v1 = d1.get(node, a);
                    for i in 0..k {
                        diff[i] = v1[i] - t[i];
                    }
                    s += f1.target.norm_sq(&diff);
                }
                0.5 * s / w[node]
            })
            .collect(),
    ))
}

pub fn difference_energy(f1: &MapField, f2: &MapField) -> Result<f64> {
    let e = difference_energy_density(f1, f2)?;
    crate::mesh::integrate(&f1.mesh, &e)
}

pub fn geodesic_interpolate(f0: &MapField, f1: &MapField, t: f64) -> Result<MapField> {
    f0.check_compatible(f1)?;
    if t == 0.0 {
        return Ok(f0.clone());
    }
    if t == 1.0 {
        return Ok(f1.clone());
    }
    let k = f0.ambient_dim();
    let mut coords = vec![0.0; f0.coords.len()];
    for node in 0..f0.mesh.len() {
        f0.target.geodesic_into(f0.at(node), f1.at(node), t, &mut coords[node * k..(node + 1) * k]);
    }
    f0.with_coords(coords)
}

/// Affine lift f(x) = Σ_α A_{iα} (L_target,i / L_domain,α) x_α, the
/// harmonic representative of the class A.
pub fn harmonic_affine_representative(
    mesh: Arc<DomainMesh>,
    target: Arc<TargetManifold>,
    matrix: Vec<Vec<i64>>,
) -> Result<MapField> {
    if mesh.topology() != Topology::TorusPeriodic || target.chart() != Chart::FlatTorus {
        return Err(Error::NonTorusConfiguration);
    }
    let periods = target.periods().expect("torus").to_vec();
    let lengths = mesh.lengths().to_vec();
    let m = mesh.dim();
    let a = matrix.clone();
    if a.len() != target.dim() || a.iter().any(|r| r.len() != m) {
        return Err(Error::DimensionMismatch { expected: target.dim() * m, got: a.iter().map(Vec::len).sum() });
    }
    MapField::from_chart_fn(mesh, target, Homotopy::Torus { matrix }, move |x| {
        (0..periods.len()).map(|i| (0..m).map(|al| a[i][al] as f64 * periods[i] / lengths[al] * x[al]).sum()).collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_mesh, laplace_beltrami, MeshSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mesh(spec: MeshSpec) -> Arc<DomainMesh> {
        Arc::new(build_mesh(&spec).unwrap())
    }

    fn euc(n: usize) -> Arc<TargetManifold> {
        Arc::new(TargetManifold::euclidean(n).unwrap())
    }

    fn hyp() -> Arc<TargetManifold> {
        Arc::new(TargetManifold::hyperboloid(2).unwrap())
    }

    fn torus2() -> Arc<TargetManifold> {
        Arc::new(TargetManifold::flat_torus(vec![1.0, 1.0]).unwrap())
    }

    #[test]
    fn constant_map_has_no_derivatives() {
        let m = mesh(MeshSpec::rectangle([1.0, 2.0], [6, 7]));
        let t = hyp();
        let p = t.from_chart(&[0.4, -0.3]);
        let f = MapField::constant(m.clone(), t, &p).unwrap();
        let d = differential(&f);
        assert!((0..m.len()).all(|n| (0..2).all(|a| d.get(n, a).iter().all(|x| *x == 0.0))));
        assert_eq!(energy(&f), 0.0);
        assert!(energy_density(&f).max_abs() == 0.0);
        assert!(tension_field(&f).values().iter().all(|x| *x == 0.0));
        assert!(hessian_norm_sq(&f).max_abs() == 0.0);
    }

    #[test]
    fn affine_interval_map() {
        let m = mesh(MeshSpec::interval(2.0, 17));
        let f = MapField::from_chart_fn(m.clone(), euc(1), Homotopy::Trivial, |x| vec![1.5 * x[0]]).unwrap();
        let d = differential(&f);
        assert!((0..m.len()).all(|n| (d.get(n, 0)[0] - 1.5).abs() < 1e-9));
        assert!((energy(&f) - 1.5 * 1.5 * 2.0 / 2.0).abs() < 1e-9);
        assert!(energy_density(&f).iter().all(|e| (e - 1.125).abs() < 1e-9));
        assert!(hessian_norm_sq(&f).max_abs() < 1e-9);
        let e = energy_density(&f);
        assert!((crate::mesh::integrate(&m, &e).unwrap() - energy(&f)).abs() < 1e-12);
    }

    #[test]
    fn quadratic_map_is_an_exact_anchor() {
        let m = mesh(MeshSpec::interval(1.0, 33));
        let f = MapField::from_chart_fn(m.clone(), euc(1), Homotopy::Trivial, |x| vec![x[0] * x[0]]).unwrap();
        let t = tension_field(&f);
        let hs = hessian_norm_sq(&f);
        for n in m.interior_nodes() {
            assert!((t.at(n)[0] - 2.0).abs() < 1e-9);
            assert!((hs[n] - 4.0).abs() < 1e-8);
        }
        for n in m.boundary_nodes() {
            assert_eq!(t.at(n)[0], 0.0);
        }
    }

    #[test]
    fn euclidean_tension_is_componentwise_laplacian() {
        let spec = MeshSpec::rectangle([1.0, 1.3], [9, 11]).with_conformal(0.3, [1, 2]);
        let m = mesh(spec);
        let f = MapField::from_chart_fn(m.clone(), euc(2), Homotopy::Trivial, |x| {
            vec![(x[0] * 3.0).sin() * x[1], x[0] * x[0] - x[1].cos()]
        })
        .unwrap();
        let t = tension_field(&f);
        for c in 0..2 {
            let comp: Vec<f64> = (0..m.len()).map(|n| f.at(n)[c]).collect();
            let l = laplace_beltrami(&m, &comp).unwrap();
            for n in 0..m.len() {
                assert!((t.at(n)[c] - l[n]).abs() <= 1e-12 * (1.0 + l[n].abs()));
            }
        }
    }

    fn geodesic_map(n: usize) -> MapField {
        let m = mesh(MeshSpec::interval(1.0, n));
        let t = hyp();
        let p = t.origin();
        let mut coords = Vec::new();
        let mut out = vec![0.0; 3];
        for k in 0..m.len() {
            let s = m.coords(k)[0];
            t.exp_into(&p, &[0.0, 0.6 * s, 0.8 * s], &mut out);
            coords.extend_from_slice(&out);
        }
        MapField::new(m, t, Homotopy::Trivial, coords).unwrap()
    }

    #[test]
    fn hyperboloid_geodesic_is_harmonic() {
        let f = geodesic_map(65);
        let d = differential(&f);
        for n in 0..f.mesh().len() {
            assert!((f.target().norm(d.get(n, 0)) - 1.0).abs() < 1e-6);
        }
        let worst = |f: &MapField| tension_field(f).norms(f.target()).max_abs();
        assert!(worst(&f) < 1e-6);
        assert!(hessian_norm_sq(&f).max_abs() < 1e-10);
    }

    #[test]
    fn torus_identity_energy() {
        let m = mesh(MeshSpec::torus(&[1.0, 1.0], &[8, 8]));
        let f = MapField::from_chart_fn(
            m.clone(),
            torus2(),
            Homotopy::Torus { matrix: vec![vec![1, 0], vec![0, 1]] },
            |x| vec![x[0], x[1]],
        )
        .unwrap();
        assert!((energy(&f) - 1.0).abs() < 1e-12);
        assert!(tension_field(&f).values().iter().all(|x| x.abs() < 1e-9));
    }

    #[test]
    fn affine_representatives() {
        let m = mesh(MeshSpec::torus(&[1.0, 1.0], &[6, 6]));
        let e = |a: Vec<Vec<i64>>| energy(&harmonic_affine_representative(m.clone(), torus2(), a).unwrap());
        assert_eq!(e(vec![vec![0, 0], vec![0, 0]]), 0.0);
        assert!((e(vec![vec![1, 0], vec![0, 1]]) - 1.0).abs() < 1e-12);
        assert!((e(vec![vec![2, 0], vec![0, 1]]) - 2.5).abs() < 1e-12);

        let m2 = mesh(MeshSpec::torus(&[2.0, 3.0], &[7, 9]));
        let t2 = Arc::new(TargetManifold::flat_torus(vec![0.5, 1.5]).unwrap());
        let a = vec![vec![1, -2], vec![3, 1]];
        let f = harmonic_affine_representative(m2.clone(), t2, a.clone()).unwrap();
        let oracle: f64 = 0.5
            * [0.5, 1.5]
                .iter()
                .enumerate()
                .flat_map(|(i, lt)| {
                    let a = a.clone();
                    [2.0, 3.0].into_iter().enumerate().map(move |(al, ld)| (a[i][al] as f64 * lt / ld).powi(2))
                })
                .sum::<f64>()
            * 6.0;
        assert!((energy(&f) - oracle).abs() < 1e-10);
        assert!(tension_field(&f).values().iter().all(|x| x.abs() < 1e-9));

        let dm = mesh(MeshSpec::rectangle([1.0, 1.0], [5, 5]));
        assert!(matches!(
            harmonic_affine_representative(dm, torus2(), vec![vec![1, 0], vec![0, 1]]),
            Err(Error::NonTorusConfiguration)
        ));
    }

    #[test]
    fn distance_field_examples() {
        let m = mesh(MeshSpec::torus(&[1.0, 1.0], &[6, 6]));
        let a = vec![vec![1, 0], vec![1, 1]];
        let f1 = harmonic_affine_representative(m.clone(), torus2(), a.clone()).unwrap();
        let f2 = MapField::from_chart_fn(m.clone(), torus2(), Homotopy::Torus { matrix: a }, |x| {
            vec![x[0] + 0.3, x[0] + x[1] - 0.4]
        })
        .unwrap();
        let d = distance_field(&f1, &f2).unwrap();
        assert!(d.iter().all(|v| (v - 0.5).abs() < 1e-12));
        assert!(distance_field(&f1, &f1).unwrap().max_abs() == 0.0);
        let g = harmonic_affine_representative(m, torus2(), vec![vec![0, 0], vec![0, 1]]).unwrap();
        assert!(matches!(distance_field(&f1, &g), Err(Error::HomotopyMismatch(_))));
        assert!(matches!(difference_energy(&f1, &g), Err(Error::HomotopyMismatch(_))));
    }

    #[test]
    fn torus_seam_lifts_are_continuous() {
        let m = mesh(MeshSpec::torus(&[1.0, 1.0], &[16, 16]));
        let a = vec![vec![2, 1], vec![0, 1]];
        let pi2 = 2.0 * std::f64::consts::PI;
        let f = MapField::from_chart_fn(m.clone(), torus2(), Homotopy::Torus { matrix: a }, |x| {
            vec![2.0 * x[0] + x[1] + 0.05 * (pi2 * x[0]).sin(), x[1] + 0.05 * (pi2 * x[1]).cos()]
        })
        .unwrap();
        // the differential of a smooth lift stays bounded across seams
        let d = differential(&f);
        for n in 0..m.len() {
            for a in 0..2 {
                assert!(d.get(n, a).iter().all(|v| v.abs() < 3.0));
            }
        }
    }

    #[test]
    fn difference_energy_euclidean_and_symmetry() {
        let m = mesh(MeshSpec::interval(1.0, 33));
        let f1 = MapField::from_chart_fn(m.clone(), euc(2), Homotopy::Trivial, |x| vec![x[0], x[0] * x[0]]).unwrap();
        let f2 = MapField::from_chart_fn(m.clone(), euc(2), Homotopy::Trivial, |x| vec![0.5 * x[0], 1.0]).unwrap();
        assert_eq!(difference_energy(&f1, &f1).unwrap(), 0.0);
        let direct: Vec<f64> = {
            let (d1, d2) = (differential(&f1), differential(&f2));
            (0..m.len())
                .map(|n| {
                    let a = d1.get(n, 0);
                    let b = d2.get(n, 0);
                    0.5 * ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2))
                })
                .collect()
        };
        let direct = crate::mesh::integrate(&m, &direct).unwrap();
        assert!((difference_energy(&f1, &f2).unwrap() - direct).abs() < 1e-12);
    }

    fn random_hyp_map(m: &Arc<DomainMesh>, rng: &mut ChaCha8Rng) -> MapField {
        let c: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        MapField::from_chart_fn(m.clone(), hyp(), Homotopy::Trivial, move |x| {
            vec![
                c[0] + c[1] * x[0] + c[2] * (3.0 * x[1] + x[0]).sin(),
                c[3] + c[4] * x[1] * x[0] + c[5] * (2.0 * x[0]).cos(),
            ]
        })
        .unwrap()
    }

    #[test]
    fn difference_energy_symmetry_and_triangles() {
        let m = mesh(MeshSpec::rectangle([1.0, 1.0], [17, 17]));
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let (f1, f2, f3) =
                (random_hyp_map(&m, &mut rng), random_hyp_map(&m, &mut rng), random_hyp_map(&m, &mut rng));
            let e12 = difference_energy(&f1, &f2).unwrap();
            let e21 = difference_energy(&f2, &f1).unwrap();
            assert!((e12 - e21).abs() < 1e-9, "{e12} vs {e21}");
            let (s1, s2) = (energy(&f1).sqrt(), energy(&f2).sqrt());
            assert!((s1 - s2).abs() <= e12.sqrt() + 1e-9);
            let e13 = difference_energy(&f1, &f3).unwrap();
            let e32 = difference_energy(&f3, &f2).unwrap();
            assert!((e13.sqrt() - e32.sqrt()).abs() <= e12.sqrt() + 1e-9);
        }
    }

    #[test]
    fn interpolation_endpoints_and_convexity() {
        let m = mesh(MeshSpec::rectangle([1.0, 1.0], [13, 13]));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f0 = random_hyp_map(&m, &mut rng);
        let f1 = random_hyp_map(&m, &mut rng);
        assert_eq!(geodesic_interpolate(&f0, &f1, 0.0).unwrap().coords(), f0.coords());
        assert_eq!(geodesic_interpolate(&f0, &f1, 1.0).unwrap().coords(), f1.coords());
        let vals: Vec<f64> =
            (0..=20).map(|k| energy(&geodesic_interpolate(&f0, &f1, k as f64 / 20.0).unwrap()).sqrt()).collect();
        for k in 1..20 {
            assert!(vals[k - 1] - 2.0 * vals[k] + vals[k + 1] >= -1e-6);
        }
        let e = euc(1);
        let l = mesh(MeshSpec::interval(1.0, 5));
        let a = MapField::from_chart_fn(l.clone(), e.clone(), Homotopy::Trivial, |x| vec![x[0]]).unwrap();
        let b = MapField::from_chart_fn(l, e, Homotopy::Trivial, |x| vec![1.0 - 2.0 * x[0]]).unwrap();
        let mid = geodesic_interpolate(&a, &b, 0.25).unwrap();
        for n in 0..5 {
            assert!((mid.at(n)[0] - (0.75 * a.at(n)[0] + 0.25 * b.at(n)[0])).abs() < 1e-15);
        }
    }

    #[test]
    fn tension_is_negative_energy_gradient() {
        let m = mesh(MeshSpec::interval(1.0, 129));
        let t = hyp();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..3 {
            let c: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let f = MapField::from_chart_fn(m.clone(), t.clone(), Homotopy::Trivial, |x| {
                vec![c[0] + c[1] * (2.0 * x[0]).sin(), c[2] * x[0] + c[3] * x[0] * x[0]]
            })
            .unwrap();
            let k = f.ambient_dim();
            let mut w = vec![0.0; f.coords().len()];
            for n in m.interior_nodes() {
                let x = m.coords(n)[0];
                let amp = (std::f64::consts::PI * x).sin();
                let mut v = t.chart_direction(f.at(n), &[amp * (3.0 * x).cos(), amp]);
                t.project_tangent(f.at(n), &mut v);
                w[n * k..(n + 1) * k].copy_from_slice(&v);
            }
            let tau = tension_field(&f);
            let pair: Vec<f64> = (0..m.len()).map(|n| t.inner(tau.at(n), &w[n * k..(n + 1) * k])).collect();
            let pair = crate::mesh::integrate(&m, &pair).unwrap();
            let s = 1e-4;
            let perturb = |sgn: f64| {
                let mut c = vec![0.0; f.coords().len()];
                for n in 0..m.len() {
                    let v: Vec<f64> = w[n * k..(n + 1) * k].iter().map(|x| sgn * s * x).collect();
                    t.exp_into(f.at(n), &v, &mut c[n * k..(n + 1) * k]);
                }
                energy(&f.with_coords(c).unwrap())
            };
            let deriv = (perturb(1.0) - perturb(-1.0)) / (2.0 * s);
            assert!((pair + deriv).abs() <= 1e-3 * pair.abs().max(deriv.abs()), "{pair} vs {deriv}");
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let m = mesh(MeshSpec::torus(&[1.0, 1.0], &[5, 4]));
        let f = MapField::from_chart_fn(
            m.clone(),
            torus2(),
            Homotopy::Torus { matrix: vec![vec![1, 0], vec![0, 1]] },
            |x| vec![x[0] + 0.1 * x[1].sin(), x[1] + 1.0 / 3.0],
        )
        .unwrap();
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let g = MapField::read_csv(std::io::Cursor::new(buf), m.clone(), torus2()).unwrap();
        assert_eq!(g.coords(), f.coords());
        assert_eq!(g.homotopy(), f.homotopy());
        assert!(MapField::read_csv(std::io::Cursor::new(b"0,0,0,euclidean,1,2\n".to_vec()), m, torus2()).is_err());
    }
}
