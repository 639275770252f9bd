//! Seeded map families and the canonical flow scenarios.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::calculus::{default_homotopy, harmonic_affine_representative, Homotopy, MapField};
use crate::error::Result;
use crate::fields::PrescribedField;
use crate::flow::{FlowConfig, FlowParams};
use crate::geometry::{Chart, TargetManifold};
use crate::linalg::solve_tridiagonal;
use crate::mesh::{build_mesh, first_dirichlet_eigenvalue, DomainMesh, MeshSpec, Topology};

/// Independent RNG stream for scenario `index` under `root`.
pub fn scenario_rng(root: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(root.wrapping_add(index))
}

/// Smooth random perturbation added in chart coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Perturbation {
    pub amplitude: f64,
    #[serde(default = "default_modes")]
    pub modes: usize,
    /// Fixed chart direction; independent components when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Vec<f64>>,
}

fn default_modes() -> usize {
    3
}

fn axis_basis(topology: Topology, j: usize, x: f64, l: f64) -> f64 {
    if topology == Topology::TorusPeriodic {
        let k = j.div_ceil(2) as f64;
        if j % 2 == 1 {
            (2.0 * PI * k * x / l).sin()
        } else {
            (2.0 * PI * k * x / l).cos()
        }
    } else {
        (j as f64 * PI * x / l).sin()
    }
}

/// Random combination of the first `modes` basis functions per axis
/// (sines for Dirichlet axes, Fourier modes for periodic ones), with
/// coefficients decaying like 1/(j·l). Vanishes on Dirichlet boundaries.
pub fn random_scalar_field<R: Rng + ?Sized>(mesh: &DomainMesh, modes: usize, rng: &mut R) -> Vec<f64> {
    let dim = mesh.dim();
    let lengths = mesh.lengths().to_vec();
    let top = mesh.topology();
    let combos: Vec<(usize, usize, f64)> = if dim == 1 {
        (1..=modes).map(|j| (j, 0, rng.sample::<f64, _>(StandardNormal) / j as f64)).collect()
    } else {
        let mut v = Vec::new();
        for j in 1..=modes {
            for l in 1..=modes {
                v.push((j, l, rng.sample::<f64, _>(StandardNormal) / (j * l) as f64));
            }
        }
        v
    };
    let disk = mesh.spec().disk;
    (0..mesh.len())
        .map(|n| {
            let x = mesh.coords(n);
            let mut s: f64 = combos
                .iter()
                .map(|&(j, l, c)| {
                    let bx = axis_basis(top, j, x[0], lengths[0]);
                    let by = if dim == 2 { axis_basis(top, l, x[1], lengths[1]) } else { 1.0 };
                    c * bx * by
                })
                .sum();
            if let Some(d) = disk {
                let r2 = (x[0] - d.center[0]).powi(2) + (x[1] - d.center[1]).powi(2);
                s *= (1.0 - r2 / (d.radius * d.radius)).max(0.0);
            }
            s
        })
        .collect()
}

/// Random smooth tangent field along `f` (flat ambient layout), zero on
/// Dirichlet boundary nodes.
pub fn random_variation<R: Rng + ?Sized>(f: &MapField, modes: usize, rng: &mut R) -> Vec<f64> {
    let mesh = f.mesh();
    let t = f.target();
    let k = f.ambient_dim();
    let comps: Vec<Vec<f64>> = (0..t.dim()).map(|_| random_scalar_field(mesh, modes, rng)).collect();
    let mut w = vec![0.0; f.coords().len()];
    for node in mesh.interior_nodes() {
        let dir: Vec<f64> = comps.iter().map(|c| c[node]).collect();
        let mut v = t.chart_direction(f.at(node), &dir);
        t.project_tangent(f.at(node), &mut v);
        w[node * k..(node + 1) * k].copy_from_slice(&v);
    }
    w
}

/// Adds a perturbation to `f` in chart coordinates.
pub fn perturb<R: Rng + ?Sized>(f: &MapField, p: &Perturbation, rng: &mut R) -> Result<MapField> {
    let t = f.target();
    let n = t.dim();
    let mesh = f.mesh();
    let fields: Vec<Vec<f64>> = match &p.direction {
        Some(dir) => {
            if dir.len() != n {
                return Err(crate::error::Error::DimensionMismatch { expected: n, got: dir.len() });
            }
            let s = random_scalar_field(mesh, p.modes, rng);
            dir.iter().map(|d| s.iter().map(|v| d * v).collect()).collect()
        }
        None => (0..n).map(|_| random_scalar_field(mesh, p.modes, rng)).collect(),
    };
    let k = f.ambient_dim();
    let mut coords = Vec::with_capacity(f.coords().len());
    for node in 0..mesh.len() {
        let mut y = t.to_chart(f.at(node));
        for (i, yi) in y.iter_mut().enumerate() {
            *yi += p.amplitude * fields[i][node];
        }
        if mesh.is_boundary(node) && !mesh.is_periodic() {
            coords.extend_from_slice(f.at(node));
        } else {
            coords.extend(t.from_chart(&y));
        }
        debug_assert_eq!(coords.len(), (node + 1) * k);
    }
    f.with_coords(coords)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FamilyKind {
    /// Rectangle (0,1)² into the hyperbolic plane, shared boundary values.
    HyperbolicDirichlet,
    /// Rectangle (0,1)² into ℝ², shared boundary values.
    EuclideanDirichlet,
    /// Unit torus into the unit flat torus, nonzero homotopy class.
    TorusClass,
    /// Unit torus into the hyperbolic plane (trivial class).
    HyperbolicTorus,
    /// Unit torus into ℝ (trivial class).
    EuclideanTorus,
}

/// Generator of homotopic maps sharing mesh, target, class and (for
/// Dirichlet families) boundary values.
#[derive(Debug, Clone)]
pub struct ScenarioFamily {
    pub kind: FamilyKind,
    pub resolution: usize,
    pub amplitude: f64,
    pub modes: usize,
    pub seed: u64,
    pub mesh: Arc<DomainMesh>,
    pub target: Arc<TargetManifold>,
    pub base: MapField,
}

pub const TORUS_CLASS: [[i64; 2]; 2] = [[1, 1], [0, 1]];

impl ScenarioFamily {
    /// `resolution` is 1/h along each axis.
    pub fn new(kind: FamilyKind, resolution: usize, amplitude: f64, seed: u64) -> Result<Self> {
        let n = resolution;
        let (spec, target) = match kind {
            FamilyKind::HyperbolicDirichlet => {
                (MeshSpec::rectangle([1.0, 1.0], [n + 1, n + 1]), TargetManifold::hyperboloid(2)?)
            }
            FamilyKind::EuclideanDirichlet => {
                (MeshSpec::rectangle([1.0, 1.0], [n + 1, n + 1]), TargetManifold::euclidean(2)?)
            }
            FamilyKind::TorusClass => {
                (MeshSpec::torus(&[1.0, 1.0], &[n, n]), TargetManifold::flat_torus(vec![1.0, 1.0])?)
            }
            FamilyKind::HyperbolicTorus => (MeshSpec::torus(&[1.0, 1.0], &[n, n]), TargetManifold::hyperboloid(2)?),
            FamilyKind::EuclideanTorus => (MeshSpec::torus(&[1.0, 1.0], &[n, n]), TargetManifold::euclidean(1)?),
        };
        let mesh = Arc::new(build_mesh(&spec)?);
        let target = Arc::new(target);
        let base = match kind {
            FamilyKind::HyperbolicDirichlet | FamilyKind::EuclideanDirichlet => {
                MapField::from_chart_fn(mesh.clone(), target.clone(), Homotopy::Trivial, |x| {
                    vec![0.8 * x[0] - 0.3 + 0.2 * x[0] * x[1], 0.5 * x[1] + 0.3 * (x[0] * x[0])]
                })?
            }
            FamilyKind::TorusClass => harmonic_affine_representative(
                mesh.clone(),
                target.clone(),
                TORUS_CLASS.iter().map(|r| r.to_vec()).collect(),
            )?,
            FamilyKind::HyperbolicTorus => {
                MapField::constant(mesh.clone(), target.clone(), &target.from_chart(&[0.2, -0.1]))?
            }
            FamilyKind::EuclideanTorus => MapField::constant(mesh.clone(), target.clone(), &[0.0])?,
        };
        Ok(Self { kind, resolution, amplitude, modes: 3, seed, mesh, target, base })
    }

    pub fn name(&self) -> String {
        let k = match self.kind {
            FamilyKind::HyperbolicDirichlet => "hyperbolic_dirichlet",
            FamilyKind::EuclideanDirichlet => "euclidean_dirichlet",
            FamilyKind::TorusClass => "torus_class",
            FamilyKind::HyperbolicTorus => "hyperbolic_torus",
            FamilyKind::EuclideanTorus => "euclidean_torus",
        };
        format!("{k}(n={}, amp={}, seed={})", self.resolution, self.amplitude, self.seed)
    }

    pub fn is_dirichlet(&self) -> bool {
        !self.mesh.is_periodic()
    }

    /// The `index`-th member: base plus an independent random perturbation.
    pub fn member(&self, index: u64) -> Result<MapField> {
        let mut rng = scenario_rng(self.seed, index);
        self.member_with(&mut rng)
    }

    pub fn member_with<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<MapField> {
        let p = Perturbation { amplitude: self.amplitude, modes: self.modes, direction: None };
        perturb(&self.base, &p, rng)
    }
}

// ----- flow scenarios ------------------------------------------------------

pub fn interval_mesh(resolution: usize) -> Result<Arc<DomainMesh>> {
    Ok(Arc::new(build_mesh(&MeshSpec::interval(1.0, resolution + 1))?))
}

/// Endpoints of the hyperbolic Dirichlet scenario, chart coordinates.
pub const GEODESIC_ENDPOINTS: [[f64; 2]; 2] = [[-0.4, 0.2], [0.9, -0.5]];

/// Initial map for hyperbolic interval flows: chart-linear path between the
/// endpoints with a transverse sine bump.
pub fn hyperbolic_interval_map(resolution: usize) -> Result<MapField> {
    let mesh = interval_mesh(resolution)?;
    let t = Arc::new(TargetManifold::hyperboloid(2)?);
    let [p, q] = GEODESIC_ENDPOINTS;
    MapField::from_chart_fn(mesh, t, Homotopy::Trivial, move |x| {
        let s = x[0];
        let bump = 0.4 * (PI * s).sin();
        vec![(1.0 - s) * p[0] + s * q[0] + 0.5 * bump, (1.0 - s) * p[1] + s * q[1] + bump]
    })
}

/// Harmonic flow into the hyperbolic plane with fixed endpoints.
pub fn geodesic_flow(resolution: usize, t_max: f64) -> Result<FlowConfig> {
    let g = hyperbolic_interval_map(resolution)?;
    let t = g.target().clone();
    let params = FlowParams { t_max, ..FlowParams::default() };
    Ok(FlowConfig::new(g, PrescribedField::zero(t), params))
}

/// Harmonic flow into ℝ² from a wavy initial map.
pub fn euclidean_flow(resolution: usize, t_max: f64) -> Result<FlowConfig> {
    let mesh = interval_mesh(resolution)?;
    let t = Arc::new(TargetManifold::euclidean(2)?);
    let g = MapField::from_chart_fn(mesh, t.clone(), Homotopy::Trivial, |x| {
        let s = x[0];
        vec![s + 0.5 * (2.0 * PI * s).sin(), 1.0 - 2.0 * s + 0.3 * (PI * s).sin() + 0.1 * (5.0 * PI * s).sin()]
    })?;
    let params = FlowParams { t_max, ..FlowParams::default() };
    Ok(FlowConfig::new(g, PrescribedField::zero(t), params))
}

/// Flow with the convex potential ½d²(·, o) into the hyperbolic plane.
pub fn potential_flow(resolution: usize, t_max: f64) -> Result<FlowConfig> {
    let g = hyperbolic_interval_map(resolution)?;
    let t = g.target().clone();
    let v = PrescribedField::potential_dist_sq(t, &[0.1, 0.1], 1.0)?;
    let params = FlowParams { t_max, ..FlowParams::default() };
    Ok(FlowConfig::new(g, v, params))
}

/// Flow with V = −k·y on ℝ, k = `ratio`·λ(Ω).
pub fn linear_flow(resolution: usize, ratio: f64, t_max: f64) -> Result<FlowConfig> {
    let mesh = interval_mesh(resolution)?;
    let (lambda, _) = first_dirichlet_eigenvalue(&mesh)?;
    let k = ratio * lambda;
    let t = Arc::new(TargetManifold::euclidean(1)?);
    let g = MapField::from_chart_fn(mesh, t.clone(), Homotopy::Trivial, |x| {
        let s = x[0];
        vec![0.5 * s + (PI * s).sin() + 0.2 * (3.0 * PI * s).sin()]
    })?;
    let v = PrescribedField::linear(t, vec![vec![-k]])?;
    let params = FlowParams { t_max, ..FlowParams::default() };
    Ok(FlowConfig::new(g, v, params))
}

/// Sweep member: V = −k·y on ℝ with k = `ratio`·λ_h and g chosen so the
/// initial residual is √(sin πx), which makes r² the first eigenfunction
/// and the ∫|r|⁴ monotonicity bound sharp.
pub fn sweep_flow(resolution: usize, ratio: f64, t_max: f64) -> Result<FlowConfig> {
    let mesh = interval_mesh(resolution)?;
    let (lambda, _) = first_dirichlet_eigenvalue(&mesh)?;
    let k = ratio * lambda;
    let n = mesh.len();
    let h = mesh.spacing(0);
    // (Δ_h + k) g = r₀ at interior nodes, g = 0 at the ends
    let m = n - 2;
    let lower = vec![1.0 / (h * h); m];
    let upper = vec![1.0 / (h * h); m];
    let diag = vec![-2.0 / (h * h) + k; m];
    let rhs: Vec<f64> = (1..n - 1).map(|i| (PI * mesh.coords(i)[0]).sin().sqrt()).collect();
    let inner = solve_tridiagonal(&lower, &diag, &upper, &rhs);
    let mut coords = vec![0.0; n];
    coords[1..n - 1].copy_from_slice(&inner);
    let t = Arc::new(TargetManifold::euclidean(1)?);
    let g = MapField::new(mesh, t.clone(), Homotopy::Trivial, coords)?;
    let v = PrescribedField::linear(t, vec![vec![-k]])?;
    let params = FlowParams { t_max, diagnostic_every: 10, ..FlowParams::default() };
    Ok(FlowConfig::new(g, v, params))
}

/// Homotopy descriptor for a freshly built map on this mesh/target.
pub fn homotopy_for(mesh: &DomainMesh, target: &TargetManifold, matrix: Option<Vec<Vec<i64>>>) -> Homotopy {
    match (matrix, mesh.is_periodic() && target.chart() == Chart::FlatTorus) {
        (Some(m), true) => Homotopy::Torus { matrix: m },
        _ => default_homotopy(mesh, target),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calculus::tension_field;

    #[test]
    fn family_members_share_boundary_and_class() {
        for kind in [FamilyKind::HyperbolicDirichlet, FamilyKind::TorusClass, FamilyKind::HyperbolicTorus] {
            let fam = ScenarioFamily::new(kind, 16, 0.1, 7).unwrap();
            let a = fam.member(0).unwrap();
            let b = fam.member(1).unwrap();
            assert_ne!(a.coords(), b.coords());
            assert_eq!(a.homotopy(), b.homotopy());
            if fam.is_dirichlet() {
                assert_eq!(a.boundary_gap(&b).unwrap(), 0.0);
            }
            assert_eq!(fam.member(0).unwrap().coords(), a.coords());
        }
    }

    #[test]
    fn sweep_initial_residual_is_root_sine() {
        let cfg = sweep_flow(32, 0.8, 0.1).unwrap();
        let g = &cfg.initial;
        let tau = tension_field(g);
        let mesh = g.mesh();
        for n in mesh.interior_nodes() {
            let v = cfg.field.eval(g.at(n))[0];
            let r = tau.at(n)[0] - v;
            let expect = (PI * mesh.coords(n)[0]).sin().sqrt();
            assert!((r - expect).abs() < 1e-9, "{r} vs {expect}");
        }
    }
}
