//! Run configuration: a strict TOML schema, validation and builders for the
//! mesh, target, initial map and prescribed field.
//!
//! Defaults:
//! - `flow`: `cfl = 0.5` (unless `dt` is given), `t_max = 1.0`,
//!   `tol_stat = 1e-8`, `diagnostic_every = 100`, `checkpoint_every = 0`,
//!   `mu_samples = 2000`.
//! - `verify`: every known estimate id, `scenarios = 100`,
//!   `mu_samples = 2000`, `t_max = 20.0`; resolution 64.
//! - `sweep`: ratios `[0.5, 0.6, 0.675, 0.75, 0.8, 0.85, 0.9, 1.0, 1.1]`,
//!   `t_max = 0.2`; resolution 64.
//! - `field`: `kind = "zero"`.
//!
//! `resolution = N` sets N cells per axis: N + 1 nodes on Dirichlet axes and
//! N nodes on periodic ones.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::calculus::{default_homotopy, harmonic_affine_representative, MapField};
use crate::error::{Error, Result};
use crate::fields::PrescribedField;
use crate::flow::{DtPolicy, FlowConfig, FlowParams};
use crate::geometry::{Chart, TargetManifold};
use crate::mesh::{build_mesh, DomainMesh, MeshSpec, Topology};
use crate::scenarios::{perturb, scenario_rng, Perturbation};
use crate::suite::{default_ids, SuiteOptions, ESTIMATE_IDS, SWEEP_RATIOS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Flow,
    Verify,
    Spectrum,
    Sweep,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Flow => "flow",
            Command::Verify => "verify",
            Command::Spectrum => "spectrum",
            Command::Sweep => "sweep",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetSpec {
    Euclidean {
        dim: usize,
    },
    /// Hyperbolic space of dimension `dim` in the hyperboloid model.
    Hyperboloid {
        dim: usize,
    },
    FlatTorus {
        periods: Vec<f64>,
    },
}

impl TargetSpec {
    pub fn build(&self) -> Result<TargetManifold> {
        match self {
            TargetSpec::Euclidean { dim } => TargetManifold::euclidean(*dim),
            TargetSpec::Hyperboloid { dim } => TargetManifold::hyperboloid(*dim),
            TargetSpec::FlatTorus { periods } => TargetManifold::flat_torus(periods.clone()),
        }
    }
}

/// Initial map g; on Dirichlet meshes it also supplies the boundary values.
/// Points are chart coordinates (spatial coordinates on the hyperboloid,
/// lifts on tori). Path maps run along the first domain axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MapSpec {
    Constant {
        point: Vec<f64>,
    },
    /// Chart-linear path plus `bump · sin(πx/L)` (product of sines in 2-D).
    Linear {
        from: Vec<f64>,
        to: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bump: Option<Vec<f64>>,
    },
    /// Geodesic from `from` to `to` plus the same bump, added in the chart.
    Geodesic {
        from: Vec<f64>,
        to: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bump: Option<Vec<f64>>,
    },
    TorusAffine {
        matrix: Vec<Vec<i64>>,
    },
    /// A map file in the `final_map.csv` format.
    File {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    Zero,
    /// Gradient of (c/2)·d²(·, center).
    PotentialDistSq {
        center: Vec<f64>,
        #[serde(default = "one")]
        c: f64,
    },
    /// V(y) = A·y on a Euclidean target.
    Linear {
        matrix: Vec<Vec<f64>>,
    },
    Rotational {
        strength: f64,
        center: Vec<f64>,
    },
    Sum {
        terms: Vec<FieldTerm>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldTerm {
    pub weight: f64,
    pub field: FieldSpec,
}

fn one() -> f64 {
    1.0
}

impl Default for FieldSpec {
    fn default() -> Self {
        FieldSpec::Zero
    }
}

impl FieldSpec {
    pub fn build(&self, target: &Arc<TargetManifold>) -> Result<PrescribedField> {
        let t = target.clone();
        match self {
            FieldSpec::Zero => Ok(PrescribedField::zero(t)),
            FieldSpec::PotentialDistSq { center, c } => PrescribedField::potential_dist_sq(t, center, *c),
            FieldSpec::Linear { matrix } => PrescribedField::linear(t, matrix.clone()),
            FieldSpec::Rotational { strength, center } => PrescribedField::rotational(t, *strength, center),
            FieldSpec::Sum { terms } => PrescribedField::sum(
                terms.iter().map(|term| Ok((term.weight, term.field.build(target)?))).collect::<Result<_>>()?,
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSection {
    /// CFL fraction; mutually exclusive with `dt`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cfl: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default = "default_t_max")]
    pub t_max: f64,
    #[serde(default = "default_tol_stat")]
    pub tol_stat: f64,
    #[serde(default = "default_diagnostic_every")]
    pub diagnostic_every: u64,
    #[serde(default)]
    pub checkpoint_every: u64,
    /// Samples for the μ estimate of the gate check.
    #[serde(default = "default_mu_samples")]
    pub mu_samples: usize,
}

fn default_t_max() -> f64 {
    1.0
}
fn default_tol_stat() -> f64 {
    1e-8
}
fn default_diagnostic_every() -> u64 {
    100
}
fn default_mu_samples() -> usize {
    2000
}

impl Default for FlowSection {
    fn default() -> Self {
        Self {
            cfl: None,
            dt: None,
            t_max: default_t_max(),
            tol_stat: default_tol_stat(),
            diagnostic_every: default_diagnostic_every(),
            checkpoint_every: 0,
            mu_samples: default_mu_samples(),
        }
    }
}

impl FlowSection {
    pub fn params(&self) -> Result<FlowParams> {
        let dt = match (self.cfl, self.dt) {
            (Some(_), Some(_)) => return Err(Error::Config("flow: set either `cfl` or `dt`, not both".into())),
            (None, Some(dt)) => DtPolicy::Fixed { dt },
            (Some(fraction), None) => DtPolicy::Cfl { fraction },
            (None, None) => DtPolicy::Cfl { fraction: 0.5 },
        };
        let p = FlowParams {
            dt,
            t_max: self.t_max,
            tol_stat: self.tol_stat,
            diagnostic_every: self.diagnostic_every,
            checkpoint_every: self.checkpoint_every,
        };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    #[serde(default = "default_ids")]
    pub estimates: Vec<String>,
    #[serde(default = "default_scenarios")]
    pub scenarios: usize,
    #[serde(default = "default_mu_samples")]
    pub mu_samples: usize,
    #[serde(default = "default_verify_t_max")]
    pub t_max: f64,
}

fn default_scenarios() -> usize {
    100
}
fn default_verify_t_max() -> f64 {
    20.0
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            estimates: default_ids(),
            scenarios: default_scenarios(),
            mu_samples: default_mu_samples(),
            t_max: default_verify_t_max(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// k/λ(Ω) values; the gate sits at 0.75.
    #[serde(default = "default_ratios")]
    pub ratios: Vec<f64>,
    #[serde(default = "default_sweep_t_max")]
    pub t_max: f64,
}

fn default_ratios() -> Vec<f64> {
    SWEEP_RATIOS.to_vec()
}
fn default_sweep_t_max() -> f64 {
    0.2
}

impl Default for SweepSection {
    fn default() -> Self {
        Self { ratios: default_ratios(), t_max: default_sweep_t_max() }
    }
}

pub const DEFAULT_RESOLUTION: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<Command>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Cells per axis, overriding `mesh.nodes`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<usize>,
    /// Refinement ladder: the command runs once per entry.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolutions: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mesh: Option<MeshSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<TargetSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub map: Option<MapSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<Perturbation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<FieldSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow: Option<FlowSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify: Option<VerifySection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
}

/// Parses without validation. Errors carry the TOML line and column.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    toml::from_str(text).map_err(|e| {
        let msg = e.to_string().trim_end().to_string();
        match e.span().and_then(|s| enclosing_table(text, s.start)) {
            Some(table) => Error::Config(format!("in [{table}]: {msg}")),
            None => Error::Config(msg),
        }
    })
}

/// Header of the table containing byte offset `at`, if any.
fn enclosing_table(text: &str, at: usize) -> Option<String> {
    let head = &text[..at.min(text.len())];
    head.lines()
        .rev()
        .map(str::trim)
        .find(|l| l.starts_with('['))
        .map(|l| l.trim_matches(|c| c == '[' || c == ']').trim().to_string())
}

impl RunConfig {
    /// Applies command-line overrides, fills the defaults relevant to the
    /// command and validates. The result is the normalized config.
    pub fn normalize(mut self, command: Command, seed: Option<u64>, resolution: Option<usize>) -> Result<RunConfig> {
        match self.command {
            Some(c) if c != command => {
                return Err(Error::Config(format!(
                    "command: config says `{}` but `{}` was requested",
                    c.name(),
                    command.name()
                )))
            }
            _ => self.command = Some(command),
        }
        if seed.is_some() {
            self.seed = seed;
        }
        if resolution.is_some() {
            self.resolution = resolution;
            self.resolutions = None;
        }
        if let Some(r) = &self.resolutions {
            if r.is_empty() || r.contains(&0) {
                return Err(Error::Config("resolutions: entries must be positive and non-empty".into()));
            }
            if self.resolution.is_some() {
                return Err(Error::Config("resolution: conflicts with `resolutions`".into()));
            }
        }
        if self.resolution == Some(0) {
            return Err(Error::Config("resolution: must be positive".into()));
        }
        match command {
            Command::Flow => {
                for (name, present) in
                    [("mesh", self.mesh.is_some()), ("target", self.target.is_some()), ("map", self.map.is_some())]
                {
                    if !present {
                        return Err(Error::Config(format!("{name}: missing section required by `flow`")));
                    }
                }
                self.field.get_or_insert_with(FieldSpec::default);
                let flow = self.flow.get_or_insert_with(FlowSection::default);
                if flow.cfl.is_none() && flow.dt.is_none() {
                    flow.cfl = Some(0.5);
                }
                flow.params().map_err(|e| Error::Config(format!("flow: {e}")))?;
                if self.perturbation.is_some() && self.seed.is_none() {
                    return Err(Error::Config("seed: required by `perturbation`".into()));
                }
                // build once to surface descriptor errors before any output
                for n in self.ladder() {
                    self.flow_config(n)?;
                }
            }
            Command::Verify => {
                let v = self.verify.get_or_insert_with(VerifySection::default);
                if let Some(bad) = v.estimates.iter().find(|id| !ESTIMATE_IDS.contains(&id.as_str())) {
                    return Err(Error::Config(format!("verify.estimates: unknown estimate id `{bad}`")));
                }
                if self.seed.is_none() {
                    return Err(Error::Config("seed: required by `verify`".into()));
                }
                self.resolution =
                    self.resolution.or(if self.resolutions.is_none() { Some(DEFAULT_RESOLUTION) } else { None });
            }
            Command::Spectrum => {
                if self.mesh.is_none() {
                    return Err(Error::Config("mesh: missing section required by `spectrum`".into()));
                }
                for n in self.ladder() {
                    self.build_mesh_at(n)?;
                }
            }
            Command::Sweep => {
                let s = self.sweep.get_or_insert_with(SweepSection::default);
                if s.ratios.is_empty() || s.ratios.iter().any(|r| !r.is_finite()) {
                    return Err(Error::Config("sweep.ratios: need at least one finite ratio".into()));
                }
                if !(s.t_max > 0.0) {
                    return Err(Error::Config("sweep.t_max: must be positive".into()));
                }
                self.resolution =
                    self.resolution.or(if self.resolutions.is_none() { Some(DEFAULT_RESOLUTION) } else { None });
            }
        }
        Ok(self)
    }

    /// Resolutions to run: the ladder, the single override, or `None` for
    /// the mesh as written.
    pub fn ladder(&self) -> Vec<Option<usize>> {
        match (&self.resolutions, self.resolution) {
            (Some(r), _) => r.iter().map(|&n| Some(n)).collect(),
            (None, n) => vec![n],
        }
    }

    /// TOML text of the config; the input to the config hash.
    pub fn echo(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.echo().as_bytes()))
    }

    pub fn mesh_spec_at(&self, resolution: Option<usize>) -> Result<MeshSpec> {
        let mut spec = self.mesh.clone().ok_or_else(|| Error::Config("mesh: missing section".into()))?;
        if let Some(n) = resolution {
            let extra = usize::from(spec.topology != Topology::TorusPeriodic);
            spec = spec.with_resolution(n + extra);
        }
        Ok(spec)
    }

    pub fn build_mesh_at(&self, resolution: Option<usize>) -> Result<DomainMesh> {
        build_mesh(&self.mesh_spec_at(resolution)?).map_err(|e| Error::Config(format!("mesh: {e}")))
    }

    pub fn suite_options(&self, resolution: usize) -> SuiteOptions {
        let v = self.verify.clone().unwrap_or_default();
        SuiteOptions {
            resolution,
            seed: self.seed.unwrap_or(SuiteOptions::default().seed),
            scenarios: v.scenarios,
            mu_samples: v.mu_samples,
            t_max: v.t_max,
        }
    }

    /// Initial map, field and parameters for a flow at this resolution.
    pub fn flow_config(&self, resolution: Option<usize>) -> Result<FlowConfig> {
        let mesh = Arc::new(self.build_mesh_at(resolution)?);
        let target_spec = self.target.as_ref().ok_or_else(|| Error::Config("target: missing section".into()))?;
        let target = Arc::new(target_spec.build().map_err(|e| Error::Config(format!("target: {e}")))?);
        let map_spec = self.map.as_ref().ok_or_else(|| Error::Config("map: missing section".into()))?;
        let mut g = build_map(map_spec, mesh, target.clone()).map_err(|e| Error::Config(format!("map: {e}")))?;
        if let Some(p) = &self.perturbation {
            let mut rng = scenario_rng(self.seed.unwrap_or(0), 0);
            g = perturb(&g, p, &mut rng).map_err(|e| Error::Config(format!("perturbation: {e}")))?;
        }
        let field =
            self.field.clone().unwrap_or_default().build(&target).map_err(|e| Error::Config(format!("field: {e}")))?;
        let params = self.flow.clone().unwrap_or_default().params().map_err(|e| Error::Config(format!("flow: {e}")))?;
        let mut cfg = FlowConfig::new(g, field, params);
        cfg.seed = self.seed.unwrap_or(0);
        cfg.config_hash = self.hash();
        Ok(cfg)
    }
}

fn check_len(what: &str, v: &[f64], dim: usize) -> Result<()> {
    if v.len() != dim {
        return Err(Error::Config(format!("`{what}` has {} components, target dimension is {dim}", v.len())));
    }
    Ok(())
}

fn bump_profile(mesh: &DomainMesh, x: [f64; 2]) -> f64 {
    let l = mesh.lengths();
    let mut s = (PI * x[0] / l[0]).sin();
    if mesh.dim() == 2 {
        s *= (PI * x[1] / l[1]).sin();
    }
    s
}

pub fn build_map(spec: &MapSpec, mesh: Arc<DomainMesh>, target: Arc<TargetManifold>) -> Result<MapField> {
    let dim = target.dim();
    let trivial = default_homotopy(&mesh, &target);
    let l0 = mesh.lengths()[0];
    match spec {
        MapSpec::Constant { point } => {
            check_len("point", point, dim)?;
            let p = point.clone();
            MapField::from_chart_fn(mesh, target, trivial, move |_| p.clone())
        }
        MapSpec::Linear { from, to, bump } | MapSpec::Geodesic { from, to, bump } => {
            check_len("from", from, dim)?;
            check_len("to", to, dim)?;
            let b = bump.clone().unwrap_or_else(|| vec![0.0; dim]);
            check_len("bump", &b, dim)?;
            let geodesic = matches!(spec, MapSpec::Geodesic { .. });
            if geodesic && target.chart() == Chart::FlatTorus {
                return Err(Error::Config("geodesic maps need a simply connected target".into()));
            }
            let (p, q) = (target.from_chart(from), target.from_chart(to));
            let (a, z) = (from.clone(), to.clone());
            let m = mesh.clone();
            let t = target.clone();
            MapField::from_chart_fn(mesh, target, trivial, move |x| {
                let s = x[0] / l0;
                let w = bump_profile(&m, x);
                let base = if geodesic {
                    let mut out = vec![0.0; p.len()];
                    t.geodesic_into(&p, &q, s, &mut out);
                    t.to_chart(&out)
                } else {
                    a.iter().zip(&z).map(|(a, z)| (1.0 - s) * a + s * z).collect()
                };
                base.iter().zip(&b).map(|(y, b)| y + b * w).collect()
            })
        }
        MapSpec::TorusAffine { matrix } => harmonic_affine_representative(mesh, target, matrix.clone()),
        MapSpec::File { path } => {
            let file =
                std::fs::File::open(path).map_err(|e| Error::Config(format!("cannot open {}: {e}", path.display())))?;
            MapField::read_csv(std::io::BufReader::new(file), mesh, target)
        }
    }
}

/// Reads and parses a config file.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text)
}
