//! Explicit geodesic Euler integration of the heat flow
//! ∂f/∂t = τ(f) − V(f) with Dirichlet pinning.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::calculus::{energy, energy_density, tension_into, MapField, TangentField};
use crate::error::{Error, Result};
use crate::fields::{estimate_mu, MuEstimate, PrescribedField};
use crate::mesh::{first_dirichlet_eigenvalue, integrate, solve_poisson_dirichlet, ScalarField};

/// Blowup threshold relative to max(initial sup e, 1).
pub const BLOWUP_FACTOR: f64 = 1e6;
/// Per-step tolerance on increases of ∫|r|⁴, relative to 1 + initial value.
pub const QUARTIC_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case", deny_unknown_fields)]
pub enum DtPolicy {
    Fixed { dt: f64 },
    Cfl { fraction: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowParams {
    pub dt: DtPolicy,
    pub t_max: f64,
    pub tol_stat: f64,
    /// Emit a diagnostic row every this many steps.
    pub diagnostic_every: u64,
    /// Checkpoint every this many steps (0 disables).
    pub checkpoint_every: u64,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self {
            dt: DtPolicy::Cfl { fraction: 0.5 },
            t_max: 1.0,
            tol_stat: 1e-8,
            diagnostic_every: 100,
            checkpoint_every: 0,
        }
    }
}

impl FlowParams {
    pub fn validate(&self) -> Result<()> {
        match self.dt {
            DtPolicy::Cfl { fraction } if !(fraction > 0.0 && fraction <= 1.0) => {
                return Err(Error::Config(format!("flow.cfl must lie in (0, 1], got {fraction}")))
            }
            DtPolicy::Fixed { dt } if !(dt > 0.0 && dt.is_finite()) => {
                return Err(Error::Config(format!("flow.dt must be positive, got {dt}")))
            }
            _ => {}
        }
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            return Err(Error::Config("flow.t_max must be positive".into()));
        }
        if !(self.tol_stat > 0.0) {
            return Err(Error::Config("flow.tol_stat must be positive".into()));
        }
        if self.diagnostic_every == 0 {
            return Err(Error::Config("flow.diagnostic_every must be at least 1".into()));
        }
        Ok(())
    }
}

/// Everything a run needs: boundary/initial map g, the field V and the
/// stepping parameters.
#[derive(Debug, Clone)]
pub struct FlowConfig {
    pub initial: MapField,
    pub field: PrescribedField,
    pub params: FlowParams,
    pub seed: u64,
    /// Hash of the originating config, recorded in checkpoints.
    pub config_hash: String,
}

impl FlowConfig {
    pub fn new(initial: MapField, field: PrescribedField, params: FlowParams) -> Self {
        Self { initial, field, params, seed: 0, config_hash: String::new() }
    }

    /// Time step from the policy: c·h²·e^{2φ_min}/(2m) under CFL.
    pub fn dt(&self) -> f64 {
        match self.params.dt {
            DtPolicy::Fixed { dt } => dt,
            DtPolicy::Cfl { fraction } => {
                let mesh = self.initial.mesh();
                let h = mesh.min_spacing();
                let phi_min = mesh.phi().iter().copied().fold(f64::INFINITY, f64::min);
                fraction * h * h * (2.0 * phi_min).exp() / (2.0 * mesh.dim() as f64)
            }
        }
    }
}

/// Running maxima and the ∫|r|⁴ monotonicity trace, updated every step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Trackers {
    pub r4_initial: f64,
    pub r4_last: f64,
    pub r4_max: f64,
    /// Largest single-step increase of ∫|r|⁴ divided by (1 + initial).
    pub r4_max_rel_increase: f64,
    pub r4_violations: u64,
    pub sup_e_initial: f64,
    pub sup_e_max: f64,
    pub sup_r_max: f64,
    /// Running sup over nodes and time of |r| + |V(f)|.
    pub cb_max: f64,
}

impl Trackers {
    pub(crate) const FIELDS: usize = 9;

    pub(crate) fn to_bits(self) -> Vec<u64> {
        [
            self.r4_initial,
            self.r4_last,
            self.r4_max,
            self.r4_max_rel_increase,
            self.r4_violations as f64,
            self.sup_e_initial,
            self.sup_e_max,
            self.sup_r_max,
            self.cb_max,
        ]
        .iter()
        .map(|v| v.to_bits())
        .collect()
    }

    pub(crate) fn from_bits(b: &[u64]) -> Self {
        let v: Vec<f64> = b.iter().map(|x| f64::from_bits(*x)).collect();
        Self {
            r4_initial: v[0],
            r4_last: v[1],
            r4_max: v[2],
            r4_max_rel_increase: v[3],
            r4_violations: v[4] as u64,
            sup_e_initial: v[5],
            sup_e_max: v[6],
            sup_r_max: v[7],
            cb_max: v[8],
        }
    }
}

#[derive(Debug, Clone)]
pub struct FlowState {
    pub time: f64,
    pub step: u64,
    pub map: MapField,
    /// r = τ(f) − V(f) at interior nodes, zero on the boundary.
    pub residual: TangentField,
    pub trackers: Trackers,
}

impl FlowState {
    pub fn sup_residual(&self) -> f64 {
        self.residual.norms(self.map.target()).max_abs()
    }
}

/// One diagnostic row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticRow {
    pub t: f64,
    pub step: u64,
    pub energy: f64,
    /// E_Φ for variational fields.
    pub energy_phi: Option<f64>,
    pub r4: f64,
    pub r2: f64,
    pub sup_e: f64,
    /// sup e(f) over nodes within two cells of the boundary.
    pub sup_e_boundary: f64,
    pub sup_d: f64,
    pub sup_r: f64,
    pub sup_v: f64,
    /// max over interior nodes of (d(f,g) − h)/u₁ with Δu₁ = −1.
    pub dominance_ratio: Option<f64>,
    /// max over interior nodes of d(f,g)/dist(x, ∂Ω).
    pub boundary_ratio: Option<f64>,
}

impl DiagnosticRow {
    pub const HEADER: &'static str =
        "t,step,energy,energy_phi,r4,r2,sup_e,sup_e_boundary,sup_d,sup_r,sup_v,dominance_ratio,boundary_ratio";

    pub fn csv_line(&self) -> String {
        let f = |v: f64| format!("{v:.17e}");
        let o = |v: Option<f64>| v.map_or(String::new(), f);
        [
            f(self.t),
            self.step.to_string(),
            f(self.energy),
            o(self.energy_phi),
            f(self.r4),
            f(self.r2),
            f(self.sup_e),
            f(self.sup_e_boundary),
            f(self.sup_d),
            f(self.sup_r),
            f(self.sup_v),
            o(self.dominance_ratio),
            o(self.boundary_ratio),
        ]
        .join(",")
    }

    pub(crate) fn to_bits(self) -> Vec<u64> {
        let o = |v: Option<f64>| v.map_or(u64::MAX, |x| x.to_bits());
        vec![
            self.t.to_bits(),
            self.step,
            self.energy.to_bits(),
            o(self.energy_phi),
            self.r4.to_bits(),
            self.r2.to_bits(),
            self.sup_e.to_bits(),
            self.sup_e_boundary.to_bits(),
            self.sup_d.to_bits(),
            self.sup_r.to_bits(),
            self.sup_v.to_bits(),
            o(self.dominance_ratio),
            o(self.boundary_ratio),
        ]
    }

    pub(crate) fn from_bits(b: &[u64]) -> Option<Self> {
        if b.len() != 13 {
            return None;
        }
        let f = |i: usize| f64::from_bits(b[i]);
        let o = |i: usize| (b[i] != u64::MAX).then(|| f64::from_bits(b[i]));
        Some(Self {
            t: f(0),
            step: b[1],
            energy: f(2),
            energy_phi: o(3),
            r4: f(4),
            r2: f(5),
            sup_e: f(6),
            sup_e_boundary: f(7),
            sup_d: f(8),
            sup_r: f(9),
            sup_v: f(10),
            dominance_ratio: o(11),
            boundary_ratio: o(12),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Termination {
    Stationary,
    TimeLimit,
    Blowup { step: u64, time: f64, node: usize, reason: String },
}

impl Termination {
    pub fn exit_code(&self) -> i32 {
        match self {
            Termination::Stationary => 0,
            Termination::TimeLimit => 2,
            Termination::Blowup { .. } => 3,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Termination::Stationary => "stationary",
            Termination::TimeLimit => "t_max",
            Termination::Blowup { .. } => "blowup",
        }
    }
}

/// μ against ¾λ(Ω).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateReport {
    pub mu: MuEstimate,
    pub lambda: f64,
    pub satisfied: bool,
}

impl GateReport {
    pub fn message(&self) -> String {
        format!(
            "mu = {:.6e} (sampled {:.6e}, {} samples) vs 3/4 lambda = {:.6e}: {}",
            self.mu.conservative(),
            self.mu.sampled,
            self.mu.samples,
            0.75 * self.lambda,
            if self.satisfied { "gate satisfied" } else { "gate violated" }
        )
    }
}

#[derive(Debug, Clone)]
pub struct FlowReport {
    pub rows: Vec<DiagnosticRow>,
    pub termination: Termination,
    pub final_state: FlowState,
    pub dt: f64,
    /// sup |τ(g)| at interior nodes.
    pub tau_g_sup: f64,
    /// First Dirichlet eigenvalue (Dirichlet meshes).
    pub lambda: Option<f64>,
}

impl FlowReport {
    pub fn trackers(&self) -> &Trackers {
        &self.final_state.trackers
    }

    /// Maximum-principle constant C_b = sup(|r| + |V|) + sup|τ(g)|.
    pub fn comparison_constant(&self) -> f64 {
        self.final_state.trackers.cb_max + self.tau_g_sup
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", DiagnosticRow::HEADER)?;
        for r in &self.rows {
            writeln!(w, "{}", r.csv_line())?;
        }
        Ok(())
    }
}

/// Static data derived once per run.
#[derive(Debug, Clone)]
struct Aux {
    u1: Option<ScalarField>,
    boundary_dist: Vec<f64>,
    near_boundary: Vec<bool>,
    lambda: Option<f64>,
    tau_g_sup: f64,
}

/// A flow in progress.
#[derive(Debug, Clone)]
pub struct Flow {
    config: FlowConfig,
    state: FlowState,
    rows: Vec<DiagnosticRow>,
    dt: f64,
    aux: Aux,
}

struct ResidualInfo {
    residual: TangentField,
    sup_v: f64,
    cb: f64,
}

fn compute_residual(f: &MapField, field: &PrescribedField) -> ResidualInfo {
    let mesh = f.mesh();
    let k = f.ambient_dim();
    let target = f.target();
    let mut r = TangentField::zeros(mesh.len(), k);
    tension_into(f, r.values_mut());
    let mut v = vec![0.0; k];
    let mut sup_v = 0.0f64;
    let mut cb = 0.0f64;
    for node in 0..mesh.len() {
        if mesh.is_boundary(node) {
            continue;
        }
        field.eval_into(mesh.coords(node), f.at(node), &mut v);
        let out = r.at_mut(node);
        for i in 0..k {
            out[i] -= v[i];
        }
        let nv = target.norm(&v);
        sup_v = sup_v.max(nv);
        cb = cb.max(target.norm(out) + nv);
    }
    ResidualInfo { residual: r, sup_v, cb }
}

fn quartic_and_square(f: &MapField, r: &TangentField) -> (f64, f64) {
    let mesh = f.mesh();
    let w = mesh.weights();
    let mut r4 = 0.0;
    let mut r2 = 0.0;
    for node in 0..mesh.len() {
        let n2 = f.target().norm_sq(r.at(node));
        r2 += w[node] * n2;
        r4 += w[node] * n2 * n2;
    }
    (r4, r2)
}

/// E_Φ(f) = E(f) + ∫Φ(f).
pub fn variational_energy(f: &MapField, field: &PrescribedField) -> Result<f64> {
    if !field.is_variational() {
        return Err(Error::NotVariational);
    }
    let mesh = f.mesh();
    let phi: Vec<f64> = (0..mesh.len()).map(|n| field.potential(f.at(n))).collect::<Result<_>>()?;
    Ok(energy(f) + integrate(mesh, &phi)?)
}

/// Chart centre and radius of a geodesic ball containing all values of g,
/// enlarged by one unit, for μ sampling.
pub fn probe_region(g: &MapField) -> (Vec<f64>, f64) {
    let t = g.target();
    let mesh = g.mesh();
    let k = g.ambient_dim();
    let mut mean = vec![0.0; t.dim()];
    for n in 0..mesh.len() {
        for (m, c) in mean.iter_mut().zip(t.to_chart(g.at(n))) {
            *m += c / mesh.len() as f64;
        }
    }
    let c = t.from_chart(&mean);
    let r = (0..mesh.len()).map(|n| t.dist(&c, &g.coords()[n * k..(n + 1) * k])).fold(0.0, f64::max);
    (mean, r + 1.0)
}

/// Evaluates the gate μ ≤ ¾λ(Ω) with μ the larger of the analytic and
/// sampled values.
pub fn gate_check<R: rand::Rng + ?Sized>(config: &FlowConfig, samples: usize, rng: &mut R) -> Result<GateReport> {
    let (lambda, _) = first_dirichlet_eigenvalue(config.initial.mesh())?;
    let (center, radius) = probe_region(&config.initial);
    let mu = estimate_mu(&config.field, samples, &center, radius, rng);
    Ok(GateReport { mu, lambda, satisfied: mu.conservative() <= 0.75 * lambda })
}

impl Flow {
    /// State at t = 0 with f = g and the residual computed.
    pub fn new(config: FlowConfig) -> Result<Self> {
        config.params.validate()?;
        let f = config.initial.clone();
        if f.field_target_mismatch(&config.field) {
            return Err(Error::Config("field and map use different targets".into()));
        }
        let mesh = f.mesh().clone();
        let info = compute_residual(&f, &config.field);
        if info.residual.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("initial map has non-finite tension".into()));
        }
        let mut tau = TangentField::zeros(mesh.len(), f.ambient_dim());
        tension_into(&f, tau.values_mut());
        let tau_g_sup = tau.norms(f.target()).max_abs();
        let (u1, lambda) = if mesh.is_periodic() {
            (None, None)
        } else {
            let u1 = solve_poisson_dirichlet(&mesh, &vec![-1.0; mesh.len()])?;
            (Some(u1), Some(first_dirichlet_eigenvalue(&mesh)?.0))
        };
        let boundary_dist = mesh.distance_to_boundary().to_vec();
        let reach = 2.0 * mesh.min_spacing() * (1.0 + 1e-9);
        let near_boundary = (0..mesh.len())
            .map(|n| !mesh.is_periodic() && (mesh.is_boundary(n) || boundary_dist[n] <= reach))
            .collect();
        let (r4, _) = quartic_and_square(&f, &info.residual);
        let sup_e = energy_density(&f).max_abs();
        let sup_r = info.residual.norms(f.target()).max_abs();
        let trackers = Trackers {
            r4_initial: r4,
            r4_last: r4,
            r4_max: r4,
            r4_max_rel_increase: f64::NEG_INFINITY,
            r4_violations: 0,
            sup_e_initial: sup_e,
            sup_e_max: sup_e,
            sup_r_max: sup_r,
            cb_max: info.cb,
        };
        let state = FlowState { time: 0.0, step: 0, map: f, residual: info.residual, trackers };
        let dt = config.dt();
        let aux = Aux { u1, boundary_dist, near_boundary, lambda, tau_g_sup };
        let mut flow = Self { config, state, rows: Vec::new(), dt, aux };
        let row = flow.diagnostic_row(info.sup_v);
        flow.rows.push(row);
        Ok(flow)
    }

    /// Rebuilds a flow from a stored state and rows.
    pub(crate) fn resume(
        config: FlowConfig,
        map: MapField,
        time: f64,
        step: u64,
        trackers: Trackers,
        rows: Vec<DiagnosticRow>,
    ) -> Result<Self> {
        let mut flow = Self::new(config)?;
        let info = compute_residual(&map, &flow.config.field);
        flow.state = FlowState { time, step, map, residual: info.residual, trackers };
        flow.rows = rows;
        Ok(flow)
    }

    pub fn config(&self) -> &FlowConfig {
        &self.config
    }

    pub fn state(&self) -> &FlowState {
        &self.state
    }

    pub fn rows(&self) -> &[DiagnosticRow] {
        &self.rows
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    fn diagnostic_row(&self, sup_v: f64) -> DiagnosticRow {
        let s = &self.state;
        let f = &s.map;
        let g = &self.config.initial;
        let mesh = f.mesh();
        let target = f.target();
        let (r4, r2) = quartic_and_square(f, &s.residual);
        let e = energy_density(f);
        let energy = integrate(mesh, &e).expect("sized");
        let sup_e_boundary = (0..mesh.len()).filter(|&n| self.aux.near_boundary[n]).map(|n| e[n]).fold(0.0, f64::max);
        let d: Vec<f64> = (0..mesh.len()).map(|n| target.dist(f.at(n), g.at(n))).collect();
        let h = mesh.min_spacing();
        let dominance_ratio =
            self.aux.u1.as_ref().and_then(|u1| {
                mesh.interior_nodes().filter(|&n| u1[n] > 0.0).map(|n| (d[n] - h) / u1[n]).reduce(f64::max)
            });
        let boundary_ratio = (!mesh.is_periodic())
            .then(|| {
                mesh.interior_nodes()
                    .filter(|&n| self.aux.boundary_dist[n] > 0.0)
                    .map(|n| d[n] / self.aux.boundary_dist[n])
                    .reduce(f64::max)
            })
            .flatten();
        DiagnosticRow {
            t: s.time,
            step: s.step,
            energy,
            energy_phi: variational_energy(f, &self.config.field).ok(),
            r4,
            r2,
            sup_e: e.max_abs(),
            sup_e_boundary,
            sup_d: d.iter().copied().fold(0.0, f64::max),
            sup_r: s.residual.norms(target).max_abs(),
            sup_v,
            dominance_ratio,
            boundary_ratio,
        }
    }

    /// One geodesic Euler step of size `dt`. On failure the state is left
    /// untouched.
    pub fn step_with(&mut self, dt: f64) -> Result<()> {
        let next = advance(&self.config, &self.state, dt)?;
        let info = compute_residual(&next, &self.config.field);
        let s = &mut self.state;
        let step = s.step + 1;
        let time = s.time + dt;
        let e = energy_density(&next);
        let sup_e = e.max_abs();
        let limit = BLOWUP_FACTOR * s.trackers.sup_e_initial.max(1.0);
        if !(sup_e <= limit) {
            let node = (0..e.len()).max_by(|a, b| e[*a].total_cmp(&e[*b])).unwrap_or(0);
            return Err(Error::Blowup {
                step,
                time,
                node,
                reason: format!("sup e(f) = {sup_e:.3e} exceeds {limit:.3e}"),
            });
        }
        let (r4, _) = quartic_and_square(&next, &info.residual);
        let t = &mut s.trackers;
        let rel = (r4 - t.r4_last) / (1.0 + t.r4_initial);
        t.r4_max_rel_increase = t.r4_max_rel_increase.max(rel);
        if rel > QUARTIC_TOL {
            t.r4_violations += 1;
        }
        t.r4_last = r4;
        t.r4_max = t.r4_max.max(r4);
        t.sup_e_max = t.sup_e_max.max(sup_e);
        t.sup_r_max = t.sup_r_max.max(info.residual.norms(next.target()).max_abs());
        t.cb_max = t.cb_max.max(info.cb);
        s.map = next;
        s.residual = info.residual;
        s.step = step;
        s.time = time;
        if step % self.config.params.diagnostic_every == 0 {
            let row = self.diagnostic_row(info.sup_v);
            self.rows.push(row);
        }
        Ok(())
    }

    /// Runs until stationarity, t_max or blowup. `on_checkpoint` is called
    /// at the checkpoint cadence.
    pub fn run_with<F>(mut self, mut on_checkpoint: F) -> Result<FlowReport>
    where
        F: FnMut(&Flow) -> Result<()>,
    {
        let p = self.config.params.clone();
        let termination = loop {
            if self.state.sup_residual() < p.tol_stat {
                break Termination::Stationary;
            }
            let remaining = p.t_max - self.state.time;
            if remaining <= 1e-12 * p.t_max {
                break Termination::TimeLimit;
            }
            let dt = self.dt.min(remaining);
            match self.step_with(dt) {
                Ok(()) => {}
                Err(Error::Blowup { step, time, node, reason }) => {
                    break Termination::Blowup { step, time, node, reason }
                }
                Err(e) => return Err(e),
            }
            if p.checkpoint_every > 0 && self.state.step % p.checkpoint_every == 0 {
                on_checkpoint(&self)?;
            }
        };
        if self.rows.last().is_none_or(|r| r.step != self.state.step) {
            let info = compute_residual(&self.state.map, &self.config.field);
            let row = self.diagnostic_row(info.sup_v);
            self.rows.push(row);
        }
        Ok(FlowReport {
            rows: self.rows,
            termination,
            final_state: self.state,
            dt: self.dt,
            tau_g_sup: self.aux.tau_g_sup,
            lambda: self.aux.lambda,
        })
    }

    pub fn run(self) -> Result<FlowReport> {
        self.run_with(|_| Ok(()))
    }
}

impl MapField {
    fn field_target_mismatch(&self, field: &PrescribedField) -> bool {
        **self.target() != **field.target()
    }
}

/// f⁺ = exp_f(dt·r) at interior nodes; boundary nodes copied from g.
fn advance(config: &FlowConfig, state: &FlowState, dt: f64) -> Result<MapField> {
    let f = &state.map;
    let g = &config.initial;
    let mesh = f.mesh();
    let target = f.target();
    let k = f.ambient_dim();
    let mut coords = vec![0.0; f.coords().len()];
    let mut v = vec![0.0; k];
    for node in 0..mesh.len() {
        let out = &mut coords[node * k..(node + 1) * k];
        if mesh.is_boundary(node) {
            out.copy_from_slice(g.at(node));
            continue;
        }
        for (vi, ri) in v.iter_mut().zip(state.residual.at(node)) {
            *vi = dt * ri;
        }
        target.exp_into(f.at(node), &v, out);
        if out.iter().any(|c| !c.is_finite()) {
            return Err(Error::Blowup {
                step: state.step + 1,
                time: state.time + dt,
                node,
                reason: "non-finite coordinates".into(),
            });
        }
    }
    f.with_coords(coords)
}

pub fn initialize(config: FlowConfig) -> Result<Flow> {
    Flow::new(config)
}

/// Single step returning the new state; the input state is unchanged.
pub fn step(config: &FlowConfig, state: &FlowState, dt: f64) -> Result<FlowState> {
    let next = advance(config, state, dt)?;
    let info = compute_residual(&next, &config.field);
    Ok(FlowState {
        time: state.time + dt,
        step: state.step + 1,
        map: next,
        residual: info.residual,
        trackers: state.trackers,
    })
}

pub fn run(config: FlowConfig) -> Result<FlowReport> {
    Flow::new(config)?.run()
}
