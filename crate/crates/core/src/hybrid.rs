//! Coupled cytosol/ER simulation on the radial cross-section.
//!
//! `u` (cytosolic calcium) and `b` (free buffer) live on `[L, R]`, `u_e`
//! (ER calcium) on `[0, L]`. Each step solves three decoupled tridiagonal
//! systems; the only nonlinearities left implicit are the boundary fluxes,
//! handled by a scalar-per-node Newton iteration.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{
    assemble_mass, assemble_regular_convection, assemble_singular_convection, assemble_stiffness, solve_banded,
    Mesh1D, TriDiagonal,
};
use crate::flux::{g_c, g_c_du, g_e, g_e_partials, BufferParams, ErParams, PlasmaParams};
use crate::markov::{open_probability, step_backward_euler, MarkovRates, MarkovState};
use crate::surrogate::{predict_next_p, NetworkParams};

/// Values in `[-UNDERSHOOT_TOL, 0)` are treated as round-off and clamped.
pub const UNDERSHOOT_TOL: f64 = 1e-8;
pub const NEWTON_TOL: f64 = 1e-10;
pub const NEWTON_MAX_ITER: usize = 50;
/// `u(L)` threshold defining the wave duration, µM.
pub const WAVE_THRESHOLD: f64 = 0.1;

/// `Polar` keeps the `(1/r) ∂_r` term; `Planar` drops it, turning both
/// subdomains into slabs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Coordinates {
    #[default]
    Polar,
    Planar,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Geometry {
    /// ER radius `L`, µm.
    pub er_radius: f64,
    /// Cell radius `R`, µm.
    pub cell_radius: f64,
    pub er_elements: usize,
    pub cytosol_elements: usize,
    pub coordinates: Coordinates,
}

impl Default for Geometry {
    fn default() -> Self {
        Self {
            er_radius: 1.5,
            cell_radius: std::f64::consts::PI,
            er_elements: 40,
            cytosol_elements: 40,
            coordinates: Coordinates::Polar,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Diffusion {
    /// Calcium diffusivity, µm²/s (cytosol and ER).
    pub calcium: f64,
    /// Buffer diffusivity, µm²/s.
    pub buffer: f64,
}

impl Default for Diffusion {
    fn default() -> Self {
        Self {
            calcium: 220.0,
            buffer: 20.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialValues {
    pub u: f64,
    pub b: f64,
    pub u_e: f64,
    pub markov: MarkovState,
}

impl Default for InitialValues {
    fn default() -> Self {
        Self {
            u: 0.05,
            b: 37.0,
            u_e: 250.0,
            markov: MarkovState::EXAMPLE1_INITIAL,
        }
    }
}

/// Influx at `r = R`: `a · t² (1 - t)²` on `[0, 1]`, zero afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StimulusSpec {
    /// µM·µm/s.
    pub amplitude: f64,
}

impl Default for StimulusSpec {
    fn default() -> Self {
        Self { amplitude: 1200.0 }
    }
}

impl StimulusSpec {
    pub fn value(&self, t: f64) -> f64 {
        if (0.0..=1.0).contains(&t) {
            let s = t * (1.0 - t);
            self.amplitude * s * s
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelKind {
    Markov,
    Surrogate,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub geometry: Geometry,
    pub diffusion: Diffusion,
    pub plasma: PlasmaParams,
    pub er: ErParams,
    pub buffer: BufferParams,
    pub markov: MarkovRates,
    pub initial: InitialValues,
    pub stimulus: StimulusSpec,
    /// When false, `g_c ≡ 0` (the stimulus still applies).
    pub plasma_flux: bool,
    pub dt: f64,
    pub t_end: f64,
    pub channel: ChannelKind,
    /// Record every `observe_stride`-th step.
    pub observe_stride: usize,
    /// Full-field snapshots every this many steps, if set.
    pub snapshot_stride: Option<usize>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self::example1()
    }
}

impl SimConfig {
    pub fn example1() -> Self {
        Self {
            geometry: Geometry::default(),
            diffusion: Diffusion::default(),
            plasma: PlasmaParams::EXAMPLE1,
            er: ErParams::EXAMPLE1,
            buffer: BufferParams::EXAMPLE1,
            markov: MarkovRates::EXAMPLE1,
            initial: InitialValues::default(),
            stimulus: StimulusSpec::default(),
            plasma_flux: true,
            dt: 1.0 / 2500.0,
            t_end: 4.0,
            channel: ChannelKind::Markov,
            observe_stride: 1,
            snapshot_stride: None,
        }
    }

    /// Example 1 with the influx halved.
    pub fn example1_reduced() -> Self {
        Self {
            stimulus: StimulusSpec { amplitude: 600.0 },
            ..Self::example1()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "example1" => Some(Self::example1()),
            "example1-reduced" => Some(Self::example1_reduced()),
            _ => None,
        }
    }

    pub fn num_steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return bad(format!("t_end must be positive, got {}", self.t_end));
        }
        let g = &self.geometry;
        if !(g.er_radius > 0.0 && g.cell_radius > g.er_radius) {
            return bad(format!("need 0 < L < R, got L={}, R={}", g.er_radius, g.cell_radius));
        }
        if g.er_elements == 0 || g.cytosol_elements == 0 {
            return bad("element counts must be positive".into());
        }
        if !(self.diffusion.calcium > 0.0 && self.diffusion.buffer > 0.0) {
            return bad("diffusivities must be positive".into());
        }
        if !(self.stimulus.amplitude >= 0.0) {
            return bad(format!("stimulus amplitude must be nonnegative, got {}", self.stimulus.amplitude));
        }
        if self.observe_stride == 0 || self.snapshot_stride == Some(0) {
            return bad("strides must be at least 1".into());
        }
        let iv = &self.initial;
        if !(iv.u >= 0.0 && iv.u_e > 0.0 && (0.0..=self.buffer.b0).contains(&iv.b)) {
            return bad(format!("initial values out of range: {iv:?}"));
        }
        self.plasma.validate()?;
        self.er.validate()?;
        self.buffer.validate()?;
        self.markov.validate()?;
        iv.markov.validate()
    }
}

/// Open-probability model at `r = L`.
#[derive(Debug, Clone)]
pub enum ChannelModel {
    /// Backward-Euler step of the three-state chain with the newest `u(L)`.
    Markov { rates: MarkovRates, state: MarkovState },
    /// `P_{n+1} = P_n + dt · F(P_n, u_n, (u_n - u_{n-1})/dt)`.
    Surrogate {
        params: Arc<NetworkParams>,
        p: f64,
        u_last: f64,
        u_before: f64,
    },
    Zero,
}

impl ChannelModel {
    pub fn open_probability(&self) -> Result<f64> {
        match self {
            ChannelModel::Markov { state, .. } => open_probability(state),
            ChannelModel::Surrogate { p, .. } => Ok(*p),
            ChannelModel::Zero => Ok(0.0),
        }
    }

    /// Advances one step given the freshly computed `u(L)`; returns the new `P`.
    pub fn update(&mut self, u_at_l: f64, dt: f64) -> Result<f64> {
        match self {
            ChannelModel::Markov { rates, state } => {
                *state = step_backward_euler(state, u_at_l, dt, rates)?;
                open_probability(state)
            }
            ChannelModel::Surrogate {
                params,
                p,
                u_last,
                u_before,
            } => {
                *p = predict_next_p(params, *p, *u_last, (*u_last - *u_before) / dt, dt)?;
                *u_before = *u_last;
                *u_last = u_at_l;
                Ok(*p)
            }
            ChannelModel::Zero => Ok(0.0),
        }
    }
}

/// Builds the channel model for `kind`. The surrogate starts from the open
/// probability of the configured initial Markov state.
pub fn select_channel_model(kind: ChannelKind, weights: Option<Arc<NetworkParams>>, cfg: &SimConfig) -> Result<ChannelModel> {
    match kind {
        ChannelKind::Markov => Ok(ChannelModel::Markov {
            rates: cfg.markov,
            state: cfg.initial.markov,
        }),
        ChannelKind::Surrogate => {
            let params = weights.ok_or_else(|| Error::InvalidConfig("surrogate channel needs network weights".into()))?;
            Ok(ChannelModel::Surrogate {
                params,
                p: open_probability(&cfg.initial.markov)?,
                u_last: cfg.initial.u,
                u_before: cfg.initial.u,
            })
        }
        ChannelKind::Zero => Ok(ChannelModel::Zero),
    }
}

#[derive(Debug, Clone)]
pub struct SimState {
    pub t: f64,
    pub step: usize,
    /// Cytosolic calcium; node 0 is at `r = L`.
    pub u: Vec<f64>,
    /// Free buffer on the cytosol mesh.
    pub b: Vec<f64>,
    /// ER calcium; the last node is at `r = L`.
    pub u_e: Vec<f64>,
    pub p: f64,
    pub channel: ChannelModel,
}

impl SimState {
    pub fn initial(cfg: &SimConfig, channel: ChannelModel) -> Result<Self> {
        let nc = cfg.geometry.cytosol_elements + 1;
        let ne = cfg.geometry.er_elements + 1;
        Ok(Self {
            t: 0.0,
            step: 0,
            u: vec![cfg.initial.u; nc],
            b: vec![cfg.initial.b; nc],
            u_e: vec![cfg.initial.u_e; ne],
            p: channel.open_probability()?,
            channel,
        })
    }

    pub fn u_at_l(&self) -> f64 {
        self.u[0]
    }

    pub fn u_at_r(&self) -> f64 {
        self.u[self.u.len() - 1]
    }

    pub fn ue_at_l(&self) -> f64 {
        self.u_e[self.u_e.len() - 1]
    }
}

/// Clamps `[-tol, 0)` to zero; errors below.
fn clamp_undershoot(v: &mut [f64]) -> Result<()> {
    for x in v {
        if !x.is_finite() {
            return Err(Error::StateInvariant(format!("non-finite nodal value {x}")));
        }
        if *x < 0.0 {
            if *x < -UNDERSHOOT_TOL {
                return Err(Error::NegativeConcentration(*x));
            }
            *x = 0.0;
        }
    }
    Ok(())
}

/// Boundary residual at node `i`, returning `(value, derivative)`.
type BoundaryFlux<'a> = (usize, &'a dyn Fn(f64) -> Result<(f64, f64)>);

/// Newton solve of `a x = rhs + Σ_k φ_k(x[i_k]) e_{i_k}` where each `φ_k`
/// returns `(value, derivative)`. `x` holds the initial guess.
fn solve_with_boundary_flux(
    a: &TriDiagonal,
    rhs: &[f64],
    x: &mut [f64],
    fluxes: &[BoundaryFlux],
    t: f64,
) -> Result<()> {
    for _ in 0..NEWTON_MAX_ITER {
        let mut residual = a.mul_vec(x);
        let mut jac = a.clone();
        for (r, b) in residual.iter_mut().zip(rhs) {
            *r -= b;
        }
        for &(i, phi) in fluxes {
            let (v, dv) = phi(x[i])?;
            residual[i] -= v;
            jac.diag[i] -= dv;
        }
        residual.iter_mut().for_each(|r| *r = -*r);
        let delta = solve_banded(&jac, &residual)?;
        let mut step = 0.0_f64;
        for (xi, d) in x.iter_mut().zip(&delta) {
            *xi += d;
            step = step.max(d.abs());
        }
        if !step.is_finite() {
            break;
        }
        if step < NEWTON_TOL {
            return Ok(());
        }
    }
    Err(Error::SolverDivergence {
        t,
        iterations: NEWTON_MAX_ITER,
    })
}

/// Meshes and the time-independent parts of the three system matrices.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub coordinates: Coordinates,
    pub cytosol: Mesh1D,
    pub er: Mesh1D,
    mass_c: TriDiagonal,
    mass_e: TriDiagonal,
    base_u: TriDiagonal,
    base_b: TriDiagonal,
    base_e: TriDiagonal,
}

impl Discretization {
    pub fn new(cfg: &SimConfig) -> Result<Self> {
        cfg.validate()?;
        let g = &cfg.geometry;
        let cytosol = Mesh1D::uniform(g.er_radius, g.cell_radius, g.cytosol_elements)?;
        let er = Mesh1D::uniform(0.0, g.er_radius, g.er_elements)?;
        let (mass_c, k_c, a_c) = (
            assemble_mass(&cytosol),
            assemble_stiffness(&cytosol),
            assemble_regular_convection(&cytosol)?,
        );
        let (mass_e, k_e, a_e) = (assemble_mass(&er), assemble_stiffness(&er), assemble_singular_convection(&er)?);
        let curvature = match g.coordinates {
            Coordinates::Polar => 1.0,
            Coordinates::Planar => 0.0,
        };
        let operator = |m: &TriDiagonal, k: &TriDiagonal, a: &TriDiagonal, d: f64| {
            let mut s = TriDiagonal::zeros(m.dim());
            s.add_scaled(1.0 / cfg.dt, m);
            s.add_scaled(d, k);
            s.add_scaled(-d * curvature, a);
            s
        };
        Ok(Self {
            base_u: operator(&mass_c, &k_c, &a_c, cfg.diffusion.calcium),
            base_b: operator(&mass_c, &k_c, &a_c, cfg.diffusion.buffer),
            base_e: operator(&mass_e, &k_e, &a_e, cfg.diffusion.calcium),
            coordinates: g.coordinates,
            cytosol,
            er,
            mass_c,
            mass_e,
        })
    }
}

/// Advances `state` by one step of `cfg.dt`.
pub fn step_imex(state: &mut SimState, cfg: &SimConfig, disc: &Discretization) -> Result<()> {
    let dt = cfg.dt;
    let t_next = state.t + dt;
    let nc = state.u.len();
    let last_c = nc - 1;
    let last_e = state.u_e.len() - 1;
    let buf = &cfg.buffer;
    let p_n = state.p;
    let u_l_old = state.u_at_l();
    let ue_l_old = state.ue_at_l();

    // u: f(u^{n+1}, b^n) keeps the system linear apart from the two ends.
    let mut a_u = disc.base_u.clone();
    a_u.add_scaled_columns(buf.kb_plus, &disc.mass_c, &state.b);
    let mut rhs_u = disc.mass_c.mul_vec(&state.u);
    rhs_u.iter_mut().for_each(|v| *v /= dt);
    let release: Vec<f64> = state.b.iter().map(|b| buf.kb_minus * (buf.b0 - b)).collect();
    for (r, f) in rhs_u.iter_mut().zip(disc.mass_c.mul_vec(&release)) {
        *r += f;
    }
    let influx = cfg.stimulus.value(t_next);
    let plasma = |u: f64| -> Result<(f64, f64)> {
        let u = u.max(0.0);
        if cfg.plasma_flux {
            Ok((g_c(u, &cfg.plasma)? + influx, g_c_du(u, &cfg.plasma)))
        } else {
            Ok((influx, 0.0))
        }
    };
    let er_membrane = |u: f64| -> Result<(f64, f64)> {
        let u = u.max(0.0);
        let v = g_e(u, ue_l_old, p_n, &cfg.er)?;
        let (du, _) = g_e_partials(u, ue_l_old, p_n, &cfg.er);
        Ok((-v, -du))
    };
    let mut u_new = state.u.clone();
    solve_with_boundary_flux(&a_u, &rhs_u, &mut u_new, &[(0, &er_membrane), (last_c, &plasma)], t_next)?;
    clamp_undershoot(&mut u_new)?;

    // b: f(u^n, b^{n+1}) is linear in b.
    let mut a_b = disc.base_b.clone();
    let decay: Vec<f64> = state.u.iter().map(|u| buf.kb_minus + buf.kb_plus * u).collect();
    a_b.add_scaled_columns(1.0, &disc.mass_c, &decay);
    let mut rhs_b = disc.mass_c.mul_vec(&state.b);
    let source = disc.mass_c.row_sums();
    for (r, s) in rhs_b.iter_mut().zip(&source) {
        *r = *r / dt + buf.kb_minus * buf.b0 * s;
    }
    let mut b_new = solve_banded(&a_b, &rhs_b)?;
    for b in &mut b_new {
        if !(*b >= -UNDERSHOOT_TOL && *b <= buf.b0 + UNDERSHOOT_TOL) {
            return Err(Error::BufferOutOfRange { b: *b, b0: buf.b0 });
        }
        *b = b.clamp(0.0, buf.b0);
    }

    // u_e: boundary flux g_e(u^n, u_e^{n+1}).
    let mut rhs_e = disc.mass_e.mul_vec(&state.u_e);
    rhs_e.iter_mut().for_each(|v| *v /= dt);
    let er_side = |ue: f64| -> Result<(f64, f64)> {
        let ue = ue.max(crate::flux::MIN_ER_CONCENTRATION * 2.0);
        let v = g_e(u_l_old, ue, p_n, &cfg.er)?;
        let (_, due) = g_e_partials(u_l_old, ue, p_n, &cfg.er);
        Ok((v, due))
    };
    let mut ue_new = state.u_e.clone();
    solve_with_boundary_flux(&disc.base_e, &rhs_e, &mut ue_new, &[(last_e, &er_side)], t_next)?;
    clamp_undershoot(&mut ue_new)?;
    if ue_new[last_e] <= 0.0 {
        return Err(Error::NonpositiveErConcentration(ue_new[last_e]));
    }

    let p_next = state.channel.update(u_new[0], dt)?;
    if !(0.0..=1.0).contains(&p_next) {
        return Err(Error::ProbabilityOutOfRange(p_next));
    }
    debug_assert!(u_l_old.is_finite());

    state.u = u_new;
    state.b = b_new;
    state.u_e = ue_new;
    state.p = p_next;
    state.t = t_next;
    state.step += 1;
    Ok(())
}

/// `∫_L^R (u - b) r dr + ∫_0^L u_e r dr`, exact for the piecewise-linear
/// fields. In planar coordinates the weight `r` is dropped.
pub fn conserved_quantity(state: &SimState, disc: &Discretization) -> f64 {
    let planar = disc.coordinates == Coordinates::Planar;
    let weighted = |mesh: &Mesh1D, f: &dyn Fn(usize) -> f64| {
        (0..mesh.num_elements())
            .map(|e| {
                let (a, b) = mesh.element(e);
                let h = b - a;
                if planar {
                    0.5 * h * (f(e) + f(e + 1))
                } else {
                    f(e) * h / 6.0 * (2.0 * a + b) + f(e + 1) * h / 6.0 * (a + 2.0 * b)
                }
            })
            .sum::<f64>()
    };
    weighted(&disc.cytosol, &|i| state.u[i] - state.b[i]) + weighted(&disc.er, &|i| state.u_e[i])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Record {
    pub t: f64,
    pub u_r: f64,
    pub u_l: f64,
    pub ue_l: f64,
    pub p: f64,
}

impl Record {
    fn of(s: &SimState) -> Self {
        Self {
            t: s.t,
            u_r: s.u_at_r(),
            u_l: s.u_at_l(),
            ue_l: s.ue_at_l(),
            p: s.p,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub u: Vec<f64>,
    pub b: Vec<f64>,
    pub u_e: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub records: Vec<Record>,
    pub snapshots: Vec<Snapshot>,
    pub cytosol_nodes: Vec<f64>,
    pub er_nodes: Vec<f64>,
    /// Largest `u` over all nodes and steps.
    pub peak_u: f64,
    pub peak_u_l: f64,
    pub peak_u_l_time: f64,
    pub peak_u_r: f64,
    pub peak_u_r_time: f64,
    /// Longest contiguous time with `u(L) > WAVE_THRESHOLD`.
    pub wave_duration: f64,
    pub steps: usize,
}

impl SimOutput {
    /// CSV `t,u_R,u_L,ue_L,P` with 17 significant digits.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "t,u_R,u_L,ue_L,P")?;
        for r in &self.records {
            writeln!(w, "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}", r.t, r.u_r, r.u_l, r.ue_l, r.p)?;
        }
        Ok(())
    }

    /// CSV `t,r,field,value`.
    pub fn write_snapshots_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "t,r,field,value")?;
        for s in &self.snapshots {
            for (field, nodes, values) in [
                ("u", &self.cytosol_nodes, &s.u),
                ("b", &self.cytosol_nodes, &s.b),
                ("u_e", &self.er_nodes, &s.u_e),
            ] {
                for (r, v) in nodes.iter().zip(values.iter()) {
                    writeln!(w, "{:.16e},{:.16e},{field},{:.16e}", s.t, r, v)?;
                }
            }
        }
        Ok(())
    }
}

/// Runs from the initial state to `t_end`.
pub fn run_simulation(cfg: &SimConfig, weights: Option<Arc<NetworkParams>>) -> Result<SimOutput> {
    let channel = select_channel_model(cfg.channel, weights, cfg)?;
    let disc = Discretization::new(cfg)?;
    let state = SimState::initial(cfg, channel)?;
    run_from(state, cfg, &disc)
}

pub fn run_from(mut state: SimState, cfg: &SimConfig, disc: &Discretization) -> Result<SimOutput> {
    let steps = cfg.num_steps();
    let snap = |s: &SimState| Snapshot {
        t: s.t,
        u: s.u.clone(),
        b: s.b.clone(),
        u_e: s.u_e.clone(),
    };
    let mut out = SimOutput {
        records: vec![Record::of(&state)],
        snapshots: cfg.snapshot_stride.map(|_| vec![snap(&state)]).unwrap_or_default(),
        cytosol_nodes: disc.cytosol.nodes().to_vec(),
        er_nodes: disc.er.nodes().to_vec(),
        peak_u: state.u.iter().copied().fold(f64::MIN, f64::max),
        peak_u_l: state.u_at_l(),
        peak_u_l_time: state.t,
        peak_u_r: state.u_at_r(),
        peak_u_r_time: state.t,
        wave_duration: 0.0,
        steps,
    };
    let mut run = 0usize;
    let mut longest = 0usize;
    for n in 1..=steps {
        step_imex(&mut state, cfg, disc)?;
        // Avoid drift in t from repeated addition.
        state.t = n as f64 * cfg.dt;
        out.peak_u = state.u.iter().copied().fold(out.peak_u, f64::max);
        if state.u_at_l() > out.peak_u_l {
            out.peak_u_l = state.u_at_l();
            out.peak_u_l_time = state.t;
        }
        if state.u_at_r() > out.peak_u_r {
            out.peak_u_r = state.u_at_r();
            out.peak_u_r_time = state.t;
        }
        if state.u_at_l() > WAVE_THRESHOLD {
            run += 1;
            longest = longest.max(run);
        } else {
            run = 0;
        }
        if n % cfg.observe_stride == 0 {
            out.records.push(Record::of(&state));
        }
        if let Some(k) = cfg.snapshot_stride {
            if n % k == 0 {
                out.snapshots.push(snap(&state));
            }
        }
    }
    out.wave_duration = longest as f64 * cfg.dt;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(cfg: &SimConfig) -> (SimState, Discretization) {
        let channel = select_channel_model(cfg.channel, Some(Arc::new(NetworkParams::zeros())), cfg).unwrap();
        (SimState::initial(cfg, channel).unwrap(), Discretization::new(cfg).unwrap())
    }

    #[test]
    fn stimulus_window() {
        let s = StimulusSpec { amplitude: 1200.0 };
        assert_eq!(s.value(0.0), 0.0);
        assert!((s.value(0.5) - 75.0).abs() < 1e-12);
        assert_eq!(s.value(1.0), 0.0);
        assert_eq!(s.value(1.5), 0.0);
    }

    #[test]
    fn presets() {
        assert_eq!(SimConfig::preset("example1").unwrap().stimulus.amplitude, 1200.0);
        assert_eq!(SimConfig::preset("example1-reduced").unwrap().stimulus.amplitude, 600.0);
        assert!(SimConfig::preset("nope").is_none());
        SimConfig::example1().validate().unwrap();
        let bad = SimConfig {
            dt: 0.0,
            ..SimConfig::example1()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn channel_model_examples() {
        let cfg = SimConfig::example1();
        let mut zero = select_channel_model(ChannelKind::Zero, None, &cfg).unwrap();
        assert_eq!(zero.open_probability().unwrap(), 0.0);
        assert_eq!(zero.update(5.0, 0.01).unwrap(), 0.0);
        let markov = select_channel_model(ChannelKind::Markov, None, &cfg).unwrap();
        assert!((markov.open_probability().unwrap() - 3.375e-4).abs() < 1e-12);
        let mut frozen =
            select_channel_model(ChannelKind::Surrogate, Some(Arc::new(NetworkParams::zeros())), &cfg).unwrap();
        let p0 = frozen.open_probability().unwrap();
        for u in [0.05, 3.0, 20.0, 0.1] {
            assert_eq!(frozen.update(u, 0.01).unwrap(), p0);
        }
        assert!(select_channel_model(ChannelKind::Surrogate, None, &cfg).is_err());
    }

    #[test]
    fn conserved_quantity_of_constant_er() {
        let cfg = SimConfig::example1();
        let (mut s, disc) = setup(&cfg);
        s.u.iter_mut().for_each(|v| *v = 0.0);
        s.b.iter_mut().for_each(|v| *v = 0.0);
        s.u_e.iter_mut().for_each(|v| *v = 3.0);
        assert!((conserved_quantity(&s, &disc) - 3.0 * 1.5 * 1.5 / 2.0).abs() < 1e-12);
        // Linear fields are integrated exactly too.
        s.u = disc.cytosol.nodes().to_vec();
        let (l, r) = (1.5_f64, std::f64::consts::PI);
        let expected = (r.powi(3) - l.powi(3)) / 3.0 + 3.0 * l * l / 2.0;
        assert!((conserved_quantity(&s, &disc) - expected).abs() < 1e-12);
    }

    #[test]
    fn rest_state_persists() {
        let cfg = SimConfig {
            stimulus: StimulusSpec { amplitude: 0.0 },
            dt: 0.01,
            t_end: 1.0,
            ..SimConfig::example1()
        };
        let (mut s, disc) = setup(&cfg);
        for _ in 0..100 {
            step_imex(&mut s, &cfg, &disc).unwrap();
        }
        assert!(s.u.iter().all(|u| (u - 0.05).abs() < 1e-2));
        assert!(s.b.iter().all(|b| (b - 37.0).abs() < 1e-2));
        assert!(s.u_e.iter().all(|v| (v - 250.0).abs() < 1e-2));
    }

    #[test]
    fn newton_matches_linear_solve_for_affine_flux() {
        let a = {
            let mut m = TriDiagonal::identity(5);
            m.diag.iter_mut().for_each(|d| *d = 3.0);
            m.upper.iter_mut().for_each(|d| *d = -1.0);
            m.lower.iter_mut().for_each(|d| *d = -1.0);
            m
        };
        let rhs = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        let flux = |x: f64| Ok((2.0 - 0.5 * x, -0.5));
        let mut x = vec![0.0; 5];
        solve_with_boundary_flux(&a, &rhs, &mut x, &[(4, &flux)], 0.0).unwrap();
        let mut a2 = a.clone();
        a2.diag[4] += 0.5;
        let mut rhs2 = rhs.clone();
        rhs2[4] += 2.0;
        let direct = solve_banded(&a2, &rhs2).unwrap();
        for (p, q) in x.iter().zip(&direct) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn undershoot_policy() {
        let mut v = vec![1.0, -5e-9, 0.0];
        clamp_undershoot(&mut v).unwrap();
        assert_eq!(v, vec![1.0, 0.0, 0.0]);
        assert!(clamp_undershoot(&mut [-1e-6]).is_err());
        assert!(clamp_undershoot(&mut [f64::NAN]).is_err());
    }

    #[test]
    fn csv_layout() {
        let cfg = SimConfig {
            dt: 0.01,
            t_end: 0.03,
            snapshot_stride: Some(3),
            ..SimConfig::example1()
        };
        let out = run_simulation(&cfg, None).unwrap();
        assert_eq!(out.records.len(), 4);
        let mut buf = Vec::new();
        out.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,u_R,u_L,ue_L,P\n"));
        assert_eq!(text.lines().count(), 5);
        let mut buf = Vec::new();
        out.write_snapshots_csv(&mut buf).unwrap();
        let lines = String::from_utf8(buf).unwrap().lines().count();
        assert_eq!(lines, 1 + 2 * (41 + 41 + 41));
    }

    #[test]
    fn conservation_without_plasma_flux() {
        let cfg = SimConfig {
            plasma_flux: false,
            stimulus: StimulusSpec { amplitude: 0.0 },
            dt: 1e-3,
            t_end: 1.0,
            ..SimConfig::example1()
        };
        let (mut s, disc) = setup(&cfg);
        let q0 = conserved_quantity(&s, &disc);
        for _ in 0..1000 {
            step_imex(&mut s, &cfg, &disc).unwrap();
        }
        let q1 = conserved_quantity(&s, &disc);
        assert!(((q1 - q0) / q0).abs() < 1e-3, "{q0} -> {q1}");
    }

    #[test]
    fn zero_channel_at_rest_stays_put() {
        // ER level balancing SERCA against the leak when P = 0.
        let (mut lo, mut hi) = (200.0, 300.0);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if g_e(0.05, mid, 0.0, &ErParams::EXAMPLE1).unwrap() > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let ue_rest = 0.5 * (lo + hi);
        let cfg = SimConfig {
            channel: ChannelKind::Zero,
            stimulus: StimulusSpec { amplitude: 0.0 },
            initial: InitialValues {
                u_e: ue_rest,
                ..InitialValues::default()
            },
            dt: 1e-3,
            t_end: 1.0,
            ..SimConfig::example1()
        };
        let (mut s, disc) = setup(&cfg);
        for _ in 0..1000 {
            step_imex(&mut s, &cfg, &disc).unwrap();
            assert_eq!(s.p, 0.0);
        }
        assert!(s.u.iter().all(|u| (u - 0.05).abs() < 1e-2));
        assert!(s.b.iter().all(|b| (b - 37.0).abs() < 1e-2));
        assert!(s.u_e.iter().all(|v| (v - ue_rest).abs() < 1e-2));
    }

    #[test]
    fn time_step_error_is_first_order() {
        let at = |dt: f64| {
            let cfg = SimConfig {
                dt,
                t_end: 0.3,
                ..SimConfig::example1()
            };
            let (mut s, disc) = setup(&cfg);
            for _ in 0..cfg.num_steps() {
                step_imex(&mut s, &cfg, &disc).unwrap();
            }
            s.u
        };
        let (a, b, c) = (at(1e-3), at(5e-4), at(2.5e-4));
        let diff = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        let ratio = diff(&a, &b) / diff(&b, &c);
        assert!((1.6..2.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn wave_enters_from_outer_membrane() {
        let cfg = SimConfig {
            dt: 1e-3,
            t_end: 2.0,
            ..SimConfig::example1()
        };
        let out = run_simulation(&cfg, None).unwrap();
        assert!(out.peak_u_l > 1.0);
        assert!(out.records.iter().all(|r| (0.0..=1.0).contains(&r.p)));
        // Before the release, calcium arrives at R first.
        let early = out.records.iter().find(|r| r.t >= 0.2).unwrap();
        assert!(early.u_r > early.u_l);
    }

    #[test]
    fn planar_mode_drops_curvature() {
        let planar = SimConfig {
            geometry: Geometry {
                coordinates: Coordinates::Planar,
                ..Geometry::default()
            },
            ..SimConfig::example1()
        };
        let (mut s, disc) = setup(&planar);
        s.u.iter_mut().for_each(|v| *v = 0.0);
        s.b.iter_mut().for_each(|v| *v = 0.0);
        s.u_e.iter_mut().for_each(|v| *v = 2.0);
        assert!((conserved_quantity(&s, &disc) - 3.0).abs() < 1e-12);
    }
}
