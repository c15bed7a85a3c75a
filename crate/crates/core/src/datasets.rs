//! Training corpora for the open-probability surrogate.
//!
//! * the ODE-labelled set: raised-cosine calcium pulses on `[0, 4]` whose
//!   open probability comes from backward-Euler integration of the Markov
//!   chain;
//! * two artificial sets of hand-shaped `(u, P)` pulse pairs;
//! * four held-out evaluation pulses.
//!
//! Pulse shapes and grids are fixed choices; all of them are parameters
//! here so callers can vary them.

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binfmt::{Reader, Writer};
use crate::error::{Error, Result};
use crate::markov::{open_probability, step_backward_euler, MarkovRates, MarkovState};
use crate::surrogate::TrainingSample;

/// Resting cytosolic calcium, µM.
pub const RESTING_CALCIUM: f64 = 0.05;

/// Uniform sampling grid `t_start, t_start + dt, …, t_end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t_start: f64,
    pub t_end: f64,
    pub dt: f64,
}

impl TimeGrid {
    pub const ODE: Self = Self {
        t_start: 0.0,
        t_end: 4.0,
        dt: 0.05,
    };

    pub fn validate(&self) -> Result<()> {
        if self.dt > 0.0 && self.t_end > self.t_start && self.dt.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidSignal(format!("bad time grid {self:?}")))
        }
    }

    pub fn len(&self) -> usize {
        ((self.t_end - self.t_start) / self.dt).round() as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn time(&self, n: usize) -> f64 {
        self.t_start + n as f64 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|n| self.time(n)).collect()
    }
}

/// Calcium signal shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SignalSpec {
    /// `baseline + (A - baseline) · ½(1 + cos(2π(t - center)/d))` on
    /// `|t - center| ≤ d/2`, baseline elsewhere.
    CosinePulse {
        amplitude: f64,
        duration: f64,
        center: f64,
        baseline: f64,
    },
    /// Half-cosine rise over `rise` seconds up to `peak_time`, half-cosine
    /// fall over `fall` seconds after it.
    AsymmetricPulse {
        amplitude: f64,
        peak_time: f64,
        rise: f64,
        fall: f64,
        baseline: f64,
    },
    /// Explicit samples, one per grid point.
    Table { values: Vec<f64> },
}

fn half_rise(x: f64) -> f64 {
    0.5 * (1.0 - (PI * x).cos())
}

impl SignalSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidSignal(format!("{msg}: {self:?}")));
        match *self {
            SignalSpec::CosinePulse {
                amplitude,
                duration,
                baseline,
                ..
            } => {
                if !(duration > 0.0) {
                    return bad("duration must be positive");
                }
                if !(baseline >= 0.0 && amplitude >= baseline) {
                    return bad("need amplitude ≥ baseline ≥ 0");
                }
            }
            SignalSpec::AsymmetricPulse {
                amplitude,
                rise,
                fall,
                baseline,
                ..
            } => {
                if !(rise > 0.0 && fall > 0.0) {
                    return bad("rise and fall must be positive");
                }
                if !(baseline >= 0.0 && amplitude > baseline) {
                    return bad("need amplitude > baseline ≥ 0");
                }
            }
            SignalSpec::Table { ref values } => {
                if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
                    return bad("table values must be finite and nonnegative");
                }
            }
        }
        Ok(())
    }

    pub fn value_at(&self, t: f64) -> f64 {
        match *self {
            SignalSpec::CosinePulse {
                amplitude,
                duration,
                center,
                baseline,
            } => {
                let s = t - center;
                if s.abs() <= 0.5 * duration {
                    baseline + (amplitude - baseline) * 0.5 * (1.0 + (2.0 * PI * s / duration).cos())
                } else {
                    baseline
                }
            }
            SignalSpec::AsymmetricPulse {
                amplitude,
                peak_time,
                rise,
                fall,
                baseline,
            } => {
                let bump = if t <= peak_time && t >= peak_time - rise {
                    half_rise((t - (peak_time - rise)) / rise)
                } else if t > peak_time && t <= peak_time + fall {
                    1.0 - half_rise((t - peak_time) / fall)
                } else {
                    0.0
                };
                baseline + (amplitude - baseline) * bump
            }
            SignalSpec::Table { .. } => panic!("table signals have no continuous form"),
        }
    }

    pub fn sample(&self, grid: &TimeGrid) -> Result<Vec<f64>> {
        self.validate()?;
        grid.validate()?;
        match self {
            SignalSpec::Table { values } => {
                if values.len() != grid.len() {
                    return Err(Error::InvalidSignal(format!(
                        "table has {} values, grid has {} points",
                        values.len(),
                        grid.len()
                    )));
                }
                Ok(values.clone())
            }
            _ => Ok((0..grid.len()).map(|n| self.value_at(grid.time(n))).collect()),
        }
    }

    /// Peak of the signal above its baseline.
    pub fn amplitude(&self) -> f64 {
        match *self {
            SignalSpec::CosinePulse { amplitude, .. } | SignalSpec::AsymmetricPulse { amplitude, .. } => {
                amplitude
            }
            SignalSpec::Table { ref values } => values.iter().copied().fold(f64::MIN, f64::max),
        }
    }
}

/// Raised-cosine pulse of the ODE training set, centred at `t = 2` on the
/// `[0, 4]`, `dt = 0.05` grid (81 samples).
pub fn gen_cosine_signal(amplitude: f64, duration: f64) -> Result<Vec<f64>> {
    if !(0.05..=30.0).contains(&amplitude) {
        return Err(Error::InvalidSignal(format!("amplitude {amplitude} outside [0.05, 30]")));
    }
    if !(duration > 0.0 && duration <= 4.0) {
        return Err(Error::InvalidSignal(format!("duration {duration} outside (0, 4]")));
    }
    cosine_spec(amplitude, duration).sample(&TimeGrid::ODE)
}

fn cosine_spec(amplitude: f64, duration: f64) -> SignalSpec {
    SignalSpec::CosinePulse {
        amplitude,
        duration,
        center: 2.0,
        baseline: RESTING_CALCIUM,
    }
}

/// Paired calcium and open-probability samples on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSeries {
    pub dt: f64,
    pub times: Vec<f64>,
    pub u: Vec<f64>,
    pub p: Vec<f64>,
}

impl LabeledSeries {
    pub fn validate(&self) -> Result<()> {
        if self.times.len() != self.u.len() || self.u.len() != self.p.len() {
            return Err(Error::InvalidSignal("series lengths differ".into()));
        }
        if self.p.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidSignal("open probability outside [0, 1]".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    /// One sample per step `n ≥ 1`: inputs at `n - 1`, forward differences.
    pub fn to_samples(&self) -> Vec<TrainingSample> {
        (1..self.len())
            .map(|n| TrainingSample {
                p_prev: self.p[n - 1],
                u_prev: self.u[n - 1],
                dudt: (self.u[n] - self.u[n - 1]) / self.dt,
                dpdt: (self.p[n] - self.p[n - 1]) / self.dt,
            })
            .collect()
    }
}

pub fn series_to_samples(series: &[LabeledSeries]) -> Vec<TrainingSample> {
    series.iter().flat_map(LabeledSeries::to_samples).collect()
}

/// Open probability along a sampled signal by backward Euler, using the
/// concentration at the new time level each step.
pub fn label_with_markov(
    u: &[f64],
    dt: f64,
    initial: MarkovState,
    rates: &MarkovRates,
) -> Result<Vec<f64>> {
    let mut state = initial;
    let mut p = Vec::with_capacity(u.len());
    if u.is_empty() {
        return Ok(p);
    }
    p.push(open_probability(&state)?);
    for &un in &u[1..] {
        state = step_backward_euler(&state, un, dt, rates)?;
        p.push(open_probability(&state)?);
    }
    Ok(p)
}

/// Amplitude × duration grid for the ODE-labelled set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OdeDatasetSpec {
    pub n_amplitudes: usize,
    pub n_durations: usize,
    pub amplitude_min: f64,
    pub amplitude_max: f64,
    pub duration_min: f64,
    pub duration_max: f64,
}

impl Default for OdeDatasetSpec {
    fn default() -> Self {
        Self {
            n_amplitudes: 200,
            n_durations: 130,
            amplitude_min: 0.05,
            amplitude_max: 10.0,
            duration_min: 0.5,
            duration_max: 4.0,
        }
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

impl OdeDatasetSpec {
    pub fn num_signals(&self) -> usize {
        self.n_amplitudes * self.n_durations
    }

    pub fn amplitudes(&self) -> Vec<f64> {
        linspace(self.amplitude_min, self.amplitude_max, self.n_amplitudes)
    }

    pub fn durations(&self) -> Vec<f64> {
        linspace(self.duration_min, self.duration_max, self.n_durations)
    }

    /// `(amplitude, duration)` of grid signal `k` (amplitude-major).
    pub fn signal(&self, k: usize) -> (f64, f64) {
        let a = k / self.n_durations;
        let d = k % self.n_durations;
        (self.amplitudes()[a], self.durations()[d])
    }

    /// Grid indices used for a `num_signals`-sized corpus: the full grid, or
    /// a seeded subset kept in grid order.
    pub fn select(&self, num_signals: usize, seed: u64) -> Vec<usize> {
        let total = self.num_signals();
        if num_signals >= total {
            return (0..total).collect();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked = sample(&mut rng, total, num_signals).into_vec();
        picked.sort_unstable();
        picked
    }
}

/// ODE-labelled series for the selected grid signals, in grid order.
pub fn build_ode_series(
    spec: &OdeDatasetSpec,
    num_signals: usize,
    seed: u64,
    rates: &MarkovRates,
) -> Result<Vec<LabeledSeries>> {
    if num_signals == 0 {
        return Err(Error::EmptyDataset);
    }
    let amplitudes = spec.amplitudes();
    let durations = spec.durations();
    let grid = TimeGrid::ODE;
    let times = grid.times();
    spec.select(num_signals, seed)
        .into_par_iter()
        .map(|k| {
            let (a, d) = (amplitudes[k / spec.n_durations], durations[k % spec.n_durations]);
            let u = cosine_spec(a, d).sample(&grid)?;
            let p = label_with_markov(&u, grid.dt, MarkovState::CLOSED, rates)?;
            Ok(LabeledSeries {
                dt: grid.dt,
                times: times.clone(),
                u,
                p,
            })
        })
        .collect()
}

/// Flattened training samples of [`build_ode_series`] (80 per signal).
pub fn build_ode_dataset(
    spec: &OdeDatasetSpec,
    num_signals: usize,
    seed: u64,
    rates: &MarkovRates,
) -> Result<Vec<TrainingSample>> {
    Ok(series_to_samples(&build_ode_series(spec, num_signals, seed, rates)?))
}

/// Parameters of one artificial `(u, P)` pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HatPair {
    /// Time by which the `P` peak precedes its reference point, s.
    pub lead: f64,
    /// Fraction of the admissible window the `P` bump occupies.
    pub width_fraction: f64,
}

fn snap(grid: &TimeGrid, t: f64) -> f64 {
    grid.time(((t - grid.t_start) / grid.dt).round() as usize)
}

/// Training Set I: unit `u` pulse `½(1 + cos(πt/2))` on `[-2, 2]`, Δt = 0.02,
/// and a unit `P` bump peaking `lead` seconds before `u` and vanishing
/// before `u` does. 11 leads in `[0.1, 0.6]` × 11 width fractions in
/// `[0.3, 0.8]`.
pub fn gen_training_set_i() -> Vec<LabeledSeries> {
    let grid = TimeGrid {
        t_start: -2.0,
        t_end: 2.0,
        dt: 0.02,
    };
    let mut out = Vec::with_capacity(121);
    for lead in linspace(0.1, 0.6, 11) {
        for width_fraction in linspace(0.3, 0.8, 11) {
            out.push(training_pair_i(&grid, HatPair { lead, width_fraction }));
        }
    }
    out
}

pub fn training_pair_i(grid: &TimeGrid, pair: HatPair) -> LabeledSeries {
    let times = grid.times();
    let peak = snap(grid, -pair.lead);
    let half_width = pair.width_fraction * (2.0 - pair.lead);
    let u = times.iter().map(|t| 0.5 * (1.0 + (PI * t / 2.0).cos())).collect();
    let p = times
        .iter()
        .map(|t| {
            let s = t - peak;
            if s.abs() <= half_width {
                0.5 * (1.0 + (PI * s / half_width).cos())
            } else {
                0.0
            }
        })
        .collect();
    LabeledSeries {
        dt: grid.dt,
        times,
        u,
        p,
    }
}

/// Training Set II: `u = 1 + cos(πt/4)` on `[-4, 4]` (peak 2), Δt = 0.04.
/// `P` peaks `lead` seconds before `u` crosses 1 on the way up, then decays
/// slowly, so it falls while `u > 1`. 20 leads in `[0.1, 1.0]` × 10 width
/// fractions in `[0.3, 0.8]`.
pub fn gen_training_set_ii() -> Vec<LabeledSeries> {
    let grid = TimeGrid {
        t_start: -4.0,
        t_end: 4.0,
        dt: 0.04,
    };
    let mut out = Vec::with_capacity(200);
    for lead in linspace(0.1, 1.0, 20) {
        for width_fraction in linspace(0.3, 0.8, 10) {
            out.push(training_pair_ii(&grid, HatPair { lead, width_fraction }));
        }
    }
    out
}

/// `(rise, fall)` durations of the Set-II `P` bump.
pub fn set_ii_bump(pair: HatPair, peak: f64) -> (f64, f64) {
    (
        0.8 * pair.width_fraction * (peak + 4.0),
        0.9 * pair.width_fraction * (4.0 - peak),
    )
}

pub fn training_pair_ii(grid: &TimeGrid, pair: HatPair) -> LabeledSeries {
    let times = grid.times();
    let peak = snap(grid, -2.0 - pair.lead);
    let (rise, fall) = set_ii_bump(pair, peak);
    let u = times.iter().map(|t| 1.0 + (PI * t / 4.0).cos()).collect();
    let p = times
        .iter()
        .map(|&t| {
            if t <= peak && t >= peak - rise {
                half_rise((t - (peak - rise)) / rise)
            } else if t > peak && t <= peak + fall {
                1.0 - half_rise((t - peak) / fall)
            } else {
                0.0
            }
        })
        .collect();
    LabeledSeries {
        dt: grid.dt,
        times,
        u,
        p,
    }
}

/// Held-out pulse for checking a trained surrogate.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSignal {
    pub name: &'static str,
    pub spec: SignalSpec,
    pub grid: TimeGrid,
    pub u: Vec<f64>,
    /// First time the signal leaves its baseline.
    pub onset: f64,
}

/// Two pulses inside the training amplitude range (0.5, 2.5) and two above
/// it (20, 25), in symmetric and asymmetric shapes. All start at `t = 1`.
pub fn gen_eval_signals() -> Vec<EvalSignal> {
    let grid = TimeGrid::ODE;
    let b = RESTING_CALCIUM;
    let specs = [
        (
            "in-range-asymmetric",
            SignalSpec::AsymmetricPulse {
                amplitude: 0.5,
                peak_time: 1.5,
                rise: 0.5,
                fall: 1.5,
                baseline: b,
            },
        ),
        (
            "in-range-symmetric",
            SignalSpec::CosinePulse {
                amplitude: 2.5,
                duration: 2.0,
                center: 2.0,
                baseline: b,
            },
        ),
        (
            "out-of-range-symmetric",
            SignalSpec::CosinePulse {
                amplitude: 20.0,
                duration: 2.0,
                center: 2.0,
                baseline: b,
            },
        ),
        (
            "out-of-range-asymmetric",
            SignalSpec::AsymmetricPulse {
                amplitude: 25.0,
                peak_time: 2.5,
                rise: 1.5,
                fall: 0.5,
                baseline: b,
            },
        ),
    ];
    specs
        .into_iter()
        .map(|(name, spec)| {
            let u = spec.sample(&grid).expect("built-in evaluation signals are valid");
            EvalSignal {
                name,
                spec,
                grid,
                u,
                onset: 1.0,
            }
        })
        .collect()
}

pub const DATASET_MAGIC: &[u8; 4] = b"CWDS";
pub const DATASET_VERSION: u32 = 1;

pub fn dataset_to_bytes(samples: &[TrainingSample]) -> Vec<u8> {
    let mut w = Writer::with_capacity(DATASET_MAGIC, 16 + samples.len() * 32);
    w.u32(DATASET_VERSION);
    w.u64(samples.len() as u64);
    for s in samples {
        w.f64(s.p_prev);
        w.f64(s.u_prev);
        w.f64(s.dudt);
        w.f64(s.dpdt);
    }
    w.finish()
}

pub fn dataset_from_bytes(bytes: &[u8]) -> Result<Vec<TrainingSample>> {
    let mut r = Reader::open(bytes, DATASET_MAGIC)?;
    let version = r.u32()?;
    if version != DATASET_VERSION {
        return Err(Error::VersionMismatch {
            expected: DATASET_VERSION,
            found: version,
        });
    }
    let count = r.u64()? as usize;
    if count.checked_mul(32) != Some(r.remaining()) {
        return Err(Error::CorruptFile(format!(
            "header claims {count} samples but {} payload bytes remain",
            r.remaining()
        )));
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        out.push(TrainingSample {
            p_prev: r.f64()?,
            u_prev: r.f64()?,
            dudt: r.f64()?,
            dpdt: r.f64()?,
        });
    }
    Ok(out)
}

pub fn write_dataset(path: impl AsRef<Path>, samples: &[TrainingSample]) -> Result<()> {
    fs::write(path, dataset_to_bytes(samples))?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<TrainingSample>> {
    dataset_from_bytes(&fs::read(path)?)
}

/// CSV with header `p_prev,u_prev,dudt,dpdt`.
pub fn write_dataset_csv(mut w: impl Write, samples: &[TrainingSample]) -> Result<()> {
    writeln!(w, "p_prev,u_prev,dudt,dpdt")?;
    for s in samples {
        writeln!(w, "{:.17e},{:.17e},{:.17e},{:.17e}", s.p_prev, s.u_prev, s.dudt, s.dpdt)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_signal_examples() {
        let u = gen_cosine_signal(1.0, 2.0).unwrap();
        assert_eq!(u.len(), 81);
        assert!((u[40] - 1.0).abs() < 1e-15);
        assert!((u[20] - 0.05).abs() < 1e-12);
        assert!((u[60] - 0.05).abs() < 1e-12);
        let wide = gen_cosine_signal(10.0, 4.0).unwrap();
        assert!(wide[1..80].iter().all(|v| *v > RESTING_CALCIUM));
        assert!(gen_cosine_signal(40.0, 1.0).is_err());
        assert!(gen_cosine_signal(1.0, 0.0).is_err());
        assert!(gen_cosine_signal(1.0, 4.5).is_err());
    }

    #[test]
    fn default_grid_size() {
        let spec = OdeDatasetSpec::default();
        assert_eq!(spec.num_signals(), 26_000);
        assert_eq!(spec.select(26_000, 0).len(), 26_000);
        let subset = spec.select(2_600, 4);
        assert_eq!(subset.len(), 2_600);
        assert!(subset.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(subset, spec.select(2_600, 4));
    }

    #[test]
    fn ode_dataset_counts_and_ranges() {
        let spec = OdeDatasetSpec::default();
        let samples = build_ode_dataset(&spec, 50, 1, &MarkovRates::EXAMPLE1).unwrap();
        assert_eq!(samples.len(), 50 * 80);
        assert!(samples.iter().all(|s| s.is_valid()));
        let again = build_ode_dataset(&spec, 50, 1, &MarkovRates::EXAMPLE1).unwrap();
        assert_eq!(samples, again);
    }

    #[test]
    fn resting_signal_keeps_channel_closed() {
        let u = vec![RESTING_CALCIUM; 81];
        let p = label_with_markov(&u, 0.05, MarkovState::CLOSED, &MarkovRates::EXAMPLE1).unwrap();
        assert!(p.iter().all(|p| *p < 1e-3));
        let series = LabeledSeries {
            dt: 0.05,
            times: TimeGrid::ODE.times(),
            u,
            p,
        };
        assert!(series.to_samples().iter().all(|s| s.dpdt.abs() < 1e-2));
    }

    fn max_label_gap(spec: &SignalSpec, dt: f64, refine: usize) -> f64 {
        let rates = MarkovRates::EXAMPLE1;
        let coarse_grid = TimeGrid { dt, ..TimeGrid::ODE };
        let fine_grid = TimeGrid { dt: dt / refine as f64, ..TimeGrid::ODE };
        let coarse = label_with_markov(&spec.sample(&coarse_grid).unwrap(), dt, MarkovState::CLOSED, &rates).unwrap();
        let fine = label_with_markov(&spec.sample(&fine_grid).unwrap(), fine_grid.dt, MarkovState::CLOSED, &rates)
            .unwrap();
        coarse
            .iter()
            .enumerate()
            .map(|(n, p)| (p - fine[refine * n]).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn labels_converge_at_first_order() {
        for (a, d) in [(0.5, 1.0), (2.5, 2.0), (6.0, 4.0)] {
            let spec = cosine_spec(a, d);
            let e1 = max_label_gap(&spec, 0.01, 8);
            let e2 = max_label_gap(&spec, 0.005, 8);
            let ratio = e1 / e2;
            assert!((1.6..2.4).contains(&ratio), "A={a} d={d}: {e1} / {e2} = {ratio}");
        }
    }

    #[test]
    fn training_set_i_shape() {
        let set = gen_training_set_i();
        assert_eq!(set.len(), 121);
        for s in &set {
            s.validate().unwrap();
            assert_eq!(s.len(), 201);
            let argmax = |v: &[f64]| v.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
            assert_eq!(s.u.iter().copied().fold(0.0, f64::max), 1.0);
            assert_eq!(s.p.iter().copied().fold(0.0, f64::max), 1.0);
            assert!(argmax(&s.p) < argmax(&s.u));
            // P starts after u leaves zero and is back at zero before u.
            let first = s.p.iter().position(|p| *p > 0.0).unwrap();
            let last = s.p.iter().rposition(|p| *p > 0.0).unwrap();
            assert!(first > 0 && last < s.len() - 1);
        }
    }

    #[test]
    fn training_set_ii_shape() {
        let set = gen_training_set_ii();
        assert_eq!(set.len(), 200);
        for s in &set {
            s.validate().unwrap();
            assert_eq!(s.len(), 201);
            assert!((s.u.iter().copied().fold(0.0, f64::max) - 2.0).abs() < 1e-12);
            for n in 1..s.len() {
                let rising = s.u[n] > s.u[n - 1];
                if rising && s.u[n - 1] > 1.0 {
                    assert!(s.p[n] <= s.p[n - 1]);
                }
            }
        }
    }

    #[test]
    fn set_ii_pulses_outlast_set_i() {
        let grid_i = TimeGrid { t_start: -2.0, t_end: 2.0, dt: 0.02 };
        let grid_ii = TimeGrid { t_start: -4.0, t_end: 4.0, dt: 0.04 };
        let support = |s: &LabeledSeries| s.p.iter().filter(|p| **p > 0.0).count() as f64 * s.dt;
        for lead_i in [0.1, 0.35, 0.6] {
            for lead_ii in [0.1, 0.55, 1.0] {
                for w in [0.3, 0.55, 0.8] {
                    let one = training_pair_i(&grid_i, HatPair { lead: lead_i, width_fraction: w });
                    let two = training_pair_ii(&grid_ii, HatPair { lead: lead_ii, width_fraction: w });
                    assert!(support(&two) > support(&one));
                }
            }
        }
    }

    #[test]
    fn eval_signals_are_held_out() {
        let sigs = gen_eval_signals();
        let amps: Vec<f64> = sigs.iter().map(|s| s.spec.amplitude()).collect();
        assert_eq!(amps, vec![0.5, 2.5, 20.0, 25.0]);
        let spec = OdeDatasetSpec::default();
        let durations = spec.durations();
        for s in &sigs {
            assert!(s.u.iter().all(|v| *v >= RESTING_CALCIUM - 1e-15));
            if let SignalSpec::CosinePulse { amplitude, duration, .. } = s.spec {
                let in_amp = spec.amplitudes().iter().any(|a| (a - amplitude).abs() < 1e-12);
                let in_dur = durations.iter().any(|d| (d - duration).abs() < 1e-12);
                assert!(!(in_amp && in_dur), "{} is in the training grid", s.name);
            }
            // Baseline before onset.
            let k = (s.onset / s.grid.dt).round() as usize;
            assert!(s.u[..=k].iter().all(|v| (*v - RESTING_CALCIUM).abs() < 1e-12));
            assert!(s.u[k + 1] > RESTING_CALCIUM);
        }
    }

    #[test]
    fn dataset_bytes_round_trip_and_corruption() {
        let samples = build_ode_dataset(&OdeDatasetSpec::default(), 3, 0, &MarkovRates::EXAMPLE1).unwrap();
        let bytes = dataset_to_bytes(&samples);
        assert_eq!(dataset_from_bytes(&bytes).unwrap(), samples);
        assert!(matches!(dataset_from_bytes(&bytes[..bytes.len() - 9]), Err(Error::CorruptFile(_))));
        assert!(matches!(dataset_from_bytes(b"CWNN\0\0\0\0\0\0\0\0"), Err(Error::CorruptFile(_))));
        let mut csv = Vec::new();
        write_dataset_csv(&mut csv, &samples[..2]).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("p_prev,u_prev,dudt,dpdt\n"));
        assert_eq!(text.lines().count(), 3);
    }
}
