//! Four-state RyR Markov chain, reduced to the three occupancies
//! `(c1, o, c2)`; the fourth state's occupancy is the remainder.
//!
//! `(c1, o, c2)' = M(u) (c1, o, c2) + k(u)` and the open probability is
//! `1 - c1 - c2`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack allowed on the simplex constraints.
pub const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MarkovRates {
    pub ka_plus: f64,
    pub ka_minus: f64,
    pub kb_plus: f64,
    pub kb_minus: f64,
    pub kc_plus: f64,
    pub kc_minus: f64,
}

impl MarkovRates {
    pub const EXAMPLE1: Self = Self {
        ka_plus: 1500.0,
        ka_minus: 28.8,
        kb_plus: 1500.0,
        kb_minus: 385.9,
        kc_plus: 1.75,
        kc_minus: 0.1,
    };

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.ka_plus,
            self.ka_minus,
            self.kb_plus,
            self.kb_minus,
            self.kc_plus,
            self.kc_minus,
        ];
        if all.iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("Markov rates must be positive: {self:?}")))
        }
    }
}

impl Default for MarkovRates {
    fn default() -> Self {
        Self::EXAMPLE1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarkovState {
    pub c1: f64,
    pub o: f64,
    pub c2: f64,
}

impl MarkovState {
    /// All channels in `c1`; used when generating training data.
    pub const CLOSED: Self = Self {
        c1: 1.0,
        o: 0.0,
        c2: 0.0,
    };

    /// Resting occupancies of the Example-1 parameter table.
    pub const EXAMPLE1_INITIAL: Self = Self {
        c1: 0.994,
        o: 1.5721e-7,
        c2: 5.6625e-3,
    };

    pub fn as_array(&self) -> [f64; 3] {
        [self.c1, self.o, self.c2]
    }

    pub fn from_array(x: [f64; 3]) -> Self {
        Self {
            c1: x[0],
            o: x[1],
            c2: x[2],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let x = self.as_array();
        let in_range = x
            .iter()
            .all(|v| v.is_finite() && *v >= -SIMPLEX_TOL && *v <= 1.0 + SIMPLEX_TOL);
        if in_range && x.iter().sum::<f64>() <= 1.0 + SIMPLEX_TOL {
            Ok(())
        } else {
            Err(Error::StateInvariant(format!("Markov state off the simplex: {self:?}")))
        }
    }
}

pub type Matrix3 = [[f64; 3]; 3];

/// `M(u)` and `k(u)` as written in the rate equations.
pub fn system_matrix(u: f64, r: &MarkovRates) -> Result<(Matrix3, [f64; 3])> {
    if !(u >= 0.0) || !u.is_finite() {
        return Err(Error::NegativeConcentration(u));
    }
    let u3 = u * u * u;
    let u4 = u3 * u;
    let b = u3 * r.kb_plus;
    let m = [
        [-u4 * r.ka_plus - r.ka_minus, -r.ka_minus, -r.ka_minus],
        [-b, -b - r.kb_minus, -b],
        [-r.kc_plus, -r.kc_plus, -r.kc_plus - r.kc_minus],
    ];
    Ok((m, [r.ka_minus, b, r.kc_plus]))
}

/// Gaussian elimination with complete pivoting on a 3×3 system.
pub fn solve3(mut a: Matrix3, mut b: [f64; 3]) -> Result<[f64; 3]> {
    let mut col_perm = [0usize, 1, 2];
    let scale = a.iter().flatten().fold(0.0_f64, |m, v| m.max(v.abs()));
    for k in 0..3 {
        let (mut pi, mut pj, mut best) = (k, k, -1.0);
        for (i, row) in a.iter().enumerate().skip(k) {
            for (j, v) in row.iter().enumerate().skip(k) {
                if v.abs() > best {
                    best = v.abs();
                    pi = i;
                    pj = j;
                }
            }
        }
        if best <= 1e-14 * scale || best == 0.0 {
            return Err(Error::SingularMatrix { row: k, pivot: best });
        }
        a.swap(k, pi);
        b.swap(k, pi);
        if pj != k {
            for row in a.iter_mut() {
                row.swap(k, pj);
            }
            col_perm.swap(k, pj);
        }
        for i in k + 1..3 {
            let f = a[i][k] / a[k][k];
            if f != 0.0 {
                for j in k..3 {
                    a[i][j] -= f * a[k][j];
                }
                b[i] -= f * b[k];
            }
        }
    }
    let mut y = [0.0; 3];
    for i in (0..3).rev() {
        let s: f64 = (i + 1..3).map(|j| a[i][j] * y[j]).sum();
        y[i] = (b[i] - s) / a[i][i];
    }
    let mut x = [0.0; 3];
    for (k, &c) in col_perm.iter().enumerate() {
        x[c] = y[k];
    }
    Ok(x)
}

/// One backward-Euler step with the concentration at the new time level.
pub fn step_backward_euler(
    state: &MarkovState,
    u_next: f64,
    dt: f64,
    rates: &MarkovRates,
) -> Result<MarkovState> {
    assert!(dt > 0.0, "time step must be positive");
    let (m, k) = system_matrix(u_next, rates)?;
    let mut lhs = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            lhs[i][j] = if i == j { 1.0 } else { 0.0 } - dt * m[i][j];
        }
    }
    let x = state.as_array();
    let rhs = [x[0] + dt * k[0], x[1] + dt * k[1], x[2] + dt * k[2]];
    let next = MarkovState::from_array(solve3(lhs, rhs)?);
    next.validate()?;
    Ok(next)
}

/// Equilibrium occupancies at fixed concentration: `M(u) x = -k(u)`.
pub fn steady_state(u: f64, rates: &MarkovRates) -> Result<MarkovState> {
    let (m, k) = system_matrix(u, rates)?;
    let x = solve3(m, [-k[0], -k[1], -k[2]])?;
    Ok(MarkovState::from_array(x))
}

/// `1 - c1 - c2`, snapped into `[0, 1]` when within tolerance of a bound.
pub fn open_probability(state: &MarkovState) -> Result<f64> {
    state.validate()?;
    let p = 1.0 - state.c1 - state.c2;
    if !(-SIMPLEX_TOL..=1.0 + SIMPLEX_TOL).contains(&p) {
        return Err(Error::StateInvariant(format!("open probability {p} out of range")));
    }
    Ok(p.clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const R: MarkovRates = MarkovRates::EXAMPLE1;

    fn rhs(x: [f64; 3], u: f64) -> [f64; 3] {
        let (m, k) = system_matrix(u, &R).unwrap();
        let mut out = k;
        for i in 0..3 {
            for j in 0..3 {
                out[i] += m[i][j] * x[j];
            }
        }
        out
    }

    fn rk4(mut x: [f64; 3], u: impl Fn(f64) -> f64, dt: f64, steps: usize) -> [f64; 3] {
        let add = |a: [f64; 3], b: [f64; 3], s: f64| [a[0] + s * b[0], a[1] + s * b[1], a[2] + s * b[2]];
        for n in 0..steps {
            let t = n as f64 * dt;
            let k1 = rhs(x, u(t));
            let k2 = rhs(add(x, k1, dt / 2.0), u(t + dt / 2.0));
            let k3 = rhs(add(x, k2, dt / 2.0), u(t + dt / 2.0));
            let k4 = rhs(add(x, k3, dt), u(t + dt));
            for i in 0..3 {
                x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        x
    }

    #[test]
    fn system_matrix_examples() {
        let (m, k) = system_matrix(0.0, &R).unwrap();
        assert_eq!(m[1], [0.0, -R.kb_minus, 0.0]);
        assert_eq!(k[1], 0.0);
        let ones = MarkovRates {
            ka_plus: 1.0,
            ka_minus: 1.0,
            kb_plus: 1.0,
            kb_minus: 1.0,
            kc_plus: 1.0,
            kc_minus: 1.0,
        };
        let (m, k) = system_matrix(1.0, &ones).unwrap();
        assert_eq!(m[0], [-2.0, -1.0, -1.0]);
        assert_eq!(k[0], 1.0);
        let (m, _) = system_matrix(0.05, &R).unwrap();
        assert!((m[0][0] + 28.809_375).abs() < 1e-12);
        assert!(system_matrix(-0.1, &R).is_err());
    }

    #[test]
    fn closed_state_is_fixed_at_zero_calcium() {
        assert_eq!(rhs([1.0, 0.0, 0.0], 0.0), [0.0, 0.0, 0.0]);
        for dt in [1e-3, 0.05, 3.0] {
            let s = step_backward_euler(&MarkovState::CLOSED, 0.0, dt, &R).unwrap();
            assert!((s.c1 - 1.0).abs() < 1e-14 && s.o.abs() < 1e-14 && s.c2.abs() < 1e-14);
        }
    }

    #[test]
    fn steady_state_examples() {
        let s = steady_state(0.0, &R).unwrap();
        assert!((s.c1 - 1.0).abs() <= 1e-12 && s.o.abs() <= 1e-12 && s.c2.abs() <= 1e-12);
        assert_eq!(open_probability(&s).unwrap(), 0.0);

        let s = steady_state(0.05, &R).unwrap();
        let t = MarkovState::EXAMPLE1_INITIAL;
        assert!((s.c1 - t.c1).abs() < 1e-2);
        assert!((s.o - t.o).abs() < 1e-2);
        assert!((s.c2 - t.c2).abs() < 1e-2);
        // Values from an independent dense solve.
        assert!((s.c1 - 0.994_013_757).abs() < 1e-8);
        assert!((s.o - 1.572_163_38e-7).abs() < 1e-13);
        assert!((s.c2 - 5.662_513_27e-3).abs() < 1e-10);

        let hi = open_probability(&steady_state(100.0, &R).unwrap()).unwrap();
        assert!(hi < 1.0 && hi > 0.99);
    }

    #[test]
    fn long_backward_euler_reaches_steady_state() {
        // Slowest mode decays at ~0.095/s, so t = 400 is needed for 1e-8.
        let target = steady_state(0.05, &R).unwrap();
        let mut s = MarkovState::CLOSED;
        for _ in 0..8000 {
            s = step_backward_euler(&s, 0.05, 0.05, &R).unwrap();
        }
        for (a, b) in s.as_array().iter().zip(target.as_array()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn open_probability_examples() {
        assert_eq!(open_probability(&MarkovState::CLOSED).unwrap(), 0.0);
        let p = open_probability(&MarkovState::EXAMPLE1_INITIAL).unwrap();
        assert!((p - 3.375e-4).abs() < 1e-12);
        let open = MarkovState { c1: 0.0, o: 1.0, c2: 0.0 };
        assert_eq!(open_probability(&open).unwrap(), 1.0);
        let bad = MarkovState { c1: 0.7, o: 0.2, c2: 0.5 };
        assert!(matches!(open_probability(&bad), Err(Error::StateInvariant(_))));
    }

    #[test]
    fn half_steps_differ_at_second_order() {
        // Local error of one step against two half steps scales like dt^2.
        let start = steady_state(0.05, &R).unwrap();
        let diff = |dt: f64| {
            let one = step_backward_euler(&start, 0.4, dt, &R).unwrap();
            let half = step_backward_euler(&start, 0.4, dt / 2.0, &R).unwrap();
            let two = step_backward_euler(&half, 0.4, dt / 2.0, &R).unwrap();
            (one.c1 - two.c1).abs() + (one.o - two.o).abs() + (one.c2 - two.c2).abs()
        };
        let ratio = diff(2e-5) / diff(1e-5);
        assert!((ratio - 4.0).abs() < 0.2, "ratio {ratio}");
    }

    #[test]
    fn backward_euler_converges_first_order_to_rk4() {
        let u = |t: f64| 0.05 + 0.6 * (std::f64::consts::PI * t).sin().powi(2);
        let horizon = 0.2;
        let reference = rk4([1.0, 0.0, 0.0], u, 1e-5, 20_000);
        let err = |dt: f64| {
            let steps = (horizon / dt).round() as usize;
            let mut s = MarkovState::CLOSED;
            for n in 1..=steps {
                s = step_backward_euler(&s, u(n as f64 * dt), dt, &R).unwrap();
            }
            s.as_array()
                .iter()
                .zip(reference)
                .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
        };
        let e1 = err(2e-3);
        let e2 = err(1e-3);
        let e3 = err(5e-4);
        let order = (e2 / e3).log2();
        assert!(e1 > e2 && e2 > e3);
        assert!((order - 1.0).abs() < 0.15, "order {order}");
    }

    proptest! {
        #[test]
        fn backward_euler_stays_on_simplex(
            u in 0.0f64..50.0,
            dt_idx in 0usize..3,
            steps in 1usize..200,
            start in proptest::array::uniform3(0.0f64..1.0),
        ) {
            let dt = [0.001, 0.05, 0.5][dt_idx];
            let total: f64 = start.iter().sum();
            let x = if total > 1.0 { start.map(|v| v / total) } else { start };
            let mut s = MarkovState::from_array(x);
            for _ in 0..steps {
                s = step_backward_euler(&s, u, dt, &R).unwrap();
                prop_assert!(s.validate().is_ok());
            }
        }

        #[test]
        fn steady_state_is_backward_euler_fixed_point(u in 0.0f64..30.0, dt in 1e-4f64..2.0) {
            let s = steady_state(u, &R).unwrap();
            let next = step_backward_euler(&s, u, dt, &R).unwrap();
            for (a, b) in s.as_array().iter().zip(next.as_array()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }
}
