//! Membrane fluxes: PMCA, NCX and leak on the plasma membrane; RyR, SERCA
//! and leak on the ER membrane; and the calcium-buffer reaction.
//!
//! Sign convention: positive `g_c` moves calcium into the cytosol, positive
//! `g_e` moves calcium from the cytosol into the ER. Units are µM, µm and s.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Plasma-membrane flux constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlasmaParams {
    /// PMCA scale.
    pub c1: f64,
    /// NCX scale.
    pub c2: f64,
    /// Leak rate.
    pub c3: f64,
    /// PMCA half-saturation.
    pub kp: f64,
    /// NCX half-saturation.
    pub kn: f64,
    /// Extracellular calcium.
    pub c_o: f64,
}

impl PlasmaParams {
    pub const EXAMPLE1: Self = Self {
        c1: 8.5,
        c2: 37.6,
        c3: 0.0045,
        kp: 0.06,
        kn: 1.8,
        c_o: 1000.0,
    };

    pub fn validate(&self) -> Result<()> {
        let ok = self.kp > 0.0
            && self.kn > 0.0
            && self.c_o > 0.0
            && self.c1 >= 0.0
            && self.c2 >= 0.0
            && self.c3 >= 0.0
            && [self.c1, self.c2, self.c3, self.kp, self.kn, self.c_o]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("plasma parameters out of range: {self:?}")))
        }
    }
}

impl Default for PlasmaParams {
    fn default() -> Self {
        Self::EXAMPLE1
    }
}

/// ER-membrane flux constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ErParams {
    /// RyR conductance scale.
    pub c1e: f64,
    /// SERCA scale.
    pub c2e: f64,
    /// ER leak rate.
    pub c3e: f64,
    /// SERCA half-saturation.
    pub ks: f64,
}

impl ErParams {
    pub const EXAMPLE1: Self = Self {
        c1e: 0.829468,
        c2e: 11000.0,
        c3e: 0.038,
        ks: 0.18,
    };

    pub fn validate(&self) -> Result<()> {
        let ok = self.ks > 0.0
            && self.c1e >= 0.0
            && self.c2e >= 0.0
            && self.c3e >= 0.0
            && [self.c1e, self.c2e, self.c3e, self.ks].iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("ER parameters out of range: {self:?}")))
        }
    }
}

impl Default for ErParams {
    fn default() -> Self {
        Self::EXAMPLE1
    }
}

/// Mobile calcium buffer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BufferParams {
    /// Total buffer.
    pub b0: f64,
    /// Binding rate, 1/(µM s).
    pub kb_plus: f64,
    /// Unbinding rate, 1/s.
    pub kb_minus: f64,
}

impl BufferParams {
    pub const EXAMPLE1: Self = Self {
        b0: 40.0,
        kb_plus: 27.0,
        kb_minus: 16.65,
    };

    pub fn validate(&self) -> Result<()> {
        let ok = self.b0 > 0.0
            && self.kb_plus >= 0.0
            && self.kb_minus >= 0.0
            && [self.b0, self.kb_plus, self.kb_minus].iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("buffer parameters out of range: {self:?}")))
        }
    }
}

impl Default for BufferParams {
    fn default() -> Self {
        Self::EXAMPLE1
    }
}

/// Smallest ER concentration accepted by `g_e` (SERCA divides by it).
pub const MIN_ER_CONCENTRATION: f64 = 1e-12;

fn check_concentration(u: f64) -> Result<()> {
    if u >= 0.0 && u.is_finite() {
        Ok(())
    } else {
        Err(Error::NegativeConcentration(u))
    }
}

pub fn pmca(u: f64, p: &PlasmaParams) -> Result<f64> {
    check_concentration(u)?;
    let u2 = u * u;
    Ok(p.c1 * u2 / (p.kp * p.kp + u2))
}

pub fn ncx(u: f64, p: &PlasmaParams) -> Result<f64> {
    check_concentration(u)?;
    Ok(p.c2 * u / (p.kn + u))
}

/// Net plasma-membrane influx: leak in, PMCA and NCX out.
pub fn g_c(u: f64, p: &PlasmaParams) -> Result<f64> {
    Ok(p.c3 * (p.c_o - u) - ncx(u, p)? - pmca(u, p)?)
}

/// `d g_c / d u`.
pub fn g_c_du(u: f64, p: &PlasmaParams) -> f64 {
    let kp2 = p.kp * p.kp;
    let pm = 2.0 * p.c1 * kp2 * u / ((kp2 + u * u) * (kp2 + u * u));
    let nc = p.c2 * p.kn / ((p.kn + u) * (p.kn + u));
    -p.c3 - nc - pm
}

fn check_er(u_e: f64) -> Result<()> {
    if u_e > MIN_ER_CONCENTRATION && u_e.is_finite() {
        Ok(())
    } else {
        Err(Error::NonpositiveErConcentration(u_e))
    }
}

fn check_probability(p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::ProbabilityOutOfRange(p))
    }
}

/// Net cytosol-to-ER flux: RyR release (negative when `u_e > u`), SERCA
/// uptake, ER leak.
pub fn g_e(u: f64, u_e: f64, open_probability: f64, p: &ErParams) -> Result<f64> {
    check_concentration(u)?;
    check_er(u_e)?;
    check_probability(open_probability)?;
    let ryr = p.c1e * open_probability * (u - u_e);
    let serca = p.c2e * u / ((p.ks + u) * u_e);
    let leak = p.c3e * (u_e - u);
    Ok(ryr + serca - leak)
}

/// Partial derivatives `(∂g_e/∂u, ∂g_e/∂u_e)`.
pub fn g_e_partials(u: f64, u_e: f64, open_probability: f64, p: &ErParams) -> (f64, f64) {
    let ks_u = p.ks + u;
    let du = p.c1e * open_probability + p.c2e * p.ks / (ks_u * ks_u * u_e) + p.c3e;
    let due = -p.c1e * open_probability - p.c2e * u / (ks_u * u_e * u_e) - p.c3e;
    (du, due)
}

/// Buffer reaction `kb⁻ (b0 - b) - kb⁺ b u`.
pub fn buffer_reaction(u: f64, b: f64, p: &BufferParams) -> Result<f64> {
    check_concentration(u)?;
    if !(0.0..=p.b0).contains(&b) {
        return Err(Error::BufferOutOfRange { b, b0: p.b0 });
    }
    Ok(p.kb_minus * (p.b0 - b) - p.kb_plus * b * u)
}
