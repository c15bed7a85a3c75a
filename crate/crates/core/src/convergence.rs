//! Manufactured-solution convergence study for radial diffusion on `[0, L]`.
//!
//! * steady: `-(u'' + u'/r) = f` with `u = cos(πr/(2L))`, Dirichlet at `L`;
//! * transient: `u_t - (u'' + u'/r) = f` with `u = e^{-t} cos(πr/L)`,
//!   zero flux at `L`, backward Euler with `dt = c · h²`.
//!
//! Both use the finite-part convection matrix on the origin element.

use std::f64::consts::PI;
use std::io::Write;

use serde::Serialize;

use crate::error::Result;
use crate::fem::{assemble_load, assemble_mass, assemble_singular_convection, assemble_stiffness, solve_banded, Mesh1D, TriDiagonal};

pub const DEFAULT_MESHES: [usize; 5] = [10, 20, 40, 80, 160];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub elements: usize,
    pub h: f64,
    pub l2_error: f64,
    /// `log2(e_{coarser} / e)` against the previous row.
    pub order: Option<f64>,
}

// 5-point Gauss-Legendre on [-1, 1].
const GAUSS5: [(f64, f64); 5] = [
    (0.0, 0.568_888_888_888_888_9),
    (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (-0.906_179_845_938_664, 0.236_926_885_056_189_08),
    (0.906_179_845_938_664, 0.236_926_885_056_189_08),
];

/// Unweighted L2 distance between the P1 field `x` and `exact`.
pub fn l2_error(mesh: &Mesh1D, x: &[f64], exact: impl Fn(f64) -> f64) -> f64 {
    let mut sum = 0.0;
    for e in 0..mesh.num_elements() {
        let (a, b) = mesh.element(e);
        let half = 0.5 * (b - a);
        for (xi, w) in GAUSS5 {
            let s = 0.5 * (1.0 + xi);
            let r = a + half * (1.0 + xi);
            let uh = x[e] * (1.0 - s) + x[e + 1] * s;
            let d = uh - exact(r);
            sum += w * half * d * d;
        }
    }
    sum.sqrt()
}

fn with_orders(mut rows: Vec<ConvergenceRow>) -> Vec<ConvergenceRow> {
    for i in 1..rows.len() {
        let ratio = rows[i - 1].l2_error / rows[i].l2_error;
        let hr = rows[i - 1].h / rows[i].h;
        rows[i].order = Some(ratio.ln() / hr.ln());
    }
    rows
}

fn operator(mesh: &Mesh1D) -> Result<TriDiagonal> {
    let mut op = assemble_stiffness(mesh);
    op.add_scaled(-1.0, &assemble_singular_convection(mesh)?);
    Ok(op)
}

pub fn steady_study(length: f64, meshes: &[usize]) -> Result<Vec<ConvergenceRow>> {
    let k = PI / (2.0 * length);
    let exact = |r: f64| (k * r).cos();
    let source = |r: f64| k * k * (k * r).cos() + k * (k * r).sin() / r;
    let mut rows = Vec::with_capacity(meshes.len());
    for &m in meshes {
        let mesh = Mesh1D::uniform(0.0, length, m)?;
        let mut a = operator(&mesh)?;
        let mut rhs = assemble_load(&mesh, source);
        let last = mesh.num_nodes() - 1;
        a.diag[last] = 1.0;
        a.lower[last - 1] = 0.0;
        rhs[last] = exact(length);
        let x = solve_banded(&a, &rhs)?;
        rows.push(ConvergenceRow {
            elements: m,
            h: mesh.h(),
            l2_error: l2_error(&mesh, &x, exact),
            order: None,
        });
    }
    Ok(with_orders(rows))
}

pub fn transient_study(length: f64, meshes: &[usize], t_final: f64, dt_factor: f64) -> Result<Vec<ConvergenceRow>> {
    let k = PI / length;
    let exact = |r: f64, t: f64| (-t).exp() * (k * r).cos();
    let source = |r: f64, t: f64| (-t).exp() * ((k * k - 1.0) * (k * r).cos() + k * (k * r).sin() / r);
    let mut rows = Vec::with_capacity(meshes.len());
    for &m in meshes {
        let mesh = Mesh1D::uniform(0.0, length, m)?;
        let steps = (t_final / (dt_factor * mesh.h() * mesh.h())).ceil() as usize;
        let dt = t_final / steps as f64;
        let mass = assemble_mass(&mesh);
        let mut a = operator(&mesh)?;
        a.add_scaled(1.0 / dt, &mass);
        let mut x: Vec<f64> = mesh.nodes().iter().map(|&r| exact(r, 0.0)).collect();
        for n in 1..=steps {
            let t = n as f64 * dt;
            let load = assemble_load(&mesh, |r| source(r, t));
            let rhs: Vec<f64> = mass.mul_vec(&x).iter().zip(&load).map(|(m, f)| m / dt + f).collect();
            x = solve_banded(&a, &rhs)?;
        }
        rows.push(ConvergenceRow {
            elements: m,
            h: mesh.h(),
            l2_error: l2_error(&mesh, &x, |r| exact(r, t_final)),
            order: None,
        });
    }
    Ok(with_orders(rows))
}

/// CSV `study,elements,h,l2_error,order` (order empty on the first row).
pub fn write_rows_csv(mut w: impl Write, study: &str, rows: &[ConvergenceRow], header: bool) -> Result<()> {
    if header {
        writeln!(w, "study,elements,h,l2_error,order")?;
    }
    for r in rows {
        let order = r.order.map(|o| format!("{o:.6}")).unwrap_or_default();
        writeln!(w, "{study},{},{:.16e},{:.16e},{order}", r.elements, r.h, r.l2_error)?;
    }
    Ok(())
}
