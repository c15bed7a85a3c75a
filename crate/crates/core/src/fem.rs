//! Piecewise-linear finite elements on uniform 1D meshes.
//!
//! All matrices are tridiagonal. The convection matrix carries the `1/r`
//! weight of the radial Laplacian; on a mesh that starts at the origin the
//! two entries touching `r = 0` are Hadamard finite parts.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh1D {
    r_start: f64,
    r_end: f64,
    num_elements: usize,
    h: f64,
    nodes: Vec<f64>,
}

impl Mesh1D {
    pub fn uniform(r_start: f64, r_end: f64, num_elements: usize) -> Result<Self> {
        if !(r_end > r_start) || !r_start.is_finite() || !r_end.is_finite() {
            return Err(Error::InvalidInterval {
                start: r_start,
                end: r_end,
            });
        }
        if num_elements < 1 {
            return Err(Error::InvalidElementCount(num_elements));
        }
        let h = (r_end - r_start) / num_elements as f64;
        let mut nodes: Vec<f64> = (0..=num_elements)
            .map(|i| r_start + i as f64 * h)
            .collect();
        nodes[num_elements] = r_end;
        Ok(Self {
            r_start,
            r_end,
            num_elements,
            h,
            nodes,
        })
    }

    pub fn r_start(&self) -> f64 {
        self.r_start
    }

    pub fn r_end(&self) -> f64 {
        self.r_end
    }

    pub fn num_elements(&self) -> usize {
        self.num_elements
    }

    pub fn num_nodes(&self) -> usize {
        self.num_elements + 1
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Endpoints of element `e`.
    pub fn element(&self, e: usize) -> (f64, f64) {
        (self.nodes[e], self.nodes[e + 1])
    }
}

/// Free-function form of [`Mesh1D::uniform`].
pub fn build_mesh(r_start: f64, r_end: f64, num_elements: usize) -> Result<Mesh1D> {
    Mesh1D::uniform(r_start, r_end, num_elements)
}

/// Tridiagonal matrix stored by diagonals.
///
/// `lower[i]` is entry `(i + 1, i)`, `upper[i]` is entry `(i, i + 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TriDiagonal {
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
}

pub type BandedMatrix = TriDiagonal;

impl TriDiagonal {
    pub fn zeros(n: usize) -> Self {
        assert!(n > 0, "tridiagonal matrix needs a positive dimension");
        Self {
            lower: vec![0.0; n - 1],
            diag: vec![0.0; n],
            upper: vec![0.0; n - 1],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        m.diag.iter_mut().for_each(|d| *d = 1.0);
        m
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    /// Entry `(i, j)`; zero outside the band.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i == j {
            self.diag[i]
        } else if j == i + 1 {
            self.upper[i]
        } else if i == j + 1 {
            self.lower[j]
        } else {
            0.0
        }
    }

    /// Adds `v` to entry `(i, j)`. Panics outside the band.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        if i == j {
            self.diag[i] += v;
        } else if j == i + 1 {
            self.upper[i] += v;
        } else if i == j + 1 {
            self.lower[j] += v;
        } else {
            panic!("entry ({i}, {j}) outside the tridiagonal band");
        }
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, alpha: f64, other: &TriDiagonal) {
        assert_eq!(self.dim(), other.dim());
        for (a, b) in self.diag.iter_mut().zip(&other.diag) {
            *a += alpha * b;
        }
        for (a, b) in self.lower.iter_mut().zip(&other.lower) {
            *a += alpha * b;
        }
        for (a, b) in self.upper.iter_mut().zip(&other.upper) {
            *a += alpha * b;
        }
    }

    /// `self += alpha * other * diag(d)`, i.e. column `j` of `other` scaled by `d[j]`.
    pub fn add_scaled_columns(&mut self, alpha: f64, other: &TriDiagonal, d: &[f64]) {
        let n = self.dim();
        assert_eq!(n, other.dim());
        assert_eq!(n, d.len());
        for i in 0..n {
            self.diag[i] += alpha * other.diag[i] * d[i];
        }
        for i in 0..n - 1 {
            self.upper[i] += alpha * other.upper[i] * d[i + 1];
            self.lower[i] += alpha * other.lower[i] * d[i];
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim();
        assert_eq!(x.len(), n);
        let mut y: Vec<f64> = self.diag.iter().zip(x).map(|(d, x)| d * x).collect();
        for i in 0..n - 1 {
            y[i] += self.upper[i] * x[i + 1];
            y[i + 1] += self.lower[i] * x[i];
        }
        y
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.mul_vec(&vec![1.0; self.dim()])
    }

    pub fn max_abs(&self) -> f64 {
        self.diag
            .iter()
            .chain(&self.lower)
            .chain(&self.upper)
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    fn scatter(&mut self, e: usize, local: [[f64; 2]; 2]) {
        self.diag[e] += local[0][0];
        self.upper[e] += local[0][1];
        self.lower[e] += local[1][0];
        self.diag[e + 1] += local[1][1];
    }
}

/// Mass matrix `∫ φ_i φ_j dr` (no radial weight).
pub fn assemble_mass(mesh: &Mesh1D) -> TriDiagonal {
    let mut m = TriDiagonal::zeros(mesh.num_nodes());
    for e in 0..mesh.num_elements() {
        let (a, b) = mesh.element(e);
        let h = b - a;
        m.scatter(e, [[h / 3.0, h / 6.0], [h / 6.0, h / 3.0]]);
    }
    m
}

/// Stiffness matrix `∫ φ_i' φ_j' dr`.
pub fn assemble_stiffness(mesh: &Mesh1D) -> TriDiagonal {
    let mut k = TriDiagonal::zeros(mesh.num_nodes());
    for e in 0..mesh.num_elements() {
        let (a, b) = mesh.element(e);
        let inv = 1.0 / (b - a);
        k.scatter(e, [[inv, -inv], [-inv, inv]]);
    }
    k
}

/// Local `∫_a^b (1/r) φ_q' φ_p dr` for an element with `a > 0`.
///
/// Uses `∫ (b - r)/(h r) dr = b ln(b/a)/h - 1` and `∫ (r - a)/(h r) dr = 1 - a ln(b/a)/h`.
fn convection_element_regular(a: f64, b: f64) -> [[f64; 2]; 2] {
    let h = b - a;
    let log_ratio = (h / a).ln_1p();
    let left = b * log_ratio / h - 1.0;
    let right = 1.0 - a * log_ratio / h;
    [[-left / h, left / h], [-right / h, right / h]]
}

/// Local matrix for the element `[0, h]`; row 0 holds the finite-part values.
fn convection_element_origin(h: f64) -> [[f64; 2]; 2] {
    let finite_part = (1.0 - h.ln()) / h;
    [[finite_part, -finite_part], [-1.0 / h, 1.0 / h]]
}

/// Convection matrix `A_ij = ∫ (1/r) φ_j' φ_i dr` on a mesh starting at the origin.
pub fn assemble_singular_convection(mesh: &Mesh1D) -> Result<TriDiagonal> {
    if mesh.r_start() != 0.0 {
        return Err(Error::RequiresOrigin(mesh.r_start()));
    }
    let mut a = TriDiagonal::zeros(mesh.num_nodes());
    let (_, h0) = mesh.element(0);
    a.scatter(0, convection_element_origin(h0));
    for e in 1..mesh.num_elements() {
        let (l, r) = mesh.element(e);
        a.scatter(e, convection_element_regular(l, r));
    }
    Ok(a)
}

/// Convection matrix on a mesh bounded away from the origin.
pub fn assemble_regular_convection(mesh: &Mesh1D) -> Result<TriDiagonal> {
    if !(mesh.r_start() > 0.0) {
        return Err(Error::RequiresPositiveStart(mesh.r_start()));
    }
    let mut a = TriDiagonal::zeros(mesh.num_nodes());
    for e in 0..mesh.num_elements() {
        let (l, r) = mesh.element(e);
        a.scatter(e, convection_element_regular(l, r));
    }
    Ok(a)
}

/// Picks the singular or regular assembly based on where the mesh starts.
pub fn assemble_convection(mesh: &Mesh1D) -> Result<TriDiagonal> {
    if mesh.r_start() == 0.0 {
        assemble_singular_convection(mesh)
    } else {
        assemble_regular_convection(mesh)
    }
}

/// Load vector `∫ f φ_i dr` by 3-point Gauss-Legendre on each element.
pub fn assemble_load(mesh: &Mesh1D, f: impl Fn(f64) -> f64) -> Vec<f64> {
    const XI: [f64; 3] = [-0.774_596_669_241_483_4, 0.0, 0.774_596_669_241_483_4];
    const W: [f64; 3] = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];
    let mut load = vec![0.0; mesh.num_nodes()];
    for e in 0..mesh.num_elements() {
        let (a, b) = mesh.element(e);
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        for (xi, w) in XI.iter().zip(W) {
            let r = mid + half * xi;
            let fr = f(r) * w * half;
            let phi_right = 0.5 * (1.0 + xi);
            load[e] += fr * (1.0 - phi_right);
            load[e + 1] += fr * phi_right;
        }
    }
    load
}

const PIVOT_THRESHOLD: f64 = 1e-14;

/// Solves `A x = rhs` for tridiagonal `A`.
///
/// Thomas elimination first; if a pivot falls below `1e-14 * max|A|` the
/// system is retried with partially pivoted banded LU.
pub fn solve_banded(a: &TriDiagonal, rhs: &[f64]) -> Result<Vec<f64>> {
    let n = a.dim();
    if rhs.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: rhs.len(),
        });
    }
    let tol = PIVOT_THRESHOLD * a.max_abs();
    if a.max_abs() == 0.0 {
        return Err(Error::SingularMatrix { row: 0, pivot: 0.0 });
    }
    match thomas(a, rhs, tol) {
        Some(x) => Ok(x),
        None => lu_partial_pivot(a, rhs, tol),
    }
}

fn thomas(a: &TriDiagonal, rhs: &[f64], tol: f64) -> Option<Vec<f64>> {
    let n = a.dim();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut pivot = a.diag[0];
    if pivot.abs() <= tol {
        return None;
    }
    if n > 1 {
        c[0] = a.upper[0] / pivot;
    }
    d[0] = rhs[0] / pivot;
    for i in 1..n {
        pivot = a.diag[i] - a.lower[i - 1] * c[i - 1];
        if pivot.abs() <= tol || !pivot.is_finite() {
            return None;
        }
        if i < n - 1 {
            c[i] = a.upper[i] / pivot;
        }
        d[i] = (rhs[i] - a.lower[i - 1] * d[i - 1]) / pivot;
    }
    for i in (0..n - 1).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    Some(d)
}

// Row-interchanging elimination in the style of LAPACK's gtsv; row swaps
// create one extra superdiagonal.
fn lu_partial_pivot(a: &TriDiagonal, rhs: &[f64], tol: f64) -> Result<Vec<f64>> {
    let n = a.dim();
    let mut dl = a.lower.clone();
    let mut d = a.diag.clone();
    let mut du = a.upper.clone();
    let mut du2 = vec![0.0; n.saturating_sub(2)];
    let mut b = rhs.to_vec();

    for i in 0..n.saturating_sub(1) {
        if d[i].abs() >= dl[i].abs() {
            if d[i].abs() <= tol {
                return Err(Error::SingularMatrix { row: i, pivot: d[i] });
            }
            let fact = dl[i] / d[i];
            d[i + 1] -= fact * du[i];
            b[i + 1] -= fact * b[i];
            dl[i] = 0.0;
        } else {
            let fact = d[i] / dl[i];
            d[i] = dl[i];
            let tmp = d[i + 1];
            d[i + 1] = du[i] - fact * tmp;
            if i + 1 < n - 1 {
                du2[i] = du[i + 1];
                du[i + 1] = -fact * du2[i];
            }
            du[i] = tmp;
            b.swap(i, i + 1);
            b[i + 1] -= fact * b[i];
        }
    }
    if d[n - 1].abs() <= tol {
        return Err(Error::SingularMatrix {
            row: n - 1,
            pivot: d[n - 1],
        });
    }
    let mut x = b;
    x[n - 1] /= d[n - 1];
    if n > 1 {
        x[n - 2] = (x[n - 2] - du[n - 2] * x[n - 1]) / d[n - 2];
    }
    for i in (0..n.saturating_sub(2)).rev() {
        x[i] = (x[i] - du[i] * x[i + 1] - du2[i] * x[i + 2]) / d[i];
    }
    Ok(x)
}
