//! Dense LU solves and the ridge regression used for explainer fits.

use super::tensor::{matmul_tn, Tensor};
use crate::error::{Error, Result};

/// Largest accepted 1-norm condition estimate.
pub const MAX_CONDITION: f64 = 1e12;

/// LU factorisation with partial pivoting, `P A = L U`.
#[derive(Debug, Clone)]
pub struct Lu {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
    anorm: f64,
}

impl Lu {
    pub fn factor(a: &Tensor) -> Result<Self> {
        if a.shape().len() != 2 || a.rows() != a.cols() {
            return Err(Error::shape(format!("LU needs a square matrix, got {:?}", a.shape())));
        }
        let n = a.rows();
        if n == 0 {
            return Err(Error::shape("LU of an empty matrix"));
        }
        let anorm = one_norm(a);
        let mut lu = a.data().to_vec();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (p, pmax) = (k..n)
                .map(|r| (r, lu[r * n + k].abs()))
                .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pmax == 0.0 {
                return Err(Error::Singular {
                    condition: f64::INFINITY,
                });
            }
            if p != k {
                for c in 0..n {
                    lu.swap(k * n + c, p * n + c);
                }
                perm.swap(k, p);
            }
            let pivot = lu[k * n + k];
            for r in k + 1..n {
                let factor = lu[r * n + k] / pivot;
                lu[r * n + k] = factor;
                if factor != 0.0 {
                    for c in k + 1..n {
                        lu[r * n + c] -= factor * lu[k * n + c];
                    }
                }
            }
        }
        Ok(Self { n, lu, perm, anorm })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for r in 0..n {
            let s: f64 = (0..r).map(|c| self.lu[r * n + c] * x[c]).sum();
            x[r] -= s;
        }
        for r in (0..n).rev() {
            let s: f64 = (r + 1..n).map(|c| self.lu[r * n + c] * x[c]).sum();
            x[r] = (x[r] - s) / self.lu[r * n + r];
        }
        x
    }

    /// Solves `Aᵀ x = b`.
    pub fn solve_transpose(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        // Uᵀ z = b
        let mut z = b.to_vec();
        for r in 0..n {
            let s: f64 = (0..r).map(|c| self.lu[c * n + r] * z[c]).sum();
            z[r] = (z[r] - s) / self.lu[r * n + r];
        }
        // Lᵀ w = z
        for r in (0..n).rev() {
            let s: f64 = (r + 1..n).map(|c| self.lu[c * n + r] * z[c]).sum();
            z[r] -= s;
        }
        let mut x = vec![0.0; n];
        for (i, &p) in self.perm.iter().enumerate() {
            x[p] = z[i];
        }
        x
    }

    /// Hager/Higham estimate of `‖A‖₁ ‖A⁻¹‖₁`.
    pub fn condition_estimate(&self) -> f64 {
        let n = self.n;
        let mut x = vec![1.0 / n as f64; n];
        let mut est = 0.0;
        for _ in 0..5 {
            let y = self.solve(&x);
            let y_norm: f64 = y.iter().map(|v| v.abs()).sum();
            if !y_norm.is_finite() {
                return f64::INFINITY;
            }
            if y_norm <= est {
                break;
            }
            est = y_norm;
            let sign: Vec<f64> = y.iter().map(|v| if *v >= 0.0 { 1.0 } else { -1.0 }).collect();
            let z = self.solve_transpose(&sign);
            let (j, zmax) = z
                .iter()
                .enumerate()
                .fold((0, -1.0), |b, (i, v)| if v.abs() > b.1 { (i, v.abs()) } else { b });
            let ztx: f64 = z.iter().zip(&x).map(|(a, b)| a * b).sum();
            if zmax <= ztx {
                break;
            }
            x = vec![0.0; n];
            x[j] = 1.0;
        }
        est * self.anorm
    }
}

fn one_norm(a: &Tensor) -> f64 {
    (0..a.cols())
        .map(|c| (0..a.rows()).map(|r| a.get(r, c).abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Solves `A x = b` for square `A`.
///
/// Fails with [`Error::Singular`] when a pivot vanishes or the condition
/// estimate exceeds [`MAX_CONDITION`].
pub fn linear_solve(a: &Tensor, b: &[f64]) -> Result<Vec<f64>> {
    let lu = factor_checked(a)?;
    if b.len() != lu.n {
        return Err(Error::shape(format!(
            "right-hand side has {} entries for a {}x{} system",
            b.len(),
            lu.n,
            lu.n
        )));
    }
    let x = lu.solve(b);
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("linear_solve solution".into()));
    }
    Ok(x)
}

fn factor_checked(a: &Tensor) -> Result<Lu> {
    let lu = Lu::factor(a)?;
    let condition = lu.condition_estimate();
    if !(condition <= MAX_CONDITION) {
        return Err(Error::Singular { condition });
    }
    Ok(lu)
}

/// Ridge regression problem `min ‖X W + 1 bᵀ − Y‖² + α ‖W‖²`.
#[derive(Debug, Clone)]
pub struct RidgeProblem<'a> {
    pub design: &'a Tensor,
    pub targets: &'a Tensor,
    pub alpha: f64,
    /// Fit an intercept row `b`. When false, `b` is zero.
    pub fit_intercept: bool,
    /// Include `b` in the L2 penalty.
    pub penalize_intercept: bool,
}

impl<'a> RidgeProblem<'a> {
    /// Intercept fitted and left unpenalized.
    pub fn new(design: &'a Tensor, targets: &'a Tensor, alpha: f64) -> Self {
        Self {
            design,
            targets,
            alpha,
            fit_intercept: true,
            penalize_intercept: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeSolution {
    /// `D x N`.
    pub coefficients: Tensor,
    /// Length `N`.
    pub intercept: Vec<f64>,
}

impl RidgeSolution {
    pub fn predict_row(&self, x: &[f64]) -> Vec<f64> {
        let n = self.coefficients.cols();
        let mut out = self.intercept.clone();
        for (d, &xv) in x.iter().enumerate() {
            let w = &self.coefficients.data()[d * n..(d + 1) * n];
            for (o, wv) in out.iter_mut().zip(w) {
                *o += xv * wv;
            }
        }
        out
    }
}

pub fn solve_ridge(p: &RidgeProblem<'_>) -> Result<RidgeSolution> {
    let (x, y) = (p.design, p.targets);
    if x.shape().len() != 2 || y.shape().len() != 2 {
        return Err(Error::shape("ridge design and targets must be matrices"));
    }
    let (m, d, n) = (x.rows(), x.cols(), y.cols());
    if m == 0 || d == 0 {
        return Err(Error::shape(format!("ridge design is {m}x{d}")));
    }
    if y.rows() != m {
        return Err(Error::shape(format!(
            "ridge design has {m} rows, targets have {}",
            y.rows()
        )));
    }
    if !(p.alpha >= 0.0) || !p.alpha.is_finite() {
        return Err(Error::invalid(format!("ridge alpha must be finite and >= 0, got {}", p.alpha)));
    }

    if p.fit_intercept && p.penalize_intercept {
        // Append a ones column and penalize everything uniformly.
        let mut aug = Vec::with_capacity(m * (d + 1));
        for r in 0..m {
            aug.extend_from_slice(x.row(r));
            aug.push(1.0);
        }
        let aug = Tensor::from_parts(vec![m, d + 1], aug);
        let full = normal_solve(&aug, y, p.alpha)?;
        let coefficients = full.slice_rows(0, d);
        let intercept = full.row(d).to_vec();
        return Ok(RidgeSolution {
            coefficients,
            intercept,
        });
    }

    if !p.fit_intercept {
        let coefficients = normal_solve(x, y, p.alpha)?;
        return Ok(RidgeSolution {
            coefficients,
            intercept: vec![0.0; n],
        });
    }

    let x_mean = column_means(x);
    let y_mean = column_means(y);
    let xc = centered(x, &x_mean);
    let yc = centered(y, &y_mean);
    let coefficients = normal_solve(&xc, &yc, p.alpha)?;
    let mut intercept = y_mean;
    for (dd, xm) in x_mean.iter().enumerate() {
        for (j, b) in intercept.iter_mut().enumerate() {
            *b -= xm * coefficients.get(dd, j);
        }
    }
    Ok(RidgeSolution {
        coefficients,
        intercept,
    })
}

/// `(XᵀX + αI)⁻¹ XᵀY` via LU.
fn normal_solve(x: &Tensor, y: &Tensor, alpha: f64) -> Result<Tensor> {
    let mut gram = matmul_tn(x, x);
    let d = gram.rows();
    for i in 0..d {
        let v = gram.get(i, i) + alpha;
        gram.set(i, i, v);
    }
    let rhs = matmul_tn(x, y);
    let lu = factor_checked(&gram)?;
    let n = y.cols();
    let mut out = Tensor::zeros(&[d, n]);
    let mut col = vec![0.0; d];
    for j in 0..n {
        for i in 0..d {
            col[i] = rhs.get(i, j);
        }
        let sol = lu.solve(&col);
        for i in 0..d {
            out.set(i, j, sol[i]);
        }
    }
    if !out.is_finite() {
        return Err(Error::NonFinite("ridge coefficients".into()));
    }
    Ok(out)
}

fn column_means(t: &Tensor) -> Vec<f64> {
    let mut means = vec![0.0; t.cols()];
    for r in 0..t.rows() {
        for (m, v) in means.iter_mut().zip(t.row(r)) {
            *m += v;
        }
    }
    let rows = t.rows() as f64;
    means.iter_mut().for_each(|m| *m /= rows);
    means
}

fn centered(t: &Tensor, means: &[f64]) -> Tensor {
    let mut out = t.clone();
    let c = t.cols();
    for chunk in out.data_mut().chunks_mut(c) {
        for (v, m) in chunk.iter_mut().zip(means) {
            *v -= m;
        }
    }
    out
}
