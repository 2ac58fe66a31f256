//! Exact linear inversion of the optical channel in field-detection mode.

use nalgebra::{Cholesky, DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::image::PlainImage;
use crate::optics::PhysicalKey;

/// Tikhonov ridge added to the normal equations.
pub const PINV_RIDGE: f64 = 1e-9;

const MAX_CONDITION: f64 = 1e12;
/// Phases this close to a full turn are folded back to zero.
const WRAP_EPS: f64 = 1e-9;

/// Factorized normal equations `(TᴴT + λI)` of one key, reusable across fields.
pub struct PinvSolver {
    th: DMatrix<Complex64>,
    chol: Cholesky<Complex64, nalgebra::Dyn>,
    n_in: usize,
}

impl PinvSolver {
    /// Fails with [`Error::Numerical`] when the condition estimate exceeds 1e12.
    pub fn new(key: &PhysicalKey) -> Result<Self> {
        let (n_in, n_out) = (key.n_in(), key.n_out());
        if n_out < n_in {
            return Err(Error::invalid(format!(
                "underdetermined channel: n_out = {n_out} < n_in = {n_in}"
            )));
        }
        let t = DMatrix::from_row_slice(n_out, n_in, key.matrix());
        let th = t.adjoint();
        let mut a = &th * &t;
        for i in 0..n_in {
            a[(i, i)] += Complex64::new(PINV_RIDGE, 0.0);
        }
        let eig = a.clone().symmetric_eigenvalues();
        let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
        if !(lo > 0.0) || hi / lo > MAX_CONDITION {
            return Err(Error::Numerical(format!(
                "normal equations are ill-conditioned (condition estimate {:.3e})",
                hi / lo
            )));
        }
        let chol = Cholesky::new(a)
            .ok_or_else(|| Error::Numerical("normal matrix is not positive definite".into()))?;
        Ok(Self { th, chol, n_in })
    }

    /// Solves for one field and reads `arg(x)/(2π) mod 1` as pixel values.
    pub fn decode(&self, field: &[Complex64], height: usize, width: usize) -> Result<PlainImage> {
        if field.len() != self.th.ncols() {
            return Err(Error::invalid(format!(
                "field has {} modes, key has n_out = {}",
                field.len(),
                self.th.ncols()
            )));
        }
        if height * width != self.n_in {
            return Err(Error::invalid(format!(
                "output shape {height}x{width} does not hold n_in = {} pixels",
                self.n_in
            )));
        }
        let rhs = &self.th * DVector::from_column_slice(field);
        let x = self.chol.solve(&rhs);
        let data = x
            .iter()
            .map(|z| {
                let p = (z.arg() / (2.0 * std::f64::consts::PI)).rem_euclid(1.0);
                if p > 1.0 - WRAP_EPS {
                    0.0
                } else {
                    p
                }
            })
            .collect();
        PlainImage::new(height, width, data)
    }
}

/// One-shot [`PinvSolver`]: recovers the phase-encoded plaintext from a
/// complex output field by solving `(TᴴT + λI)·x = Tᴴy`.
pub fn pinv_decode(
    key: &PhysicalKey,
    field: &[Complex64],
    height: usize,
    width: usize,
) -> Result<PlainImage> {
    if field.len() != key.n_out() {
        return Err(Error::invalid(format!(
            "field has {} modes, key has n_out = {}",
            field.len(),
            key.n_out()
        )));
    }
    if height * width != key.n_in() {
        return Err(Error::invalid(format!(
            "output shape {height}x{width} does not hold n_in = {} pixels",
            key.n_in()
        )));
    }
    PinvSolver::new(key)?.decode(field, height, width)
}

/// Removes a global phase offset by shifting every pixel (mod 1) so that
/// pixel 0 takes `pixel0_value`.
pub fn anchor_global_phase(image: &PlainImage, pixel0_value: f64) -> Result<PlainImage> {
    if !(0.0..=1.0).contains(&pixel0_value) {
        return Err(Error::invalid("anchor value must lie in [0, 1]"));
    }
    let shift = pixel0_value - image.data()[0];
    let data = image
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if i == 0 {
                pixel0_value
            } else {
                let p = (v + shift).rem_euclid(1.0);
                if p > 1.0 - WRAP_EPS {
                    0.0
                } else {
                    p
                }
            }
        })
        .collect();
    PlainImage::new(image.height(), image.width(), data)
}
