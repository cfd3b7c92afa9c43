//! Conversions between full spectra of real signals and their
//! non-redundant half (bins `0..=F/2`).

use ndarray::{s, Array2};
use num_complex::Complex;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Relative tolerance for the Hermitian-symmetry check in [`reduce_spectrum`].
pub const HERMITIAN_TOL: f64 = 1e-6;

/// Keeps bins `0..=F/2` of a `F x N` spectrum, checking that the dropped
/// bins are the conjugates of the kept ones.
pub fn reduce_spectrum<T: Real>(full: &Array2<Complex<T>>) -> Result<Array2<Complex<T>>> {
    let f = full.nrows();
    if f < 2 || f % 2 != 0 {
        return Err(Error::ShapeMismatch(format!(
            "full spectrum needs an even number of bins, got {f}"
        )));
    }
    let half = f / 2;
    let scale = full.iter().map(|c| c.norm().as_f64()).fold(1.0, f64::max);
    let tol = HERMITIAN_TOL * scale;
    for k in 0..=half {
        let mirror = (f - k) % f;
        for n in 0..full.ncols() {
            let dev = (full[[k, n]] - full[[mirror, n]].conj()).norm().as_f64();
            if dev > tol {
                return Err(Error::NonHermitianInput {
                    bin: k,
                    deviation: dev,
                });
            }
        }
    }
    Ok(full.slice(s![..=half, ..]).to_owned())
}

/// Rebuilds the full `F x N` spectrum (`F = 2 (bins - 1)`) by conjugate
/// symmetry.
pub fn expand_spectrum<T: Real>(half: &Array2<Complex<T>>) -> Result<Array2<Complex<T>>> {
    let bins = half.nrows();
    if bins < 2 {
        return Err(Error::ShapeMismatch(format!(
            "half spectrum needs at least 2 bins, got {bins}"
        )));
    }
    let f = 2 * (bins - 1);
    let mut full = Array2::zeros((f, half.ncols()));
    full.slice_mut(s![..bins, ..]).assign(half);
    for k in 1..bins - 1 {
        for n in 0..half.ncols() {
            full[[f - k, n]] = half[[k, n]].conj();
        }
    }
    Ok(full)
}
