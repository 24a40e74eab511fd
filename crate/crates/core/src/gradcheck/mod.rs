//! Central finite-difference checks of analytic gradients.

mod suite;

use rand::seq::index::sample;
use rand::Rng as _;

use crate::error::Result;
use crate::rng;
use crate::tensor::{no_grad, Tensor};

pub use suite::{case_names, run_suite, SuiteResult};

/// Default pass threshold on the max relative error.
pub const TOLERANCE: f64 = 1e-4;

#[derive(Clone, Copy, Debug)]
pub struct CheckOptions {
    pub step: f64,
    /// Coordinates probed per input tensor; larger tensors are subsampled.
    pub max_coords: usize,
    /// Magnitudes below this are compared absolutely.
    pub floor: f64,
    pub seed: u64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            max_coords: 24,
            floor: 1e-4,
            seed: 0,
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the gradient of `sum(f() ⊙ w)` (fixed random `w`) with respect
/// to every tensor in `inputs` against central differences.
///
/// `inputs` must be leaves that `f` reads; their values are perturbed in
/// place and restored. Returns the max relative error.
pub fn check(f: &dyn Fn() -> Result<Tensor>, inputs: &[Tensor], opts: CheckOptions) -> Result<f64> {
    check_against(f, f, inputs, opts)
}

/// Like [`check`], but differences are taken on `numeric`, a surrogate with
/// the same value as `analytic` in which stop-gradient arguments are frozen
/// constants.
pub fn check_against(
    analytic: &dyn Fn() -> Result<Tensor>,
    numeric: &dyn Fn() -> Result<Tensor>,
    inputs: &[Tensor],
    opts: CheckOptions,
) -> Result<f64> {
    let f = numeric;
    let mut wrng = rng::stream(opts.seed, 0x6772_6164);
    let probe = no_grad(f)?;
    let weights: Vec<f64> = (0..probe.numel()).map(|_| wrng.random_range(-1.0..1.0)).collect();
    let weights = Tensor::new(weights, probe.shape())?;
    let loss = |t: Tensor| -> Result<Tensor> { Ok(t.mul(&weights)?.sum()) };

    let saved: Vec<bool> = inputs.iter().map(Tensor::requires_grad).collect();
    for t in inputs {
        t.set_requires_grad(true);
        t.zero_grad();
    }
    loss(analytic()?)?.backward()?;
    let analytic: Vec<Vec<f64>> = inputs
        .iter()
        .map(|t| t.grad().unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();

    let mut worst: f64 = 0.0;
    let mut crng = rng::stream(opts.seed, 0x636f_6f72);
    for (t, grad) in inputs.iter().zip(&analytic) {
        let n = t.numel();
        let coords: Vec<usize> = if n <= opts.max_coords {
            (0..n).collect()
        } else {
            let mut c = sample(&mut crng, n, opts.max_coords).into_vec();
            c.sort_unstable();
            c
        };
        for i in coords {
            let orig = t.data()[i];
            t.data_mut()[i] = orig + opts.step;
            let up = no_grad(|| loss(f()?))?.item();
            t.data_mut()[i] = orig - opts.step;
            let down = no_grad(|| loss(f()?))?.item();
            t.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * opts.step);
            worst = worst.max(relative_error(grad[i], numeric, opts.floor));
        }
    }
    for (t, on) in inputs.iter().zip(saved) {
        t.zero_grad();
        t.set_requires_grad(on);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_gradient_passes() {
        let x = Tensor::new(vec![0.3, -1.2, 2.0], &[3]).unwrap();
        let err = check(&|| x.mul(&x), std::slice::from_ref(&x), CheckOptions::default()).unwrap();
        assert!(err < 1e-8, "{err}");
        assert!(!x.requires_grad());
    }

    #[test]
    fn relative_error_uses_floor() {
        assert_eq!(relative_error(0.0, 1e-9, 1e-4), 1e-5);
        assert!((relative_error(2.0, 1.0, 1e-4) - 0.5).abs() < 1e-15);
    }
}
