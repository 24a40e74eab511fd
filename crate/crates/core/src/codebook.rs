//! Learnable codebook and nearest-neighbour vector quantization.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::nn::{join, Module};
use crate::rng::Rng;
use crate::tensor::{grad_if, Tensor};

/// Default commitment weight of the codebook learning loss.
pub const COMMITMENT_BETA: f64 = 0.25;

/// `K × n_z` matrix of code vectors.
#[derive(Debug)]
pub struct Codebook {
    pub entries: Tensor,
}

/// Output of [`Codebook::quantize`].
#[derive(Debug, Clone)]
pub struct QuantizationResult {
    /// `[B, n_z, h, w]`, each position a copy of its codebook entry.
    pub quantized: Tensor,
    /// Row-major `B × h × w` code indices.
    pub indices: Vec<usize>,
    pub grid: [usize; 3],
}

impl Codebook {
    /// Entries drawn uniformly from `[−1/K, 1/K]`.
    pub fn new(rng: &mut Rng, k: usize, dim: usize) -> Result<Self> {
        if k == 0 || dim == 0 {
            return Err(Error::Config(format!("codebook needs K >= 1 and n_z >= 1, got {k}x{dim}")));
        }
        let bound = 1.0 / k as f64;
        let data = (0..k * dim).map(|_| rng.random_range(-bound..=bound)).collect();
        Ok(Self {
            entries: Tensor::param(data, &[k, dim])?,
        })
    }

    pub fn from_entries(entries: Tensor) -> Result<Self> {
        match entries.shape() {
            [k, d] if *k > 0 && *d > 0 => Ok(Self { entries }),
            s => Err(Error::Config(format!("codebook entries must be a non-empty K x n_z matrix, got {s:?}"))),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.entries.shape()[1]
    }

    /// Index of the entry nearest to `v` in squared Euclidean distance;
    /// ties go to the lowest index.
    pub fn nearest(&self, v: &[f64]) -> usize {
        let e = self.entries.data();
        let d = self.dim();
        let mut best = (0, f64::INFINITY);
        for (k, row) in e.chunks_exact(d).enumerate() {
            let dist: f64 = row.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
            if dist < best.1 {
                best = (k, dist);
            }
        }
        best.0
    }

    /// Replaces every latent vector by its nearest code. No gradient reaches
    /// `latent`; `quantized` is differentiable in the entries.
    pub fn quantize(&self, latent: &Tensor) -> Result<QuantizationResult> {
        if self.is_empty() {
            return Err(Error::Config("cannot quantize against an empty codebook".into()));
        }
        let [b, c, h, w] = latent.dims4("quantize")?;
        if c != self.dim() {
            return Err(Error::dim(
                "quantize",
                "channels (n_z)",
                format!("latent has {c} channels, codebook vectors have {}", self.dim()),
            ));
        }
        let hw = h * w;
        let mut indices = Vec::with_capacity(b * hw);
        {
            let z = latent.data();
            let mut v = vec![0.0; c];
            for bi in 0..b {
                for p in 0..hw {
                    for (ci, slot) in v.iter_mut().enumerate() {
                        *slot = z[(bi * c + ci) * hw + p];
                    }
                    indices.push(self.nearest(&v));
                }
            }
        }
        let quantized = self.lookup(&indices, [b, h, w])?;
        Ok(QuantizationResult {
            quantized,
            indices,
            grid: [b, h, w],
        })
    }

    /// Gathers entries into a `[B, n_z, h, w]` map; the backward pass
    /// scatter-adds into the selected rows.
    pub fn lookup(&self, indices: &[usize], grid: [usize; 3]) -> Result<Tensor> {
        let [b, h, w] = grid;
        let hw = h * w;
        let (k, d) = (self.len(), self.dim());
        if indices.len() != b * hw {
            return Err(Error::dim("lookup", "indices", format!("expected {} indices", b * hw)));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= k) {
            return Err(Error::Config(format!("code index {bad} out of range for K = {k}")));
        }
        let mut data = vec![0.0; b * d * hw];
        {
            let e = self.entries.data();
            for bi in 0..b {
                for p in 0..hw {
                    let row = indices[bi * hw + p];
                    for ci in 0..d {
                        data[(bi * d + ci) * hw + p] = e[row * d + ci];
                    }
                }
            }
        }
        let idx = indices.to_vec();
        Ok(Tensor::from_op(vec![b, d, h, w], data, vec![self.entries.clone()], move |p, _, g| {
            vec![grad_if(&p[0], || {
                let mut ge = vec![0.0; k * d];
                for bi in 0..b {
                    for pix in 0..hw {
                        let row = idx[bi * hw + pix];
                        for ci in 0..d {
                            ge[row * d + ci] += g[(bi * d + ci) * hw + pix];
                        }
                    }
                }
                ge
            })]
        }))
    }

    /// Overwrites the listed entries with latent vectors picked at random
    /// from `latent` (`[B, n_z, h, w]`).
    pub fn reseed(&self, dead: &[usize], latent: &Tensor, rng: &mut Rng) -> Result<()> {
        let [b, c, h, w] = latent.dims4("reseed")?;
        if c != self.dim() {
            return Err(Error::dim("reseed", "channels (n_z)", format!("{c} vs {}", self.dim())));
        }
        let hw = h * w;
        let z = latent.data();
        let mut e = self.entries.data_mut();
        for &k in dead {
            let pos = rng.random_range(0..b * hw);
            let (bi, p) = (pos / hw, pos % hw);
            for ci in 0..c {
                e[k * c + ci] = z[(bi * c + ci) * hw + p];
            }
        }
        Ok(())
    }
}

impl Module for Codebook {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&join(prefix, "entries"), &self.entries);
    }
}

/// Per-code usage counts over a window (one epoch).
#[derive(Debug, Clone)]
pub struct UsageTracker {
    counts: Vec<u64>,
}

impl UsageTracker {
    pub fn new(k: usize) -> Self {
        Self { counts: vec![0; k] }
    }

    pub fn record(&mut self, indices: &[usize]) {
        for &i in indices {
            self.counts[i] += 1;
        }
    }

    /// Codes never selected since the last reset.
    pub fn dead(&self) -> Vec<usize> {
        (0..self.counts.len()).filter(|&k| self.counts[k] == 0).collect()
    }

    pub fn reset(&mut self) {
        self.counts.iter_mut().for_each(|c| *c = 0);
    }
}

/// Stage-1 objective: `‖sg(ẑ) − z_q‖² + β‖ẑ − sg(z_q)‖²`, both mean-reduced.
///
/// The first term trains the entries, the second commits the encoder.
pub fn codebook_learning_loss(latent: &Tensor, result: &QuantizationResult, beta: f64) -> Result<Tensor> {
    latent.same_shape(&result.quantized, "codebook_learning_loss")?;
    let codebook_term = {
        let d = result.quantized.sub(&latent.detach())?;
        d.mul(&d)?.mean()
    };
    let commit_term = {
        let d = latent.sub(&result.quantized.detach())?;
        d.mul(&d)?.mean()
    };
    codebook_term.add(&commit_term.mul_scalar(beta))
}

/// Mean squared distance between night-branch codes and the (constant)
/// ground-truth codes.
pub fn code_alignment_loss(z_night: &Tensor, z_gt: &Tensor) -> Result<Tensor> {
    z_night.same_shape(z_gt, "code_alignment_loss")?;
    let d = z_night.sub(&z_gt.detach())?;
    Ok(d.mul(&d)?.mean())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn book(rows: &[[f64; 2]]) -> Codebook {
        let data = rows.iter().flatten().copied().collect();
        Codebook::from_entries(Tensor::param(data, &[rows.len(), 2]).unwrap()).unwrap()
    }

    #[test]
    fn exact_match_selects_entry() {
        let cb = book(&[[0.0, 0.0], [1.0, 1.0], [0.25, -0.5], [3.0, 3.0]]);
        let z = Tensor::new(vec![0.25, -0.5], &[1, 2, 1, 1]).unwrap();
        let q = cb.quantize(&z).unwrap();
        assert_eq!(q.indices, vec![2]);
        assert_eq!(q.quantized.to_vec(), vec![0.25, -0.5]);
    }

    #[test]
    fn single_code_takes_everything() {
        let cb = book(&[[0.7, -0.1]]);
        let z = Tensor::new((0..18).map(|i| i as f64).collect(), &[1, 2, 3, 3]).unwrap();
        assert!(cb.quantize(&z).unwrap().indices.iter().all(|&i| i == 0));
    }

    #[test]
    fn duplicate_entries_pick_lowest_index() {
        let cb = book(&[[5.0, 5.0], [1.0, 0.0], [1.0, 0.0]]);
        let z = Tensor::new(vec![1.1, 0.1], &[1, 2, 1, 1]).unwrap();
        assert_eq!(cb.quantize(&z).unwrap().indices, vec![1]);
    }

    #[test]
    fn empty_codebook_is_a_config_error() {
        let cb = Codebook {
            entries: Tensor::zeros(&[0, 2]),
        };
        let z = Tensor::zeros(&[1, 2, 1, 1]);
        assert!(matches!(cb.quantize(&z), Err(Error::Config(_))));
        assert!(Codebook::from_entries(Tensor::zeros(&[0, 2])).is_err());
    }

    #[test]
    fn wrong_latent_dim_is_rejected() {
        let cb = book(&[[0.0, 0.0]]);
        assert!(cb.quantize(&Tensor::zeros(&[1, 3, 1, 1])).is_err());
    }

    #[test]
    fn learning_loss_zero_at_fixed_point() {
        let cb = book(&[[0.5, 0.5], [-1.0, 2.0]]);
        let z = Tensor::new(vec![-1.0, 0.5, 2.0, 0.5], &[1, 2, 1, 2]).unwrap();
        let q = cb.quantize(&z).unwrap();
        assert_eq!(codebook_learning_loss(&z, &q, COMMITMENT_BETA).unwrap().item(), 0.0);
    }

    #[test]
    fn beta_zero_blocks_encoder_gradient() {
        let cb = book(&[[0.0, 0.0], [1.0, 1.0]]);
        let z = Tensor::param(vec![0.2, 0.9, -0.3, 0.8], &[1, 2, 1, 2]).unwrap();
        let q = cb.quantize(&z).unwrap();
        codebook_learning_loss(&z, &q, 0.0).unwrap().backward().unwrap();
        assert!(z.grad().unwrap().iter().all(|&g| g == 0.0));
        assert!(cb.entries.grad().unwrap().iter().any(|&g| g != 0.0));
    }

    #[test]
    fn alignment_loss_of_unit_offset() {
        let a = Tensor::new(vec![0.1, 0.2, 0.3, 0.4], &[1, 1, 2, 2]).unwrap();
        let b = a.add_scalar(1.0);
        let l = code_alignment_loss(&b, &a).unwrap().item();
        assert!((l - 1.0).abs() < 1e-15);
        assert_eq!(code_alignment_loss(&a, &a).unwrap().item(), 0.0);
        assert!(code_alignment_loss(&a, &Tensor::zeros(&[1, 1, 1, 4])).is_err());
    }

    #[test]
    fn reseed_copies_latent_vectors() {
        let mut r = rng::stream(3, 0);
        let cb = Codebook::new(&mut r, 4, 2).unwrap();
        let z = Tensor::new(vec![7.0, 8.0], &[1, 2, 1, 1]).unwrap();
        cb.reseed(&[1, 3], &z, &mut r).unwrap();
        let e = cb.entries.to_vec();
        assert_eq!(&e[2..4], &[7.0, 8.0]);
        assert_eq!(&e[6..8], &[7.0, 8.0]);
    }

    #[test]
    fn usage_tracker_reports_unused() {
        let mut t = UsageTracker::new(4);
        t.record(&[0, 2, 2]);
        assert_eq!(t.dead(), vec![1, 3]);
        t.reset();
        assert_eq!(t.dead().len(), 4);
    }
}
