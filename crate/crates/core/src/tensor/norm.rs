use super::{grad_if, Tensor};
use crate::error::{Error, Result};

impl Tensor {
    /// Normalizes each sample over `(C, H, W)` then applies a per-channel
    /// affine map.
    pub fn layer_norm(&self, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
        let [b, c, h, w] = self.dims4("layer_norm")?;
        if !(eps > 0.0) {
            return Err(Error::Config(format!("layer_norm eps must be > 0, got {eps}")));
        }
        for (name, t) in [("gamma", gamma), ("beta", beta)] {
            if t.shape() != [c] {
                return Err(Error::dim(
                    "layer_norm",
                    name,
                    format!("expected [{c}], got {:?}", t.shape()),
                ));
            }
        }
        let hw = h * w;
        let n = c * hw;
        let mut xhat = vec![0.0; b * n];
        let mut inv_std = vec![0.0; b];
        {
            let x = self.data();
            for bi in 0..b {
                let s = &x[bi * n..(bi + 1) * n];
                let mean = s.iter().sum::<f64>() / n as f64;
                let var = s.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
                let is = 1.0 / (var + eps).sqrt();
                inv_std[bi] = is;
                for (o, v) in xhat[bi * n..(bi + 1) * n].iter_mut().zip(s) {
                    *o = (v - mean) * is;
                }
            }
        }
        let mut data = xhat.clone();
        {
            let g = gamma.data();
            let bt = beta.data();
            for bi in 0..b {
                for ci in 0..c {
                    let off = bi * n + ci * hw;
                    data[off..off + hw].iter_mut().for_each(|v| *v = *v * g[ci] + bt[ci]);
                }
            }
        }
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), gamma.clone(), beta.clone()],
            move |p, _, g| {
                let gam = p[1].data();
                let gx = grad_if(&p[0], || {
                    let mut gx = vec![0.0; b * n];
                    let mut dxhat = vec![0.0; n];
                    for bi in 0..b {
                        let gs = &g[bi * n..(bi + 1) * n];
                        let xs = &xhat[bi * n..(bi + 1) * n];
                        for ci in 0..c {
                            for j in 0..hw {
                                dxhat[ci * hw + j] = gs[ci * hw + j] * gam[ci];
                            }
                        }
                        let sum_d: f64 = dxhat.iter().sum();
                        let sum_dx: f64 = dxhat.iter().zip(xs).map(|(a, b)| a * b).sum();
                        let k = inv_std[bi] / n as f64;
                        for j in 0..n {
                            gx[bi * n + j] = k * (n as f64 * dxhat[j] - sum_d - xs[j] * sum_dx);
                        }
                    }
                    gx
                });
                let gg = grad_if(&p[1], || {
                    let mut gg = vec![0.0; c];
                    for bi in 0..b {
                        for ci in 0..c {
                            let off = bi * n + ci * hw;
                            gg[ci] += g[off..off + hw]
                                .iter()
                                .zip(&xhat[off..off + hw])
                                .map(|(a, b)| a * b)
                                .sum::<f64>();
                        }
                    }
                    gg
                });
                let gb = grad_if(&p[2], || {
                    let mut gb = vec![0.0; c];
                    for bi in 0..b {
                        for ci in 0..c {
                            let off = bi * n + ci * hw;
                            gb[ci] += g[off..off + hw].iter().sum::<f64>();
                        }
                    }
                    gb
                });
                vec![gx, gg, gb]
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalizes_each_sample() {
        let v: Vec<f64> = (0..2 * 3 * 4 * 4).map(|i| ((i * 37 % 11) as f64) * 0.3 + 2.0).collect();
        let x = Tensor::new(v, &[2, 3, 4, 4]).unwrap();
        let y = x
            .layer_norm(&Tensor::full(&[3], 1.0), &Tensor::zeros(&[3]), 1e-12)
            .unwrap()
            .to_vec();
        for s in y.chunks(48) {
            let mean = s.iter().sum::<f64>() / 48.0;
            let var = s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 48.0;
            assert!(mean.abs() < 1e-10);
            assert!((var - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn constant_input_gives_zeros() {
        let x = Tensor::full(&[1, 2, 3, 3], 4.2);
        let y = x.layer_norm(&Tensor::full(&[2], 1.0), &Tensor::zeros(&[2]), 1e-6).unwrap();
        assert!(y.data().iter().all(|&v| v.abs() < 1e-9));
    }

    #[test]
    fn rejects_bad_eps_and_affine_shape() {
        let x = Tensor::zeros(&[1, 2, 2, 2]);
        let g = Tensor::full(&[2], 1.0);
        let b = Tensor::zeros(&[2]);
        assert!(x.layer_norm(&g, &b, 0.0).is_err());
        assert!(x.layer_norm(&Tensor::zeros(&[3]), &b, 1e-5).is_err());
    }
}
