//! Elementwise ops, reductions and channel broadcasts.

use super::{grad_if, Tensor};
use crate::error::{Error, Result};

fn unary(x: &Tensor, f: impl Fn(f64) -> f64, df: impl Fn(f64, f64) -> f64 + 'static) -> Tensor {
    let data: Vec<f64> = x.data().iter().map(|&v| f(v)).collect();
    Tensor::from_op(x.shape().to_vec(), data, vec![x.clone()], move |p, out, g| {
        let xs = p[0].data();
        let ys = out.data();
        vec![grad_if(&p[0], || {
            xs.iter()
                .zip(ys.iter())
                .zip(g)
                .map(|((&xv, &yv), &gv)| gv * df(xv, yv))
                .collect()
        })]
    })
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.same_shape(other, "add")?;
        let data = self.data().iter().zip(other.data().iter()).map(|(a, b)| a + b).collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            |p, _, g| vec![grad_if(&p[0], || g.to_vec()), grad_if(&p[1], || g.to_vec())],
        ))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.same_shape(other, "sub")?;
        let data = self.data().iter().zip(other.data().iter()).map(|(a, b)| a - b).collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            |p, _, g| {
                vec![
                    grad_if(&p[0], || g.to_vec()),
                    grad_if(&p[1], || g.iter().map(|v| -v).collect()),
                ]
            },
        ))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.same_shape(other, "mul")?;
        let data = self.data().iter().zip(other.data().iter()).map(|(a, b)| a * b).collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            |p, _, g| {
                let a = p[0].data();
                let b = p[1].data();
                vec![
                    grad_if(&p[0], || g.iter().zip(b.iter()).map(|(g, b)| g * b).collect()),
                    grad_if(&p[1], || g.iter().zip(a.iter()).map(|(g, a)| g * a).collect()),
                ]
            },
        ))
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        unary(self, move |v| v + c, |_, _| 1.0)
    }

    pub fn mul_scalar(&self, c: f64) -> Tensor {
        unary(self, move |v| v * c, move |_, _| c)
    }

    pub fn neg(&self) -> Tensor {
        self.mul_scalar(-1.0)
    }

    /// `|x|`, with subgradient 0 at the origin.
    pub fn abs(&self) -> Tensor {
        unary(self, f64::abs, |x, _| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    pub fn relu(&self) -> Tensor {
        unary(self, |v| v.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn leaky_relu(&self, slope: f64) -> Tensor {
        unary(
            self,
            move |v| if v > 0.0 { v } else { slope * v },
            move |x, _| if x > 0.0 { 1.0 } else { slope },
        )
    }

    pub fn sigmoid(&self) -> Tensor {
        unary(self, sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn sum(&self) -> Tensor {
        let s = self.data().iter().sum();
        let n = self.numel();
        Tensor::from_op(vec![], vec![s], vec![self.clone()], move |p, _, g| {
            vec![grad_if(&p[0], || vec![g[0]; n])]
        })
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel();
        let s: f64 = self.data().iter().sum();
        Tensor::from_op(vec![], vec![s / n as f64], vec![self.clone()], move |p, _, g| {
            vec![grad_if(&p[0], || vec![g[0] / n as f64; n])]
        })
    }

    /// One step of the quadratic enhancement curve, `c + a·c·(1 − c)`.
    pub fn curve_step(&self, a: &Tensor) -> Result<Tensor> {
        self.same_shape(a, "curve_step")?;
        let data = self
            .data()
            .iter()
            .zip(a.data().iter())
            .map(|(&c, &a)| c + a * c * (1.0 - c))
            .collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), a.clone()],
            |p, _, g| {
                let c = p[0].data();
                let a = p[1].data();
                vec![
                    grad_if(&p[0], || {
                        g.iter()
                            .zip(c.iter().zip(a.iter()))
                            .map(|(g, (&c, &a))| g * (1.0 + a * (1.0 - 2.0 * c)))
                            .collect()
                    }),
                    grad_if(&p[1], || {
                        g.iter().zip(c.iter()).map(|(g, &c)| g * c * (1.0 - c)).collect()
                    }),
                ]
            },
        ))
    }

    /// Multiplies each channel of a `[B, C, H, W]` map by a scale.
    ///
    /// `scale` is either per-sample `[B, C, 1, 1]` or shared `[C]`.
    pub fn channel_scale(&self, scale: &Tensor) -> Result<Tensor> {
        let [b, c, h, w] = self.dims4("channel_scale")?;
        let shared = match scale.shape() {
            [sc] if *sc == c => true,
            [sb, sc, 1, 1] if *sb == b && *sc == c => false,
            s => {
                return Err(Error::dim(
                    "channel_scale",
                    "scale",
                    format!("expected [{c}] or [{b}, {c}, 1, 1], got {s:?}"),
                ))
            }
        };
        let hw = h * w;
        let sidx = move |bi: usize, ci: usize| if shared { ci } else { bi * c + ci };
        let mut data = self.to_vec();
        {
            let s = scale.data();
            for bi in 0..b {
                for ci in 0..c {
                    let k = s[sidx(bi, ci)];
                    let off = (bi * c + ci) * hw;
                    data[off..off + hw].iter_mut().for_each(|v| *v *= k);
                }
            }
        }
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), scale.clone()],
            move |p, _, g| {
                let x = p[0].data();
                let s = p[1].data();
                let gx = grad_if(&p[0], || {
                    let mut gx = g.to_vec();
                    for bi in 0..b {
                        for ci in 0..c {
                            let k = s[sidx(bi, ci)];
                            let off = (bi * c + ci) * hw;
                            gx[off..off + hw].iter_mut().for_each(|v| *v *= k);
                        }
                    }
                    gx
                });
                let gs = grad_if(&p[1], || {
                    let mut gs = vec![0.0; s.len()];
                    for bi in 0..b {
                        for ci in 0..c {
                            let off = (bi * c + ci) * hw;
                            let dot: f64 = g[off..off + hw]
                                .iter()
                                .zip(&x[off..off + hw])
                                .map(|(a, b)| a * b)
                                .sum();
                            gs[sidx(bi, ci)] += dot;
                        }
                    }
                    gs
                });
                vec![gx, gs]
            },
        ))
    }

    /// `[B, C, H, W] -> [B, C, 1, 1]` spatial mean.
    pub fn global_avg_pool(&self) -> Result<Tensor> {
        let [b, c, h, w] = self.dims4("global_avg_pool")?;
        let hw = h * w;
        let data: Vec<f64> = self
            .data()
            .chunks(hw)
            .map(|ch| ch.iter().sum::<f64>() / hw as f64)
            .collect();
        Ok(Tensor::from_op(vec![b, c, 1, 1], data, vec![self.clone()], move |p, _, g| {
            vec![grad_if(&p[0], || {
                g.iter().flat_map(|&gv| std::iter::repeat_n(gv / hw as f64, hw)).collect()
            })]
        }))
    }

    /// Forward value of `target`, gradient passed unchanged to `self`.
    ///
    /// This is the pass-through rule that lets a reconstruction loss reach
    /// the encoder across a non-differentiable quantizer.
    pub fn pass_through(&self, target: &Tensor) -> Result<Tensor> {
        self.same_shape(target, "pass_through")?;
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            target.to_vec(),
            vec![self.clone()],
            |p, _, g| vec![grad_if(&p[0], || g.to_vec())],
        ))
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn global_avg_pool_of_constant() {
        let x = Tensor::full(&[2, 3, 4, 5], 0.75);
        let y = x.global_avg_pool().unwrap();
        assert_eq!(y.shape(), &[2, 3, 1, 1]);
        assert!(y.data().iter().all(|&v| v == 0.75));
    }

    #[test]
    fn curve_step_is_identity_at_zero() {
        let x = Tensor::new(vec![-0.3, 0.2, 0.9, 4.0], &[4]).unwrap();
        let a = Tensor::zeros(&[4]);
        assert_eq!(x.curve_step(&a).unwrap().to_vec(), x.to_vec());
    }

    #[test]
    fn sigmoid_is_stable_for_large_inputs() {
        assert_eq!(sigmoid(1000.0), 1.0);
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(0.0), 0.5);
    }

    #[test]
    fn channel_scale_shapes() {
        let x = Tensor::full(&[1, 2, 2, 2], 1.0);
        let s = Tensor::new(vec![2.0, 3.0], &[2]).unwrap();
        let y = x.channel_scale(&s).unwrap();
        assert_eq!(y.to_vec(), vec![2.0, 2.0, 2.0, 2.0, 3.0, 3.0, 3.0, 3.0]);
        assert!(x.channel_scale(&Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn pass_through_forwards_target_and_routes_grad() {
        let x = Tensor::param(vec![1.0, 2.0], &[2]).unwrap();
        let t = Tensor::new(vec![5.0, 6.0], &[2]).unwrap();
        let y = x.pass_through(&t).unwrap();
        assert_eq!(y.to_vec(), vec![5.0, 6.0]);
        y.mul_scalar(3.0).sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![3.0, 3.0]);
    }
}
