//! Matrix products and softmax.

use std::cell::Cell;

use super::gemm::{gemm, Layout};
use super::{grad_if, Tensor};
use crate::error::{Error, Result};

thread_local! {
    static SOFTMAX_CALLS: Cell<u64> = const { Cell::new(0) };
}

/// Number of softmax forwards evaluated on this thread so far.
pub fn softmax_call_count() -> u64 {
    SOFTMAX_CALLS.with(|c| c.get())
}

impl Tensor {
    /// `[M, K] · [K, N]`, or batched `[B, M, K] · [B, K, N]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (batch, m, k, n, out_shape) = match (self.shape(), other.shape()) {
            ([m, k], [k2, n]) if k == k2 => (1, *m, *k, *n, vec![*m, *n]),
            ([b, m, k], [b2, k2, n]) if b == b2 && k == k2 => (*b, *m, *k, *n, vec![*b, *m, *n]),
            (a, b) => {
                return Err(Error::dim(
                    "matmul",
                    "inner",
                    format!("cannot multiply {a:?} by {b:?}"),
                ))
            }
        };
        let mut data = vec![0.0; batch * m * n];
        {
            let a = self.data();
            let b = other.data();
            for bi in 0..batch {
                gemm(
                    m,
                    k,
                    n,
                    &a[bi * m * k..],
                    Layout::N,
                    &b[bi * k * n..],
                    Layout::N,
                    0.0,
                    &mut data[bi * m * n..(bi + 1) * m * n],
                );
            }
        }
        Ok(Tensor::from_op(out_shape, data, vec![self.clone(), other.clone()], move |p, _, g| {
            let a = p[0].data();
            let b = p[1].data();
            let ga = grad_if(&p[0], || {
                let mut ga = vec![0.0; batch * m * k];
                for bi in 0..batch {
                    // dA = dC · Bᵀ
                    gemm(
                        m,
                        n,
                        k,
                        &g[bi * m * n..],
                        Layout::N,
                        &b[bi * k * n..],
                        Layout::T,
                        0.0,
                        &mut ga[bi * m * k..(bi + 1) * m * k],
                    );
                }
                ga
            });
            let gb = grad_if(&p[1], || {
                let mut gb = vec![0.0; batch * k * n];
                for bi in 0..batch {
                    // dB = Aᵀ · dC
                    gemm(
                        k,
                        m,
                        n,
                        &a[bi * m * k..],
                        Layout::T,
                        &g[bi * m * n..],
                        Layout::N,
                        0.0,
                        &mut gb[bi * k * n..(bi + 1) * k * n],
                    );
                }
                gb
            });
            vec![ga, gb]
        }))
    }

    /// Max-shifted softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        if axis >= self.rank() {
            return Err(Error::dim(
                "softmax",
                format!("axis {axis}"),
                format!("tensor has rank {}", self.rank()),
            ));
        }
        SOFTMAX_CALLS.with(|c| c.set(c.get() + 1));
        let shape = self.shape().to_vec();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let mut data = self.to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let idx = |j: usize| base + j * inner;
                let max = (0..len).map(|j| data[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for j in 0..len {
                    let e = (data[idx(j)] - max).exp();
                    data[idx(j)] = e;
                    total += e;
                }
                for j in 0..len {
                    data[idx(j)] /= total;
                }
            }
        }
        Ok(Tensor::from_op(shape, data, vec![self.clone()], move |p, out, g| {
            let y = out.data();
            vec![grad_if(&p[0], || {
                let mut gx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * len * inner + i;
                        let dot: f64 = (0..len).map(|j| g[base + j * inner] * y[base + j * inner]).sum();
                        for j in 0..len {
                            let t = base + j * inner;
                            gx[t] = y[t] * (g[t] - dot);
                        }
                    }
                }
                gx
            })]
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_softmax() {
        let x = Tensor::full(&[4], 1.7);
        assert_eq!(x.softmax(0).unwrap().to_vec(), vec![0.25; 4]);
    }

    #[test]
    fn softmax_of_zero_and_ln3() {
        let x = Tensor::new(vec![0.0, 3f64.ln()], &[2]).unwrap();
        let y = x.softmax(0).unwrap().to_vec();
        assert!((y[0] - 0.25).abs() < 1e-15);
        assert!((y[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let v: Vec<f64> = (0..12).map(|i| (i as f64 * 1.3).sin() * 3.0).collect();
        let a = Tensor::new(v.clone(), &[3, 4]).unwrap().softmax(1).unwrap().to_vec();
        let b = Tensor::new(v.iter().map(|x| x + 42.5).collect(), &[3, 4])
            .unwrap()
            .softmax(1)
            .unwrap()
            .to_vec();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        for row in a.chunks(4) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_on_middle_axis_normalizes_that_axis() {
        let v: Vec<f64> = (0..24).map(|i| (i as f64 * 0.7).cos()).collect();
        let y = Tensor::new(v, &[2, 3, 4]).unwrap().softmax(1).unwrap().to_vec();
        for b in 0..2 {
            for k in 0..4 {
                let s: f64 = (0..3).map(|j| y[b * 12 + j * 4 + k]).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matmul_rejects_mismatch() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        assert!(a.matmul(&b).is_err());
    }

    #[test]
    fn batched_matmul_small() {
        let a = Tensor::new(vec![1.0, 2.0, 3.0, 4.0], &[2, 1, 2]).unwrap();
        let b = Tensor::new(vec![1.0, 1.0, 2.0, 0.5], &[2, 2, 1]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().to_vec(), vec![3.0, 8.0]);
    }
}
