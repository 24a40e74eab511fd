//! Named finite-difference cases covering every differentiable operation
//! and module, each on three random shapes.

use rand::Rng as _;

use super::{check_against, CheckOptions, TOLERANCE};
use crate::aiem::{curve_map, Aiem, CurveEstimator, CurveParams, Hie, HieConfig, ImaConv, ImaConvConfig};
use crate::codebook::{code_alignment_loss, codebook_learning_loss, Codebook, COMMITMENT_BETA};
use crate::dbca::{Dbca, DbcaConfig};
use crate::error::{Error, Result};
use crate::model::loss::{discriminator_hinge, generator_hinge};
use crate::model::{perceptual_loss, pixel_loss, total_loss, Discriminator, Encoder, LossParts, LossWeights, ModelConfig};
use crate::nn::{named_params, Module};
use crate::rng::{self, Rng};
use crate::tensor::{Conv2dOptions, ConvTranspose2dOptions, Tensor};

/// Gradient scale applied by the fault-injection wrapper.
pub const FAULT_FACTOR: f64 = 1.0 + 1e-2;

/// Shapes tried per case.
pub const VARIANTS: usize = 3;

type Forward = Box<dyn Fn() -> Result<Tensor>>;

/// Inputs to differentiate and the function of them.
struct Built {
    inputs: Vec<Tensor>,
    f: Forward,
    /// Stop-gradient-free surrogate for the finite differences.
    surrogate: Option<Forward>,
}

type Builder = fn(&mut Rng, usize) -> Result<Built>;

#[derive(Clone, Debug, PartialEq)]
pub struct CaseResult {
    pub name: &'static str,
    /// Max relative error over all variants.
    pub max_error: f64,
    pub variants: usize,
}

impl CaseResult {
    pub fn passed(&self) -> bool {
        self.max_error < TOLERANCE
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SuiteResult {
    pub cases: Vec<CaseResult>,
}

impl SuiteResult {
    pub fn all_passed(&self) -> bool {
        self.cases.iter().all(CaseResult::passed)
    }

    pub fn failures(&self) -> Vec<&CaseResult> {
        self.cases.iter().filter(|c| !c.passed()).collect()
    }
}

fn uniform(r: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new((0..n).map(|_| r.random_range(lo..hi)).collect(), shape).expect("shape matches data")
}

fn randn(r: &mut Rng, shape: &[usize]) -> Tensor {
    uniform(r, shape, -1.0, 1.0)
}

/// Values bounded away from zero so kinks at 0 are not straddled.
fn away_from_zero(r: &mut Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let v = (0..n)
        .map(|_| {
            let m = r.random_range(0.05..1.0);
            if r.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(v, shape).expect("shape matches data")
}

/// Overwrites every parameter with uniform noise in `±scale` so no branch
/// is silenced by a zero initialization.
fn randomize(m: &dyn Module, r: &mut Rng, scale: f64) {
    m.visit_params("", &mut |_, t| {
        t.data_mut().iter_mut().for_each(|v| *v = r.random_range(-scale..scale));
    });
}

fn params_of(m: &dyn Module) -> Vec<Tensor> {
    named_params(m, "").into_iter().map(|(_, t)| t).collect()
}

fn conv2d(r: &mut Rng, v: usize) -> Result<Built> {
    let (b, cin, cout, h, w, k, opts) = match v {
        0 => (1, 2, 3, 5, 6, 3, Conv2dOptions::padded(1)),
        1 => (
            2,
            4,
            4,
            7,
            5,
            3,
            Conv2dOptions {
                stride: 2,
                padding: 1,
                dilation: 1,
                groups: 2,
            },
        ),
        _ => (
            1,
            3,
            2,
            8,
            8,
            3,
            Conv2dOptions {
                stride: 1,
                padding: 2,
                dilation: 2,
                groups: 1,
            },
        ),
    };
    let x = randn(r, &[b, cin, h, w]);
    let wt = randn(r, &[cout, cin / opts.groups, k, k]);
    let bias = randn(r, &[cout]);
    let (a, c, d) = (x.clone(), wt.clone(), bias.clone());
    Ok(Built {
        inputs: vec![x, wt, bias],
        f: Box::new(move || a.conv2d(&c, Some(&d), opts)),
        surrogate: None,
    })
}

fn conv_transpose2d(r: &mut Rng, v: usize) -> Result<Built> {
    let (b, cin, cout, h, w, k, stride, padding) = [
        (1, 2, 3, 3, 4, 4, 2, 1),
        (2, 3, 2, 4, 4, 3, 1, 1),
        (1, 2, 2, 2, 3, 3, 2, 0),
    ][v];
    let opts = ConvTranspose2dOptions {
        stride,
        padding,
        output_padding: 0,
    };
    let x = randn(r, &[b, cin, h, w]);
    let wt = randn(r, &[cin, cout, k, k]);
    let bias = randn(r, &[cout]);
    let (a, c, d) = (x.clone(), wt.clone(), bias.clone());
    Ok(Built {
        inputs: vec![x, wt, bias],
        f: Box::new(move || a.conv_transpose2d(&c, Some(&d), opts)),
        surrogate: None,
    })
}

fn deform_conv2d(r: &mut Rng, v: usize) -> Result<Built> {
    let (b, cin, cout, h, w, k) = [(1, 2, 2, 4, 5, 3), (2, 3, 2, 5, 4, 3), (1, 1, 2, 6, 6, 5)][v];
    let x = randn(r, &[b, cin, h, w]);
    let off = uniform(r, &[b, 2 * k * k, h, w], -1.5, 1.5);
    let wt = randn(r, &[cout, cin, k, k]);
    let bias = randn(r, &[cout]);
    let (a, o, c, d) = (x.clone(), off.clone(), wt.clone(), bias.clone());
    Ok(Built {
        inputs: vec![x, off, wt, bias],
        f: Box::new(move || a.deform_conv2d(&o, &c, Some(&d))),
        surrogate: None,
    })
}

fn layer_norm(r: &mut Rng, v: usize) -> Result<Built> {
    let shape = [[1, 2, 3, 3], [2, 3, 2, 4], [1, 4, 1, 5]][v];
    let x = randn(r, &shape);
    let g = randn(r, &[shape[1]]);
    let b = randn(r, &[shape[1]]);
    let (a, c, d) = (x.clone(), g.clone(), b.clone());
    Ok(Built {
        inputs: vec![x, g, b],
        f: Box::new(move || a.layer_norm(&c, &d, 1e-5)),
        surrogate: None,
    })
}

fn softmax(r: &mut Rng, v: usize) -> Result<Built> {
    let (shape, axis): (Vec<usize>, usize) = [(vec![3, 4], 1), (vec![2, 3, 5], 2), (vec![4, 2, 3], 0)][v].clone();
    let x = uniform(r, &shape, -3.0, 3.0);
    let a = x.clone();
    Ok(Built {
        inputs: vec![x],
        f: Box::new(move || a.softmax(axis)),
        surrogate: None,
    })
}

fn matmul(r: &mut Rng, v: usize) -> Result<Built> {
    let (sa, sb): (Vec<usize>, Vec<usize>) = [
        (vec![3, 4], vec![4, 2]),
        (vec![2, 3, 5], vec![2, 5, 4]),
        (vec![1, 1, 6], vec![1, 6, 1]),
    ][v]
        .clone();
    let a = randn(r, &sa);
    let b = randn(r, &sb);
    let (x, y) = (a.clone(), b.clone());
    Ok(Built {
        inputs: vec![a, b],
        f: Box::new(move || x.matmul(&y)),
        surrogate: None,
    })
}

fn shape4(v: usize) -> [usize; 4] {
    [[1, 2, 3, 3], [2, 3, 2, 4], [1, 4, 4, 2]][v]
}

fn pointwise_binary(r: &mut Rng, v: usize) -> Result<Built> {
    let s = shape4(v);
    let a = randn(r, &s);
    let b = randn(r, &s);
    let (x, y) = (a.clone(), b.clone());
    Ok(Built {
        inputs: vec![a, b],
        f: Box::new(move || x.add(&y)?.mul(&x.sub(&y)?)?.mul_scalar(0.7).add_scalar(0.1).neg().mul(&y)),
        surrogate: None,
    })
}

fn activations(r: &mut Rng, v: usize) -> Result<Built> {
    let s = shape4(v);
    let a = away_from_zero(r, &s);
    let x = a.clone();
    Ok(Built {
        inputs: vec![a],
        f: Box::new(move || {
            let parts = [x.abs(), x.relu(), x.leaky_relu(0.2), x.mul_scalar(3.0).sigmoid()];
            Tensor::channel_concat(&parts)
        }),
        surrogate: None,
    })
}

fn reductions(r: &mut Rng, v: usize) -> Result<Built> {
    let s = shape4(v);
    let a = randn(r, &s);
    let scale = randn(r, &[s[1]]);
    let (x, c) = (a.clone(), scale.clone());
    Ok(Built {
        inputs: vec![a, scale],
        f: Box::new(move || {
            let scaled = x.channel_scale(&c)?.channel_scale(&x.global_avg_pool()?)?;
            let flat = scaled.reshape(&[1, scaled.numel(), 1, 1])?;
            let moments = x.sum().mul(&x.mean())?.reshape(&[1, 1, 1, 1])?;
            Tensor::channel_concat(&[flat, moments])
        }),
        surrogate: None,
    })
}

fn shape_ops(r: &mut Rng, v: usize) -> Result<Built> {
    let s = [[1, 4, 2, 3], [2, 6, 3, 2], [1, 2, 2, 2]][v];
    let a = randn(r, &s);
    let x = a.clone();
    Ok(Built {
        inputs: vec![a],
        f: Box::new(move || {
            let halves = x.chunk_channels(2)?;
            let swapped = Tensor::channel_concat(&[halves[1].clone(), halves[0].clone()])?;
            let narrowed = swapped.narrow_channels(1, s[1] - 1)?;
            let up = narrowed.nearest_upsample(2)?;
            let [b, c, h, w] = up.dims4("shape_ops")?;
            up.reshape(&[b, c, h * w])?.transpose_last()
        }),
        surrogate: None,
    })
}

fn curve_map_case(r: &mut Rng, v: usize) -> Result<Built> {
    let (s, order) = [([1, 2, 3, 3], 1), ([2, 1, 4, 2], 4), ([1, 3, 2, 2], 8)][v];
    let x = uniform(r, &s, 0.0, 1.0);
    let maps: Vec<Tensor> = (0..order).map(|_| uniform(r, &s, 0.0, 1.0)).collect();
    let mut inputs = vec![x.clone()];
    inputs.extend(maps.iter().cloned());
    Ok(Built {
        inputs,
        f: Box::new(move || curve_map(&x, &CurveParams { maps: maps.clone() })),
        surrogate: None,
    })
}

fn curve_estimate(r: &mut Rng, v: usize) -> Result<Built> {
    let (c, s, n, h, w) = [(4, 2, 2, 3, 3), (6, 3, 3, 4, 2), (8, 4, 4, 2, 3)][v];
    let cfg = ImaConvConfig::new(c, s, n);
    let est = CurveEstimator::new(r, &cfg)?;
    randomize(&est, r, 0.5);
    let comp = randn(r, &[1, cfg.complement_channels(), h, w]);
    let mut inputs = vec![comp.clone()];
    inputs.extend(params_of(&est));
    Ok(Built {
        inputs,
        f: Box::new(move || Tensor::channel_concat(&est.forward(&comp)?.maps)),
        surrogate: None,
    })
}

fn imaconv(r: &mut Rng, v: usize) -> Result<Built> {
    let (c, s, n, h, w) = [(4, 2, 2, 3, 3), (6, 3, 2, 2, 4), (8, 4, 3, 3, 2)][v];
    let m = ImaConv::new(r, ImaConvConfig::new(c, s, n))?;
    randomize(&m, r, 0.5);
    let x = uniform(r, &[1, c, h, w], 0.0, 1.0);
    let mut inputs = vec![x.clone()];
    inputs.extend(params_of(&m));
    Ok(Built {
        inputs,
        f: Box::new(move || m.forward(&x)),
        surrogate: None,
    })
}

fn hie(r: &mut Rng, v: usize) -> Result<Built> {
    let (c, h, w) = [(2, 3, 3), (4, 4, 3), (6, 2, 5)][v];
    let m = Hie::new(r, HieConfig::new(c))?;
    randomize(&m, r, 0.5);
    let x = randn(r, &[1, c, h, w]);
    let mut inputs = vec![x.clone()];
    inputs.extend(params_of(&m));
    Ok(Built {
        inputs,
        f: Box::new(move || m.forward(&x)),
        surrogate: None,
    })
}

fn aiem(r: &mut Rng, v: usize) -> Result<Built> {
    let (c, s, n, h, w) = [(4, 2, 2, 3, 3), (6, 3, 2, 2, 3), (8, 4, 4, 3, 2)][v];
    let m = Aiem::new(r, c, s, n)?;
    randomize(&m, r, 0.4);
    let x = randn(r, &[1, c, h, w]);
    let mut inputs = vec![x.clone()];
    inputs.extend(params_of(&m));
    Ok(Built {
        inputs,
        f: Box::new(move || m.forward(&x)),
        surrogate: None,
    })
}

fn dbca_block(r: &mut Rng, v: usize) -> Result<(Dbca, Tensor, Tensor)> {
    let (b, c, h, w) = [(1, 2, 3, 3), (2, 3, 3, 4), (1, 4, 4, 4)][v];
    let m = Dbca::new(r, DbcaConfig::new(c))?;
    randomize(&m, r, 0.4);
    Ok((m, randn(r, &[b, c, h, w]), randn(r, &[b, c, h, w])))
}

fn cross_attention(r: &mut Rng, v: usize) -> Result<Built> {
    let (m, fd, fg) = dbca_block(r, v)?;
    let mut inputs = vec![fd.clone(), fg.clone()];
    inputs.extend(params_of(&m));
    Ok(Built {
        inputs,
        f: Box::new(move || {
            let att = m.cross_attention(&fd, &fg)?;
            Tensor::channel_concat(&[att.fd_out, att.fg_out])
        }),
        surrogate: None,
    })
}

fn offset_estimate(r: &mut Rng, v: usize) -> Result<Built> {
    let (m, fd, fg) = dbca_block(r, v)?;
    let mut inputs = vec![fd.clone(), fg.clone()];
    inputs.extend(params_of(&m.offset));
    Ok(Built {
        inputs,
        f: Box::new(move || m.offset_estimate(&fd, &fg)),
        surrogate: None,
    })
}

fn dbca(r: &mut Rng, v: usize) -> Result<Built> {
    let (m, fd, fg) = dbca_block(r, v)?;
    // Larger offsets exercise the deformable sampling path.
    m.offset.weight.data_mut().iter_mut().for_each(|x| *x *= 2.0);
    let mut inputs = vec![fd.clone(), fg.clone()];
    inputs.extend(params_of(&m));
    Ok(Built {
        inputs,
        f: Box::new(move || m.forward(&fd, &fg)),
        surrogate: None,
    })
}

fn codebook_case(r: &mut Rng, v: usize) -> Result<(Codebook, Tensor)> {
    let (k, d, b, h, w) = [(5, 2, 1, 3, 3), (7, 3, 2, 2, 2), (3, 4, 1, 2, 4)][v];
    let cb = Codebook::new(r, k, d)?;
    randomize(&cb, r, 1.0);
    Ok((cb, randn(r, &[b, d, h, w])))
}

fn codebook_lookup(r: &mut Rng, v: usize) -> Result<Built> {
    let (cb, z) = codebook_case(r, v)?;
    let q = cb.quantize(&z)?;
    let (idx, grid) = (q.indices, q.grid);
    Ok(Built {
        inputs: vec![cb.entries.clone()],
        f: Box::new(move || cb.lookup(&idx, grid)),
        surrogate: None,
    })
}

fn pass_through(r: &mut Rng, v: usize) -> Result<Built> {
    let s = shape4(v);
    let a = randn(r, &s);
    let target = randn(r, &s);
    // Same value as the pass-through: x plus the frozen difference to target.
    let shift = target.sub(&a)?.detach();
    let (x, y) = (a.clone(), a.clone());
    Ok(Built {
        inputs: vec![a],
        f: Box::new(move || x.pass_through(&target)?.mul(&x)),
        surrogate: Some(Box::new(move || y.add(&shift)?.mul(&y))),
    })
}

fn codebook_loss(r: &mut Rng, v: usize) -> Result<Built> {
    let (cb, z) = codebook_case(r, v)?;
    let q = cb.quantize(&z)?;
    let (idx, grid) = (q.indices.clone(), q.grid);
    let frozen_z = z.detach();
    let frozen_q = q.quantized.detach();
    let cb = std::rc::Rc::new(cb);
    let (latent, book) = (z.clone(), cb.clone());
    let (latent2, idx2) = (z.clone(), idx.clone());
    Ok(Built {
        inputs: vec![z, cb.entries.clone()],
        f: Box::new(move || {
            let result = crate::codebook::QuantizationResult {
                quantized: book.lookup(&idx, grid)?,
                indices: idx.clone(),
                grid,
            };
            codebook_learning_loss(&latent, &result, COMMITMENT_BETA)
        }),
        surrogate: Some(Box::new(move || {
            let d1 = cb.lookup(&idx2, grid)?.sub(&frozen_z)?;
            let d2 = latent2.sub(&frozen_q)?;
            d1.mul(&d1)?.mean().add(&d2.mul(&d2)?.mean().mul_scalar(COMMITMENT_BETA))
        })),
    })
}

fn code_alignment(r: &mut Rng, v: usize) -> Result<Built> {
    let s = shape4(v);
    let a = randn(r, &s);
    let t = randn(r, &s);
    let x = a.clone();
    Ok(Built {
        inputs: vec![a],
        f: Box::new(move || code_alignment_loss(&x, &t)),
        surrogate: None,
    })
}

fn image_pair(r: &mut Rng, v: usize) -> (Tensor, Tensor) {
    let (b, h, w) = [(1, 16, 16), (2, 16, 32), (1, 32, 16)][v];
    let restored = uniform(r, &[b, 3, h, w], 0.0, 1.0);
    // Offset keeps |restored − gt| away from the L1 kink.
    let gt = restored.add(&away_from_zero(r, &[b, 3, h, w]).mul_scalar(0.2)).expect("same shape");
    (restored, gt.detach())
}

fn pixel(r: &mut Rng, v: usize) -> Result<Built> {
    let (x, gt) = image_pair(r, v);
    let a = x.clone();
    Ok(Built {
        inputs: vec![x],
        f: Box::new(move || pixel_loss(&a, &gt)),
        surrogate: None,
    })
}

fn tiny_config() -> ModelConfig {
    ModelConfig {
        base_channels: 2,
        num_scales: 2,
        code_dim: 4,
        codebook_size: 4,
        curve_splits: 2,
        curve_order: 2,
        ..Default::default()
    }
}

fn perceptual(r: &mut Rng, v: usize) -> Result<Built> {
    let enc = Encoder::new(r, &tiny_config())?;
    randomize(&enc, r, 0.5);
    crate::nn::set_trainable(&enc, false);
    let (x, gt) = image_pair(r, v);
    let a = x.clone();
    Ok(Built {
        inputs: vec![x],
        f: Box::new(move || perceptual_loss(&a, &gt, &enc)),
        surrogate: None,
    })
}

fn adversarial_generator(r: &mut Rng, v: usize) -> Result<Built> {
    let disc = Discriminator::new(r, 2)?;
    randomize(&disc, r, 0.5);
    let (x, _) = image_pair(r, v);
    let a = x.clone();
    let mut inputs = vec![x];
    inputs.extend(params_of(&disc));
    Ok(Built {
        inputs,
        f: Box::new(move || generator_hinge(&disc, &a)),
        surrogate: None,
    })
}

fn adversarial_discriminator(r: &mut Rng, v: usize) -> Result<Built> {
    let disc = Discriminator::new(r, 2)?;
    randomize(&disc, r, 0.5);
    let (fake, real) = image_pair(r, v);
    Ok(Built {
        inputs: params_of(&disc),
        f: Box::new(move || discriminator_hinge(&disc, &fake, &real)),
        surrogate: None,
    })
}

fn total(r: &mut Rng, v: usize) -> Result<Built> {
    let parts: Vec<Tensor> = (0..4).map(|_| randn(r, &[1])).collect();
    let w = [
        LossWeights::default(),
        LossWeights {
            pix: 0.3,
            ca: 2.0,
            per: 0.0,
            adv: 0.5,
        },
        LossWeights {
            pix: 1.5,
            ca: 0.25,
            per: 0.8,
            adv: 0.01,
        },
    ][v];
    let p = parts.clone();
    Ok(Built {
        inputs: parts,
        f: Box::new(move || {
            let lp = LossParts {
                pix: p[0].clone(),
                ca: p[1].clone(),
                per: p[2].clone(),
                adv: p[3].clone(),
            };
            total_loss(&lp, &w)
        }),
        surrogate: None,
    })
}

const CASES: &[(&str, Builder)] = &[
    ("conv2d", conv2d),
    ("conv_transpose2d", conv_transpose2d),
    ("deform_conv2d", deform_conv2d),
    ("layer_norm", layer_norm),
    ("softmax", softmax),
    ("matmul", matmul),
    ("pointwise_binary", pointwise_binary),
    ("activations", activations),
    ("reductions", reductions),
    ("shape_ops", shape_ops),
    ("curve_map", curve_map_case),
    ("curve_estimate", curve_estimate),
    ("imaconv_forward", imaconv),
    ("hie_forward", hie),
    ("aiem_forward", aiem),
    ("bidirectional_cross_attention", cross_attention),
    ("offset_estimate", offset_estimate),
    ("dbca_forward", dbca),
    ("codebook_lookup", codebook_lookup),
    ("pass_through", pass_through),
    ("codebook_learning_loss", codebook_loss),
    ("code_alignment_loss", code_alignment),
    ("pixel_loss", pixel),
    ("perceptual_loss", perceptual),
    ("adversarial_loss_generator", adversarial_generator),
    ("adversarial_loss_discriminator", adversarial_discriminator),
    ("total_loss", total),
];

pub fn case_names() -> Vec<&'static str> {
    CASES.iter().map(|(n, _)| *n).collect()
}

/// Identity whose backward scales the incoming gradient.
fn perturbed_identity(x: &Tensor, factor: f64) -> Tensor {
    Tensor::from_op(x.shape().to_vec(), x.to_vec(), vec![x.clone()], move |_, _, g| {
        vec![Some(g.iter().map(|v| v * factor).collect())]
    })
}

/// Runs all cases (or the one named by `filter`). `fault` names a case whose
/// backward is deliberately corrupted; that case must then fail.
pub fn run_suite(filter: Option<&str>, seed: u64, fault: Option<&str>) -> Result<SuiteResult> {
    for name in filter.iter().chain(fault.iter()) {
        if !CASES.iter().any(|(n, _)| n == name) {
            return Err(Error::Config(format!("unknown gradcheck case `{name}`")));
        }
    }
    let mut out = SuiteResult::default();
    for (ci, &(name, build)) in CASES.iter().enumerate() {
        if filter.is_some_and(|f| f != name) {
            continue;
        }
        let mut worst: f64 = 0.0;
        for v in 0..VARIANTS {
            let case_seed = rng::child_seed(seed, (ci * VARIANTS + v) as u64);
            let mut r = rng::stream(case_seed, 0);
            let built = build(&mut r, v)?;
            let opts = CheckOptions {
                seed: case_seed,
                ..Default::default()
            };
            let numeric: &dyn Fn() -> Result<Tensor> = match &built.surrogate {
                Some(s) => &**s,
                None => &*built.f,
            };
            let err = if fault == Some(name) {
                let f = &built.f;
                let corrupted = move || Ok(perturbed_identity(&f()?, FAULT_FACTOR));
                check_against(&corrupted, numeric, &built.inputs, opts)?
            } else {
                check_against(&*built.f, numeric, &built.inputs, opts)?
            };
            worst = worst.max(err);
        }
        out.cases.push(CaseResult {
            name,
            max_error: worst,
            variants: VARIANTS,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let mut names = case_names();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), CASES.len());
    }

    #[test]
    fn unknown_filter_is_rejected() {
        assert!(matches!(run_suite(Some("nope"), 0, None), Err(Error::Config(_))));
    }

    #[test]
    fn injected_fault_is_detected() {
        let r = run_suite(Some("matmul"), 1, Some("matmul")).unwrap();
        assert!(!r.all_passed());
        let clean = run_suite(Some("matmul"), 1, None).unwrap();
        assert!(clean.all_passed(), "{:?}", clean);
    }
}
