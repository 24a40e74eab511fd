mod common;

use common::{brute_force_nearest, naive_conv2d, scalar_curve, uniform};
use proptest::prelude::*;
use vqcnir::aiem::{curve_map, CurveParams, ImaConv, ImaConvConfig};
use vqcnir::codebook::Codebook;
use vqcnir::data::{degrade, ppm, psnr, ssim, BlurKernel, DegradationParams, ImageRGB};
use vqcnir::dbca::{Dbca, DbcaConfig};
use vqcnir::model::{total_loss, LossParts, LossWeights};
use vqcnir::rng;
use vqcnir::tensor::Conv2dOptions;
use vqcnir::Tensor;

fn image_strategy(max_side: usize) -> impl Strategy<Value = ImageRGB> {
    (1..=max_side, 1..=max_side).prop_flat_map(|(w, h)| {
        prop::collection::vec(0.0..=1.0f64, w * h * 3).prop_map(move |p| ImageRGB::new(w, h, p).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_normalizes_and_ignores_shifts(
        rows in 1usize..5,
        cols in 1usize..9,
        seed in any::<u64>(),
        shift in -50.0..50.0f64,
    ) {
        let x = uniform(&[rows, cols], -20.0, 20.0, seed);
        let s = x.softmax(1).unwrap().to_vec();
        for row in s.chunks(cols) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
        let shifted = x.add_scalar(shift).softmax(1).unwrap().to_vec();
        for (a, b) in s.iter().zip(&shifted) {
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-300) + 1e-15);
        }
    }

    #[test]
    fn zero_offset_deform_equals_conv(
        c in 1usize..4,
        cout in 1usize..4,
        h in 1usize..7,
        w in 1usize..7,
        k in prop::sample::select(vec![1usize, 3, 5]),
        seed in any::<u64>(),
    ) {
        let x = uniform(&[2, c, h, w], -1.0, 1.0, seed);
        let wt = uniform(&[cout, c, k, k], -1.0, 1.0, seed ^ 1);
        let bias = uniform(&[cout], -1.0, 1.0, seed ^ 2);
        let off = Tensor::zeros(&[2, 2 * k * k, h, w]);
        let got = x.deform_conv2d(&off, &wt, Some(&bias)).unwrap().to_vec();
        let want = naive_conv2d(&x, &wt, Some(&bias), k / 2);
        let lib = x.conv2d(&wt, Some(&bias), Conv2dOptions::padded(k / 2)).unwrap().to_vec();
        for ((a, b), l) in got.iter().zip(&want).zip(&lib) {
            prop_assert!((a - b).abs() <= 1e-12);
            prop_assert!((a - l).abs() <= 1e-12);
        }
    }

    #[test]
    fn quantization_is_optimal_idempotent_and_tie_stable(
        k in 1usize..17,
        dim in 1usize..5,
        positions in 1usize..10,
        dup_from in 0usize..16,
        seed in any::<u64>(),
    ) {
        let mut entries = uniform(&[k, dim], -1.0, 1.0, seed).to_vec();
        if k > 1 {
            // Duplicate one row into the last slot so some queries tie exactly.
            let src = dup_from % (k - 1);
            let row: Vec<f64> = entries[src * dim..(src + 1) * dim].to_vec();
            entries[(k - 1) * dim..].copy_from_slice(&row);
        }
        let rows: Vec<Vec<f64>> = entries.chunks(dim).map(<[f64]>::to_vec).collect();
        let book = Codebook::from_entries(Tensor::new(entries, &[k, dim]).unwrap()).unwrap();
        let z = uniform(&[1, dim, 1, positions], -1.5, 1.5, seed ^ 3);
        let q = book.quantize(&z).unwrap();
        let zd = z.to_vec();
        for p in 0..positions {
            let v: Vec<f64> = (0..dim).map(|c| zd[c * positions + p]).collect();
            let idx = q.indices[p];
            prop_assert_eq!(idx, brute_force_nearest(&rows, &v));
            let d = |e: &[f64]| e.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            for r in &rows {
                prop_assert!(d(&rows[idx]) <= d(r));
            }
            prop_assert!(idx != k - 1 || k == 1 || rows[k - 1] != rows[dup_from % (k - 1)]);
        }
        let again = book.quantize(&q.quantized).unwrap();
        prop_assert_eq!(again.quantized.to_vec(), q.quantized.to_vec());
    }

    #[test]
    fn curve_map_stays_in_unit_interval(
        order in 1usize..9,
        n in 1usize..32,
        seed in any::<u64>(),
    ) {
        let x = uniform(&[n], 0.0, 1.0, seed);
        let maps: Vec<Tensor> = (0..order).map(|i| uniform(&[n], 0.0, 1.0, seed ^ (i as u64 + 10))).collect();
        let y = curve_map(&x, &CurveParams { maps: maps.clone() }).unwrap().to_vec();
        let xd = x.to_vec();
        for (i, v) in y.iter().enumerate() {
            prop_assert!((0.0..=1.0).contains(v));
            let a: Vec<f64> = maps.iter().map(|m| m.data()[i]).collect();
            prop_assert!((v - scalar_curve(xd[i], &a)).abs() <= 1e-15);
        }
    }

    #[test]
    fn order_one_curve_preserves_sorted_order(a in 0.0..=1.0f64, seed in any::<u64>()) {
        let mut xs = uniform(&[64], 0.0, 1.0, seed).to_vec();
        xs.sort_by(f64::total_cmp);
        let x = Tensor::new(xs, &[64]).unwrap();
        let y = curve_map(&x, &CurveParams { maps: vec![Tensor::full(&[64], a)] }).unwrap().to_vec();
        prop_assert!(y.windows(2).all(|p| p[0] <= p[1]));
    }

    #[test]
    fn zero_curve_is_bit_exact_identity(order in 1usize..9, seed in any::<u64>()) {
        let x = uniform(&[3, 5], -2.0, 2.0, seed);
        let maps = vec![Tensor::zeros(&[3, 5]); order];
        let y = curve_map(&x, &CurveParams { maps }).unwrap();
        prop_assert_eq!(y.to_vec(), x.to_vec());
    }

    #[test]
    fn complement_partitions_channels(splits in 2usize..6, part in 1usize..4, i in 0usize..6) {
        let i = i % splits;
        let parts: Vec<Tensor> = (0..splits)
            .map(|j| {
                let vals: Vec<f64> = (0..part).map(|c| (j * part + c) as f64).collect();
                Tensor::new(vals, &[1, part, 1, 1]).unwrap()
            })
            .collect();
        let comp = ImaConv::complement(&parts, i).unwrap().to_vec();
        let mut all: Vec<f64> = comp.iter().chain(parts[i].data().iter()).copied().collect();
        all.sort_by(f64::total_cmp);
        let expected: Vec<f64> = (0..splits * part).map(|c| c as f64).collect();
        prop_assert_eq!(all, expected);
    }

    #[test]
    fn attention_rows_are_distributions(c in 1usize..6, h in 1usize..5, w in 1usize..5, seed in any::<u64>()) {
        let mut r = rng::stream(seed, 0);
        let block = Dbca::new(&mut r, DbcaConfig::new(c)).unwrap();
        let fd = uniform(&[1, c, h, w], -3.0, 3.0, seed ^ 4);
        let fg = uniform(&[1, c, h, w], -3.0, 3.0, seed ^ 5);
        let att = block.cross_attention(&fd, &fg).unwrap();
        for row in att.attention.data().chunks(c) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
        prop_assert_eq!(block.forward(&fd, &fg).unwrap().to_vec(), fd.to_vec());
    }

    #[test]
    fn total_loss_is_weighted_sum(parts in prop::array::uniform4(-10.0..10.0f64), weights in prop::array::uniform4(0.0..3.0f64)) {
        let w = LossWeights { pix: weights[0], ca: weights[1], per: weights[2], adv: weights[3] };
        let got = total_loss(&LossParts::from_values(parts[0], parts[1], parts[2], parts[3]), &w).unwrap().item();
        let want: f64 = parts.iter().zip(&weights).map(|(p, w)| p * w).sum();
        prop_assert!((got - want).abs() <= 1e-12);
    }

    #[test]
    fn degrade_output_is_clipped(img in image_strategy(12), seed in any::<u64>()) {
        let out = degrade(&img, &DegradationParams::sample(seed));
        prop_assert!(out.pixels.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn noiseless_constant_is_darkened_exactly(
        c in 0.0..=1.0f64,
        seed in any::<u64>(),
    ) {
        let mut p = DegradationParams::sample(seed);
        p.noise_sigma = 0.0;
        let out = degrade(&ImageRGB::filled(9, 7, c), &p);
        let want = p.exposure * c.powf(p.gamma);
        prop_assert!(out.pixels.iter().all(|v| (v - want).abs() <= 1e-12));
    }

    #[test]
    fn kernels_sum_to_one(sigma in 1.0..=3.0f64, length in 5.0..=15.0f64, angle in 0.0..std::f64::consts::PI) {
        for k in [BlurKernel::Gaussian { sigma }, BlurKernel::Motion { length, angle }] {
            let m = k.materialize();
            prop_assert!((m.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn metrics_are_symmetric(a in image_strategy(16), seed in any::<u64>()) {
        let b = degrade(&a, &DegradationParams::sample(seed));
        prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        if a.width >= 11 && a.height >= 11 {
            prop_assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() <= 1e-12);
        }
    }

    #[test]
    fn ppm_round_trip_is_byte_exact(w in 1usize..20, h in 1usize..20, seed in any::<u64>()) {
        let bytes: Vec<u8> = uniform(&[w * h * 3], 0.0, 256.0, seed).data().iter().map(|v| *v as u8).collect();
        let mut file = format!("P6\n{w} {h}\n255\n").into_bytes();
        file.extend_from_slice(&bytes);
        let img = ppm::decode(&file).unwrap();
        prop_assert_eq!(ppm::encode(&img), file);
    }
}

#[test]
fn imaconv_output_width_follows_config() {
    let mut r = rng::stream(0, 0);
    let x = uniform(&[1, 8, 5, 5], 0.0, 1.0, 1);
    let default = ImaConv::new(&mut r, ImaConvConfig::new(8, 4, 2)).unwrap();
    assert_eq!(default.forward(&x).unwrap().shape(), &[1, 8, 5, 5]);
    let wide = ImaConvConfig {
        out_channels: 12,
        ..ImaConvConfig::new(8, 4, 2)
    };
    assert_eq!(ImaConv::new(&mut r, wide).unwrap().forward(&x).unwrap().shape(), &[1, 12, 5, 5]);
}

#[test]
fn identical_seeds_give_identical_forward_and_backward() {
    let run = || {
        let mut r = rng::stream(42, 0);
        let block = Dbca::new(&mut r, DbcaConfig::new(3)).unwrap();
        block.gamma_d.data_mut().fill(0.5);
        block.gamma_g.data_mut().fill(0.5);
        let fd = uniform(&[1, 3, 4, 4], -1.0, 1.0, 7);
        let fg = uniform(&[1, 3, 4, 4], -1.0, 1.0, 8);
        let out = block.forward(&fd, &fg).unwrap();
        out.mul(&out).unwrap().sum().backward().unwrap();
        let bits = |v: Vec<f64>| v.into_iter().map(f64::to_bits).collect::<Vec<_>>();
        (bits(out.to_vec()), bits(block.gamma_g.grad().unwrap()), bits(block.offset.weight.grad().unwrap()))
    };
    assert_eq!(run(), run());
}

#[test]
fn clean_generator_mean_is_mid_grey() {
    let images = vqcnir::data::generate_clean(100, 32, 11);
    let mean = images.iter().map(ImageRGB::mean).sum::<f64>() / images.len() as f64;
    assert!((0.35..=0.65).contains(&mean), "{mean}");
}

#[test]
fn ssim_of_constant_images_matches_closed_form() {
    let (a, b) = (0.3, 0.5);
    let got = ssim(&ImageRGB::filled(16, 16, a), &ImageRGB::filled(16, 16, b)).unwrap();
    // Zero variance leaves only the luminance term.
    let c1 = 1e-4;
    let want = (2.0 * a * b + c1) / (a * a + b * b + c1);
    assert!((got - want).abs() <= 1e-12, "{got} vs {want}");
}
