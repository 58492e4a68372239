use fitv::data::{
    crop_window, decode_tensors, encode_tensors, synth_sequence, FrameSequence, NamedTensor, SynthConfig,
};
use fitv::metrics::{ad_index, ad_stats, psnr, MetricsReport, MetricsRow};
use fitv::noise::{add_awgn, add_mixed, add_salt_pepper};
use fitv::tensor::{adam_step, kernels, OptimizerConfig, Parameter, Tape};
use fitv::train::combined_loss_weight;
use fitv::{Shape, Tensor};
use proptest::prelude::*;

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        ..ProptestConfig::default()
    }
}

fn tensor(shape: Shape, values: Vec<f32>) -> Tensor<f32> {
    Tensor::from_vec(shape, values).unwrap()
}

fn values(len: usize) -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(-1.0f32..1.0, len)
}

/// Pixel values on a 1/256 grid, where sums and shifts are exact.
fn dyadic_image(h: usize, w: usize) -> impl Strategy<Value = Tensor<f32>> {
    prop::collection::vec(0u16..256, 3 * h * w).prop_map(move |v| {
        tensor(
            Shape::new(1, 3, h, w),
            v.into_iter().map(|k| k as f32 / 256.0).collect(),
        )
    })
}

fn image(h: usize, w: usize) -> impl Strategy<Value = Tensor<f32>> {
    prop::collection::vec(0.0f32..1.0, 3 * h * w).prop_map(move |v| tensor(Shape::new(1, 3, h, w), v))
}

/// Input shape, stride, and the two inputs plus weights of a convolution.
fn conv_case() -> impl Strategy<Value = (Shape, usize, Tensor<f32>, Tensor<f32>, Tensor<f32>)> {
    (1usize..5, 1usize..5, 2usize..9, 2usize..9, 1usize..3).prop_flat_map(|(cin, cout, h, w, stride)| {
        let shape = Shape::new(1, cin, h, w);
        let wshape = Shape::new(cout, cin, 3, 3);
        (values(shape.len()), values(shape.len()), values(wshape.len()))
            .prop_map(move |(x, y, k)| (shape, stride, tensor(shape, x), tensor(shape, y), tensor(wshape, k)))
    })
}

proptest! {
    #![proptest_config(config(48))]

    #[test]
    fn conv_is_linear_in_its_input((shape, stride, x, y, w) in conv_case(), a in -2.0f32..2.0, b in -2.0f32..2.0) {
        let bias = Tensor::zeros(Shape::new(1, w.shape().n, 1, 1));
        let combo = Tensor::from_fn(shape, |n, c, h, ww| a * x.at(n, c, h, ww) + b * y.at(n, c, h, ww));
        let lhs = kernels::conv2d(&combo, &w, &bias, stride, 1).unwrap();
        let cx = kernels::conv2d(&x, &w, &bias, stride, 1).unwrap();
        let cy = kernels::conv2d(&y, &w, &bias, stride, 1).unwrap();
        let rhs = Tensor::from_fn(lhs.shape(), |n, c, h, ww| a * cx.at(n, c, h, ww) + b * cy.at(n, c, h, ww));
        prop_assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-5);
    }

    #[test]
    fn pixel_shuffle_is_inverted_by_unshuffle(c in 1usize..4, r in 1usize..4, h in 1usize..6, w in 1usize..6, v in any::<u64>()) {
        let shape = Shape::new(2, c * r * r, h, w);
        let x = Tensor::from_fn(shape, |n, ch, y, xx| ((v as usize ^ (n * 7919 + ch * 104729 + y * 31 + xx)) % 1000) as f32);
        let y = kernels::pixel_shuffle(&x, r).unwrap();
        // index formula written out independently
        for n in 0..2 {
            for ch in 0..c {
                for yy in 0..h * r {
                    for xx in 0..w * r {
                        let src = x.at(n, ch * r * r + (yy % r) * r + xx % r, yy / r, xx / r);
                        prop_assert_eq!(y.at(n, ch, yy, xx), src);
                    }
                }
            }
        }
        prop_assert_eq!(&kernels::pixel_unshuffle(&y, r).unwrap(), &x);
        prop_assert_eq!(&kernels::pixel_shuffle(&kernels::pixel_unshuffle(&y, r).unwrap(), r).unwrap(), &y);
    }

    #[test]
    fn upsample_backward_of_ones_is_four(c in 1usize..5, h in 1usize..8, w in 1usize..8) {
        let mut tape = Tape::<f64>::new();
        let x = tape.input_with_grad(Tensor::zeros(Shape::new(1, c, h, w)));
        let y = tape.upsample_nearest_2x(x);
        tape.backward_with(y, vec![1.0; 4 * c * h * w]).unwrap();
        prop_assert!(tape.grad(x).unwrap().iter().all(|&g| g == 4.0));
    }

    #[test]
    fn adam_is_deterministic(v in values(12), g in values(12), steps in 0u64..5) {
        let shape = Shape::new(1, 3, 2, 2);
        let mut p = Parameter::new("p", tensor(shape, v));
        p.step_count = steps;
        let mut q = p.clone();
        p.value.accumulate_grad(&g).unwrap();
        q.value.accumulate_grad(&g).unwrap();
        let cfg = OptimizerConfig::default();
        adam_step(&mut p, &cfg).unwrap();
        adam_step(&mut q, &cfg).unwrap();
        let bits = |t: &Tensor<f32>| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&p.value), bits(&q.value));
        prop_assert_eq!(bits(&p.adam_m), bits(&q.adam_m));
        prop_assert_eq!(bits(&p.adam_v), bits(&q.adam_v));
    }
}

proptest! {
    #![proptest_config(config(24))]

    #[test]
    fn noise_generators_are_pure(img in image(8, 12), seed in any::<u64>(), sigma in 0.0f64..0.5, ratio in 0.0f64..0.5) {
        let seq = FrameSequence::synthetic(vec![img.clone(), img]).unwrap();
        prop_assert_eq!(add_awgn(&seq, sigma, seed).unwrap().frames, add_awgn(&seq, sigma, seed).unwrap().frames);
        prop_assert_eq!(add_salt_pepper(&seq, ratio, seed).unwrap().frames, add_salt_pepper(&seq, ratio, seed).unwrap().frames);
        prop_assert_eq!(add_mixed(&seq, seed).unwrap().frames, add_mixed(&seq, seed).unwrap().frames);
    }

    #[test]
    fn salt_pepper_locations_ignore_content(a in image(16, 16), b in image(16, 16), seed in any::<u64>(), ratio in 0.01f64..0.5) {
        // values strictly inside (0,1) so every corrupted pixel is visible
        let inner = |t: &Tensor<f32>| t.map(|v| 0.25 + 0.5 * v);
        let (a, b) = (inner(&a), inner(&b));
        let na = add_salt_pepper(&FrameSequence::synthetic(vec![a.clone()]).unwrap(), ratio, seed).unwrap();
        let nb = add_salt_pepper(&FrameSequence::synthetic(vec![b.clone()]).unwrap(), ratio, seed).unwrap();
        let s = a.shape();
        for y in 0..s.h {
            for x in 0..s.w {
                let hit_a = na.frames[0].at(0, 0, y, x) != a.at(0, 0, y, x);
                let hit_b = nb.frames[0].at(0, 0, y, x) != b.at(0, 0, y, x);
                prop_assert_eq!(hit_a, hit_b);
                if hit_a {
                    prop_assert_eq!(na.frames[0].at(0, 0, y, x), nb.frames[0].at(0, 0, y, x));
                }
            }
        }
    }

    #[test]
    fn ad_ignores_constant_shift(pred in dyadic_image(64, 64), clean in dyadic_image(64, 64), k in -64i32..64) {
        let shift = k as f32 / 256.0;
        let moved = pred.map(|v| v + shift);
        prop_assert_eq!(ad_index(&moved, &clean).unwrap(), ad_index(&pred, &clean).unwrap());
    }

    #[test]
    fn ad_is_symmetric(pred in image(64, 96), clean in image(64, 96)) {
        prop_assert_eq!(ad_index(&pred, &clean).unwrap(), ad_index(&clean, &pred).unwrap());
    }

    #[test]
    fn report_summary_matches_rows(pairs in prop::collection::vec((image(32, 32), image(32, 32)), 1..5)) {
        let rows: Vec<MetricsRow> = pairs
            .iter()
            .enumerate()
            .map(|(i, (p, c))| MetricsRow::measure(format!("f{i}"), p, c).unwrap())
            .collect();
        let report = MetricsReport::from_rows(rows).unwrap();
        let ads: Vec<f64> = report.rows.iter().map(|r| r.ad).collect();
        let stats = ad_stats(&ads).unwrap();
        prop_assert_eq!(report.corpus.ad_avg, stats.avg);
        prop_assert_eq!(report.corpus.ad_max, stats.max);
        prop_assert_eq!(report.corpus.ad_count, stats.count);
    }

    #[test]
    fn crop_keeps_frames_aligned(frames in prop::collection::vec(image(40, 70), 2..5), seed in any::<u64>()) {
        let crop = crop_window(&frames, 32, seed).unwrap();
        prop_assert_eq!(crop.frames.len(), frames.len());
        for (c, f) in crop.frames.iter().zip(&frames) {
            prop_assert_eq!(c, &f.crop(crop.top, crop.left, 32, 32).unwrap());
        }
    }

    #[test]
    fn checkpoint_bytes_round_trip(
        entries in prop::collection::vec((prop::collection::vec(1u32..4, 0..4), any::<u64>()), 1..6),
    ) {
        let tensors: Vec<NamedTensor> = entries
            .iter()
            .enumerate()
            .map(|(i, (dims, seed))| {
                let len = dims.iter().product::<u32>() as usize;
                let data = (0..len)
                    .map(|j| f32::from_bits(((*seed as u32) ^ (j as u32).wrapping_mul(2_654_435_761)) & 0x7f7f_ffff))
                    .collect();
                NamedTensor { name: format!("t{i}"), dims: dims.clone(), data }
            })
            .collect();
        let bytes = encode_tensors(&tensors).unwrap();
        let back = decode_tensors(&bytes).unwrap();
        prop_assert_eq!(encode_tensors(&back).unwrap(), bytes);
        for (a, b) in tensors.iter().zip(&back) {
            prop_assert_eq!(&a.name, &b.name);
            prop_assert_eq!(&a.dims, &b.dims);
            let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&a.data), bits(&b.data));
        }
    }
}

proptest! {
    #![proptest_config(config(16))]

    #[test]
    fn synthetic_motion_is_recovered_by_block_matching(vx in -3i32..=3, vy in -3i32..=3, seed in any::<u64>()) {
        let cfg = SynthConfig {
            frames: 3,
            velocity: (vx as f64, vy as f64),
            seed,
            ..SynthConfig::default()
        };
        let seq = synth_sequence(&cfg).unwrap();
        let (oy, ox) = fitv::data::object_position(&cfg, 0).unwrap();
        let (oh, ow) = cfg.object;
        let (a, b) = (&seq.frames[0], &seq.frames[1]);
        let mut best = (f64::INFINITY, 0i32, 0i32);
        for dy in -6i32..=6 {
            for dx in -6i32..=6 {
                let (ty, tx) = (oy as i32 + dy, ox as i32 + dx);
                if ty < 0 || tx < 0 || ty as usize + oh > cfg.height || tx as usize + ow > cfg.width {
                    continue;
                }
                let mut sad = 0.0f64;
                for c in 0..3 {
                    for y in 0..oh {
                        for x in 0..ow {
                            sad += (a.at(0, c, oy + y, ox + x) - b.at(0, c, ty as usize + y, tx as usize + x)).abs() as f64;
                        }
                    }
                }
                if sad < best.0 {
                    best = (sad, dx, dy);
                }
            }
        }
        prop_assert_eq!((best.1, best.2), (vx, vy));
        prop_assert_eq!(best.0, 0.0);
    }

    #[test]
    fn psnr_falls_as_noise_grows(img in image(32, 32), seed in any::<u64>()) {
        let seq = FrameSequence::synthetic(vec![img.clone()]).unwrap();
        let scores: Vec<f64> = [5.0, 15.0, 25.0, 50.0]
            .iter()
            .map(|s| psnr(&add_awgn(&seq, s / 255.0, seed).unwrap().frames[0], &img).unwrap())
            .collect();
        prop_assert!(scores.windows(2).all(|w| w[0] > w[1]), "{:?}", scores);
    }

    #[test]
    fn joint_weight_strictly_decreases(alpha in 0.01f64..100.0, epochs in 2u64..60) {
        let w: Vec<f64> = (1..=epochs).map(|e| combined_loss_weight(e, alpha).unwrap()).collect();
        prop_assert!(w.windows(2).all(|p| p[0] > p[1]));
    }
}
