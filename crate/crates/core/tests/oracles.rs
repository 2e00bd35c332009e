mod common;

use pbgdnet::data::{resize_bilinear, synth_square, SquareConfig};
use pbgdnet::optim::compute_adaptive_nu;
use pbgdnet::residual::ResidualKernelBank;
use pbgdnet::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn max_gap(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn resize_matches_bilinear_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..40 {
        let (h, w) = (rng.gen_range(1..40), rng.gen_range(1..40));
        let (oh, ow) = (rng.gen_range(1..70), rng.gen_range(1..70));
        let img = common::random_tensor(&[3, h, w], &mut rng);
        let got = resize_bilinear(&img, oh, ow).unwrap();
        let want = common::bilinear(&img, oh, ow);
        assert_eq!(got.shape(), want.shape());
        assert!(max_gap(got.data(), want.data()) <= 1e-12, "{h}x{w} -> {oh}x{ow}");
    }
}

#[test]
fn halving_resize_averages_blocks() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let img = common::random_tensor(&[3, 10, 14], &mut rng);
    let half = resize_bilinear(&img, 5, 7).unwrap();
    for c in 0..3 {
        for y in 0..5 {
            for x in 0..7 {
                let block: f64 = [(0, 0), (0, 1), (1, 0), (1, 1)]
                    .iter()
                    .map(|&(dy, dx)| img.at(&[c, 2 * y + dy, 2 * x + dx]))
                    .sum();
                assert!((half.at(&[c, y, x]) - block / 4.0).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn conv2d_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let (c, k) = (rng.gen_range(1..4), rng.gen_range(1..4));
        let (kh, kw) = (rng.gen_range(1..4), rng.gen_range(1..4));
        let (stride, pad) = (rng.gen_range(1..3), rng.gen_range(0..2));
        let (h, w) = (rng.gen_range(kh..12), rng.gen_range(kw..12));
        let x = common::random_tensor(&[c, h, w], &mut rng);
        let weight = common::random_tensor(&[k, c, kh, kw], &mut rng);
        let bias = common::random_tensor(&[k], &mut rng);
        let mut tape = Tape::new();
        let (xv, wv, bv) = (
            tape.constant(x.clone()),
            tape.constant(weight.clone()),
            tape.constant(bias.clone()),
        );
        let y = tape.conv2d(xv, wv, Some(bv), stride, pad).unwrap();
        let want = common::conv2d(&x, &weight, Some(bias.data()), stride, pad);
        assert_eq!(tape.shape(y), want.shape());
        assert!(max_gap(tape.value(y).data(), want.data()) <= 1e-12);
    }
}

#[test]
fn spp_matches_bin_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = common::random_tensor(&[1, 9, 13], &mut rng);
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let y = tape.spp(xv, &[1, 2, 4]).unwrap();
    assert_eq!(tape.value(y).data(), common::spp(&x, &[1, 2, 4]).as_slice());
    for _ in 0..30 {
        let (c, h, w) = (rng.gen_range(1..4), rng.gen_range(4..30), rng.gen_range(4..30));
        let x = common::random_tensor(&[c, h, w], &mut rng);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let y = tape.spp(xv, &[1, 2, 3, 4]).unwrap();
        assert_eq!(tape.value(y).data(), common::spp(&x, &[1, 2, 3, 4]).as_slice());
    }
}

#[test]
fn residual_maps_match_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let srm = ResidualKernelBank::<f64>::init_srm();
    let learnt = ResidualKernelBank::from_weight(common::random_tensor(&[3, 3, 5, 5], &mut rng)).unwrap();
    for bank in [&srm, &learnt] {
        for _ in 0..10 {
            let (h, w) = (rng.gen_range(5..24), rng.gen_range(5..24));
            let img = Tensor::from_fn(&[3, h, w], |_| rng.gen::<f64>());
            let got = bank.residual_maps(&img).unwrap();
            let want = common::residual(bank, &img);
            assert!(max_gap(got.data(), want.data()) <= 1e-12);
        }
    }
}

#[test]
fn adaptive_nu_matches_prefix_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..500 {
        let len = rng.gen_range(1..30);
        let dims: Vec<(usize, usize)> = (0..len)
            .map(|_| (rng.gen_range(1..200), rng.gen_range(1..200)))
            .collect();
        let n = rng.gen_range(1.0..60_000.0);
        assert_eq!(compute_adaptive_nu(&dims, n).unwrap(), common::adaptive_nu(&dims, n));
    }
}

#[test]
fn square_labels_agree_with_pixel_scan() {
    let cfg = SquareConfig {
        count: 300,
        seed: 11,
        ..SquareConfig::default()
    };
    for (layout, sample) in synth_square::<f64>(&cfg).unwrap() {
        let (top, left, h, w) =
            common::foreground_box(&sample.pixels, layout.background, 1e-12).expect("visible shape");
        assert_eq!(
            (top, left, h, w),
            (layout.top, layout.left, layout.rect_height, layout.rect_width)
        );
        // Every pixel inside the box carries the foreground colour.
        for y in top..top + h {
            for x in left..left + w {
                for c in 0..3 {
                    assert_eq!(sample.pixels.at(&[c, y, x]), layout.foreground[c]);
                }
            }
        }
        let ratio = w as f64 / h as f64;
        if sample.label == 1 {
            assert_eq!(h, w);
        } else {
            assert!(
                ratio < cfg.exclusion_band.0 || ratio > cfg.exclusion_band.1,
                "ratio {ratio}"
            );
            assert!(ratio.max(1.0 / ratio) <= cfg.max_rect_aspect + 1e-9);
        }
        let contrast: f64 = (0..3)
            .map(|c| (layout.foreground[c] - layout.background[c]).abs())
            .sum::<f64>()
            / 3.0;
        assert!(contrast >= cfg.min_contrast);
        let (sh, sw) = (sample.height(), sample.width());
        assert!(sh.min(sw) >= cfg.side_range.0 && sh.max(sw) <= cfg.side_range.1);
    }
}

#[test]
fn resizing_to_a_square_canvas_distorts_squares() {
    let cfg = SquareConfig {
        count: 400,
        seed: 12,
        ..SquareConfig::default()
    };
    let mut checked = 0;
    for (layout, sample) in synth_square::<f64>(&cfg).unwrap() {
        let canvas = layout.width as f64 / layout.height as f64;
        let (rh, rw) = (
            layout.rect_height * 64 / layout.height,
            layout.rect_width * 64 / layout.width,
        );
        if sample.label != 1 || (canvas - 1.0).abs() < 0.3 || rh.min(rw) < 16 {
            continue;
        }
        let resized = resize_bilinear(&sample.pixels, 64, 64).unwrap();
        let contrast = (0..3)
            .map(|c| (layout.foreground[c] - layout.background[c]).abs())
            .fold(0.0, f64::max);
        let (_, _, h, w) = common::foreground_box(&resized, layout.background, contrast / 2.0).unwrap();
        let seen = w as f64 / h as f64;
        let expected = layout.height as f64 / layout.width as f64;
        assert!((seen - expected).abs() < 0.15, "seen {seen}, expected {expected}");
        assert!((seen - 1.0).abs() > 0.15, "square survived resize: {seen}");
        checked += 1;
    }
    assert!(checked >= 10, "only {checked} eligible images");
}
