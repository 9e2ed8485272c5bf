use mcwnet::blocks::{GridSpec, RegionClass};
use mcwnet::metrics::*;
use mcwnet::network::{build, NetworkConfig};
use mcwnet::training::{apply_streaks, background, synth_dataset, synth_rain, RainPair, Streak, SynthParams};
use mcwnet::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_image(h: usize, w: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::uniform(&[1, 3, h, w], 0.0, 1.0, &mut rng)
}

#[test]
fn psnr_closed_forms() {
    let a = Tensor::full(&[1, 3, 8, 8], 0.5);
    let b = Tensor::full(&[1, 3, 8, 8], 0.6);
    assert!((psnr_rgb(&a, &b).unwrap() - 20.0).abs() < 1e-9);
    assert_eq!(psnr_rgb(&a, &a).unwrap(), f64::INFINITY);
    let (x, y) = (random_image(16, 16, 1), random_image(16, 16, 2));
    assert_eq!(psnr_rgb(&x, &y).unwrap(), psnr_rgb(&y, &x).unwrap());
    assert!(psnr_rgb(&a, &Tensor::zeros(&[1, 3, 4, 4])).is_err());
}

#[test]
fn psnr_falls_as_noise_grows() {
    let a = Tensor::full(&[1, 3, 8, 8], 0.5);
    let mut last = f64::INFINITY;
    for k in 1..6 {
        let p = psnr_rgb(&a, &a.map(|v| v + 0.05 * k as f64)).unwrap();
        assert!(p < last);
        last = p;
    }
}

#[test]
fn ssim_identity_symmetry_and_inversion() {
    let a = random_image(24, 24, 3);
    assert_eq!(ssim(&a, &a).unwrap(), 1.0);
    let b = random_image(24, 24, 4);
    assert_eq!(ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let bin = Tensor::from_fn(&[1, 3, 24, 24], |_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 });
    let inv = bin.map(|v| 1.0 - v);
    let s = ssim(&bin, &inv).unwrap();
    assert!(s < 0.0, "ssim {s}");
    assert!(ssim(&Tensor::zeros(&[1, 3, 10, 10]), &Tensor::zeros(&[1, 3, 10, 10])).is_err());
}

#[test]
fn ssim_map_direct_value() {
    // Constant planes: mu differ, variances zero, so every local value is
    // (2 mu_a mu_b + c1) / (mu_a^2 + mu_b^2 + c1).
    let (h, w) = (11, 11);
    let m = ssim_map(&vec![0.2; h * w], &vec![0.4; h * w], h, w);
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let want = (2.0 * 0.2 * 0.4 + c1) / (0.04 + 0.16 + c1);
    assert_eq!(m.len(), 1);
    assert!((m[0] - want).abs() < 1e-12);
}

#[test]
fn mask_basics() {
    let clean = random_image(8, 8, 6).map(|v| v * 0.5);
    assert_eq!(rain_mask(&clean, &clean, 0.1, "x").unwrap().count(), 0);
    let mut rainy = clean.clone();
    *rainy.at4_mut(0, 1, 3, 5) += 0.2;
    let m = rain_mask(&rainy, &clean, 0.1, "x").unwrap();
    assert_eq!(m.pixels(), vec![(3, 5)]);
    assert!(rain_mask(&rainy, &clean, 0.0, "x").is_err());
    assert!(rain_mask(&rainy, &Tensor::zeros(&[1, 3, 4, 4]), 0.1, "x").is_err());
}

#[test]
fn mask_recovers_generator_pixels() {
    let clean = background(64, 64, 7);
    let out = synth_rain(&clean, 8, &SynthParams::default(), "s").unwrap();
    let m = rain_mask(&out.pair.rainy, &out.pair.clean, DEFAULT_TAU, "s").unwrap();
    assert!(!out.touched.is_empty());
    assert_eq!(m.pixels(), out.touched);
}

fn column_mask(h: usize, w: usize, col: usize) -> RainMask {
    let clean = Tensor::zeros(&[1, 3, h, w]);
    let s = Streak { y: 0.0, x: col as f64, angle: 90.0, length: h, width: 1, intensity: 0.5 };
    let out = apply_streaks(&clean, &[s], "col").unwrap();
    rain_mask(&out.pair.rainy, &clean, 0.1, "col").unwrap()
}

#[test]
fn grid_std_hand_counts() {
    let empty = rain_mask(&Tensor::zeros(&[1, 3, 8, 8]), &Tensor::zeros(&[1, 3, 8, 8]), 0.1, "e").unwrap();
    let g = grid_rain_std(&empty, GridSpec::new(2, 2).unwrap()).unwrap();
    assert_eq!((g.counts.clone(), g.std), (vec![0; 4], 0.0));

    // One full column of 8 pixels over a 1x4 grid: counts (8, 0, 0, 0),
    // mean 2, variance (36 + 3 * 4) / 4 = 12.
    let m = column_mask(8, 8, 1);
    let g = grid_rain_std(&m, GridSpec::new(1, 4).unwrap()).unwrap();
    assert_eq!(g.counts, vec![8, 0, 0, 0]);
    assert!((g.std - 12f64.sqrt()).abs() < 1e-12);
    assert_eq!(g.counts.iter().sum::<usize>(), m.count());

    // Trailing rows and columns are cropped away.
    let g = grid_rain_std(&column_mask(9, 9, 8), GridSpec::new(1, 4).unwrap()).unwrap();
    assert_eq!(g.counts.iter().sum::<usize>(), 0);
}

#[test]
fn grid_std_ignores_patch_order() {
    let m = column_mask(16, 16, 3);
    let g = grid_rain_std(&m, GridSpec::new(4, 4).unwrap()).unwrap();
    let mut rev = g.counts.clone();
    rev.reverse();
    let n = rev.len() as f64;
    let mean = rev.iter().sum::<usize>() as f64 / n;
    let std = (rev.iter().map(|&c| (c as f64 - mean).powi(2)).sum::<f64>() / n).sqrt();
    assert!((g.std - std).abs() < 1e-12);
}

#[test]
fn uniform_random_masks_have_no_preferred_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut sums = [0.0; 3];
    let trials = 60;
    for t in 0..trials {
        let mask = RainMask {
            height: 64,
            width: 64,
            mask: (0..64 * 64).map(|_| rng.gen_bool(0.2)).collect(),
            tau: 0.1,
            id: format!("{t}"),
        };
        for (s, g) in sums.iter_mut().zip(CANONICAL_GRIDS) {
            *s += grid_rain_std(&mask, g).unwrap().std / trials as f64;
        }
    }
    // Binomial(64, 0.2) counts: std near sqrt(64 * 0.2 * 0.8) = 3.2.
    for s in sums {
        assert!((s - 3.2).abs() < 0.3, "{sums:?}");
    }
    let spread = sums.iter().cloned().fold(f64::MIN, f64::max) - sums.iter().cloned().fold(f64::MAX, f64::min);
    assert!(spread < 0.25, "{sums:?}");
}

#[test]
fn distribution_ordering_follows_streak_direction() {
    let vertical = synth_dataset(40, 64, 11, &SynthParams::default()).unwrap();
    let r = distribution_report(&vertical, DEFAULT_TAU).unwrap();
    let (w, s, t) = (r.mean(RegionClass::Wide), r.mean(RegionClass::Square), r.mean(RegionClass::Tall));
    assert!(w < s && s < t, "{w} {s} {t}");
    assert_eq!(r.rows.len(), 120);

    let horizontal = synth_dataset(40, 64, 11, &SynthParams { horizontal: true, ..SynthParams::default() }).unwrap();
    let r = distribution_report(&horizontal, DEFAULT_TAU).unwrap();
    let (w, s, t) = (r.mean(RegionClass::Wide), r.mean(RegionClass::Square), r.mean(RegionClass::Tall));
    assert!(w > s && s > t, "{w} {s} {t}");
}

#[test]
fn distribution_edge_cases_and_csv() {
    assert!(distribution_report(&[], 0.1).is_err());
    let clean = background(32, 32, 1);
    let pair = RainPair::new(clean.clone(), clean, "dry").unwrap();
    let r = distribution_report(&[pair], 0.1).unwrap();
    for (_, m) in &r.means {
        assert_eq!(*m, 0.0);
    }
    let mut buf = Vec::new();
    r.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("image_id,grid_class,std\n"));
    assert_eq!(text.lines().count(), 4);
    let hist = r.histogram(5);
    assert_eq!(hist.iter().map(|h| h.count).sum::<usize>(), 3);
}

fn toy_input(seed: u64) -> Tensor {
    random_image(32, 32, seed)
}

#[test]
fn importance_vectors_are_distributions() {
    let model = build(&NetworkConfig::toy(), 3).unwrap();
    let profiles = se_importance(&model, &toy_input(1)).unwrap();
    assert_eq!(profiles.iter().map(|p| p.level).collect::<Vec<_>>(), vec![1, 2, 3, 4]);
    for p in &profiles {
        for v in [p.lambdas_before, p.lambdas_after] {
            assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(v.iter().all(|&x| x >= 0.0));
        }
    }
    assert_eq!(profiles[3].lambdas_before[3], 0.0);
    let mut buf = Vec::new();
    write_importance_csv(&profiles, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("level,group,lambda_before,lambda_after\n"));
    assert_eq!(text.lines().count(), 1 + 16);
}

#[test]
fn zero_expand_gives_equal_importance() {
    let mut model = build(&NetworkConfig::toy(), 4).unwrap();
    for (name, t) in model.params.iter_mut() {
        if name.contains(".mlc.se.expand.") {
            *t = Tensor::zeros(t.shape());
        }
    }
    for p in se_importance(&model, &toy_input(2)).unwrap() {
        for i in 0..4 {
            assert!((p.lambdas_before[i] - p.lambdas_after[i]).abs() < 1e-9);
        }
    }
}

#[test]
fn importance_requires_se_fusion() {
    let cfg = NetworkConfig { mlc_fusion: mcwnet::blocks::FusionMode::Concat, ..NetworkConfig::toy() };
    let model = build(&cfg, 0).unwrap();
    assert!(se_importance(&model, &toy_input(3)).is_err());
}

#[test]
fn dispersion_is_population_std() {
    assert_eq!(dispersion(&[0.25; 4]), 0.0);
    assert!((dispersion(&[1.0, 0.0, 0.0, 0.0]) - 0.1875f64.sqrt()).abs() < 1e-12);
}
