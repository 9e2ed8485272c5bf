use std::path::Path;
use std::process::{Command, Output};

use mcwnet::imageio::{read_image, write_image};
use mcwnet::metrics::psnr_rgb;
use mcwnet::network::{build, param_count, save_weights, NetworkConfig};
use mcwnet::training::{background, synth_rain, SynthParams};
use mcwnet::Tensor;

fn mcwnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mcwnet"))
        .args(args)
        .env("MCWNET_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn params_prints_the_layout_total() {
    let o = mcwnet(&["params", "--size", "small"]);
    assert!(o.status.success());
    let first = stdout(&o).lines().next().unwrap().trim().to_string();
    assert_eq!(first.parse::<usize>().unwrap(), param_count(&NetworkConfig::small()).unwrap());
}

#[test]
fn metrics_on_identical_images() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.png");
    write_image(&a, &background(16, 16, 1)).unwrap();
    let o = mcwnet(&["metrics", "--a", p(&a), "--b", p(&a)]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("psnr inf"), "{text}");
    assert!(text.contains("ssim 1\n"), "{text}");
}

#[test]
fn grad_check_exit_codes() {
    for block in ["tensor", "wrnl"] {
        let o = mcwnet(&["grad-check", "--block", block, "--tol", "1e-6"]);
        assert!(o.status.success(), "{block}: {}", stdout(&o));
    }
    assert_eq!(mcwnet(&["grad-check", "--block", "bogus"]).status.code(), Some(2));
    assert_eq!(mcwnet(&["grad-check", "--block", "dcr", "--tol", "1e-30"]).status.code(), Some(1));
}

#[test]
fn usage_and_io_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere");
    let out = dir.path().join("out");
    assert_eq!(mcwnet(&["train", "--data", p(&missing), "--out", p(&out)]).status.code(), Some(2));
    assert_eq!(mcwnet(&["train", "--out", p(&out)]).status.code(), Some(2));
    assert_eq!(mcwnet(&["params", "--bogus"]).status.code(), Some(2));
    assert_eq!(mcwnet(&[]).status.code(), Some(2));
    let o = mcwnet(&["metrics", "--a", p(&missing), "--b", p(&missing)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn synth_writes_a_loadable_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let o = mcwnet(&["synth", "--count", "3", "--size", "32", "--out", p(dir.path())]);
    assert!(o.status.success());
    let data = mcwnet::training::load_dataset(dir.path()).unwrap();
    assert_eq!(data.len(), 3);
    let out = dir.path().join("dist.csv");
    let o = mcwnet(&["analyze-rain", "--data", p(dir.path()), "--out", p(&out)]);
    assert!(o.status.success());
    assert_eq!(std::fs::read_to_string(&out).unwrap().lines().count(), 1 + 9);
}

#[test]
fn analyze_rain_puts_wide_first() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d.csv");
    let o = mcwnet(&["analyze-rain", "--synth", "30", "--bins", "5", "--out", p(&out)]);
    assert!(o.status.success());
    let means: Vec<(String, f64)> = stdout(&o)
        .lines()
        .map(|l| {
            let f: Vec<&str> = l.split_whitespace().collect();
            (f[0].to_string(), f[3].parse().unwrap())
        })
        .collect();
    let wide = means.iter().find(|(c, _)| c == "wide").unwrap().1;
    assert!(means.iter().all(|(c, m)| c == "wide" || wide < *m), "{means:?}");
    assert!(out.with_extension("histogram.csv").exists());
}

#[test]
fn derain_with_zero_branch_is_identity() {
    let dir = tempfile::tempdir().unwrap();
    let mut model = build(&NetworkConfig::toy(), 3).unwrap();
    for name in ["tail.weight", "tail.bias"] {
        let t = &mut model.params[name];
        *t = Tensor::zeros(t.shape());
    }
    let w = dir.path().join("zero.mcw");
    save_weights(&model, &w).unwrap();
    // 40x40 needs reflection padding.
    let input = dir.path().join("in.png");
    write_image(&input, &synth_rain(&background(40, 40, 2), 3, &SynthParams::default(), "x").unwrap().pair.rainy).unwrap();
    let (o1, o2) = (dir.path().join("o1.png"), dir.path().join("o2.png"));
    for o in [&o1, &o2] {
        let r = mcwnet(&["derain", "--weights", p(&w), "--input", p(&input), "--output", p(o)]);
        assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    }
    assert_eq!(read_image(&o1).unwrap(), read_image(&input).unwrap());
    assert_eq!(std::fs::read(&o1).unwrap(), std::fs::read(&o2).unwrap());
}

#[test]
fn train_is_reproducible_and_improves_a_synthetic_pair() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = mcwnet(&[
            "train", "--synth", "2", "--synth-size", "32", "--size", "toy", "--epochs", "60", "--batch", "2",
            "--seed", "4", "--lr", "2e-3", "--out", p(out),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let log = std::fs::read_to_string(a.join("loss.csv")).unwrap();
    assert_eq!(log, std::fs::read_to_string(b.join("loss.csv")).unwrap());
    assert_eq!(log.lines().count(), 61);

    // The training pairs are regenerated from the same seed.
    let pair = &mcwnet::training::synth_dataset(2, 32, 4, &SynthParams::default()).unwrap()[0];
    let (rainy, clean, out) = (dir.path().join("r.png"), dir.path().join("c.png"), dir.path().join("o.png"));
    write_image(&rainy, &pair.rainy).unwrap();
    write_image(&clean, &pair.clean).unwrap();
    let w = a.join("final.mcw");
    assert!(mcwnet(&["derain", "--weights", p(&w), "--input", p(&rainy), "--output", p(&out)]).status.success());
    let c = read_image(&clean).unwrap();
    let before = psnr_rgb(&read_image(&rainy).unwrap(), &c).unwrap();
    let after = psnr_rgb(&read_image(&out).unwrap(), &c).unwrap();
    assert!(after > before, "{before} -> {after}");

    let imp = dir.path().join("imp.csv");
    assert!(mcwnet(&["importance", "--weights", p(&w), "--input", p(&rainy), "--out", p(&imp)]).status.success());
    assert_eq!(std::fs::read_to_string(&imp).unwrap().lines().count(), 17);
}
