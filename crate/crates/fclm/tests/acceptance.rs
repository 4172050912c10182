//! Acceptance suite: one test per release criterion, each printing a
//! pass/fail line. Run with `cargo test -p fclm --test acceptance`.

use fclm::pred_loss::LossWeights;
use fclm::toy_harness::{make_blob_dataset, run_training, TrainConfig};
use fclm::verify;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

fn report(criterion: &str, pass: bool, detail: &str) {
    println!(
        "[{}] {criterion}: {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "{criterion}: {detail}");
}

fn assert_suite(criterion: &str, results: &[verify::CheckResult]) {
    for r in results {
        report(
            criterion,
            r.pass,
            &format!("{} = {:.3e} (limit {:.3e})", r.name, r.value, r.threshold),
        );
    }
}

#[test]
fn criterion_01_sinkhorn_lp_equivalence() {
    let t0 = Instant::now();
    let results = verify::sinkhorn_lp_suite(200).unwrap();
    let elapsed = t0.elapsed();
    assert_suite("criterion 1", &results);
    report(
        "criterion 1",
        elapsed.as_secs_f64() < 5.0,
        &format!("runtime {:.2} s (limit 5 s)", elapsed.as_secs_f64()),
    );
}

#[test]
fn criterion_02_gradient_suite() {
    let t0 = Instant::now();
    let results = verify::gradient_suite(20, false).unwrap();
    let elapsed = t0.elapsed();
    assert_suite("criterion 2", &results);
    report(
        "criterion 2",
        elapsed.as_secs_f64() < 30.0,
        &format!("runtime {:.2} s (limit 30 s)", elapsed.as_secs_f64()),
    );
}

#[test]
fn criterion_03_depth_weight_contract() {
    let results = verify::depth_weight_suite().unwrap();
    assert_suite("criterion 3", &results);
}

#[test]
fn criterion_04_grl_contract() {
    let results = verify::grl_suite().unwrap();
    assert_suite("criterion 4", &results);
}

#[test]
fn criterion_05_metric_identities() {
    let results = verify::metric_identity_suite().unwrap();
    assert_suite("criterion 5", &results);
}

#[test]
fn criterion_06_metric_oracles() {
    let results = verify::metric_oracle_suite().unwrap();
    assert_suite("criterion 6", &results);
}

#[test]
fn criterion_07_compositor_algebra() {
    let results = verify::compositor_suite().unwrap();
    assert_suite("criterion 7", &results);
}

#[test]
fn criterion_08_training_dynamics() {
    let t0 = Instant::now();
    let dataset = make_blob_dataset(8, 32, 9).unwrap();
    let base = TrainConfig {
        steps: 200,
        ..TrainConfig::default()
    };

    let full = run_training(&dataset, &base).unwrap();
    let first = &full.entries[0];
    let last = full.entries.last().unwrap();
    report(
        "criterion 8a",
        last.total <= 0.5 * first.total,
        &format!(
            "total loss {:.3} -> {:.3} (ratio {:.3}, limit 0.5)",
            first.total,
            last.total,
            last.total / first.total
        ),
    );
    report(
        "criterion 8b",
        last.disc_acc <= 0.6,
        &format!("discriminator accuracy {:.2} (limit 0.60)", last.disc_acc),
    );

    let no_grl = run_training(
        &dataset,
        &TrainConfig {
            lambda: 0.0,
            ..base.clone()
        },
    )
    .unwrap();
    let acc0 = no_grl.entries.last().unwrap().disc_acc;
    report(
        "criterion 8b",
        acc0 > 0.9,
        &format!("accuracy without reversal {acc0:.2} (must exceed 0.90)"),
    );

    let disabled = run_training(
        &dataset,
        &TrainConfig {
            loss_weights: LossWeights {
                adv: 0.0,
                ot: 0.0,
                ..LossWeights::default()
            },
            ..base.clone()
        },
    )
    .unwrap();
    let aligned = last.align_stat;
    let unaligned = disabled.entries.last().unwrap().align_stat;
    report(
        "criterion 8c",
        aligned < unaligned,
        &format!("alignment statistic {aligned:.3} vs {unaligned:.3} without alignment losses"),
    );
    report(
        "criterion 8c",
        last.align_stat < first.align_stat,
        &format!(
            "alignment statistic decreases {:.3} -> {:.3}",
            first.align_stat, last.align_stat
        ),
    );

    let elapsed = t0.elapsed();
    report(
        "criterion 8",
        elapsed.as_secs_f64() < 120.0,
        &format!("runtime {:.1} s (limit 120 s)", elapsed.as_secs_f64()),
    );
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_fclm")
}

fn run_ok(args: &[&str], envs: &[(&str, &str)]) -> std::process::Output {
    let mut cmd = Command::new(bin());
    cmd.args(args).env_remove("FCLM_SEED");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    let out = cmd.output().expect("binary runs");
    assert!(
        out.status.success(),
        "command {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

/// Synthetic prediction/ground-truth PNG corpus for the eval commands.
fn write_eval_corpus(dir: &Path) {
    use fclm::io::save_alpha;
    use fclm::pred_loss::AlphaMatte;
    let pred_dir = dir.join("pred");
    let gt_dir = dir.join("gt");
    std::fs::create_dir_all(&pred_dir).unwrap();
    std::fs::create_dir_all(&gt_dir).unwrap();
    for i in 0..6usize {
        let cx = 8.0 + i as f64;
        let gt = AlphaMatte::from_fn(24, 24, |x, y| {
            let d = ((x as f64 - cx).powi(2) + (y as f64 - 11.0).powi(2)).sqrt();
            if d < 6.0 {
                1.0
            } else {
                0.0
            }
        })
        .unwrap();
        let pred = AlphaMatte::from_fn(24, 24, |x, y| {
            let d = ((x as f64 - cx).powi(2) + (y as f64 - 11.0).powi(2)).sqrt();
            ((7.0 - d) / 2.5).clamp(0.0, 1.0)
        })
        .unwrap();
        save_alpha(&pred_dir.join(format!("img{i}.png")), &pred).unwrap();
        save_alpha(&gt_dir.join(format!("img{i}.png")), &gt).unwrap();
    }
}

#[test]
fn criterion_09_cli_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    write_eval_corpus(tmp.path());
    let pred = tmp.path().join("pred");
    let gt = tmp.path().join("gt");

    // train-toy: identical logs and stdout across repeated seeded runs.
    let log1 = tmp.path().join("log1.jsonl");
    let log2 = tmp.path().join("log2.jsonl");
    let out1 = run_ok(
        &[
            "train-toy",
            "--steps",
            "20",
            "--seed",
            "7",
            "--out",
            log1.to_str().unwrap(),
        ],
        &[],
    );
    let out2 = run_ok(
        &[
            "train-toy",
            "--steps",
            "20",
            "--seed",
            "7",
            "--out",
            log2.to_str().unwrap(),
        ],
        &[],
    );
    report(
        "criterion 9",
        out1.stdout == out2.stdout && read(&log1) == read(&log2),
        "train-toy is byte-identical across repeated seeded runs",
    );

    // eval-matting: identical outputs for 1 vs 4 workers.
    let em1 = tmp.path().join("em1");
    let em4 = tmp.path().join("em4");
    run_ok(
        &[
            "eval-matting",
            pred.to_str().unwrap(),
            gt.to_str().unwrap(),
            "--out",
            em1.to_str().unwrap(),
            "--workers",
            "1",
        ],
        &[],
    );
    run_ok(
        &[
            "eval-matting",
            pred.to_str().unwrap(),
            gt.to_str().unwrap(),
            "--out",
            em4.to_str().unwrap(),
            "--workers",
            "4",
        ],
        &[],
    );
    report(
        "criterion 9",
        read(&em1.join("per_image.csv")) == read(&em4.join("per_image.csv"))
            && read(&em1.join("aggregate.json")) == read(&em4.join("aggregate.json")),
        "eval-matting is byte-identical across worker counts",
    );

    // eval-dis: identical outputs for 1 vs 4 workers.
    let ed1 = tmp.path().join("ed1");
    let ed4 = tmp.path().join("ed4");
    run_ok(
        &[
            "eval-dis",
            pred.to_str().unwrap(),
            gt.to_str().unwrap(),
            "--out",
            ed1.to_str().unwrap(),
            "--workers",
            "1",
        ],
        &[],
    );
    run_ok(
        &[
            "eval-dis",
            pred.to_str().unwrap(),
            gt.to_str().unwrap(),
            "--out",
            ed4.to_str().unwrap(),
            "--workers",
            "4",
        ],
        &[],
    );
    report(
        "criterion 9",
        read(&ed1.join("per_image.csv")) == read(&ed4.join("per_image.csv"))
            && read(&ed1.join("aggregate.json")) == read(&ed4.join("aggregate.json")),
        "eval-dis is byte-identical across worker counts",
    );

    // loss: identical stdout across runs.
    let one_pred = pred.join("img0.png");
    let one_gt = gt.join("img0.png");
    let l1 = run_ok(
        &[
            "loss",
            "--pred",
            one_pred.to_str().unwrap(),
            "--gt",
            one_gt.to_str().unwrap(),
            "--task",
            "matting",
        ],
        &[],
    );
    let l2 = run_ok(
        &[
            "loss",
            "--pred",
            one_pred.to_str().unwrap(),
            "--gt",
            one_gt.to_str().unwrap(),
            "--task",
            "matting",
        ],
        &[],
    );
    report(
        "criterion 9",
        l1.stdout == l2.stdout,
        "loss is byte-identical across runs",
    );

    // sinkhorn: identical stdout across runs.
    let cost = tmp.path().join("cost.csv");
    std::fs::write(&cost, "0.0,0.7,1.3\n0.7,0.0,0.4\n1.3,0.4,0.0\n").unwrap();
    let s1 = run_ok(&["sinkhorn", "--cost", cost.to_str().unwrap()], &[]);
    let s2 = run_ok(&["sinkhorn", "--cost", cost.to_str().unwrap()], &[]);
    report(
        "criterion 9",
        s1.stdout == s2.stdout,
        "sinkhorn is byte-identical across runs",
    );

    // composite: identical pair images across repeated seeded runs.
    let comp_in = tmp.path().join("cin");
    std::fs::create_dir_all(comp_in.join("fg")).unwrap();
    std::fs::create_dir_all(comp_in.join("alpha")).unwrap();
    std::fs::create_dir_all(comp_in.join("bg")).unwrap();
    {
        use fclm::compositor::RgbImage;
        use fclm::io::{save_alpha, save_rgb};
        use fclm::pred_loss::AlphaMatte;
        let fg = RgbImage::from_fn(16, 16, |x, y| [(x * 9) as u8, (y * 9) as u8, 128]).unwrap();
        save_rgb(&comp_in.join("fg/o.png"), &fg).unwrap();
        let alpha =
            AlphaMatte::from_fn(16, 16, |x, y| if x + y < 16 { 1.0 } else { 0.25 }).unwrap();
        save_alpha(&comp_in.join("alpha/o.png"), &alpha).unwrap();
        for (i, shade) in [40u8, 200].iter().enumerate() {
            let bg = RgbImage::from_fn(16, 16, |_, _| [*shade, *shade / 2, *shade]).unwrap();
            save_rgb(&comp_in.join(format!("bg/b{i}.png")), &bg).unwrap();
        }
    }
    let c1 = tmp.path().join("c1");
    let c2 = tmp.path().join("c2");
    for out in [&c1, &c2] {
        run_ok(
            &[
                "composite",
                "--fg",
                comp_in.join("fg").to_str().unwrap(),
                "--alpha",
                comp_in.join("alpha").to_str().unwrap(),
                "--bg",
                comp_in.join("bg").to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
                "--pairs",
                "2",
                "--seed",
                "11",
            ],
            &[],
        );
    }
    let same = [
        "pair_0000_a.png",
        "pair_0000_b.png",
        "pair_0001_a.png",
        "pairs.json",
    ]
    .iter()
    .all(|f| read(&c1.join(f)) == read(&c2.join(f)));
    report(
        "criterion 9",
        same,
        "composite is byte-identical across repeated seeded runs",
    );
}

#[test]
fn criterion_10_selftest_under_budget() {
    let t0 = Instant::now();
    let out = Command::new(bin())
        .arg("selftest")
        .env_remove("FCLM_SEED")
        .output()
        .expect("binary runs");
    let elapsed = t0.elapsed();
    let stdout = String::from_utf8_lossy(&out.stdout);
    report(
        "criterion 10",
        out.status.success(),
        &format!("selftest exit status {:?}", out.status.code()),
    );
    report(
        "criterion 10",
        stdout.lines().filter(|l| l.starts_with("[PASS]")).count() >= 20,
        "selftest prints a pass line per check",
    );
    report(
        "criterion 10",
        elapsed.as_secs_f64() < 60.0,
        &format!("runtime {:.1} s (limit 60 s)", elapsed.as_secs_f64()),
    );
}
