//! Batch command-line surface: compositing, metric evaluation, single-pair
//! losses, Sinkhorn solving, gradient checking, toy training, and the
//! embedded self-test.
//!
//! Exit codes are a stable contract: 0 success, 1 check failure, 2 input
//! error. All commands are deterministic for fixed seeds and worker counts;
//! the run manifest (which records wall time) is the one artifact excluded
//! from that guarantee.

use crate::compositor::make_pair;
use crate::error::{Error, Result};
use crate::fg_align::{sinkhorn_plan, EmpiricalDistribution, SinkhornConfig};
use crate::io;
use crate::metrics_dis::{self, DisConfig, EMeasureMode};
use crate::metrics_matting::{imq, ImqQuality, InstanceSet, MatteReport};
use crate::numerics::DenseMatrix;
use crate::pred_loss::{
    bce_loss, iou_loss, l1_matte_loss, laplacian_pyramid_loss, LossWeights, DEFAULT_PYRAMID_LEVELS,
};
use crate::toy_harness::{make_blob_dataset, run_training, TrainConfig};
use crate::verify;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Environment variable that overrides default seeds.
pub const SEED_ENV: &str = "FCLM_SEED";

#[derive(Parser)]
#[command(
    name = "fclm",
    version,
    about = "Foreground-consistent matting/segmentation numerics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Composite one foreground over two backgrounds per pair
    Composite(CompositeArgs),
    /// Evaluate matting metrics over prediction/ground-truth directories
    EvalMatting(EvalMattingArgs),
    /// Evaluate dichotomous-segmentation metrics over directories
    EvalDis(EvalDisArgs),
    /// Per-pair prediction losses for one image pair
    Loss(LossArgs),
    /// Solve entropic optimal transport for a CSV cost matrix
    Sinkhorn(SinkhornArgs),
    /// Finite-difference checks for every analytic gradient
    Gradcheck(GradcheckArgs),
    /// Train the synthetic-blob toy harness
    TrainToy(TrainToyArgs),
    /// Run the embedded oracle and identity suite
    Selftest(SelftestArgs),
}

#[derive(Args)]
struct CompositeArgs {
    /// Directory of foreground PNGs
    #[arg(long)]
    fg: PathBuf,
    /// Directory of alpha-matte PNGs, matched to foregrounds by file name
    #[arg(long)]
    alpha: PathBuf,
    /// Directory of background PNGs (the pool)
    #[arg(long)]
    bg: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Number of pairs to synthesize
    #[arg(long, default_value_t = 1)]
    pairs: usize,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvalMattingArgs {
    pred_dir: PathBuf,
    gt_dir: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Treat each subdirectory as one image's instance set and report IMQ
    #[arg(long)]
    instances: bool,
}

#[derive(Args)]
struct EvalDisArgs {
    pred_dir: PathBuf,
    gt_dir: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum TaskKind {
    Matting,
    Dis,
}

#[derive(Args)]
struct LossArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long, value_enum)]
    task: TaskKind,
    /// Laplacian pyramid depth for the matting task
    #[arg(long, default_value_t = DEFAULT_PYRAMID_LEVELS)]
    levels: usize,
}

#[derive(Args)]
struct SinkhornArgs {
    /// Square cost matrix as header-less CSV
    #[arg(long)]
    cost: PathBuf,
    #[arg(long, default_value_t = SinkhornConfig::default().reg)]
    reg: f64,
    #[arg(long, default_value_t = SinkhornConfig::default().max_iters)]
    max_iters: usize,
    #[arg(long, default_value_t = SinkhornConfig::default().marginal_tol)]
    tol: f64,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Also write the JSON report to this file
    #[arg(long)]
    out: Option<PathBuf>,
    /// Instances per loss family
    #[arg(long, default_value_t = 20)]
    instances: usize,
}

#[derive(Args)]
struct TrainToyArgs {
    #[arg(long, default_value_t = 200)]
    steps: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// JSON-lines training log destination
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1e-2)]
    lr: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value_t = 0.25)]
    exchange_ratio: f64,
    #[arg(long, default_value_t = 0.25)]
    delta: f64,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    #[arg(long, default_value_t = 0.05)]
    reg: f64,
    #[arg(long, default_value_t = 2000)]
    sinkhorn_iters: usize,
    #[arg(long, default_value_t = 1e-4)]
    sinkhorn_tol: f64,
    #[arg(long, default_value_t = 8)]
    patch_size: usize,
    #[arg(long, default_value_t = 2)]
    levels: usize,
    #[arg(long, default_value_t = 8)]
    pairs: usize,
    #[arg(long, default_value_t = 32)]
    image_size: usize,
    #[arg(long, default_value_t = 1.0)]
    w_kd: f64,
    #[arg(long, default_value_t = 1.0)]
    w_adv: f64,
    #[arg(long, default_value_t = 1.0)]
    w_ot: f64,
    #[arg(long, default_value_t = 1.0)]
    w_head: f64,
}

#[derive(Args)]
struct SelftestArgs {
    /// Deliberately corrupt one analytic gradient to prove failure detection
    #[arg(long)]
    corrupt_gradient: bool,
}

/// Per-run provenance written next to file outputs. Records wall time, so
/// it is deliberately outside the byte-determinism contract.
#[derive(Serialize)]
struct RunManifest {
    command: String,
    config: serde_json::Value,
    inputs: Vec<String>,
    seed: Option<u64>,
    version: &'static str,
    wall_ms: u128,
}

fn resolve_seed(flag: Option<u64>, fallback: u64) -> u64 {
    if let Some(s) = flag {
        return s;
    }
    if let Ok(v) = std::env::var(SEED_ENV) {
        if let Ok(s) = v.parse() {
            return s;
        }
    }
    fallback
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.display().to_string(),
        source: e,
    })
}

fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<()> {
    io::write_json(path, manifest)
}

/// Entry point for the `fclm` binary; returns the process exit code.
pub fn run() -> i32 {
    run_from(std::env::args_os())
}

/// Testable entry point over explicit arguments.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version are successful exits; usage errors are input errors.
            let _ = e.print();
            return if e.exit_code() == 0 { 0 } else { 2 };
        }
    };
    let started = Instant::now();
    let outcome = match cli.command {
        Command::Composite(a) => cmd_composite(a, started),
        Command::EvalMatting(a) => cmd_eval_matting(a, started),
        Command::EvalDis(a) => cmd_eval_dis(a, started),
        Command::Loss(a) => cmd_loss(a),
        Command::Sinkhorn(a) => cmd_sinkhorn(a),
        Command::Gradcheck(a) => cmd_gradcheck(a, started),
        Command::TrainToy(a) => cmd_train_toy(a, started),
        Command::Selftest(a) => cmd_selftest(a, started),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn cmd_composite(args: CompositeArgs, started: Instant) -> Result<i32> {
    let fgs = io::list_pngs(&args.fg)?;
    let alphas = io::list_pngs(&args.alpha)?;
    if fgs.is_empty() {
        eprintln!("error: no foreground images in {}", args.fg.display());
        return Ok(2);
    }
    let names = |paths: &[PathBuf]| -> Vec<String> {
        paths
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect()
    };
    let fg_names = names(&fgs);
    let alpha_names = names(&alphas);
    if fg_names != alpha_names {
        eprintln!(
            "error: foreground and alpha directories differ: {:?}",
            symmetric_difference(&fg_names, &alpha_names)
        );
        return Ok(2);
    }
    let pool: Vec<_> = io::list_pngs(&args.bg)?
        .iter()
        .map(|p| io::load_rgb(p))
        .collect::<Result<_>>()?;
    let seed = resolve_seed(args.seed, 0);
    ensure_dir(&args.out)?;

    #[derive(Serialize)]
    struct PairRecord {
        id: usize,
        foreground: String,
        background_a_id: usize,
        background_b_id: usize,
        seed: u64,
    }
    let mut records = Vec::new();
    for i in 0..args.pairs {
        let which = i % fgs.len();
        let fg = io::load_rgb(&fgs[which])?;
        let alpha = io::load_alpha(&alphas[which])?;
        let pair_seed = seed.wrapping_add(i as u64);
        let pair = make_pair(&fg, &alpha, &pool, pair_seed)?;
        io::save_rgb(&args.out.join(format!("pair_{i:04}_a.png")), &pair.image_a)?;
        io::save_rgb(&args.out.join(format!("pair_{i:04}_b.png")), &pair.image_b)?;
        io::save_alpha(
            &args.out.join(format!("pair_{i:04}_alpha.png")),
            &pair.alpha,
        )?;
        records.push(PairRecord {
            id: i,
            foreground: fg_names[which].clone(),
            background_a_id: pair.background_a_id,
            background_b_id: pair.background_b_id,
            seed: pair_seed,
        });
    }
    io::write_json(&args.out.join("pairs.json"), &records)?;
    write_manifest(
        &args.out.join("manifest.json"),
        &RunManifest {
            command: "composite".into(),
            config: serde_json::json!({"pairs": args.pairs}),
            inputs: vec![
                args.fg.display().to_string(),
                args.alpha.display().to_string(),
                args.bg.display().to_string(),
            ],
            seed: Some(seed),
            version: env!("CARGO_PKG_VERSION"),
            wall_ms: started.elapsed().as_millis(),
        },
    )?;
    Ok(0)
}

fn symmetric_difference(a: &[String], b: &[String]) -> Vec<String> {
    let sa: std::collections::BTreeSet<_> = a.iter().collect();
    let sb: std::collections::BTreeSet<_> = b.iter().collect();
    sa.symmetric_difference(&sb)
        .map(|s| s.to_string())
        .collect()
}

/// Pairs same-named PNG files from two directories; any mismatch is an
/// input error listing the symmetric difference.
fn matched_files(
    pred_dir: &Path,
    gt_dir: &Path,
) -> Result<Option<Vec<(String, PathBuf, PathBuf)>>> {
    let preds = io::list_pngs(pred_dir)?;
    let gts = io::list_pngs(gt_dir)?;
    if preds.is_empty() && gts.is_empty() {
        eprintln!(
            "error: no images in {} or {}",
            pred_dir.display(),
            gt_dir.display()
        );
        return Ok(None);
    }
    let name = |p: &PathBuf| p.file_name().unwrap().to_string_lossy().into_owned();
    let pred_names: Vec<String> = preds.iter().map(&name).collect();
    let gt_names: Vec<String> = gts.iter().map(&name).collect();
    if pred_names != gt_names {
        eprintln!(
            "error: prediction and ground-truth sets differ: {:?}",
            symmetric_difference(&pred_names, &gt_names)
        );
        return Ok(None);
    }
    Ok(Some(
        preds
            .into_iter()
            .zip(gts)
            .map(|(p, g)| (name(&p), p, g))
            .collect(),
    ))
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    for row in rows {
        w.write_record(row)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    io::write_string(path, std::str::from_utf8(&bytes).expect("csv is utf-8"))
}

fn cmd_eval_matting(args: EvalMattingArgs, started: Instant) -> Result<i32> {
    ensure_dir(&args.out)?;
    let pool = thread_pool(args.workers)?;
    use rayon::prelude::*;

    if args.instances {
        let pred_groups = io::list_subdirs(&args.pred_dir)?;
        let gt_groups = io::list_subdirs(&args.gt_dir)?;
        if pred_groups.is_empty() && gt_groups.is_empty() {
            eprintln!("error: no instance groups found");
            return Ok(2);
        }
        let name = |p: &PathBuf| p.file_name().unwrap().to_string_lossy().into_owned();
        let pn: Vec<String> = pred_groups.iter().map(&name).collect();
        let gn: Vec<String> = gt_groups.iter().map(&name).collect();
        if pn != gn {
            eprintln!(
                "error: instance group sets differ: {:?}",
                symmetric_difference(&pn, &gn)
            );
            return Ok(2);
        }
        let results: Result<Vec<(String, [f64; 4])>> = pool.install(|| {
            pred_groups
                .par_iter()
                .zip(gt_groups.par_iter())
                .map(|(pg, gg)| {
                    let load_set = |dir: &Path| -> Result<InstanceSet> {
                        let mattes: Result<Vec<_>> = io::list_pngs(dir)?
                            .iter()
                            .map(|p| io::load_alpha(p))
                            .collect();
                        InstanceSet::new(mattes?)
                    };
                    let pred_set = load_set(pg)?;
                    let gt_set = load_set(gg)?;
                    let scores = [
                        imq(&pred_set, &gt_set, ImqQuality::Conn)?,
                        imq(&pred_set, &gt_set, ImqQuality::Grad)?,
                        imq(&pred_set, &gt_set, ImqQuality::Mad)?,
                        imq(&pred_set, &gt_set, ImqQuality::Mse)?,
                    ];
                    Ok((name(pg), scores))
                })
                .collect()
        });
        let results = results?;
        let rows: Vec<Vec<String>> = results
            .iter()
            .map(|(n, s)| {
                let mut row = vec![n.clone()];
                row.extend(s.iter().map(|v| v.to_string()));
                row
            })
            .collect();
        write_csv(
            &args.out.join("per_image.csv"),
            &["filename", "imq_conn", "imq_grad", "imq_mad", "imq_mse"],
            &rows,
        )?;
        let n = results.len() as f64;
        let mean = |i: usize| results.iter().map(|(_, s)| s[i]).sum::<f64>() / n;
        io::write_json(
            &args.out.join("aggregate.json"),
            &serde_json::json!({
                "images": results.len(),
                "IMQ_Conn": mean(0),
                "IMQ_Grad": mean(1),
                "IMQ_MAD": mean(2),
                "IMQ_MSE": mean(3),
            }),
        )?;
    } else {
        let files = match matched_files(&args.pred_dir, &args.gt_dir)? {
            Some(f) => f,
            None => return Ok(2),
        };
        let results: Result<Vec<(String, MatteReport)>> = pool.install(|| {
            files
                .par_iter()
                .map(|(name, pred, gt)| {
                    let p = io::load_alpha(pred)?;
                    let g = io::load_alpha(gt)?;
                    Ok((name.clone(), MatteReport::compute(&p, &g)?))
                })
                .collect()
        });
        let results = results?;
        let rows: Vec<Vec<String>> = results
            .iter()
            .map(|(n, r)| {
                vec![
                    n.clone(),
                    r.conn.to_string(),
                    r.grad.to_string(),
                    r.mad.to_string(),
                    r.mse.to_string(),
                    r.sad.to_string(),
                ]
            })
            .collect();
        write_csv(
            &args.out.join("per_image.csv"),
            &["filename", "conn", "grad", "mad", "mse", "sad"],
            &rows,
        )?;
        let n = results.len() as f64;
        let mean = |f: fn(&MatteReport) -> f64| results.iter().map(|(_, r)| f(r)).sum::<f64>() / n;
        io::write_json(
            &args.out.join("aggregate.json"),
            &serde_json::json!({
                "images": results.len(),
                "SAD": mean(|r| r.sad),
                "MSE": mean(|r| r.mse),
                "MAD": mean(|r| r.mad),
                "Grad": mean(|r| r.grad),
                "Conn": mean(|r| r.conn),
            }),
        )?;
    }
    write_manifest(
        &args.out.join("manifest.json"),
        &RunManifest {
            command: "eval-matting".into(),
            config: serde_json::json!({"workers": args.workers, "instances": args.instances}),
            inputs: vec![
                args.pred_dir.display().to_string(),
                args.gt_dir.display().to_string(),
            ],
            seed: None,
            version: env!("CARGO_PKG_VERSION"),
            wall_ms: started.elapsed().as_millis(),
        },
    )?;
    Ok(0)
}

struct DisRow {
    e_phi_m: f64,
    f_beta_w: Option<f64>,
    hce_gamma: u64,
    m: f64,
    s_alpha: f64,
    max_f_beta: Option<f64>,
}

fn eval_dis_image(pred: &Path, gt: &Path, cfg: &DisConfig) -> Result<DisRow> {
    let p = io::load_alpha(pred)?;
    let g = io::load_mask(gt)?;
    // An all-background ground truth leaves recall undefined; those two
    // scores are reported per image as missing and excluded from the mean.
    let max_f = match metrics_dis::max_f_measure(&p, &g, cfg.max_f_beta_sq) {
        Ok(v) => Some(v),
        Err(Error::UndefinedRecall) => None,
        Err(e) => return Err(e),
    };
    let wf = match metrics_dis::weighted_f_measure_with(
        &p,
        &g,
        cfg.weighted_f_beta_sq,
        cfg.weighted_f_sigma,
    ) {
        Ok(v) => Some(v),
        Err(Error::UndefinedRecall) => None,
        Err(e) => return Err(e),
    };
    Ok(DisRow {
        e_phi_m: metrics_dis::e_measure(&p, &g, cfg.e_mode)?,
        f_beta_w: wf,
        hce_gamma: metrics_dis::hce(&p, &g, cfg.hce_gamma)?,
        m: metrics_dis::mae(&p, &g)?,
        s_alpha: metrics_dis::s_measure(&p, &g, cfg.s_alpha)?,
        max_f_beta: max_f,
    })
}

fn cmd_eval_dis(args: EvalDisArgs, started: Instant) -> Result<i32> {
    ensure_dir(&args.out)?;
    let files = match matched_files(&args.pred_dir, &args.gt_dir)? {
        Some(f) => f,
        None => return Ok(2),
    };
    let cfg = DisConfig {
        e_mode: EMeasureMode::Mean,
        ..DisConfig::default()
    };
    let pool = thread_pool(args.workers)?;
    use rayon::prelude::*;
    let results: Result<Vec<(String, DisRow)>> = pool.install(|| {
        files
            .par_iter()
            .map(|(name, pred, gt)| Ok((name.clone(), eval_dis_image(pred, gt, &cfg)?)))
            .collect()
    });
    let results = results?;
    let opt_cell = |v: &Option<f64>| v.map(|x| x.to_string()).unwrap_or_else(|| "nan".into());
    let rows: Vec<Vec<String>> = results
        .iter()
        .map(|(n, r)| {
            vec![
                n.clone(),
                r.e_phi_m.to_string(),
                opt_cell(&r.f_beta_w),
                r.hce_gamma.to_string(),
                r.m.to_string(),
                r.s_alpha.to_string(),
                opt_cell(&r.max_f_beta),
            ]
        })
        .collect();
    write_csv(
        &args.out.join("per_image.csv"),
        &[
            "filename",
            "E_phi_m",
            "F_beta_w",
            "HCE_gamma",
            "M",
            "S_alpha",
            "maxF_beta",
        ],
        &rows,
    )?;
    let n = results.len() as f64;
    let defined: Vec<f64> = results.iter().filter_map(|(_, r)| r.max_f_beta).collect();
    let defined_wf: Vec<f64> = results.iter().filter_map(|(_, r)| r.f_beta_w).collect();
    let opt_mean = |v: &[f64]| {
        if v.is_empty() {
            serde_json::Value::Null
        } else {
            serde_json::json!(v.iter().sum::<f64>() / v.len() as f64)
        }
    };
    io::write_json(
        &args.out.join("aggregate.json"),
        &serde_json::json!({
            "images": results.len(),
            "maxF_beta": opt_mean(&defined),
            "F_beta_w": opt_mean(&defined_wf),
            "M": results.iter().map(|(_, r)| r.m).sum::<f64>() / n,
            "S_alpha": results.iter().map(|(_, r)| r.s_alpha).sum::<f64>() / n,
            "E_phi_m": results.iter().map(|(_, r)| r.e_phi_m).sum::<f64>() / n,
            "HCE_gamma": results.iter().map(|(_, r)| r.hce_gamma as f64).sum::<f64>() / n,
            "skipped_undefined_recall": results.len() - defined.len(),
            "hce_approx": true,
        }),
    )?;
    write_manifest(
        &args.out.join("manifest.json"),
        &RunManifest {
            command: "eval-dis".into(),
            config: serde_json::json!({"workers": args.workers}),
            inputs: vec![
                args.pred_dir.display().to_string(),
                args.gt_dir.display().to_string(),
            ],
            seed: None,
            version: env!("CARGO_PKG_VERSION"),
            wall_ms: started.elapsed().as_millis(),
        },
    )?;
    Ok(0)
}

fn cmd_loss(args: LossArgs) -> Result<i32> {
    let pred = io::load_alpha(&args.pred)?;
    let report = match args.task {
        TaskKind::Matting => {
            let gt = io::load_alpha(&args.gt)?;
            let l1 = l1_matte_loss(&pred, &gt)?;
            let lap = laplacian_pyramid_loss(&pred, &gt, args.levels)?;
            serde_json::json!({"task": "matting", "l1": l1, "laplacian": lap, "total": l1 + lap})
        }
        TaskKind::Dis => {
            let gt = io::load_mask(&args.gt)?;
            let bce = bce_loss(&pred, &gt)?;
            let iou = iou_loss(&pred, &gt)?;
            serde_json::json!({"task": "dis", "bce": bce, "iou": iou, "total": bce + iou})
        }
    };
    println!(
        "{}",
        serde_json::to_string_pretty(&report).expect("serializable")
    );
    Ok(0)
}

fn cmd_sinkhorn(args: SinkhornArgs) -> Result<i32> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(&args.cost)
        .map_err(|e| Error::Io {
            path: args.cost.display().to_string(),
            source: std::io::Error::other(e.to_string()),
        })?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let row: std::result::Result<Vec<f64>, _> =
            record.iter().map(|f| f.trim().parse::<f64>()).collect();
        rows.push(row.map_err(|e| Error::InvalidArgument(format!("bad cost entry: {e}")))?);
    }
    let k = rows.len();
    if k == 0 || rows.iter().any(|r| r.len() != k) {
        return Err(Error::InvalidArgument(format!(
            "cost matrix must be square and nonempty, got {k} rows"
        )));
    }
    let cost = DenseMatrix::from_vec(k, k, rows.into_iter().flatten().collect())?;
    let u = EmpiricalDistribution::uniform(k)?;
    let plan = sinkhorn_plan(&cost, &u, &u, args.reg, args.max_iters, args.tol)?;
    let report = serde_json::json!({
        "k": k,
        "reg": plan.reg,
        "iterations_used": plan.iterations_used,
        "loss": plan.transport_cost(),
        "row_marginals": plan.row_marginals(),
        "col_marginals": plan.col_marginals(),
        "plan": plan.pi.to_rows_vec(),
    });
    println!(
        "{}",
        serde_json::to_string_pretty(&report).expect("serializable")
    );
    Ok(0)
}

fn cmd_gradcheck(args: GradcheckArgs, started: Instant) -> Result<i32> {
    let checks = verify::gradient_suite(args.instances, false)?;
    let all_pass = checks.iter().all(|c| c.pass);
    let report = serde_json::json!({"checks": checks, "all_pass": all_pass});
    println!(
        "{}",
        serde_json::to_string_pretty(&report).expect("serializable")
    );
    if let Some(out) = &args.out {
        io::write_json(out, &report)?;
        let manifest_path = sidecar_manifest_path(out);
        write_manifest(
            &manifest_path,
            &RunManifest {
                command: "gradcheck".into(),
                config: serde_json::json!({"instances": args.instances}),
                inputs: vec![],
                seed: None,
                version: env!("CARGO_PKG_VERSION"),
                wall_ms: started.elapsed().as_millis(),
            },
        )?;
    }
    Ok(if all_pass { 0 } else { 1 })
}

fn sidecar_manifest_path(out: &Path) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    out.with_file_name(format!("{stem}.manifest.json"))
}

fn cmd_train_toy(args: TrainToyArgs, started: Instant) -> Result<i32> {
    let seed = resolve_seed(args.seed, 0);
    let cfg = TrainConfig {
        steps: args.steps,
        learning_rate: args.lr,
        seed,
        lambda: args.lambda,
        exchange_ratio: args.exchange_ratio,
        delta: args.delta,
        temperature: args.temperature,
        patch_size: args.patch_size,
        pyramid_levels: args.levels,
        sinkhorn: SinkhornConfig {
            reg: args.reg,
            max_iters: args.sinkhorn_iters,
            marginal_tol: args.sinkhorn_tol,
        },
        loss_weights: LossWeights {
            kd: args.w_kd,
            adv: args.w_adv,
            ot: args.w_ot,
            head: args.w_head,
        },
        ..TrainConfig::default()
    };
    let dataset = make_blob_dataset(args.pairs, args.image_size, seed)?;
    let log = run_training(&dataset, &cfg)?;
    io::write_string(&args.out, &log.to_json_lines())?;
    if let Some(last) = log.entries.last() {
        println!("{}", serde_json::to_string(last).expect("serializable"));
    }
    write_manifest(
        &sidecar_manifest_path(&args.out),
        &RunManifest {
            command: "train-toy".into(),
            config: serde_json::to_value(&cfg).expect("serializable"),
            inputs: vec![],
            seed: Some(seed),
            version: env!("CARGO_PKG_VERSION"),
            wall_ms: started.elapsed().as_millis(),
        },
    )?;
    Ok(0)
}

fn cmd_selftest(args: SelftestArgs, started: Instant) -> Result<i32> {
    let results = verify::run_all(args.corrupt_gradient)?;
    let mut all_pass = true;
    for r in &results {
        let status = if r.pass { "PASS" } else { "FAIL" };
        println!(
            "[{status}] {:<32} {:>12.3e} <= {:.3e}",
            r.name, r.value, r.threshold
        );
        all_pass &= r.pass;
    }
    let passed = results.iter().filter(|r| r.pass).count();
    println!("{passed}/{} checks passed", results.len());
    let elapsed = started.elapsed();
    if elapsed.as_secs() >= 60 {
        eprintln!(
            "warning: selftest took {:.1} s, over the 60 s budget",
            elapsed.as_secs_f64()
        );
    }
    Ok(if all_pass { 0 } else { 1 })
}
