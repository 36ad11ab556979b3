//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria that need the C-MAPSS files read them from `$CMAPSS_DIR`
//! (`train_FD001.txt`, `test_FD001.txt`, `RUL_FD001.txt`, ...). Without it
//! they print FAIL marked "not evaluated". The process exits non-zero when an
//! evaluated criterion fails; with `RUL_ACCEPTANCE_STRICT=1` unevaluated
//! criteria count as failures too.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rul_cli::config::ExperimentConfig;
use rul_cli::pipeline::{self, TestSplit};
use rul_core::data::synthetic::{generate, SyntheticConfig};
use rul_core::data::{
    cluster_conditions, load_dataset, window_count, window_split, write_cmapss, Labels, NormalizedTrajectory,
    WindowSet, CHANNELS, SETTINGS,
};
use rul_core::eval::{export_attention, phm_score, rmse};
use rul_core::nn::{
    multi_head_attention, scaled_dot_product_attention, Mode, ModelConfig, MultiHeadAttention, RulModel,
};
use rul_core::tensor::{Tape, Tensor, Var};

enum Verdict {
    Pass(String),
    Fail(String),
    NotEvaluated(String),
}

use Verdict::*;

fn verdict(ok: bool, detail: String) -> Verdict {
    if ok {
        Pass(detail)
    } else {
        Fail(detail)
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform(r: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.random_range(-scale..scale)).collect()).unwrap()
}

fn cmapss_dir() -> Option<PathBuf> {
    std::env::var_os("CMAPSS_DIR").map(PathBuf::from)
}

fn no_data() -> Verdict {
    NotEvaluated("C-MAPSS data unavailable; set CMAPSS_DIR".into())
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

// ---- 1 ------------------------------------------------------------------------

fn gradient_oracle() -> Verdict {
    let t0 = Instant::now();
    let config = ModelConfig {
        features: 4,
        window: 6,
        mode: Mode::FT,
        feature_heads: 2,
        sequence_heads: 2,
        lstm_layers: 3,
        lstm_hidden: 8,
        mlp_hidden: 8,
        dropout: 0.5,
    };
    let model = RulModel::<f64>::new(config, &mut rng(42)).unwrap();
    let mut r = rng(43);
    let point: Vec<Tensor<f64>> = model
        .params()
        .iter()
        .map(|p| uniform(&mut r, p.value.shape(), 1.0))
        .collect();
    let x = uniform(&mut r, &[3, 4, 6], 1.0);
    let target = [0.7, -0.2, 1.3];

    let loss = |tape: &mut Tape<f64>, vars: &[Var]| -> Var {
        let xv = tape.constant(x.clone());
        let pred = model.forward(tape, vars, xv, None).unwrap().prediction;
        let t = tape.constant(Tensor::vector(target.to_vec()).unwrap());
        let d = tape.sub(pred, t).unwrap();
        let sq = tape.mul(d, d).unwrap();
        tape.mean(sq).unwrap()
    };
    let value = |params: &[Tensor<f64>]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| tape.constant(p.clone())).collect();
        let l = loss(&mut tape, &vars);
        tape.value(l).data()[0]
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = point.iter().map(|p| tape.param(p.clone())).collect();
    let l = loss(&mut tape, &vars);
    tape.backward(l).unwrap();

    let eps = 1e-5;
    let mut work = point.clone();
    let (mut worst, mut worst_name, mut worst_entry) = (0.0f64, String::new(), 0.0f64);
    for (k, p) in model.params().iter().enumerate() {
        let analytic = tape
            .grad(vars[k])
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; point[k].len()]);
        let (mut diff, mut scale) = (0.0f64, 1e-8f64);
        for (i, &a) in analytic.iter().enumerate() {
            let orig = work[k].data()[i];
            work[k].data_mut()[i] = orig + eps;
            let up = value(&work);
            work[k].data_mut()[i] = orig - eps;
            let down = value(&work);
            work[k].data_mut()[i] = orig;
            let n = (up - down) / (2.0 * eps);
            diff = diff.max((a - n).abs());
            scale = scale.max(a.abs()).max(n.abs());
            worst_entry = worst_entry.max((a - n).abs() / a.abs().max(n.abs()).max(1e-8));
        }
        let rel = diff / scale;
        if rel >= worst {
            worst = rel;
            worst_name = p.name.clone();
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    verdict(
        worst < 1e-4 && secs < 60.0,
        format!(
            "{} tensors, worst relative error {worst:.2e} ({worst_name}), worst single entry {worst_entry:.2e}, {secs:.1}s",
            model.params().len()
        ),
    )
}

// ---- 2 ------------------------------------------------------------------------

fn metric_oracles() -> Verdict {
    let e1 = std::f64::consts::E - 1.0;
    let late = phm_score(&[10.0]);
    let early = phm_score(&[-13.0]);
    let r = rmse(&[3.0, -4.0]).unwrap();
    let mut ok = (late - e1).abs() <= 1e-9 && (early - e1).abs() <= 1e-9 && (r - 12.5f64.sqrt()).abs() <= 1e-9;
    for x in [1.0, 5.0, 20.0] {
        ok &= phm_score(&[x]) > phm_score(&[-x]);
    }
    verdict(
        ok,
        format!("score(+10) = {late:.12}, score(-13) = {early:.12}, rmse = {r:.12}"),
    )
}

// ---- 3 ------------------------------------------------------------------------

fn series(len: usize, r: &mut ChaCha8Rng) -> NormalizedTrajectory {
    NormalizedTrajectory {
        unit_id: 1,
        conditions: vec![0; len],
        values: (0..len * CHANNELS).map(|_| r.random_range(-3.0..3.0)).collect(),
    }
}

fn windowing_oracle() -> Verdict {
    let mut r = rng(3);
    let mut failures = Vec::new();
    for _ in 0..50 {
        let t_total = r.random_range(1..=200usize);
        let window = r.random_range(1..=60usize);
        let traj = series(t_total, &mut r);
        let samples = window_split(&traj, window, Labels::Train { r_max: 125 }).unwrap();
        let closed_form = if window <= t_total { t_total - window + 1 } else { 1 };
        let brute: Vec<usize> = {
            let fits: Vec<usize> = (1..=t_total).filter(|&e| e >= window).collect();
            if fits.is_empty() {
                vec![t_total]
            } else {
                fits
            }
        };
        let ends: Vec<usize> = samples.iter().map(|s| s.end_cycle as usize).collect();
        let set = WindowSet::train(vec![traj.clone()], window, 125).unwrap();
        if samples.len() != closed_form
            || window_count(t_total, window) != closed_form
            || ends != brute
            || set.len() != closed_form
        {
            failures.push(format!("({t_total}, {window}): {} windows", samples.len()));
            continue;
        }
        for s in &samples {
            for j in 0..window {
                let cycle = (s.end_cycle as usize + j + 1).saturating_sub(window).max(1);
                for c in 0..CHANNELS {
                    if s.matrix.at(&[c, j]) != traj.row(cycle - 1)[c] as f32 {
                        failures.push(format!("({t_total}, {window}): column {j} of window {}", s.end_cycle));
                    }
                }
            }
        }
    }
    failures.dedup();
    verdict(
        failures.is_empty(),
        if failures.is_empty() {
            "50 pairs: counts match closed form and brute force, padding repeats cycle 1".into()
        } else {
            failures.join("; ")
        },
    )
}

// ---- 4 and 5 --------------------------------------------------------------------

fn ingestion(dir: Option<&Path>) -> Verdict {
    let Some(dir) = dir else { return no_data() };
    let mut details = Vec::new();
    let mut ok = true;
    for (name, train, test) in [("FD001", 100, 100), ("FD002", 260, 259)] {
        match load_dataset(dir, name) {
            Ok(d) => {
                ok &= d.train.len() == train && d.test.len() == test && d.truth.len() == test;
                details.push(format!("{name} {}/{}", d.train.len(), d.test.len()));
            }
            Err(e) => {
                ok = false;
                details.push(format!("{name}: {e}"));
            }
        }
    }
    verdict(ok, details.join(", "))
}

fn clustering(dir: Option<&Path>) -> Verdict {
    let Some(dir) = dir else { return no_data() };
    let data = match load_dataset(dir, "FD002") {
        Ok(d) => d,
        Err(e) => return Fail(format!("FD002: {e}")),
    };
    let cm = match cluster_conditions(&data.train, 6, 0) {
        Ok(cm) => cm,
        Err(e) => return Fail(format!("k-means: {e}")),
    };
    let points: Vec<[f64; SETTINGS]> = data
        .train
        .iter()
        .flat_map(|t| t.rows.iter().map(|r| r.settings))
        .collect();
    let span: Vec<f64> = (0..SETTINGS)
        .map(|d| {
            let (lo, hi) = points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                (lo.min(p[d]), hi.max(p[d]))
            });
            (hi - lo).max(f64::MIN_POSITIVE)
        })
        .collect();
    let mut counts = [0usize; 6];
    let mut spread = 0.0f64;
    for p in &points {
        let j = cm.assign(p);
        counts[j] += 1;
        let d2: f64 = (0..SETTINGS)
            .map(|d| ((p[d] - cm.centroids[j][d]) / span[d]).powi(2))
            .sum();
        spread = spread.max(d2.sqrt());
    }

    let k = cm.k();
    let mut sum = vec![vec![0.0f64; CHANNELS]; k];
    let mut sq = vec![vec![0.0f64; CHANNELS]; k];
    let mut n = vec![0usize; k];
    for t in &data.train {
        let s = cm.normalize(t);
        for (i, &j) in s.conditions.iter().enumerate() {
            n[j] += 1;
            for (c, &v) in s.row(i).iter().enumerate() {
                sum[j][c] += v;
                sq[j][c] += v * v;
            }
        }
    }
    let (mut worst_mean, mut worst_std) = (0.0f64, 0.0f64);
    for j in 0..k {
        for c in 0..CHANNELS {
            if cm.is_constant(j, c) || n[j] == 0 {
                continue;
            }
            let m = sum[j][c] / n[j] as f64;
            let sd = (sq[j][c] / n[j] as f64 - m * m).max(0.0).sqrt();
            worst_mean = worst_mean.max(m.abs());
            worst_std = worst_std.max((sd - 1.0).abs());
        }
    }
    let ok = spread <= 1e-3 && counts.iter().all(|&c| c > 0) && worst_mean <= 1e-5 && worst_std <= 1e-3;
    verdict(
        ok,
        format!(
            "cluster sizes {counts:?}, max span-normalised distance {spread:.2e}, |mean| <= {worst_mean:.1e}, |std-1| <= {worst_std:.1e}"
        ),
    )
}

// ---- 6 ------------------------------------------------------------------------

fn rows_stochastic<S: rul_core::tensor::Scalar>(w: &Tensor<S>, worst: &mut f64) {
    let n = *w.shape().last().unwrap();
    for row in w.data().chunks(n) {
        let s: f64 = row.iter().map(|v| v.as_f64()).sum();
        *worst = worst.max((s - 1.0).abs());
    }
}

fn attention_invariants() -> Verdict {
    let mut r = rng(6);
    let mut problems = Vec::new();

    let mut worst_row = 0.0f64;
    let data = generate(&SyntheticConfig {
        train_units: 2,
        test_units: 1,
        min_life: 40,
        max_life: 50,
        ..Default::default()
    });
    let cm = cluster_conditions(&data.train, 1, 0).unwrap();
    for mode in Mode::ALL {
        let model = RulModel::<f32>::new(
            ModelConfig {
                mode,
                ..ModelConfig::new(CHANNELS, 30)
            },
            &mut r,
        )
        .unwrap();
        let x = uniform(&mut r, &[CHANNELS, 30], 2.0).cast::<f32>();
        let inf = model.infer(&x).unwrap();
        for w in inf.attention.feature.iter().chain(&inf.attention.sequence) {
            rows_stochastic(w, &mut worst_row);
        }
        if mode == Mode::L {
            continue;
        }
        let export = export_attention(&model, &cm, &data.train[0], Some(1..=40)).unwrap();
        for c in &export.cycles {
            for m in c
                .feature
                .iter()
                .chain(&c.sequence)
                .chain(std::iter::once(&c.feature_mean))
            {
                for row in m {
                    worst_row = worst_row.max((row.iter().sum::<f64>() - 1.0).abs());
                }
            }
        }
    }
    if worst_row > 1e-6 {
        problems.push(format!("row sum off by {worst_row:.2e}"));
    }

    let mut shapes = 0;
    for window in [6usize, 10, 20, 30, 40, 50] {
        let divisors = |n: usize| (1..=n).filter(move |&h| n.is_multiple_of(h));
        for fh in divisors(window) {
            for sh in divisors(CHANNELS) {
                let cfg = ModelConfig {
                    window,
                    feature_heads: fh,
                    sequence_heads: sh,
                    lstm_layers: 1,
                    lstm_hidden: 4,
                    mlp_hidden: 4,
                    ..ModelConfig::new(CHANNELS, window)
                };
                let model = RulModel::<f64>::new(cfg, &mut r).unwrap();
                let x = uniform(&mut r, &[2, CHANNELS, window], 1.0);
                let mut tape = Tape::new();
                let vars = model.bind(&mut tape);
                let xv = tape.constant(x);
                let (f, _) = model.feature_attention_forward(&mut tape, &vars, xv).unwrap();
                let (s, _) = model.sequence_attention_forward(&mut tape, &vars, f).unwrap();
                if tape.shape(f) != [2, CHANNELS, window] || tape.shape(s) != [2, CHANNELS, window] {
                    problems.push(format!(
                        "T={window} heads {fh}/{sh}: {:?} -> {:?}",
                        tape.shape(f),
                        tape.shape(s)
                    ));
                }
                shapes += 1;
            }
        }
    }

    let mut worst_identity = 0.0f64;
    for (n, d) in [(5, 4), (24, 30), (30, 24), (1, 7)] {
        let x = uniform(&mut r, &[n, d], 2.0);
        let eye = Tensor::<f64>::identity(d);
        let (layer, params) =
            MultiHeadAttention::with_weights(vec![eye.clone()], vec![eye.clone()], vec![eye.clone()], eye).unwrap();
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| tape.param(p.value.clone())).collect();
        let xv = tape.constant(x);
        let (out, _) = multi_head_attention(&mut tape, &layer, &vars, xv).unwrap();
        let (raw, _) = scaled_dot_product_attention(&mut tape, xv, xv, xv).unwrap();
        worst_identity = worst_identity.max(tape.value(out).max_abs_diff(tape.value(raw)));
    }
    if worst_identity > 8.0 * f64::EPSILON {
        problems.push(format!("identity projections differ by {worst_identity:.2e}"));
    }

    verdict(
        problems.is_empty(),
        if problems.is_empty() {
            format!(
                "row sums within {worst_row:.1e}, {shapes} head configurations keep their shape, identity heads within {worst_identity:.1e}"
            )
        } else {
            problems.join("; ")
        },
    )
}

// ---- 7, 8 and 9 -------------------------------------------------------------------

const SEEDS: [u64; 3] = [0, 1, 2];

/// Median test RMSE and Score over [`SEEDS`].
fn trained(
    dir: &Path,
    dataset: &str,
    label: &str,
    tweak: impl Fn(&mut ExperimentConfig),
) -> Result<(f64, f64), String> {
    let mut cfg = ExperimentConfig {
        data_dir: Some(dir.to_path_buf()),
        dataset: Some(dataset.into()),
        ..Default::default()
    };
    tweak(&mut cfg);
    let raw = pipeline::load_raw(&cfg, TestSplit::Require).map_err(|e| e.to_string())?;
    let (mut rmses, mut scores) = (Vec::new(), Vec::new());
    for seed in SEEDS {
        let t0 = Instant::now();
        let (out, metrics) = pipeline::run_experiment(&cfg, &raw, seed, |_| {}).map_err(|e| e.to_string())?;
        let m = metrics.expect("test split loaded");
        eprintln!(
            "  {dataset} {label} seed {seed}: rmse {:.3} score {:.1} ({} epochs, {:.0}s)",
            m.rmse,
            m.score,
            out.log.epochs.len(),
            t0.elapsed().as_secs_f64()
        );
        rmses.push(m.rmse);
        scores.push(m.score);
    }
    Ok((median(rmses), median(scores)))
}

fn end_to_end(dir: Option<&Path>) -> Verdict {
    let Some(dir) = dir else { return no_data() };
    match trained(dir, "FD001", "defaults", |_| {}) {
        Ok((r, s)) => verdict(
            r <= 14.5 && s <= 450.0,
            format!("median RMSE {r:.3}, median Score {s:.1}"),
        ),
        Err(e) => Fail(e),
    }
}

fn ablation(dir: Option<&Path>) -> Verdict {
    let Some(dir) = dir else { return no_data() };
    let mut medians = Vec::new();
    for (label, mode) in [("multi-head", Mode::F), ("single-head", Mode::A), ("LSTM", Mode::L)] {
        match trained(dir, "FD001", label, |c| {
            c.mode = mode;
            c.feature_heads = 5;
        }) {
            Ok((r, _)) => medians.push((label, r)),
            Err(e) => return Fail(e),
        }
    }
    let ok = medians[0].1 + 0.2 < medians[1].1 && medians[1].1 + 0.2 < medians[2].1;
    let detail: Vec<String> = medians.iter().map(|(l, r)| format!("{l} {r:.3}")).collect();
    verdict(ok, format!("median RMSE {}", detail.join(", ")))
}

fn normalisation(dir: Option<&Path>) -> Verdict {
    let Some(dir) = dir else { return no_data() };
    let per = trained(dir, "FD002", "k=6", |c| c.conditions = 6);
    let global = trained(dir, "FD002", "k=1", |c| c.conditions = 1);
    match (per, global) {
        (Ok((p, _)), Ok((g, _))) => verdict(
            g - p >= 2.0,
            format!("median RMSE k=6 {p:.3}, k=1 {g:.3}, gain {:.3}", g - p),
        ),
        (Err(e), _) | (_, Err(e)) => Fail(e),
    }
}

// ---- 10 -----------------------------------------------------------------------

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(&SyntheticConfig {
        train_units: 10,
        test_units: 5,
        conditions: 3,
        min_life: 50,
        max_life: 90,
        seed: 10,
        ..Default::default()
    });
    let write = |name: &str, t: &[rul_core::data::RawTrajectory]| {
        write_cmapss(fs::File::create(dir.path().join(name)).unwrap(), t).unwrap();
    };
    write("train_SYN.txt", &data.train);
    write("test_SYN.txt", &data.test);
    fs::write(
        dir.path().join("RUL_SYN.txt"),
        data.truth.iter().map(|t| format!("{t}\n")).collect::<String>(),
    )
    .unwrap();
    let run = |out: &str| {
        Command::new(env!("CARGO_BIN_EXE_rul"))
            .args([
                "--data-dir",
                dir.path().to_str().unwrap(),
                "--dataset",
                "SYN",
                "--conditions",
                "3",
            ])
            .args([
                "--window",
                "10",
                "--feature-heads",
                "2",
                "--sequence-heads",
                "3",
                "--lstm-layers",
                "2",
            ])
            .args([
                "--lstm-hidden",
                "16",
                "--mlp-hidden",
                "16",
                "--max-epochs",
                "4",
                "--batch-size",
                "32",
            ])
            .args([
                "--seed",
                "5",
                "--out",
                dir.path().join(out).to_str().unwrap(),
                "train",
                "--evaluate",
            ])
            .output()
            .unwrap()
    };
    for out in ["a", "b"] {
        let o = run(out);
        if !o.status.success() {
            return Fail(format!(
                "run {out} failed: {}",
                String::from_utf8_lossy(&o.stderr).trim()
            ));
        }
    }
    let files = ["model.ckpt", "metrics.json", "predictions.csv", "training_log.csv"];
    let differing: Vec<&str> = files
        .iter()
        .copied()
        .filter(|f| fs::read(dir.path().join("a").join(f)).ok() != fs::read(dir.path().join("b").join(f)).ok())
        .collect();
    verdict(
        differing.is_empty(),
        if differing.is_empty() {
            format!("{} identical across two runs", files.join(", "))
        } else {
            format!("differ: {}", differing.join(", "))
        },
    )
}

fn main() {
    let dir = cmapss_dir();
    let dir = dir.as_deref();
    let strict = std::env::var("RUL_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let criteria: [(&str, &dyn Fn() -> Verdict); 10] = [
        ("gradient oracle", &gradient_oracle),
        ("metric oracles", &metric_oracles),
        ("windowing oracle", &windowing_oracle),
        ("ingestion counts", &|| ingestion(dir)),
        ("condition clustering", &|| clustering(dir)),
        ("attention invariants", &attention_invariants),
        ("FD001 end-to-end", &|| end_to_end(dir)),
        ("attention ablation order", &|| ablation(dir)),
        ("per-condition normalisation gain", &|| normalisation(dir)),
        ("determinism", &determinism),
    ];
    let (mut failed, mut unevaluated) = (0, 0);
    for (i, (name, check)) in criteria.iter().enumerate() {
        let line = match check() {
            Pass(d) => format!("PASS {:>2} {name}: {d}", i + 1),
            Fail(d) => {
                failed += 1;
                format!("FAIL {:>2} {name}: {d}", i + 1)
            }
            NotEvaluated(d) => {
                unevaluated += 1;
                format!("FAIL {:>2} {name}: not evaluated, {d}", i + 1)
            }
        };
        println!("{line}");
    }
    println!(
        "acceptance: {} passed, {failed} failed, {unevaluated} not evaluated",
        criteria.len() - failed - unevaluated
    );
    if failed > 0 || (strict && unevaluated > 0) {
        std::process::exit(1);
    }
}
