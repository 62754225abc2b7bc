//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fail.

// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use hvsim_core::experiment::{check_trend, run_experiment, DatasetSource, ExperimentConfig, ResultsTable, Variant};
use hvsim_core::hvs::{mask_weight, masked_threshold, Model};
use hvsim_core::observer::{auc, score, train_mscho};
use hvsim_core::rng;
use hvsim_core::spectral::{Fft3, Volume};
use hvsim_core::synth::{build_dataset, SynthConfig};
use hvsim_core::{Dims, Error, HvsConfig, Label, Method, Perceiver, ViewingConfig};
use hvsim_study::{router, Study, StudyConfig};
use rand::Rng;
use rand_distr::StandardNormal;
use serde_json::{json, Value};
use statrs::distribution::{ContinuousCDF, Normal};
use tower::ServiceExt;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

fn random_volume(dims: Dims, seed: u64) -> Volume {
    let mut r = rng::stream(seed);
    Volume::new(dims, (0..dims.len()).map(|_| r.random::<f64>()).collect())
}

fn equations() -> Outcome {
    let hvs = HvsConfig::default();
    let m = masked_threshold(0.01, 0.02, 3.0).map_err(|e| e.to_string())?;
    ensure!((m - 0.0037f64.sqrt()).abs() <= 1e-12, "masked threshold {m}");
    ensure!(format!("{m:.5}") == "0.06083", "masked threshold rounds to {m:.5}");

    let dims = Dims::new(16, 16, 8);
    let perceiver = Perceiver::new(dims, ViewingConfig::default(), hvs.clone(), Model::CsfPlusMasking)
        .map_err(|e| e.to_string())?;
    let lum = random_volume(dims, 5);
    let a = perceiver.analyze_luminance(&lum).map_err(|e| e.to_string())?;
    let scaled = Volume::new(dims, lum.data.iter().map(|v| v * 3.7).collect());
    let b = perceiver.analyze_luminance(&scaled).map_err(|e| e.to_string())?;
    ensure!(a.thresholds.m_n[0] == 0.0, "m_n at DC = {}", a.thresholds.m_n[0]);
    let worst = a
        .thresholds
        .m_n
        .iter()
        .zip(&b.thresholds.m_n)
        .filter(|(x, _)| **x != 0.0)
        .map(|(x, y)| rel(*y, *x))
        .fold(0.0, f64::max);
    ensure!(worst <= 1e-9, "m_n scale invariance off by {worst:e}");

    let w0 = mask_weight((1.0, 0.0), (1.0, 0.0), &hvs).map_err(|e| e.to_string())?;
    let angle = 6f64.to_radians();
    let w_out = mask_weight((1.0, 0.0), (angle.cos(), angle.sin()), &hvs).map_err(|e| e.to_string())?;
    let w12 = mask_weight((1.0, 0.0), (2.0, 0.0), &hvs).map_err(|e| e.to_string())?;
    ensure!(w0 == 1.0, "w at zero distance {w0}");
    ensure!(w_out == 0.0, "w beyond 5 deg {w_out}");
    ensure!((w12 - 0.3475).abs() <= 1e-4, "w((1,0),(2,0)) = {w12}");
    Ok(format!("m't={m:.5} w12={w12:.4} m_n scale err={worst:.1e}"))
}

fn spectral() -> Outcome {
    let mut worst = 0.0f64;
    for (dims, seed) in [(Dims::new(8, 8, 4), 1), (Dims::new(64, 64, 32), 2)] {
        let fft = Fft3::new(dims);
        let x = random_volume(dims, seed);
        let f = fft.forward(&x).map_err(|e| e.to_string())?;
        let back = fft.inverse(&f).map_err(|e| e.to_string())?;
        let norm: f64 = x.data.iter().map(|v| v * v).sum::<f64>().sqrt();
        let err: f64 = x.data.iter().zip(&back.data).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() / norm;
        let energy: f64 = x.data.iter().map(|v| v * v).sum();
        let freq: f64 = f.bins.iter().map(|c| c.norm_sqr()).sum::<f64>() / dims.len() as f64;
        ensure!(err <= 1e-9, "{dims} roundtrip error {err:e}");
        ensure!(rel(freq, energy) <= 1e-9, "{dims} Parseval error {:e}", rel(freq, energy));
        worst = worst.max(err).max(rel(freq, energy));

        let mut broken = f.clone();
        let k = dims.index(1, 2, 1);
        broken.bins[k] *= 0.5;
        match fft.inverse(&broken) {
            Err(Error::SymmetryViolation { .. }) => {}
            other => return Err(format!("{dims}: broken gain map gave {other:?}")),
        }
    }
    Ok(format!("max relative error {worst:.1e}; broken gains rejected"))
}

fn observer_oracle() -> Outcome {
    // AR(1) features, covariance rho^|i-j|; mean shift along Sigma*1 for d' = 2
    let (dim, rho, n) = (8usize, 0.5f64, 5000usize);
    let ones_sigma_ones: f64 = (0..dim)
        .flat_map(|i| (0..dim).map(move |j| rho.powi((i as i32 - j as i32).abs())))
        .sum();
    let c = 2.0 / ones_sigma_ones.sqrt();
    let shift: Vec<f64> = (0..dim)
        .map(|i| c * (0..dim).map(|j| rho.powi((i as i32 - j as i32).abs())).sum::<f64>())
        .collect();
    let mut r = rng::stream(2024);
    let mut sample = |lesion: bool| -> Vec<f64> {
        let mut x = Vec::with_capacity(dim);
        let mut prev: f64 = r.sample(StandardNormal);
        x.push(prev);
        for _ in 1..dim {
            let z: f64 = r.sample(StandardNormal);
            prev = rho * prev + (1.0 - rho * rho).sqrt() * z;
            x.push(prev);
        }
        if lesion {
            x.iter_mut().zip(&shift).for_each(|(v, s)| *v += s);
        }
        x
    };
    let mut train = Vec::new();
    let mut labels = Vec::new();
    for i in 0..2 * n {
        let lesion = i % 2 == 1;
        train.push(sample(lesion));
        labels.push(if lesion { Label::Lesion } else { Label::Healthy });
    }
    let template = train_mscho(&train, &labels, 0.0).map_err(|e| e.to_string())?;
    let healthy: Vec<f64> = (0..n).map(|_| score(&template, &sample(false)).unwrap()).collect();
    let lesion: Vec<f64> = (0..n).map(|_| score(&template, &sample(true)).unwrap()).collect();
    let got = auc(&healthy, &lesion).map_err(|e| e.to_string())?;
    let want = Normal::standard().cdf(2f64.sqrt());
    ensure!((got - want).abs() <= 0.03, "AUC {got:.4} vs {want:.4}");

    let mut synth = SynthConfig {
        dims: Dims::new(16, 16, 8),
        levels: vec![0, 2, 4],
        per_class: 40,
        ..Default::default()
    };
    synth.lesion.amplitude = 0.0;
    let config = ExperimentConfig {
        dataset: DatasetSource::Synth(synth),
        variants: vec![Variant { model: Model::CsfOnly, method: Method::Pm }],
        ..Default::default()
    };
    let table = run_experiment(&config).map_err(|e| e.to_string())?;
    for row in &table.rows {
        ensure!(
            row.ci_low <= 0.5 && 0.5 <= row.ci_high,
            "null lesion, level {}: AUC {:.3} CI [{:.3}, {:.3}]",
            row.complexity,
            row.auc,
            row.ci_low,
            row.ci_high
        );
    }
    Ok(format!("d'=2 AUC {got:.4} (target {want:.4}); null-lesion CIs cover 0.5"))
}

fn desk_scale_config() -> ExperimentConfig {
    let synth = SynthConfig {
        dims: Dims::new(32, 32, 16),
        levels: vec![0, 1, 2, 3, 4],
        per_class: 40,
        ..Default::default()
    };
    ExperimentConfig {
        dataset: DatasetSource::Synth(synth),
        ..Default::default()
    }
}

fn trend() -> Outcome {
    let config = desk_scale_config();
    let table = run_experiment(&config).map_err(|e| e.to_string())?;
    ensure!(table.rows.len() == 30, "expected 30 rows, got {}", table.rows.len());
    let report = check_trend(&table).map_err(|e| e.to_string())?;
    let pm = report
        .variants
        .iter()
        .find(|v| v.model == Model::CsfPlusMasking && v.method == Method::Pm)
        .ok_or("no masking+PM row")?;
    let aucs: Vec<String> = pm.aucs.iter().map(|a| format!("{a:.3}")).collect();
    let drops = report
        .deltas
        .iter()
        .filter(|d| d.method == Method::Pm && d.significant_drop)
        .count();
    let detail = format!(
        "masking+PM AUC [{}] spearman {:+.2}; significant drops {}",
        aucs.join(", "),
        pm.spearman,
        drops
    );
    ensure!(report.masking_pm_decreasing, "(a) fails: {detail}");
    ensure!(report.masking_reduces_auc, "(b) fails: {detail}");
    Ok(detail)
}

fn small_config() -> ExperimentConfig {
    let synth = SynthConfig {
        dims: Dims::new(16, 16, 8),
        levels: vec![0, 2, 4],
        per_class: 20,
        ..Default::default()
    };
    let mut config = ExperimentConfig {
        dataset: DatasetSource::Synth(synth),
        ..Default::default()
    };
    config.hvs.mc_seed = 42;
    config.bootstrap.resamples = 500;
    config
}

fn k_zero() -> Outcome {
    let mut config = small_config();
    config.hvs.k = 0.0;
    let table = run_experiment(&config).map_err(|e| e.to_string())?;
    let mut compared = 0;
    for row in table.rows.iter().filter(|r| r.model == Model::CsfOnly) {
        let twin = table
            .get(Variant { model: Model::CsfPlusMasking, method: row.method }, row.complexity)
            .ok_or("missing masking row")?;
        for (a, b, what) in [(row.auc, twin.auc, "auc"), (row.ci_low, twin.ci_low, "ci_low"), (row.ci_high, twin.ci_high, "ci_high")] {
            ensure!(a.to_bits() == b.to_bits(), "{} level {} {what}: {a} vs {b}", row.method, row.complexity);
        }
        compared += 1;
    }
    ensure!(compared == 9, "compared {compared} rows");
    Ok(format!("{compared} row pairs bit-identical"))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut csvs = Vec::new();
    for (run, threads) in [(0, None), (1, None), (2, Some(1)), (3, Some(3))] {
        let mut config = small_config();
        config.threads = threads;
        config.output_dir = Some(dir.path().join(format!("run{run}")));
        run_experiment(&config).map_err(|e| e.to_string())?;
        let bytes = std::fs::read(dir.path().join(format!("run{run}/results.csv"))).map_err(|e| e.to_string())?;
        csvs.push(bytes);
    }
    ensure!(csvs.windows(2).all(|w| w[0] == w[1]), "results CSV differs between runs");
    let table = ResultsTable::from_csv(&String::from_utf8_lossy(&csvs[0])).map_err(|e| e.to_string())?;
    Ok(format!("{} rows byte-identical across 2 runs and 1/3/default threads", table.rows.len()))
}

fn percent_correct_arithmetic() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let log = dir.path().join("scores.jsonl");
    let mut lines = String::new();
    for (observer, hits) in [("A", [34, 27, 9]), ("B", [28, 25, 12])] {
        for (level, h) in [0u8, 2, 4].into_iter().zip(hits) {
            for i in 0..35 {
                for (label, s) in [("lesion", if i < h { 2 + i % 2 } else { i % 2 }), ("healthy", i % 3)] {
                    let rec = json!({
                        "stack_id": format!("c{level}-s{i:05}-{}", &label[..1]), "label": label,
                        "complexity": level, "score": s, "observer_id": observer,
                        "presentations": 1, "elapsed_ms": 0
                    });
                    lines.push_str(&format!("{rec}\n"));
                }
            }
        }
    }
    std::fs::write(&log, lines).map_err(|e| e.to_string())?;
    let out = Command::new(env!("CARGO_BIN_EXE_hvsim"))
        .args(["study-analyze", log.to_str().unwrap(), "--json"])
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(out.status.success(), "study-analyze failed: {}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).map_err(|e| e.to_string())?;
    let mut got = Vec::new();
    for (observer, want) in [("A", ["0.9714", "0.7714", "0.2571"]), ("B", ["0.8000", "0.7143", "0.3429"])] {
        for (level, w) in ["0", "2", "4"].into_iter().zip(want) {
            let f = v[observer]["percent_correct"][level].as_f64().ok_or("missing fraction")?;
            ensure!(format!("{f:.4}") == w, "{observer} level {level}: {f:.4} vs {w}");
            got.push(format!("{f:.4}"));
        }
    }
    Ok(got.join(" "))
}

fn protocol_dataset(dir: &Path) -> StudyConfig {
    let synth = SynthConfig {
        dims: Dims::new(8, 8, 4),
        levels: vec![0, 1, 2, 3, 4],
        per_class: 40,
        ..Default::default()
    };
    build_dataset(&synth, &dir.join("data")).expect("dataset builds");
    StudyConfig {
        dataset: dir.join("data"),
        state_dir: dir.join("state"),
        ..Default::default()
    }
}

fn constants() -> Outcome {
    let contrast = ViewingConfig::default().effective_contrast();
    ensure!(format!("{contrast:.1}") == "485.7", "effective contrast {contrast}");
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let study = Study::open(protocol_dataset(dir.path())).map_err(|e| e.to_string())?;
    let n = study.selection().len();
    ensure!(n == 210, "session has {n} stacks");
    Ok(format!("contrast {contrast:.1}, {n} stacks per session"))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(v) => req.header("content-type", "application/json").body(Body::from(v.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    (status, res.into_body().collect().await.unwrap().to_bytes().to_vec())
}

fn leaks(body: &[u8], ids: &[String]) -> Option<String> {
    let text = String::from_utf8_lossy(body).to_lowercase();
    ["lesion", "healthy", "label", "complexity"]
        .iter()
        .map(|s| s.to_string())
        .chain(ids.iter().cloned())
        .find(|w| text.contains(w.as_str()))
}

/// Walks a session, scoring every stack 2, scanning every response. Stops
/// after `limit` scores.
async fn walk(app: &Router, sid: &str, ids: &[String], limit: usize) -> Result<Vec<String>, String> {
    let mut seen = Vec::new();
    while seen.len() < limit {
        let (_, body) = call(app, "GET", &format!("/api/sessions/{sid}/next"), None).await;
        if let Some(w) = leaks(&body, ids) {
            return Err(format!("next leaks {w}"));
        }
        let v: Value = serde_json::from_slice(&body).map_err(|e| e.to_string())?;
        let Some(token) = v["stack"].as_str() else { break };
        let total = v["total"].as_u64().unwrap_or(0) as usize;
        for uri in [format!("/api/sessions/{sid}"), format!("/api/sessions/{sid}/results")] {
            let (_, body) = call(app, "GET", &uri, None).await;
            if let Some(w) = leaks(&body, ids) {
                return Err(format!("{uri} leaks {w}"));
            }
        }
        let (status, png) = call(app, "GET", &format!("/api/stacks/{token}/slices/0.png"), None).await;
        ensure!(status == StatusCode::OK && png.starts_with(b"\x89PNG"), "slice not served");
        let submission = json!({ "stack": token, "score": 2, "presentations": 1, "elapsed_ms": 3000 });
        let (status, ack) = call(app, "POST", &format!("/api/sessions/{sid}/scores"), Some(submission.clone())).await;
        ensure!(status == StatusCode::OK, "score rejected: {}", String::from_utf8_lossy(&ack));
        if let Some(w) = leaks(&ack, ids) {
            return Err(format!("ack leaks {w}"));
        }
        if seen.len() + 1 < total {
            let (status, dup) = call(app, "POST", &format!("/api/sessions/{sid}/scores"), Some(submission)).await;
            ensure!(status == StatusCode::CONFLICT, "duplicate accepted");
            if let Some(w) = leaks(&dup, ids) {
                return Err(format!("error body leaks {w}"));
            }
        }
        seen.push(token.to_string());
    }
    Ok(seen)
}

async fn create(app: &Router, observer: &str) -> Result<String, String> {
    let (status, body) = call(app, "POST", "/api/sessions", Some(json!({ "observer_id": observer }))).await;
    ensure!(status == StatusCode::CREATED, "create failed: {}", String::from_utf8_lossy(&body));
    let v: Value = serde_json::from_slice(&body).map_err(|e| e.to_string())?;
    Ok(v["session_id"].as_str().ok_or("no session id")?.to_string())
}

async fn protocol_async(dir: &Path) -> Outcome {
    let config = protocol_dataset(dir);
    let study = Arc::new(Study::open(config.clone()).map_err(|e| e.to_string())?);
    let ids = study.selection().to_vec();
    let app = router(study);
    let a = create(&app, "A").await?;
    let b = create(&app, "B").await?;
    let order_a = walk(&app, &a, &ids, usize::MAX).await?;
    let order_b = walk(&app, &b, &ids, 11).await?;
    drop(app);

    // restart: B resumes at 11 from its log
    let app = router(Arc::new(Study::open(config).map_err(|e| e.to_string())?));
    let (_, body) = call(&app, "GET", &format!("/api/sessions/{b}"), None).await;
    let v: Value = serde_json::from_slice(&body).map_err(|e| e.to_string())?;
    ensure!(v["cursor"] == 11, "recovered cursor {}", v["cursor"]);
    let rest = walk(&app, &b, &ids, usize::MAX).await?;
    let order_b: Vec<String> = order_b.into_iter().chain(rest).collect();

    ensure!(order_a.len() == 210 && order_b.len() == 210, "sessions of {} and {}", order_a.len(), order_b.len());
    let set_a: BTreeSet<_> = order_a.iter().collect();
    ensure!(set_a == order_b.iter().collect(), "observers saw different stack sets");
    ensure!(order_a != order_b, "observers saw the same order");
    let log = dir.join("state/sessions").join(format!("{b}.jsonl"));
    let lines = std::fs::read_to_string(&log).map_err(|e| e.to_string())?.lines().count();
    ensure!(lines == 210, "log holds {lines} lines");
    let (_, body) = call(&app, "GET", &format!("/api/sessions/{b}/results"), None).await;
    let v: Value = serde_json::from_slice(&body).map_err(|e| e.to_string())?;
    ensure!(v["partial"] == false && v["percent_correct"]["4"] == 1.0, "results {v}");
    Ok("same set, different order; resume after restart at 11/210; no label in any body".into())
}

fn protocol() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| e.to_string())?;
    runtime.block_on(protocol_async(dir.path()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("equation unit suite", equations),
        ("spectral suite", spectral),
        ("observer oracle", observer_oracle),
        ("masking trend at desk scale", trend),
        ("k=0 equivalence", k_zero),
        ("determinism", determinism),
        ("percent-correct arithmetic", percent_correct_arithmetic),
        ("reading-study constants", constants),
        ("study-server protocol", protocol),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name} ({secs:.1}s): {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name} ({secs:.1}s): {why}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
