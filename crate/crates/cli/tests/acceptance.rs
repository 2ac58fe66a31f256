//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any criterion fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use serde_json::Value;
use speckle_core::dataset::{build_corpus, split};
use speckle_core::decoder::{anchor_global_phase, grad_check, loss, loss_gradient, PinvSolver};
use speckle_core::decoder::{DecoderModel, DecoderSpec, Refinement};
use speckle_core::harness::ExperimentConfig;
use speckle_core::metrics::{self, SsimConstants};
use speckle_core::optics::{self, SpeckleShape};
use speckle_core::recognizer::{
    self, EmbeddingModel, EmbeddingRecipe, FaceEmbedding, MatchConfig, PairDistances,
};
use speckle_core::rng::derive_seed;
use speckle_core::PlainImage;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

type Check = Result<Outcome, String>;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_speckle")
}

fn speckle(args: &[&str]) -> Result<String, String> {
    let out = Command::new(bin())
        .args(args)
        .output()
        .map_err(|e| format!("spawning speckle: {e}"))?;
    if !out.status.success() {
        return Err(format!(
            "speckle {:?} exited with {}: {}",
            args,
            out.status,
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

/// Uniform value in `[0, 1)` from a counter, independent of the library RNG.
fn unit(seed: u64, i: u64) -> f64 {
    (derive_seed(seed, i) >> 11) as f64 / (1u64 << 53) as f64
}

fn random_image(seed: u64, side: usize) -> PlainImage {
    let mut k = 0;
    PlainImage::from_fn(side, side, |_, _| {
        k += 1;
        unit(seed, k)
    })
    .unwrap()
}

// Brute-force metric references.

fn mean(v: &[f64]) -> f64 {
    let mut s = 0.0;
    for x in v {
        s += x;
    }
    s / v.len() as f64
}

fn ref_pcc(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for i in 0..a.len() {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma).powi(2);
        sbb += (b[i] - mb).powi(2);
    }
    sab / (saa * sbb).sqrt()
}

fn ref_mse(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]) * (a[i] - b[i]);
    }
    s / a.len() as f64
}

fn ref_psnr(a: &[f64], b: &[f64]) -> f64 {
    let peak = a.iter().chain(b).cloned().fold(f64::MIN, f64::max);
    20.0 * (peak / ref_mse(a, b).sqrt()).log10()
}

fn ref_ssim(a: &[f64], b: &[f64]) -> f64 {
    let c = 1e-5;
    let (ma, mb) = (mean(a), mean(b));
    let n = a.len() as f64;
    let va = a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() / n;
    let vb = b.iter().map(|x| (x - mb).powi(2)).sum::<f64>() / n;
    let cov = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - ma) * (y - mb))
        .sum::<f64>()
        / n;
    let (sa, sb) = (va.sqrt(), vb.sqrt());
    let l = (2.0 * ma * mb + c) / (ma * ma + mb * mb + c);
    let cc = (2.0 * sa * sb + c) / (va + vb + c);
    let s = (cov + c) / (sa * sb + c);
    l * cc * s
}

fn c1_key_length() -> Check {
    let t = Instant::now();
    let out = speckle(&["keylen", "--n-in", "4096", "--n-out", "65536"])?;
    let secs = t.elapsed().as_secs_f64();
    let got = out.trim();
    Ok(Outcome::new(
        got == "17179869184" && secs < 1.0,
        format!("printed {got} bits in {secs:.3} s"),
    ))
}

fn c2_metric_oracle() -> Check {
    let t = Instant::now();
    let mut worst = 0.0f64;
    for i in 0..100 {
        let a = random_image(1000 + i, 16);
        let b = random_image(5000 + i, 16);
        let (x, y) = (a.data(), b.data());
        let got = metrics::evaluate(&a, &b).map_err(|e| e.to_string())?;
        let diffs = [
            (got.pcc - ref_pcc(x, y)).abs(),
            (got.mse - ref_mse(x, y)).abs(),
            (got.psnr.ok_or("psnr undefined")? - ref_psnr(x, y)).abs(),
            (got.ssim - ref_ssim(x, y)).abs(),
            (metrics::ssim(x, y, SsimConstants::default()).unwrap() - ref_ssim(x, y)).abs(),
        ];
        worst = diffs.iter().cloned().fold(worst, f64::max);
    }
    let secs = t.elapsed().as_secs_f64();
    Ok(Outcome::new(
        worst <= 1e-9 && secs < 5.0,
        format!("max abs deviation {worst:.2e} over 100 pairs in {secs:.2} s"),
    ))
}

fn c3_gradients() -> Check {
    let t = Instant::now();
    let mut lines = Vec::new();
    let mut worst = 0.0f64;
    let mut min_checked = usize::MAX;

    // Loss gradient against central differences.
    let y = random_image(7, 6);
    let yhat = random_image(8, 6);
    let g = loss_gradient(yhat.data(), y.data()).map_err(|e| e.to_string())?;
    let mut loss_err = 0.0f64;
    for i in 0..yhat.len() {
        let mut up = yhat.data().to_vec();
        let mut dn = up.clone();
        up[i] += 1e-5;
        dn[i] -= 1e-5;
        let num = (loss(&up, y.data()).unwrap() - loss(&dn, y.data()).unwrap()) / 2e-5;
        let scale = num.abs().max(g[i].abs());
        let e = if scale < 1e-8 {
            (num - g[i]).abs()
        } else {
            (num - g[i]).abs() / scale
        };
        loss_err = loss_err.max(e);
    }
    worst = worst.max(loss_err);
    lines.push(format!("loss {loss_err:.1e}"));

    let corpus = build_corpus(2, 1, 8, 3).map_err(|e| e.to_string())?;
    let img = &corpus.samples[0].image;
    let key = optics::generate_key(5, 64, 64).map_err(|e| e.to_string())?;
    let sp = optics::encrypt(&key, img, SpeckleShape::new(8, 8)).map_err(|e| e.to_string())?;
    let specs = [
        ("dense", Refinement::None),
        ("conv", Refinement::Conv { channels: 24 }),
        (
            "unet",
            Refinement::UNet {
                levels: 1,
                base_channels: 24,
            },
        ),
    ];
    let mut kinds = std::collections::BTreeSet::new();
    for (name, refinement) in specs {
        let spec = DecoderSpec {
            refinement,
            ..DecoderSpec::default()
        };
        let model = DecoderModel::build(&spec, sp.shape(), 8, 8).map_err(|e| e.to_string())?;
        for l in model.layers() {
            kinds.insert(l.kind());
        }
        let rep = grad_check(&model, &sp, img, 200, 11).map_err(|e| e.to_string())?;
        for l in &rep.per_layer {
            min_checked = min_checked.min(l.checked);
        }
        worst = worst.max(rep.max_rel_err);
        lines.push(format!("{name} {:.1e}", rep.max_rel_err));
    }
    let secs = t.elapsed().as_secs_f64();
    Ok(Outcome::new(
        worst < 1e-4 && min_checked >= 200 && kinds.len() == 6 && secs < 60.0,
        format!(
            "max rel err {worst:.2e} ({}); >= {min_checked} params per layer; layer kinds {:?}; {secs:.1} s",
            lines.join(", "),
            kinds
        ),
    ))
}

fn c4_pinv() -> Check {
    let t = Instant::now();
    let key = optics::generate_key(31, 256, 1024).map_err(|e| e.to_string())?;
    let corpus = build_corpus(4, 5, 16, 9).map_err(|e| e.to_string())?;
    let solver = PinvSolver::new(&key).map_err(|e| e.to_string())?;
    let mut worst = f64::INFINITY;
    for s in &corpus.samples {
        let field = optics::detect_field(&key, &s.image).map_err(|e| e.to_string())?;
        let rec = solver.decode(&field, 16, 16).map_err(|e| e.to_string())?;
        let anchored = anchor_global_phase(&rec, s.image.data()[0]).map_err(|e| e.to_string())?;
        let p = metrics::pcc(s.image.data(), anchored.data()).map_err(|e| e.to_string())?;
        worst = worst.min(p);
    }
    let secs = t.elapsed().as_secs_f64();
    Ok(Outcome::new(
        worst >= 1.0 - 1e-6 && secs < 10.0,
        format!("min PCC {worst:.12} over 20 plaintexts at 256->1024 in {secs:.2} s"),
    ))
}

fn c5_decorrelation() -> Check {
    let t = Instant::now();
    let key = optics::generate_key(41, 256, 1024).map_err(|e| e.to_string())?;
    let corpus = build_corpus(10, 10, 16, 13).map_err(|e| e.to_string())?;
    let mut total = 0.0;
    for s in &corpus.samples {
        let sp = optics::encrypt(&key, &s.image, SpeckleShape::new(32, 32))
            .map_err(|e| e.to_string())?;
        total += optics::ciphertext_correlation(&s.image, &sp)
            .map_err(|e| e.to_string())?
            .abs();
    }
    let m = total / corpus.len() as f64;
    let secs = t.elapsed().as_secs_f64();
    Ok(Outcome::new(
        m < 0.1 && secs < 10.0,
        format!(
            "mean |PCC| {m:.4} over {} pairs in {secs:.2} s",
            corpus.len()
        ),
    ))
}

struct PipelineRun {
    dir: PathBuf,
    report: Value,
    secs: f64,
}

fn run_pipeline(config: &Path, dir: PathBuf) -> Result<PipelineRun, String> {
    let t = Instant::now();
    speckle(&[
        "pipeline",
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
    ])?;
    let secs = t.elapsed().as_secs_f64();
    let report_path = fs::read_dir(&dir)
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .find(|p| {
            p.file_name()
                .unwrap()
                .to_string_lossy()
                .starts_with("report-")
        })
        .ok_or("no report written")?;
    let report: Value =
        serde_json::from_str(&fs::read_to_string(report_path).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    Ok(PipelineRun { dir, report, secs })
}

fn condition(report: &Value, label: &str) -> Result<f64, String> {
    report["conditions"]
        .as_array()
        .and_then(|cs| cs.iter().find(|c| c["label"] == label))
        .and_then(|c| c["pcc_mean"].as_f64())
        .ok_or_else(|| format!("condition {label} missing"))
}

fn c6_training(run: &PipelineRun) -> Check {
    let test = condition(&run.report, "test")?;
    let hist = run.report["history"]["epochs"]
        .as_array()
        .ok_or("history missing")?;
    let first = hist
        .first()
        .and_then(|e| e["eval_pcc"].as_f64())
        .ok_or("no epochs")?;
    let last = hist
        .last()
        .and_then(|e| e["eval_pcc"].as_f64())
        .ok_or("no epochs")?;
    Ok(Outcome::new(
        test >= 0.85 && last > first && hist.len() == 30 && run.secs <= 15.0 * 60.0,
        format!(
            "test PCC {test:.4}; eval PCC epoch 1 {first:.4} -> epoch {} {last:.4}; run {:.0} s",
            hist.len(),
            run.secs
        ),
    ))
}

/// Runs a subcommand on the trained model of `run`, returning its JSON
/// output and wall time.
fn standalone(
    cmd: &str,
    config: &Path,
    run: &PipelineRun,
    out: &Path,
) -> Result<(Value, f64), String> {
    let t = Instant::now();
    speckle(&[
        cmd,
        "--config",
        config.to_str().unwrap(),
        "--model",
        run.dir.join("model.spmd").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ])?;
    let secs = t.elapsed().as_secs_f64();
    let v = serde_json::from_str(&fs::read_to_string(out).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    Ok((v, secs))
}

fn c7_noise(run: &PipelineRun, config: &Path, work: &Path) -> Check {
    let sds = ["0", "0.1", "0.3", "0.5", "1"];
    let pccs = sds
        .iter()
        .map(|s| condition(&run.report, &format!("noise_sd={s}")))
        .collect::<Result<Vec<_>, _>>()?;
    let near = (pccs[0] - pccs[1]).abs() <= 0.05;
    let monotone = pccs.windows(2).all(|w| w[1] <= w[0] + 0.02);
    let clean_matches = pccs[0] == condition(&run.report, "test")?;

    let (rows, secs) = standalone("sweep-noise", config, run, &work.join("noise.json"))?;
    let standalone_pccs: Vec<f64> = rows
        .as_array()
        .ok_or("sweep output is not a list")?
        .iter()
        .filter_map(|r| r["pcc_mean"].as_f64())
        .collect();
    let agrees = standalone_pccs == pccs;

    let list: Vec<String> = pccs.iter().map(|p| format!("{p:.4}")).collect();
    Ok(Outcome::new(
        near && monotone && clean_matches && agrees && secs < 120.0,
        format!(
            "PCC at SD {{0, 0.1, 0.3, 0.5, 1.0}} = {}; standalone sweep {secs:.1} s, matches report: {agrees}",
            list.join(" / ")
        ),
    ))
}

fn c8_fov(config: &Path, dir: &Path) -> Check {
    let t = Instant::now();
    let out = speckle(&[
        "fov",
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
    ])?;
    let secs = t.elapsed().as_secs_f64();
    let value = |label: &str| -> Result<f64, String> {
        out.lines()
            .find_map(|l| l.strip_prefix(label))
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| format!("missing {label} in fov output"))
    };
    let full = value("full_fov pcc_mean")?;
    let reduced = value("reduced_fov pcc_mean")?;
    Ok(Outcome::new(
        (full - reduced).abs() <= 0.10 && secs <= 30.0 * 60.0,
        format!(
            "full {full:.4}, quarter {reduced:.4}, gap {:.4}; {secs:.0} s",
            (full - reduced).abs()
        ),
    ))
}

fn c9_wrong_key(run: &PipelineRun, config: &Path, work: &Path) -> Check {
    let (attack, secs) = standalone("attack", config, run, &work.join("attack.json"))?;
    let same = attack["same_key"]["pcc_mean"]
        .as_f64()
        .ok_or("same-key PCC missing")?;
    let wrong = attack["wrong_key"]["pcc_mean"]
        .as_f64()
        .ok_or("wrong-key PCC missing")?;
    let fps_differ = attack["key_fingerprint"] != attack["wrong_key_fingerprint"];
    let agrees = attack == run.report["wrong_key"];
    Ok(Outcome::new(
        wrong < 0.2 && same - wrong >= 0.3 && fps_differ && agrees && secs < 120.0,
        format!(
            "same key {same:.4}, wrong key {wrong:.4}, margin {:.4}; fingerprints {} vs {}; \
             standalone attack {secs:.1} s, matches report: {agrees}",
            same - wrong,
            attack["key_fingerprint"],
            attack["wrong_key_fingerprint"]
        ),
    ))
}

fn c10_recognition(run: &PipelineRun) -> Check {
    let t = Instant::now();
    // The first 20 test-split plaintexts and their decryptions from the run.
    let cfg = ExperimentConfig::default();
    let c = cfg.corpus;
    let corpus = build_corpus(c.n_identities, c.samples_per_identity, c.image_size, c.seed)
        .map_err(|e| e.to_string())?;
    let splits = split(corpus.len(), cfg.split, cfg.split_seed).map_err(|e| e.to_string())?;
    let originals: Vec<PlainImage> = splits.test[..20]
        .iter()
        .map(|&i| corpus.samples[i].image.clone())
        .collect();
    let mut dec_files: Vec<PathBuf> = fs::read_dir(run.dir.join("decrypted"))
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    dec_files.sort();
    let decrypted: Vec<PlainImage> = dec_files[..20]
        .iter()
        .map(|p| speckle_core::dataset::load_image_pgm(p).unwrap())
        .collect();
    let embedder = EmbeddingModel::new(EmbeddingRecipe::default()).map_err(|e| e.to_string())?;
    let exec = speckle_core::exec::Exec::default();
    let oe = embedder
        .embed_all(&originals, exec)
        .map_err(|e| e.to_string())?;
    let de = embedder
        .embed_all(&decrypted, exec)
        .map_err(|e| e.to_string())?;
    let pairs = PairDistances::all_pairs(&oe, &de).map_err(|e| e.to_string())?;
    let sweep = recognizer::threshold_sweep(&pairs, &recognizer::DEFAULT_SWEEP)
        .map_err(|e| e.to_string())?;

    let dist = |a: &FaceEmbedding, b: &FaceEmbedding| -> f64 {
        let mut s = 0.0;
        for k in 0..128 {
            s += (a.as_slice()[k] - b.as_slice()[k]).powi(2);
        }
        s.sqrt()
    };
    let mut mismatches = 0;
    let mut n_pairs = 0;
    for r in &sweep {
        let (mut tp, mut fp, mut tn, mut fneg) = (0u64, 0u64, 0u64, 0u64);
        for i in 0..20 {
            for j in 0..20 {
                if i >= j {
                    continue;
                }
                let truth = dist(&oe[i], &oe[j]) <= r.threshold;
                let pred = dist(&de[i], &de[j]) <= r.threshold;
                match (truth, pred) {
                    (true, true) => tp += 1,
                    (false, true) => fp += 1,
                    (true, false) => fneg += 1,
                    (false, false) => tn += 1,
                }
            }
        }
        n_pairs = tp + fp + tn + fneg;
        let c = r.counts;
        if (c.tp, c.fp, c.tn, c.fn_) != (tp, fp, tn, fneg) {
            mismatches += 1;
        }
        let total = n_pairs as f64;
        let acc = (tp + tn) as f64 / total;
        let rec = (tp + fneg > 0).then(|| tp as f64 / (tp + fneg) as f64);
        let prec = (tp + fp > 0).then(|| tp as f64 / (tp + fp) as f64);
        let f1 = match (prec, rec) {
            (Some(p), Some(q)) if p + q > 0.0 => Some(2.0 * p * q / (p + q)),
            _ => None,
        };
        if r.accuracy != Some(acc) || r.recall != rec || r.precision != prec || r.f1 != f1 {
            mismatches += 1;
        }
    }

    // Boundary: both distances exactly at the threshold is a true positive.
    let mut a = vec![0.0; 128];
    let mut b = vec![0.0; 128];
    a[0] = 0.0;
    b[0] = 0.6;
    let ea = FaceEmbedding::new(a).unwrap();
    let eb = FaceEmbedding::new(b).unwrap();
    let cfg = MatchConfig::new(0.6).unwrap();
    let boundary_match = recognizer::match_faces(&ea, &eb, cfg) == recognizer::MatchOutcome::Match;
    let c = recognizer::confusion_counts(&[(ea.clone(), eb.clone())], &[(ea, eb)], cfg)
        .map_err(|e| e.to_string())?;
    let boundary_tp = c.tp == 1 && c.total() == 1;
    let secs = t.elapsed().as_secs_f64();
    Ok(Outcome::new(
        mismatches == 0 && n_pairs == 190 && boundary_match && boundary_tp && secs < 5.0,
        format!(
            "{} thresholds x {n_pairs} pairs, {mismatches} mismatches vs exhaustive oracle; \
             distance == threshold -> Match: {boundary_match}; {secs:.2} s",
            sweep.len()
        ),
    ))
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap().flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn without_wall_clock(bytes: &[u8]) -> Result<Value, String> {
    let mut v: Value = serde_json::from_slice(bytes).map_err(|e| e.to_string())?;
    v.as_object_mut()
        .ok_or("report is not an object")?
        .remove("wall_clock_s");
    Ok(v)
}

fn c11_determinism(a: &PipelineRun, b: &PipelineRun) -> Check {
    let fa = files_under(&a.dir);
    let fb = files_under(&b.dir);
    if fa != fb {
        return Ok(Outcome::new(false, "runs produced different file sets"));
    }
    let mut differing = Vec::new();
    for rel in &fa {
        let x = fs::read(a.dir.join(rel)).map_err(|e| e.to_string())?;
        let y = fs::read(b.dir.join(rel)).map_err(|e| e.to_string())?;
        let same = if rel.to_string_lossy().starts_with("report-") {
            without_wall_clock(&x)? == without_wall_clock(&y)?
        } else {
            x == y
        };
        if !same {
            differing.push(rel.display().to_string());
        }
    }
    let kinds = ["spky", "spim", "spmd", "json", "pgm", "csv"];
    let covered: Vec<&str> = kinds
        .iter()
        .copied()
        .filter(|k| fa.iter().any(|p| p.extension().is_some_and(|e| e == *k)))
        .collect();
    Ok(Outcome::new(
        differing.is_empty() && covered.len() == kinds.len(),
        format!(
            "{} files compared ({}), {} differ{}; runs {:.0} s + {:.0} s",
            fa.len(),
            covered.join("/"),
            differing.len(),
            if differing.is_empty() {
                String::new()
            } else {
                format!(": {}", differing.join(", "))
            },
            a.secs,
            b.secs
        ),
    ))
}

fn report(results: &mut Vec<bool>, id: usize, name: &str, elapsed: Duration, check: Check) {
    let (pass, detail) = match check {
        Ok(o) => (o.pass, o.detail),
        Err(e) => (false, format!("error: {e}")),
    };
    println!(
        "{} criterion {id:>2} {name}: {detail} [{:.1} s]",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    results.push(pass);
}

macro_rules! criterion {
    ($results:expr, $id:expr, $name:expr, $body:expr) => {{
        let t = Instant::now();
        let check = $body;
        report($results, $id, $name, t.elapsed(), check);
    }};
}

fn main() {
    // `cargo test -- --list` and filters are accepted but not interpreted.
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let work = tempfile::tempdir().expect("temp dir");
    let config = work.path().join("desk.json");
    fs::write(
        &config,
        serde_json::to_string_pretty(&ExperimentConfig::default()).unwrap(),
    )
    .unwrap();

    let mut results = Vec::new();
    criterion!(&mut results, 1, "key length", c1_key_length());
    criterion!(
        &mut results,
        2,
        "metric oracle equivalence",
        c2_metric_oracle()
    );
    criterion!(&mut results, 3, "gradient correctness", c3_gradients());
    criterion!(&mut results, 4, "pseudo-inverse oracle", c4_pinv());
    criterion!(
        &mut results,
        5,
        "plaintext/ciphertext decorrelation",
        c5_decorrelation()
    );

    let run_a = run_pipeline(&config, work.path().join("run-a"));
    let run_b = run_pipeline(&config, work.path().join("run-b"));
    let need = |r: &Result<PipelineRun, String>| -> Result<(), String> {
        r.as_ref()
            .map(|_| ())
            .map_err(|e| format!("pipeline run failed: {e}"))
    };
    criterion!(&mut results, 6, "training convergence", {
        need(&run_a).and_then(|_| c6_training(run_a.as_ref().unwrap()))
    });
    criterion!(&mut results, 7, "noise robustness", {
        need(&run_a).and_then(|_| c7_noise(run_a.as_ref().unwrap(), &config, work.path()))
    });
    criterion!(&mut results, 8, "field-of-view insensitivity", {
        c8_fov(&config, &work.path().join("fov"))
    });
    criterion!(&mut results, 9, "wrong-key attack", {
        need(&run_a).and_then(|_| c9_wrong_key(run_a.as_ref().unwrap(), &config, work.path()))
    });
    criterion!(&mut results, 10, "recognition metric exactness", {
        need(&run_a).and_then(|_| c10_recognition(run_a.as_ref().unwrap()))
    });
    criterion!(&mut results, 11, "determinism", {
        need(&run_a)
            .and_then(|_| need(&run_b))
            .and_then(|_| c11_determinism(run_a.as_ref().unwrap(), run_b.as_ref().unwrap()))
    });

    let passed = results.iter().filter(|p| **p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
