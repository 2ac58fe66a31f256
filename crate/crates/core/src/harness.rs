//! End-to-end experiments: the encrypt/train/decrypt pipeline, detector
//! noise sweeps, field-of-view comparison and the wrong-key attack.
//!
//! Every run is a pure function of its [`ExperimentConfig`]; reports carry the
//! config, its hash and all seeds, and only `wall_clock_s` varies between
//! reruns.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{build_corpus_with, split, write_corpus, Corpus, SplitSpec, Splits};
use crate::decoder::{
    save_model, train, DecoderModel, DecoderSpec, TrainConfig, TrainHistory, TrainingSet,
};
use crate::error::{Error, Result, StageExt};
use crate::exec::Exec;
use crate::image::PlainImage;
use crate::metrics::{mse, pcc, psnr, ssim, SsimConstants};
use crate::optics::{
    add_noise, crop_fov, encrypt_batch, generate_key, FovSpec, NoiseSpec, PhysicalKey,
    SpecklePattern, SpeckleShape,
};
use crate::recognizer::{
    self_distances, threshold_sweep, write_sweep_csv, EmbeddingModel, EmbeddingRecipe,
    PairDistances, RecognitionReport, DEFAULT_SWEEP,
};
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub n_identities: usize,
    pub samples_per_identity: usize,
    pub image_size: usize,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_identities: 220,
            samples_per_identity: 10,
            image_size: 16,
            seed: 7,
        }
    }
}

/// Which decoder produces the test-set decryptions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DecoderSource {
    #[default]
    Trained,
    /// Decryptions are the plaintexts themselves; checks the recognition
    /// stage in isolation.
    Perfect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub key_seed: u64,
    pub wrong_key_seed: u64,
    pub corpus: CorpusConfig,
    pub speckle_height: usize,
    pub speckle_width: usize,
    pub split: SplitSpec,
    pub split_seed: u64,
    pub decoder: DecoderSpec,
    pub decoder_source: DecoderSource,
    pub train: TrainConfig,
    pub noise_sds: Vec<f64>,
    pub noise_seed: u64,
    /// Crop for the reduced-FOV decoder; `None` is the top-left quadrant.
    pub fov: Option<FovSpec>,
    pub thresholds: Vec<f64>,
    pub embedding: EmbeddingRecipe,
    /// Also run the noise sweep and wrong-key attack inside the pipeline.
    pub include_noise_sweep: bool,
    pub include_wrong_key: bool,
    /// Persist a SPIM file for every encrypted sample.
    pub save_speckles: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            key_seed: 1,
            wrong_key_seed: 2,
            corpus: CorpusConfig::default(),
            speckle_height: 32,
            speckle_width: 32,
            split: SplitSpec::default(),
            split_seed: 3,
            decoder: DecoderSpec::default(),
            decoder_source: DecoderSource::Trained,
            train: TrainConfig::default(),
            noise_sds: vec![0.0, 0.1, 0.3, 0.5, 1.0],
            noise_seed: 5,
            fov: None,
            thresholds: DEFAULT_SWEEP.to_vec(),
            embedding: EmbeddingRecipe::default(),
            include_noise_sweep: true,
            include_wrong_key: true,
            save_speckles: true,
        }
    }
}

impl ExperimentConfig {
    pub fn n_in(&self) -> usize {
        self.corpus.image_size * self.corpus.image_size
    }

    pub fn speckle_shape(&self) -> SpeckleShape {
        SpeckleShape::new(self.speckle_height, self.speckle_width)
    }

    pub fn fov_spec(&self) -> FovSpec {
        self.fov
            .unwrap_or_else(|| FovSpec::top_left_quarter(self.speckle_shape()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.speckle_height == 0 || self.speckle_width == 0 {
            return Err(Error::invalid("speckle dimensions must be positive"));
        }
        let total = self.corpus.n_identities * self.corpus.samples_per_identity;
        let need = self.split.n_train + self.split.n_eval + self.split.n_test;
        if need > total {
            return Err(Error::invalid(format!(
                "split needs {need} samples but the corpus has {total}"
            )));
        }
        if self
            .noise_sds
            .iter()
            .any(|s| !(*s >= 0.0) || !s.is_finite())
        {
            return Err(Error::invalid("noise SDs must be finite and >= 0"));
        }
        if self.thresholds.is_empty() || self.thresholds.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::invalid(
                "thresholds must be a non-empty list of positive values",
            ));
        }
        self.train.validate()
    }

    /// Hex SHA-256 of the canonical JSON serialization.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn seeds(&self) -> BTreeMap<String, u64> {
        BTreeMap::from([
            ("key".to_string(), self.key_seed),
            ("wrong_key".to_string(), self.wrong_key_seed),
            ("corpus".to_string(), self.corpus.seed),
            ("split".to_string(), self.split_seed),
            ("decoder_init".to_string(), self.decoder.init_seed),
            ("train_shuffle".to_string(), self.train.seed),
            ("noise".to_string(), self.noise_seed),
            ("embedding".to_string(), self.embedding.seed),
        ])
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_reader(std::fs::File::open(path)?)?)
    }
}

/// Aggregate metrics over one evaluation condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub label: String,
    pub n: usize,
    pub pcc_mean: f64,
    pub pcc_std: f64,
    /// Samples whose PCC is undefined (constant estimate); they count as 0.
    pub pcc_undefined: usize,
    pub mse_mean: f64,
    pub ssim_mean: f64,
    /// Mean over the `psnr_n` samples with non-zero MSE.
    pub psnr_mean: Option<f64>,
    pub psnr_n: usize,
}

/// Scores decryptions against their plaintexts.
pub fn summarize(
    label: impl Into<String>,
    references: &[PlainImage],
    estimates: &[PlainImage],
) -> Result<ConditionSummary> {
    if references.len() != estimates.len() || references.is_empty() {
        return Err(Error::invalid(format!(
            "cannot score {} estimates against {} references",
            estimates.len(),
            references.len()
        )));
    }
    let mut pccs = Vec::with_capacity(references.len());
    let mut undefined = 0;
    let (mut mse_sum, mut ssim_sum, mut psnr_sum, mut psnr_n) = (0.0, 0.0, 0.0, 0);
    for (y, yhat) in references.iter().zip(estimates) {
        if !y.same_shape(yhat) {
            return Err(Error::invalid("estimate shape differs from reference"));
        }
        let (a, b) = (y.data(), yhat.data());
        match pcc(a, b) {
            Ok(v) => pccs.push(v),
            Err(Error::UndefinedMetric(_)) => {
                undefined += 1;
                pccs.push(0.0);
            }
            Err(e) => return Err(e),
        }
        mse_sum += mse(a, b)?;
        ssim_sum += ssim(a, b, SsimConstants::default())?;
        if let Ok(p) = psnr(a, b) {
            psnr_sum += p;
            psnr_n += 1;
        }
    }
    let n = references.len();
    let nf = n as f64;
    let pcc_mean = pccs.iter().sum::<f64>() / nf;
    let pcc_std = (pccs.iter().map(|v| (v - pcc_mean).powi(2)).sum::<f64>() / nf).sqrt();
    Ok(ConditionSummary {
        label: label.into(),
        n,
        pcc_mean,
        pcc_std,
        pcc_undefined: undefined,
        mse_mean: mse_sum / nf,
        ssim_mean: ssim_sum / nf,
        psnr_mean: (psnr_n > 0).then(|| psnr_sum / psnr_n as f64),
        psnr_n,
    })
}

/// Applies detector noise at every SD and scores the decoder on each
/// condition. Condition `i`, sample `k` uses noise seed
/// `derive_seed(derive_seed(seed, i), k)`.
pub fn noise_sweep(
    model: &DecoderModel,
    speckles: &[SpecklePattern],
    plaintexts: &[PlainImage],
    sds: &[f64],
    seed: u64,
    exec: Exec,
) -> Result<Vec<ConditionSummary>> {
    sds.iter()
        .enumerate()
        .map(|(i, &sd)| {
            let cond_seed = derive_seed(seed, i as u64);
            let noisy = exec.try_map(speckles.len(), |k| {
                add_noise(
                    &speckles[k],
                    NoiseSpec::new(sd, derive_seed(cond_seed, k as u64))?,
                )
            })?;
            let decrypted = model.predict(&noisy, exec)?;
            summarize(format!("noise_sd={sd}"), plaintexts, &decrypted)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub key_fingerprint: String,
    pub wrong_key_fingerprint: String,
    pub same_key: ConditionSummary,
    pub wrong_key: ConditionSummary,
}

/// Encrypts the plaintexts under both keys and decrypts both with `model`.
pub fn wrong_key_attack(
    model: &DecoderModel,
    key: &PhysicalKey,
    wrong_key: &PhysicalKey,
    plaintexts: &[PlainImage],
    exec: Exec,
) -> Result<AttackReport> {
    if key.n_in() != wrong_key.n_in() || key.n_out() != wrong_key.n_out() {
        return Err(Error::invalid(format!(
            "keys differ in shape: {}x{} vs {}x{}",
            key.n_out(),
            key.n_in(),
            wrong_key.n_out(),
            wrong_key.n_in()
        )));
    }
    let shape = model.input_shape();
    let same = model.predict(&encrypt_batch(key, plaintexts, shape, exec)?, exec)?;
    let wrong = model.predict(&encrypt_batch(wrong_key, plaintexts, shape, exec)?, exec)?;
    Ok(AttackReport {
        key_fingerprint: format!("{:016x}", key.fingerprint()),
        wrong_key_fingerprint: format!("{:016x}", wrong_key.fingerprint()),
        same_key: summarize("same_key", plaintexts, &same)?,
        wrong_key: summarize("wrong_key", plaintexts, &wrong)?,
    })
}

/// Corpus, key, split and ciphertexts shared by all experiments of a config.
pub struct Prepared {
    pub corpus: Corpus,
    pub key: PhysicalKey,
    pub splits: Splits,
    pub speckles: Vec<SpecklePattern>,
}

impl Prepared {
    pub fn new(cfg: &ExperimentConfig, exec: Exec) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.corpus;
        let corpus = build_corpus_with(
            c.n_identities,
            c.samples_per_identity,
            c.image_size,
            c.seed,
            exec,
        )
        .stage("corpus")?;
        let key =
            generate_key(cfg.key_seed, cfg.n_in(), cfg.speckle_shape().len()).stage("keygen")?;
        let splits = split(corpus.len(), cfg.split, cfg.split_seed).stage("split")?;
        let speckles =
            encrypt_batch(&key, &corpus.images(), cfg.speckle_shape(), exec).stage("encrypt")?;
        Ok(Self {
            corpus,
            key,
            splits,
            speckles,
        })
    }

    pub fn speckles_of(&self, idx: &[usize]) -> Vec<SpecklePattern> {
        idx.iter().map(|&i| self.speckles[i].clone()).collect()
    }

    pub fn plaintexts_of(&self, idx: &[usize]) -> Vec<PlainImage> {
        idx.iter()
            .map(|&i| self.corpus.samples[i].image.clone())
            .collect()
    }

    /// Trains a decoder on the train split, optionally on cropped speckles.
    pub fn train_decoder(
        &self,
        cfg: &ExperimentConfig,
        fov: Option<FovSpec>,
        exec: Exec,
    ) -> Result<(DecoderModel, TrainHistory)> {
        let crop = |v: Vec<SpecklePattern>| -> Result<Vec<SpecklePattern>> {
            match fov {
                Some(f) => v.iter().map(|s| crop_fov(s, f)).collect(),
                None => Ok(v),
            }
        };
        let train_sp = crop(self.speckles_of(&self.splits.train))?;
        let eval_sp = crop(self.speckles_of(&self.splits.eval))?;
        let train_pt = self.plaintexts_of(&self.splits.train);
        let eval_pt = self.plaintexts_of(&self.splits.eval);
        let input = fov.map_or(cfg.speckle_shape(), |f| f.output_shape());
        let size = cfg.corpus.image_size;
        let model = DecoderModel::build(&cfg.decoder, input, size, size)?;
        train(
            model,
            TrainingSet::new(&train_sp, &train_pt)?,
            TrainingSet::new(&eval_sp, &eval_pt)?,
            &cfg.train,
            exec,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
    pub key_fingerprint: String,
    pub conditions: Vec<ConditionSummary>,
    pub recognition: Vec<RecognitionReport>,
    /// Distance from each decrypted test image to its own original.
    pub self_distances: Vec<f64>,
    pub wrong_key: Option<AttackReport>,
    pub history: TrainHistory,
    pub config: ExperimentConfig,
    pub wall_clock_s: f64,
}

impl ExperimentReport {
    /// A condition by label.
    pub fn condition(&self, label: &str) -> Option<&ConditionSummary> {
        self.conditions.iter().find(|c| c.label == label)
    }
}

/// Names of the files written by [`run_pipeline`] inside the output directory.
pub mod artifacts {
    pub const KEY: &str = "key.spky";
    pub const WRONG_KEY: &str = "wrong_key.spky";
    pub const MODEL: &str = "model.spmd";
    pub const HISTORY: &str = "history.csv";
    pub const RECOGNITION: &str = "recognition.csv";
    pub const CONDITIONS: &str = "conditions.csv";
    pub const SPECKLES: &str = "speckles";
    pub const DECRYPTED: &str = "decrypted";
    pub const CONFIG: &str = "config.json";
}

/// Runs corpus generation, encryption, training, test decryption, metric
/// averaging and the recognition sweep, persisting every artifact under
/// `out_dir`. Returns the report and the path it was written to.
pub fn run_pipeline(
    cfg: &ExperimentConfig,
    out_dir: impl AsRef<Path>,
    exec: Exec,
) -> Result<(ExperimentReport, PathBuf)> {
    let started = Instant::now();
    let out = out_dir.as_ref();
    std::fs::create_dir_all(out)?;
    let hash = cfg.hash();
    write_json(out.join(artifacts::CONFIG), cfg)?;

    let prep = Prepared::new(cfg, exec)?;
    prep.key.save(out.join(artifacts::KEY)).stage("keygen")?;
    write_corpus(&prep.corpus, out).stage("corpus")?;
    if cfg.save_speckles {
        let dir = out.join(artifacts::SPECKLES);
        std::fs::create_dir_all(&dir)?;
        for (i, s) in prep.speckles.iter().enumerate() {
            s.to_record()
                .save(dir.join(format!("{i:05}.spim")))
                .stage("encrypt")?;
        }
    }

    let test_pt = prep.plaintexts_of(&prep.splits.test);
    let test_sp = prep.speckles_of(&prep.splits.test);
    let (model, history) = match cfg.decoder_source {
        DecoderSource::Trained => {
            let (m, h) = prep.train_decoder(cfg, None, exec).stage("train")?;
            save_model(&m, out.join(artifacts::MODEL)).stage("train")?;
            history_to_csv(&h, out.join(artifacts::HISTORY))?;
            (Some(m), h)
        }
        DecoderSource::Perfect => (None, TrainHistory::default()),
    };
    let decrypted = match &model {
        Some(m) => m.predict(&test_sp, exec).stage("decrypt")?,
        None => test_pt.clone(),
    };
    let dec_dir = out.join(artifacts::DECRYPTED);
    std::fs::create_dir_all(&dec_dir)?;
    for (k, img) in decrypted.iter().enumerate() {
        crate::dataset::save_image_pgm(img, dec_dir.join(format!("{k:04}.pgm")))
            .stage("decrypt")?;
    }

    let mut conditions = vec![summarize("test", &test_pt, &decrypted).stage("metrics")?];

    let embedder = EmbeddingModel::new(cfg.embedding).stage("recognize")?;
    let orig_emb = embedder.embed_all(&test_pt, exec).stage("recognize")?;
    let dec_emb = embedder.embed_all(&decrypted, exec).stage("recognize")?;
    let pairs = PairDistances::all_pairs(&orig_emb, &dec_emb).stage("recognize")?;
    let recognition = threshold_sweep(&pairs, &cfg.thresholds).stage("recognize")?;
    let self_dist = self_distances(&orig_emb, &dec_emb).stage("recognize")?;
    let mut csv = Vec::new();
    write_sweep_csv(&recognition, &mut csv)?;
    std::fs::write(out.join(artifacts::RECOGNITION), csv)?;

    let mut attack = None;
    if let Some(m) = &model {
        if cfg.include_noise_sweep && !cfg.noise_sds.is_empty() {
            conditions.extend(
                noise_sweep(m, &test_sp, &test_pt, &cfg.noise_sds, cfg.noise_seed, exec)
                    .stage("noise_sweep")?,
            );
        }
        if cfg.include_wrong_key {
            let wrong = generate_key(cfg.wrong_key_seed, prep.key.n_in(), prep.key.n_out())
                .stage("wrong_key")?;
            wrong
                .save(out.join(artifacts::WRONG_KEY))
                .stage("wrong_key")?;
            let rep = wrong_key_attack(m, &prep.key, &wrong, &test_pt, exec).stage("wrong_key")?;
            conditions.push(rep.wrong_key.clone());
            attack = Some(rep);
        }
    }
    conditions_to_csv(&conditions, out.join(artifacts::CONDITIONS))?;

    let report = ExperimentReport {
        config_hash: hash.clone(),
        seeds: cfg.seeds(),
        key_fingerprint: format!("{:016x}", prep.key.fingerprint()),
        conditions,
        recognition,
        self_distances: self_dist,
        wrong_key: attack,
        history,
        config: cfg.clone(),
        wall_clock_s: started.elapsed().as_secs_f64(),
    };
    let path = write_report(&report, out, &hash)?;
    Ok((report, path))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FovReport {
    pub config_hash: String,
    pub fov: FovSpec,
    pub full: ConditionSummary,
    pub reduced: ConditionSummary,
    pub full_history: TrainHistory,
    pub reduced_history: TrainHistory,
    pub wall_clock_s: f64,
}

/// Trains one decoder on full speckles and one on the configured crop, with
/// the same split and plaintexts, and scores both on the test split.
pub fn fov_experiment(cfg: &ExperimentConfig, exec: Exec) -> Result<FovReport> {
    let started = Instant::now();
    let fov = cfg.fov_spec();
    let prep = Prepared::new(cfg, exec)?;
    let test_pt = prep.plaintexts_of(&prep.splits.test);
    let test_sp = prep.speckles_of(&prep.splits.test);
    let cropped: Vec<SpecklePattern> = test_sp
        .iter()
        .map(|s| crop_fov(s, fov))
        .collect::<Result<_>>()
        .stage("fov")?;
    let (full_model, full_history) = prep.train_decoder(cfg, None, exec).stage("train_full")?;
    let (reduced_model, reduced_history) = prep
        .train_decoder(cfg, Some(fov), exec)
        .stage("train_reduced")?;
    let full = summarize("full_fov", &test_pt, &full_model.predict(&test_sp, exec)?)?;
    let reduced = summarize(
        "reduced_fov",
        &test_pt,
        &reduced_model.predict(&cropped, exec)?,
    )?;
    Ok(FovReport {
        config_hash: cfg.hash(),
        fov,
        full,
        reduced,
        full_history,
        reduced_history,
        wall_clock_s: started.elapsed().as_secs_f64(),
    })
}

fn write_json(path: impl AsRef<Path>, value: &impl Serialize) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Writes `report-<hash>.json`, or `report-<hash>-<n>.json` for the first
/// free `n` when earlier reports exist; never overwrites.
pub fn write_report(report: &impl Serialize, dir: &Path, hash: &str) -> Result<PathBuf> {
    let mut path = dir.join(format!("report-{hash}.json"));
    let mut n = 1;
    while path.exists() {
        path = dir.join(format!("report-{hash}-{n}.json"));
        n += 1;
    }
    let f = std::fs::OpenOptions::new()
        .write(true)
        .create_new(true)
        .open(&path)?;
    let mut w = std::io::BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, report)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(path)
}

fn history_to_csv(h: &TrainHistory, path: PathBuf) -> Result<()> {
    h.save_csv(path)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

pub fn write_conditions_csv(conditions: &[ConditionSummary], mut w: impl Write) -> Result<()> {
    writeln!(w, "label,n,pcc_mean,pcc_std,mse_mean,ssim_mean,psnr_mean")?;
    for c in conditions {
        writeln!(
            w,
            "{},{},{:.6},{:.6},{:.6},{:.6},{}",
            c.label,
            c.n,
            c.pcc_mean,
            c.pcc_std,
            c.mse_mean,
            c.ssim_mean,
            opt(c.psnr_mean)
        )?;
    }
    Ok(())
}

fn conditions_to_csv(conditions: &[ConditionSummary], path: PathBuf) -> Result<()> {
    let mut buf = Vec::new();
    write_conditions_csv(conditions, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}
