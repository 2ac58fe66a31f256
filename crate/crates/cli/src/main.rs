use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use speckle_core::dataset::{self, build_corpus};
use speckle_core::decoder::{load_model, save_model};
use speckle_core::exec::Exec;
use speckle_core::harness::{self, ExperimentConfig, Prepared};
use speckle_core::image::SpimRecord;
use speckle_core::metrics;
use speckle_core::optics::{self, FovSpec, NoiseSpec, PhysicalKey, SpecklePattern, SpeckleShape};
use speckle_core::recognizer::{self, EmbeddingModel, PairDistances};
use speckle_core::{PlainImage, IMAGE_FORMAT_VERSION, KEY_FORMAT_VERSION, MODEL_FORMAT_VERSION};

/// Optical speckle encryption of face images with a learned decryptor.
#[derive(Parser)]
#[command(name = "speckle", propagate_version = true)]
struct Cli {
    /// Worker threads for batch work (default: available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Run batch work on the calling thread only.
    #[arg(long, global = true)]
    sequential: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a physical key (transmission matrix) file.
    Keygen(KeygenArgs),
    /// Render the synthetic face corpus as PGM files plus a manifest.
    Corpus(CorpusArgs),
    /// Encrypt a PGM image or every image of a manifest.
    Encrypt(EncryptArgs),
    /// Train a decoder on the corpus described by a config.
    Train(TrainArgs),
    /// Decrypt a SPIM file or a directory of them.
    Decrypt(DecryptArgs),
    /// Score estimate images against reference images.
    Eval(EvalArgs),
    /// Face-verification threshold sweep over original/decrypted image sets.
    Recognize(RecognizeArgs),
    /// Evaluate a trained decoder under detector noise.
    SweepNoise(SweepNoiseArgs),
    /// Train full- and reduced-field-of-view decoders and compare them.
    Fov(ExperimentArgs),
    /// Decrypt ciphertexts made with a different key.
    Attack(AttackArgs),
    /// Key length in bits for a given channel size.
    Keylen(KeylenArgs),
    /// Full corpus -> encrypt -> train -> decrypt -> evaluate run.
    Pipeline(ExperimentArgs),
    /// Forward-encryption latency at three channel sizes.
    Bench(BenchArgs),
}

#[derive(Args)]
struct KeygenArgs {
    /// Seed of the key's random stream.
    #[arg(long)]
    seed: u64,
    /// Input modes (plaintext pixels).
    #[arg(long)]
    n_in: usize,
    /// Output modes (detector pixels).
    #[arg(long)]
    n_out: usize,
    /// Output `.spky` key file.
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct CorpusArgs {
    /// Number of synthetic identities.
    #[arg(long, default_value_t = 220)]
    identities: usize,
    /// Images rendered per identity.
    #[arg(long, default_value_t = 10)]
    per_identity: usize,
    /// Image side in pixels.
    #[arg(long, default_value_t = 16)]
    size: usize,
    /// Corpus seed.
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Output directory (receives `corpus/` and `manifest.json`).
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct EncryptArgs {
    /// Key file (`.spky`).
    #[arg(long)]
    key: PathBuf,
    /// A `.pgm` image or a corpus `manifest.json`.
    #[arg(long, short)]
    input: PathBuf,
    /// Output `.spim` file (single image) or directory (manifest).
    #[arg(long, short)]
    out: PathBuf,
    /// Detector height; defaults to a square detector.
    #[arg(long, requires = "width")]
    height: Option<usize>,
    /// Detector width; requires `--height`.
    #[arg(long, requires = "height")]
    width: Option<usize>,
    /// Detector noise SD as a fraction of the pattern mean.
    #[arg(long, default_value_t = 0.0)]
    noise_sd: f64,
    /// Seed of the detector noise.
    #[arg(long, default_value_t = 0)]
    noise_seed: u64,
    /// Keep only the top-left quarter of the detector.
    #[arg(long)]
    quarter_fov: bool,
}

/// Config file plus flag overrides (flags win).
#[derive(Args, Clone)]
struct ConfigArgs {
    /// JSON experiment config; missing fields take documented defaults.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Seed of the encryption key.
    #[arg(long)]
    key_seed: Option<u64>,
    /// Seed of the attacker's key.
    #[arg(long)]
    wrong_key_seed: Option<u64>,
    /// Seed of the synthetic corpus.
    #[arg(long)]
    corpus_seed: Option<u64>,
    /// Training epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Initial SGD learning rate.
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Mini-batch size.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Seed of the per-epoch shuffle.
    #[arg(long)]
    train_seed: Option<u64>,
    /// Train/eval/test sizes, e.g. `2000,100,100`.
    #[arg(long, value_delimiter = ',', value_name = "TRAIN,EVAL,TEST")]
    split: Option<Vec<usize>>,
    /// Replace decryption with the plaintexts (recognition sanity check).
    #[arg(long)]
    perfect_decoder: bool,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)
                .with_context(|| format!("reading config {}", p.display()))?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = self.key_seed {
            cfg.key_seed = v;
        }
        if let Some(v) = self.wrong_key_seed {
            cfg.wrong_key_seed = v;
        }
        if let Some(v) = self.corpus_seed {
            cfg.corpus.seed = v;
        }
        if let Some(v) = self.epochs {
            cfg.train.epochs = v;
        }
        if let Some(v) = self.learning_rate {
            cfg.train.learning_rate = v;
        }
        if let Some(v) = self.batch_size {
            cfg.train.batch_size = v;
        }
        if let Some(v) = self.train_seed {
            cfg.train.seed = v;
        }
        if let Some(s) = &self.split {
            if s.len() != 3 {
                bail!(
                    "--split takes three sizes (train,eval,test), got {}",
                    s.len()
                );
            }
            cfg.split = dataset::SplitSpec {
                n_train: s[0],
                n_eval: s[1],
                n_test: s[2],
            };
        }
        if self.perfect_decoder {
            cfg.decoder_source = harness::DecoderSource::Perfect;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Output model file.
    #[arg(long, short)]
    out: PathBuf,
    /// Per-epoch history CSV.
    #[arg(long)]
    history: Option<PathBuf>,
    /// Train on the top-left quarter of each speckle pattern.
    #[arg(long)]
    quarter_fov: bool,
}

#[derive(Args)]
struct DecryptArgs {
    /// Trained decoder (`.spmd`).
    #[arg(long)]
    model: PathBuf,
    /// A `.spim` file or a directory of them.
    #[arg(long, short)]
    input: PathBuf,
    /// Output `.pgm` file or directory.
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Reference `.pgm` file or directory.
    #[arg(long)]
    reference: PathBuf,
    /// Estimate `.pgm` file or directory (matched by sorted file order).
    #[arg(long)]
    estimate: PathBuf,
}

#[derive(Args)]
struct RecognizeArgs {
    /// Directory of original `.pgm` images.
    #[arg(long)]
    originals: PathBuf,
    /// Directory of decrypted `.pgm` images, aligned by sorted file name.
    #[arg(long)]
    decrypted: PathBuf,
    /// Match thresholds to sweep.
    #[arg(long, value_delimiter = ',', default_values_t = recognizer::DEFAULT_SWEEP)]
    thresholds: Vec<f64>,
    /// Seed of the embedding projection.
    #[arg(long, default_value_t = 41)]
    embedding_seed: u64,
    /// Also write the sweep as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct SweepNoiseArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Trained decoder (`.spmd`).
    #[arg(long)]
    model: PathBuf,
    /// Noise SDs (fractions of the pattern mean); default from the config.
    #[arg(long, value_delimiter = ',')]
    sds: Option<Vec<f64>>,
    /// Write the JSON here (plus a `.csv` sibling) instead of stdout.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AttackArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Decoder trained on the correct key (`.spmd`).
    #[arg(long)]
    model: PathBuf,
    /// Key file for the wrong key; generated from `--wrong-key-seed` if absent.
    #[arg(long)]
    wrong_key: Option<PathBuf>,
    /// Write the JSON here instead of stdout.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Output directory for artifacts and the report.
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct KeylenArgs {
    /// Input modes.
    #[arg(long)]
    n_in: usize,
    /// Output modes.
    #[arg(long)]
    n_out: usize,
}

#[derive(Args)]
struct BenchArgs {
    /// Encryptions timed per channel size.
    #[arg(long, default_value_t = 1000)]
    iterations: usize,
}

fn version_string() -> String {
    format!(
        "{} (SPKY v{KEY_FORMAT_VERSION}, SPIM v{IMAGE_FORMAT_VERSION}, SPMD v{MODEL_FORMAT_VERSION})",
        env!("CARGO_PKG_VERSION")
    )
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .init();
    let matches = Cli::command()
        .version(&*Box::leak(version_string().into_boxed_str()))
        .get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn configure_threads(threads: Option<usize>) -> Result<()> {
    let Some(n) = threads else { return Ok(()) };
    if n == 0 {
        bail!("--threads must be at least 1");
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("configuring the worker pool")?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    configure_threads(cli.threads)?;
    let exec = if cli.sequential {
        Exec::Sequential
    } else {
        Exec::default()
    };
    match cli.command {
        Command::Keygen(a) => keygen(a),
        Command::Corpus(a) => corpus(a, exec),
        Command::Encrypt(a) => encrypt(a, exec),
        Command::Train(a) => train(a, exec),
        Command::Decrypt(a) => decrypt(a, exec),
        Command::Eval(a) => eval(a),
        Command::Recognize(a) => recognize(a, exec),
        Command::SweepNoise(a) => sweep_noise(a, exec),
        Command::Fov(a) => fov(a, exec),
        Command::Attack(a) => attack(a, exec),
        Command::Keylen(a) => {
            println!("{}", optics::key_length_bits(a.n_in, a.n_out));
            Ok(())
        }
        Command::Pipeline(a) => pipeline(a, exec),
        Command::Bench(a) => bench(a),
    }
}

fn keygen(a: KeygenArgs) -> Result<()> {
    let key = optics::generate_key(a.seed, a.n_in, a.n_out)?;
    key.save(&a.out)?;
    println!("{:016x}", key.fingerprint());
    Ok(())
}

fn corpus(a: CorpusArgs, exec: Exec) -> Result<()> {
    let c = dataset::build_corpus_with(a.identities, a.per_identity, a.size, a.seed, exec)?;
    let entries = dataset::write_corpus(&c, &a.out)?;
    eprintln!("wrote {} images to {}", entries.len(), a.out.display());
    Ok(())
}

fn is_manifest(p: &Path) -> bool {
    p.extension().is_some_and(|e| e == "json")
}

fn encrypt(a: EncryptArgs, exec: Exec) -> Result<()> {
    let key =
        PhysicalKey::load(&a.key).with_context(|| format!("loading key {}", a.key.display()))?;
    let shape = match (a.height, a.width) {
        (Some(h), Some(w)) => SpeckleShape::new(h, w),
        _ => SpeckleShape::square_for(key.n_out())?,
    };
    let noise = NoiseSpec::new(a.noise_sd, a.noise_seed)?;
    let finish = |k: usize, sp: SpecklePattern| -> Result<SpecklePattern> {
        let noisy = optics::add_noise(
            &sp,
            NoiseSpec::new(
                noise.sd_fraction,
                speckle_core::rng::derive_seed(noise.seed, k as u64),
            )?,
        )?;
        Ok(if a.quarter_fov {
            optics::crop_fov(&noisy, FovSpec::top_left_quarter(shape))?
        } else {
            noisy
        })
    };
    if is_manifest(&a.input) {
        let samples = dataset::load_manifest(&a.input)?;
        let images: Vec<PlainImage> = samples.into_iter().map(|s| s.image).collect();
        let speckles = optics::encrypt_batch(&key, &images, shape, exec)?;
        std::fs::create_dir_all(&a.out)?;
        for (k, sp) in speckles.into_iter().enumerate() {
            finish(k, sp)?
                .to_record()
                .save(a.out.join(format!("{k:05}.spim")))?;
        }
        eprintln!("encrypted {} images into {}", images.len(), a.out.display());
    } else {
        let img = dataset::load_image_pgm(&a.input)?;
        let sp = optics::encrypt(&key, &img, shape)?;
        finish(0, sp)?.to_record().save(&a.out)?;
    }
    Ok(())
}

fn train(a: TrainArgs, exec: Exec) -> Result<()> {
    let cfg = a.config.resolve()?;
    let prep = Prepared::new(&cfg, exec)?;
    let fov = a.quarter_fov.then(|| cfg.fov_spec());
    let (model, history) = prep.train_decoder(&cfg, fov, exec)?;
    save_model(&model, &a.out)?;
    if let Some(h) = &a.history {
        history.save_csv(h)?;
    }
    if let Some(last) = history.last() {
        println!("epoch {} eval_pcc {:.6}", last.epoch, last.eval_pcc);
    }
    Ok(())
}

fn sorted_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading directory {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == ext))
        .collect();
    v.sort();
    Ok(v)
}

fn load_speckle(p: &Path) -> Result<SpecklePattern> {
    Ok(SpecklePattern::from_record(SpimRecord::load(p)?)?)
}

fn decrypt(a: DecryptArgs, exec: Exec) -> Result<()> {
    let model = load_model(&a.model)?;
    if a.input.is_dir() {
        let files = sorted_files(&a.input, "spim")?;
        let speckles = files
            .iter()
            .map(|p| load_speckle(p))
            .collect::<Result<Vec<_>>>()?;
        let images = model.predict(&speckles, exec)?;
        std::fs::create_dir_all(&a.out)?;
        for (f, img) in files.iter().zip(&images) {
            let name = f.file_stem().unwrap_or_default().to_string_lossy();
            dataset::save_image_pgm(img, a.out.join(format!("{name}.pgm")))?;
        }
        eprintln!(
            "decrypted {} patterns into {}",
            images.len(),
            a.out.display()
        );
    } else {
        let img = model.forward(&load_speckle(&a.input)?)?;
        dataset::save_image_pgm(&img, &a.out)?;
    }
    Ok(())
}

fn load_images(p: &Path) -> Result<Vec<PlainImage>> {
    if p.is_dir() {
        sorted_files(p, "pgm")?
            .iter()
            .map(|f| Ok(dataset::load_image_pgm(f)?))
            .collect()
    } else {
        Ok(vec![dataset::load_image_pgm(p)?])
    }
}

fn eval(a: EvalArgs) -> Result<()> {
    let refs = load_images(&a.reference)?;
    let ests = load_images(&a.estimate)?;
    if refs.len() == 1 && ests.len() == 1 {
        let r = metrics::evaluate(&refs[0], &ests[0])?;
        println!("{}", serde_json::to_string_pretty(&r)?);
    } else {
        let s = harness::summarize("eval", &refs, &ests)?;
        println!("{}", serde_json::to_string_pretty(&s)?);
    }
    Ok(())
}

fn recognize(a: RecognizeArgs, exec: Exec) -> Result<()> {
    let originals = load_images(&a.originals)?;
    let decrypted = load_images(&a.decrypted)?;
    let embedder = EmbeddingModel::new(recognizer::EmbeddingRecipe {
        seed: a.embedding_seed,
        ..Default::default()
    })?;
    let oe = embedder.embed_all(&originals, exec)?;
    let de = embedder.embed_all(&decrypted, exec)?;
    let pairs = PairDistances::all_pairs(&oe, &de)?;
    let sweep = recognizer::threshold_sweep(&pairs, &a.thresholds)?;
    if let Some(p) = &a.csv {
        recognizer::write_sweep_csv(&sweep, std::fs::File::create(p)?)?;
    }
    recognizer::write_sweep_json(&sweep, std::io::stdout().lock())?;
    println!();
    Ok(())
}

fn emit(text: String, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => {
            std::fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display()))?
        }
        None => println!("{text}"),
    }
    Ok(())
}

fn test_split(
    cfg: &ExperimentConfig,
    exec: Exec,
) -> Result<(Prepared, Vec<PlainImage>, Vec<SpecklePattern>)> {
    let prep = Prepared::new(cfg, exec)?;
    let pt = prep.plaintexts_of(&prep.splits.test);
    let sp = prep.speckles_of(&prep.splits.test);
    Ok((prep, pt, sp))
}

fn sweep_noise(a: SweepNoiseArgs, exec: Exec) -> Result<()> {
    let cfg = a.config.resolve()?;
    let model = load_model(&a.model)?;
    let (_, pt, sp) = test_split(&cfg, exec)?;
    let sds = a.sds.unwrap_or_else(|| cfg.noise_sds.clone());
    let rows = harness::noise_sweep(&model, &sp, &pt, &sds, cfg.noise_seed, exec)?;
    if let Some(p) = &a.out {
        let mut csv = Vec::new();
        harness::write_conditions_csv(&rows, &mut csv)?;
        let csv_path = p.with_extension("csv");
        std::fs::write(&csv_path, csv)
            .with_context(|| format!("writing {}", csv_path.display()))?;
    }
    emit(serde_json::to_string_pretty(&rows)?, a.out.as_deref())
}

fn attack(a: AttackArgs, exec: Exec) -> Result<()> {
    let cfg = a.config.resolve()?;
    let model = load_model(&a.model)?;
    let (prep, pt, _) = test_split(&cfg, exec)?;
    let wrong = match &a.wrong_key {
        Some(p) => PhysicalKey::load(p)?,
        None => optics::generate_key(cfg.wrong_key_seed, prep.key.n_in(), prep.key.n_out())?,
    };
    let rep = harness::wrong_key_attack(&model, &prep.key, &wrong, &pt, exec)?;
    emit(serde_json::to_string_pretty(&rep)?, a.out.as_deref())
}

fn fov(a: ExperimentArgs, exec: Exec) -> Result<()> {
    let cfg = a.config.resolve()?;
    std::fs::create_dir_all(&a.out)?;
    let rep = harness::fov_experiment(&cfg, exec)?;
    let path = harness::write_report(&rep, &a.out, &format!("fov-{}", cfg.hash()))?;
    println!(
        "full_fov pcc_mean {:.6}\nreduced_fov pcc_mean {:.6}\nreport {}",
        rep.full.pcc_mean,
        rep.reduced.pcc_mean,
        path.display()
    );
    Ok(())
}

fn pipeline(a: ExperimentArgs, exec: Exec) -> Result<()> {
    let cfg = a.config.resolve()?;
    let (rep, path) = harness::run_pipeline(&cfg, &a.out, exec)?;
    for c in &rep.conditions {
        println!("{} n={} pcc_mean {:.6}", c.label, c.n, c.pcc_mean);
    }
    println!("report {}", path.display());
    Ok(())
}

fn bench(a: BenchArgs) -> Result<()> {
    if a.iterations == 0 {
        bail!("--iterations must be at least 1");
    }
    println!("n_in,n_out,iterations,median_us,p95_us,encryptions_per_s");
    for side in [8usize, 16, 32] {
        let n_in = side * side;
        let shape = SpeckleShape::new(2 * side, 2 * side);
        let key = optics::generate_key(1, n_in, shape.len())?;
        let corpus = build_corpus(2, 1, side, 1)?;
        let img = &corpus.samples[0].image;
        let mut times = Vec::with_capacity(a.iterations);
        for _ in 0..a.iterations {
            let t = Instant::now();
            let sp = optics::encrypt(&key, img, shape)?;
            std::hint::black_box(sp);
            times.push(t.elapsed().as_secs_f64() * 1e6);
        }
        times.sort_by(f64::total_cmp);
        let median = times[times.len() / 2];
        let p95 = times[((times.len() as f64 * 0.95).ceil() as usize).min(times.len()) - 1];
        println!(
            "{n_in},{},{},{median:.2},{p95:.2},{:.1}",
            shape.len(),
            a.iterations,
            1e6 / median
        );
    }
    Ok(())
}
