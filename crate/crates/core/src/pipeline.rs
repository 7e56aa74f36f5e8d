//! File-to-file commands behind the `eet` binary.
//!
//! Output layout per command (all inside `out`):
//!
//! - synth: `train.csv`, `query.csv`, `images/*.ppm`, `teacher.eetc`, `query_teacher.eetc`
//! - encode: `features.eetc`, `masked.eetc`, `hash.eetc`, `codes.eetb`, `errors.csv` on failures,
//!   and `weights.eetw` when no weights were given
//! - optimize-codes: `codes.eetb`, `trace.csv`
//! - fit-heads: `weights.eetw`, `loss.csv`
//! - eval: `pr.csv` (11-point), `pr_raw.csv`, `map.txt`

use std::io::Write;
use std::path::{Path, PathBuf};

use log::{debug, info, warn};
use rayon::prelude::*;

use crate::config::Config;
use crate::error::{EetError, Result};
use crate::formats::{
    self, read_codes, read_manifest, read_matrix, read_weights, write_codes, write_manifest, write_matrix,
    write_pairs_csv, write_weights, Manifest, ManifestEntry,
};
use crate::hashopt::{solve, CodeProblem};
use crate::linalg::Matrix;
use crate::losses::{apply_mask, drg_mask, fit_heads, FitReport, HeadBatch};
use crate::profile::{random_image, time_encoder, CostReport, Timing};
use crate::retrieval::{evaluate, BinaryCodeSet, EvalReport};
use crate::rng::Rng;
use crate::synth::{generate, SynthSplit};
use crate::vit::{encode, heads, load_image, write_ppm, ModelWeights};

/// Environment variable capping encode parallelism.
pub const THREADS_ENV: &str = "EET_THREADS";

#[derive(Debug, Clone)]
pub struct ProfileReport {
    pub unpruned: CostReport,
    pub pruned: CostReport,
    pub timing: Option<(Timing, Timing)>,
}

impl ProfileReport {
    pub fn macs_ratio(&self) -> f64 {
        self.pruned.macs() as f64 / self.unpruned.macs() as f64
    }

    pub fn time_ratio(&self) -> Option<f64> {
        self.timing.map(|(u, p)| p.encoder / u.encoder)
    }
}

/// Cost model for the configured schedule against no pruning, plus median
/// timings over `runs` passes when `runs > 0`.
pub fn cmd_profile(cfg: &Config, runs: usize) -> Result<ProfileReport> {
    let unpruned = CostReport::new(&cfg.model, &crate::ctp::PruneSchedule::empty())?;
    let pruned = CostReport::new(&cfg.model, &cfg.schedule)?;
    let timing = if runs > 0 {
        let w = ModelWeights::random(&cfg.model, cfg.seed);
        let img = random_image(&cfg.model, &mut Rng::new(cfg.seed ^ 0x5eed));
        let u = time_encoder(&w, &cfg.model, &crate::ctp::PruneSchedule::empty(), &img, runs)?;
        let p = time_encoder(&w, &cfg.model, &cfg.schedule, &img, runs)?;
        Some((u, p))
    } else {
        None
    };
    Ok(ProfileReport {
        unpruned,
        pruned,
        timing,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthSummary {
    pub train: usize,
    pub query: usize,
}

fn write_split(out: &Path, name: &str, split: &SynthSplit) -> Result<()> {
    let mut entries = Vec::with_capacity(split.images.len());
    for (i, (img, &label)) in split.images.iter().zip(&split.labels).enumerate() {
        let rel = PathBuf::from(format!("images/{name}_{i:05}.ppm"));
        write_ppm(formats::create(&out.join(&rel))?, img)?;
        entries.push(ManifestEntry { path: rel, label });
    }
    write_manifest(formats::create(&out.join(format!("{name}.csv")))?, &entries)?;
    let teacher = if name == "train" { "teacher.eetc".to_string() } else { format!("{name}_teacher.eetc") };
    write_matrix(formats::create(&out.join(teacher))?, &split.teacher)
}

pub fn cmd_synth(cfg: &Config, out: &Path) -> Result<SynthSummary> {
    let data = generate(&cfg.model, &cfg.synth, cfg.seed);
    write_split(out, "train", &data.train)?;
    write_split(out, "query", &data.query)?;
    info!("synth: {} train, {} query images in {}", data.train.labels.len(), data.query.labels.len(), out.display());
    Ok(SynthSummary {
        train: data.train.labels.len(),
        query: data.query.labels.len(),
    })
}

/// Loads weights, or builds the seeded random model rounded to the
/// precision it would have after a save and load.
pub fn load_or_init_weights(cfg: &Config, path: Option<&Path>) -> Result<ModelWeights> {
    let tensors = match path {
        Some(p) => read_weights(formats::open(p)?)?,
        None => {
            let mut buf = Vec::new();
            write_weights(&mut buf, &ModelWeights::random(&cfg.model, cfg.seed).into_tensors())?;
            read_weights(&buf[..])?
        }
    };
    let w = ModelWeights::from_tensors(&cfg.model, tensors)?;
    w.validate(&cfg.model)?;
    Ok(w)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedItem {
    pub features: Vec<f64>,
    pub masked_features: Vec<f64>,
    pub hash: Vec<f64>,
}

/// Encodes one image, then the same image with its top `k_masked` patches
/// zeroed.
pub fn encode_item(path: &Path, w: &ModelWeights, cfg: &Config) -> Result<EncodedItem> {
    let img = load_image(path)?;
    let enc = encode(&img, w, &cfg.model, &cfg.schedule)?;
    let (_, hash) = heads(&enc.class_embedding, &w.head)?;
    let mask = drg_mask(&enc.importance, cfg.k_masked, cfg.model.patch_size)?;
    let masked = encode(&apply_mask(&img, &mask)?, w, &cfg.model, &cfg.schedule)?;
    Ok(EncodedItem {
        features: enc.class_embedding,
        masked_features: masked.class_embedding,
        hash,
    })
}

#[derive(Debug, Clone, Default)]
pub struct EncodeSummary {
    pub encoded: usize,
    pub failures: Vec<(PathBuf, String)>,
}

fn thread_count() -> Option<usize> {
    std::env::var(THREADS_ENV).ok().and_then(|v| v.parse().ok()).filter(|&n| n > 0)
}

fn stack_rows(rows: &[&[f64]], cols: usize) -> Matrix {
    let mut m = Matrix::zeros(rows.len(), cols);
    for (i, r) in rows.iter().enumerate() {
        m.row_mut(i).copy_from_slice(r);
    }
    m
}

/// Encodes every manifest entry. Failed items are logged, left out of the
/// outputs and listed in `errors.csv`.
pub fn cmd_encode(cfg: &Config, manifest: &Path, weights: Option<&Path>, out: &Path) -> Result<EncodeSummary> {
    let manifest = read_manifest(manifest)?;
    check_classes(cfg, &manifest.labels())?;
    let w = load_or_init_weights(cfg, weights)?;
    std::fs::create_dir_all(out)?;
    if weights.is_none() {
        write_weights(formats::create(&out.join("weights.eetw"))?, &w.to_tensors())?;
    }

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_count() {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| EetError::Config(e.to_string()))?;
    let results: Vec<Result<EncodedItem>> = pool.install(|| {
        manifest
            .entries
            .par_iter()
            .map(|e| encode_item(&manifest.resolve(e), &w, cfg))
            .collect()
    });

    let mut summary = EncodeSummary::default();
    let mut ok = Vec::new();
    let mut labels = Vec::new();
    for (entry, res) in manifest.entries.iter().zip(results) {
        match res {
            Ok(item) => {
                ok.push(item);
                labels.push(entry.label);
            }
            Err(e) => {
                warn!("encode: {}: {e}", entry.path.display());
                summary.failures.push((entry.path.clone(), e.to_string()));
            }
        }
    }
    summary.encoded = ok.len();

    let d = cfg.model.dim;
    let k = cfg.model.hash_bits;
    let features = stack_rows(&ok.iter().map(|i| i.features.as_slice()).collect::<Vec<_>>(), d);
    let masked = stack_rows(&ok.iter().map(|i| i.masked_features.as_slice()).collect::<Vec<_>>(), d);
    let hash = stack_rows(&ok.iter().map(|i| i.hash.as_slice()).collect::<Vec<_>>(), k);
    write_matrix(formats::create(&out.join("features.eetc"))?, &features)?;
    write_matrix(formats::create(&out.join("masked.eetc"))?, &masked)?;
    write_matrix(formats::create(&out.join("hash.eetc"))?, &hash)?;
    write_codes(formats::create(&out.join("codes.eetb"))?, &BinaryCodeSet::from_real(&hash, labels)?)?;
    if !summary.failures.is_empty() {
        let mut f = formats::create(&out.join("errors.csv"))?;
        for (p, e) in &summary.failures {
            writeln!(f, "{},{}", p.display(), e.replace(',', ";"))?;
        }
        f.flush()?;
    }
    info!("encode: {} ok, {} failed", summary.encoded, summary.failures.len());
    Ok(summary)
}

fn check_classes(cfg: &Config, labels: &[u32]) -> Result<()> {
    if let Some(&max) = labels.iter().max() {
        if max as usize >= cfg.model.num_classes {
            return Err(EetError::Config(format!(
                "label {max} does not fit model.num_classes = {}",
                cfg.model.num_classes
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct CodeSummary {
    pub codes: BinaryCodeSet,
    pub objective_trace: Vec<f64>,
}

/// Solves for training codes from the manifest labels.
pub fn cmd_optimize_codes(cfg: &Config, manifest: &Path, out: &Path) -> Result<CodeSummary> {
    let m: Manifest = read_manifest(manifest)?;
    let labels = m.labels();
    let as_usize: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
    let mut problem = CodeProblem::from_labels(&as_usize, m.num_classes(), cfg.model.hash_bits, cfg.hash_alpha)?;
    problem.max_iters = cfg.hash_max_iters;
    problem.tol = cfg.hash_tol;
    let state = solve(&problem, cfg.seed)?;
    let codes = BinaryCodeSet::from_code_columns(&state.b, labels)?;
    write_codes(formats::create(&out.join("codes.eetb"))?, &codes)?;
    write_pairs_csv(
        formats::create(&out.join("trace.csv"))?,
        ("iter", "objective"),
        state.objective_trace.iter().enumerate().map(|(i, o)| (i.to_string(), format!("{o:e}"))),
    )?;
    info!(
        "optimize-codes: {} iterations, objective {:e}",
        state.objective_trace.len() - 1,
        state.objective_trace.last().copied().unwrap_or(f64::NAN)
    );
    Ok(CodeSummary {
        codes,
        objective_trace: state.objective_trace,
    })
}

/// Inputs to [`cmd_fit_heads`].
#[derive(Debug, Clone)]
pub struct FitInputs<'a> {
    pub features: &'a Path,
    pub masked: Option<&'a Path>,
    pub codes: &'a Path,
    pub teacher: Option<&'a Path>,
    pub weights: Option<&'a Path>,
}

fn check_rows(what: &str, m: &Matrix, n: usize) -> Result<()> {
    if m.rows() != n {
        return Err(EetError::Shape {
            op: "fit-heads",
            expected: format!("{n} rows of {what}"),
            got: m.rows().to_string(),
        });
    }
    Ok(())
}

/// Fits the two heads to the target codes and writes the updated model.
pub fn cmd_fit_heads(cfg: &Config, inputs: &FitInputs<'_>, out: &Path) -> Result<FitReport> {
    let features = read_matrix(formats::open(inputs.features)?)?;
    let codes = read_codes(formats::open(inputs.codes)?)?;
    let n = codes.len();
    check_rows("features", &features, n)?;
    check_classes(cfg, codes.labels())?;
    let masked = inputs.masked.map(|p| read_matrix(formats::open(p)?)).transpose()?;
    let teacher = inputs.teacher.map(|p| read_matrix(formats::open(p)?)).transpose()?;
    if let Some(m) = &masked {
        check_rows("masked features", m, n)?;
    }
    if let Some(t) = &teacher {
        check_rows("teacher codes", t, n)?;
    }
    let mut w = load_or_init_weights(cfg, inputs.weights)?;
    let labels: Vec<usize> = codes.labels().iter().map(|&l| l as usize).collect();
    let targets = codes.to_matrix();
    let batch = HeadBatch {
        features: &features,
        masked_features: masked.as_ref(),
        labels: &labels,
        targets: &targets,
        teacher: teacher.as_ref(),
    };
    let report = fit_heads(&mut w.head, &batch, cfg.loss, cfg.fit)?;
    for (step, loss) in report.loss_trace.iter().enumerate() {
        debug!("fit-heads step {step}: loss {loss:.6e}");
    }
    write_weights(formats::create(&out.join("weights.eetw"))?, &w.to_tensors())?;
    write_pairs_csv(
        formats::create(&out.join("loss.csv"))?,
        ("step", "loss"),
        report.loss_trace.iter().enumerate().map(|(i, l)| (i.to_string(), format!("{l:e}"))),
    )?;
    info!(
        "fit-heads: loss {:.6} -> {:.6}, bit error rate {:.4}",
        report.loss_trace[0],
        report.final_loss.total,
        report.bit_error_rate
    );
    Ok(report)
}

pub fn cmd_eval(cfg: &Config, queries: &Path, db: &Path, out: &Path) -> Result<EvalReport> {
    let q = read_codes(formats::open(queries)?)?;
    let d = read_codes(formats::open(db)?)?;
    let report = evaluate(&q, &d, &cfg.eval)?;
    let fmt = |v: &[(f64, f64)]| v.iter().map(|&(r, p)| (format!("{r:.6}"), format!("{p:.6}"))).collect::<Vec<_>>();
    write_pairs_csv(formats::create(&out.join("pr.csv"))?, ("recall", "precision"), fmt(&report.pr_curve))?;
    write_pairs_csv(formats::create(&out.join("pr_raw.csv"))?, ("recall", "precision"), fmt(&report.pr_raw))?;
    let mut f = formats::create(&out.join("map.txt"))?;
    writeln!(f, "{}", format_map(report.map))?;
    f.flush()?;
    Ok(report)
}

/// mAP as printed: four decimal places.
pub fn format_map(map: f64) -> String {
    format!("{map:.4}")
}

/// Outcome of [`run_synthetic`].
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub eval: EvalReport,
    pub fit: FitReport,
    pub codes: CodeSummary,
    pub failures: usize,
}

/// synth, encode, optimize-codes, fit-heads, encode queries with the fitted
/// model, then eval queries against the optimized training codes. Stage
/// outputs go to subdirectories of `out`.
pub fn run_synthetic(cfg: &Config, out: &Path) -> Result<PipelineRun> {
    let data = out.join("data");
    cmd_synth(cfg, &data)?;
    let train = out.join("train");
    let enc = cmd_encode(cfg, &data.join("train.csv"), None, &train)?;
    let codes_dir = out.join("codes");
    let codes = cmd_optimize_codes(cfg, &data.join("train.csv"), &codes_dir)?;
    let model = out.join("model");
    let fit = cmd_fit_heads(
        cfg,
        &FitInputs {
            features: &train.join("features.eetc"),
            masked: Some(&train.join("masked.eetc")),
            codes: &codes_dir.join("codes.eetb"),
            teacher: Some(&data.join("teacher.eetc")),
            weights: Some(&train.join("weights.eetw")),
        },
        &model,
    )?;
    let query = out.join("query");
    let qenc = cmd_encode(cfg, &data.join("query.csv"), Some(&model.join("weights.eetw")), &query)?;
    let eval = cmd_eval(cfg, &query.join("codes.eetb"), &codes_dir.join("codes.eetb"), &out.join("eval"))?;
    Ok(PipelineRun {
        eval,
        fit,
        codes,
        failures: enc.failures.len() + qenc.failures.len(),
    })
}
