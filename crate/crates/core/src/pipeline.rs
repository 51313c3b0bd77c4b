//! Streaming adaptation loop and evaluation.
//!
//! Each sample is handled in a fixed order: score, refine, read the cache,
//! predict, and only then update the cache and feature bank. A sample never
//! contributes to its own prediction.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cache::{CacheEntry, EntropyCache};
use crate::dataset::EmbDataset;
use crate::error::{Error, Result};
use crate::math::{
    argmax, dot, entropy, one_hot_argmax, softmax, zero_shot_logits, Embedding, Logits,
    TextClassMatrix, NORM_EPS,
};
use crate::meanshift::{shift_streaming, FeatureBank, MeanShiftConfig, NeighborSource};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Zero-shot logits only.
    ClipOnly,
    /// Zero-shot plus an entropy cache of raw features, unweighted sum.
    Baseline,
    /// Zero-shot plus a cache of mean-shifted embeddings, weighted by lambda.
    MsTta,
}

impl Mode {
    /// Spelling used on the command line.
    pub fn cli_name(self) -> &'static str {
        match self {
            Mode::ClipOnly => "clip",
            Mode::Baseline => "baseline",
            Mode::MsTta => "ms-tta",
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.cli_name())
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clip" | "clip_only" | "clip-only" => Ok(Mode::ClipOnly),
            "baseline" => Ok(Mode::Baseline),
            "ms-tta" | "ms_tta" | "mstta" => Ok(Mode::MsTta),
            other => Err(Error::InvalidConfig(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    /// Weight of the cache logits in `ms_tta` mode. Baseline always uses 1.
    pub lambda: f64,
    pub ms: MeanShiftConfig,
    /// Entries kept per pseudo-class; 0 disables the cache.
    pub cache_q: usize,
    /// Entries above this entropy are never cached.
    pub entropy_threshold: Option<f64>,
    /// Multiplier applied to logits before the softmax used for entropy.
    pub softmax_scale: f64,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::MsTta,
            lambda: 1.0,
            ms: MeanShiftConfig::default(),
            cache_q: 3,
            entropy_threshold: None,
            softmax_scale: 100.0,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn with_mode(mode: Mode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::OutOfRange {
                name: "lambda",
                value: self.lambda,
                range: "[0, inf)",
            });
        }
        if !(self.softmax_scale > 0.0) || !self.softmax_scale.is_finite() {
            return Err(Error::OutOfRange {
                name: "softmax_scale",
                value: self.softmax_scale,
                range: "(0, inf)",
            });
        }
        if let Some(t) = self.entropy_threshold {
            if !(t >= 0.0) {
                return Err(Error::OutOfRange {
                    name: "entropy_threshold",
                    value: t,
                    range: "[0, inf)",
                });
            }
        }
        self.ms.validate()
    }

    /// Weight given to the auxiliary logits.
    fn fusion_weight(&self) -> f64 {
        match self.mode {
            Mode::ClipOnly => 0.0,
            Mode::Baseline => 1.0,
            Mode::MsTta => self.lambda,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub predicted_class: usize,
    pub logits_final: Logits,
    pub logits_clip: Logits,
    /// Cache contribution before weighting; zero in `clip_only` mode.
    pub logits_aux: Logits,
    pub entropy_clip: f64,
    /// The embedding used for cache retrieval and storage.
    pub refined: Embedding,
}

/// Mutable adaptation state for one stream.
#[derive(Debug, Clone)]
pub struct StreamState {
    pub bank: FeatureBank,
    pub cache: EntropyCache,
    seen: u64,
}

impl StreamState {
    pub fn new(cfg: &RunConfig, classes: usize) -> Result<Self> {
        Ok(Self {
            bank: FeatureBank::with_capacity(cfg.ms.bank_capacity)?,
            cache: EntropyCache::new(classes, cfg.cache_q, cfg.entropy_threshold),
            seen: 0,
        })
    }

    pub fn samples_seen(&self) -> u64 {
        self.seen
    }
}

pub fn process_sample(
    f: &Embedding,
    state: &mut StreamState,
    cfg: &RunConfig,
    w: &TextClassMatrix,
) -> Result<Prediction> {
    let logits_clip = zero_shot_logits(f, w)?;
    let entropy_clip = entropy(&softmax(&logits_clip, cfg.softmax_scale)?);

    let refined = match cfg.mode {
        Mode::MsTta => shift_streaming(f, &state.bank, &cfg.ms)?,
        Mode::Baseline | Mode::ClipOnly => f.clone(),
    };
    let (logits_aux, logits_final) = match cfg.mode {
        Mode::ClipOnly => (Logits::zeros(w.classes()), logits_clip.clone()),
        Mode::Baseline | Mode::MsTta => {
            let aux = state.cache.logits(&refined)?;
            let fused = logits_clip.fused(&aux, cfg.fusion_weight());
            (aux, fused)
        }
    };
    let predicted_class = argmax(logits_final.values());

    if cfg.mode != Mode::ClipOnly {
        state.cache.offer(CacheEntry {
            embedding: refined.clone(),
            pseudo_label: one_hot_argmax(&logits_clip),
            entropy: entropy_clip,
            arrival_index: state.seen,
        })?;
    }
    if cfg.mode == Mode::MsTta {
        match cfg.ms.neighbor_source {
            NeighborSource::BankRaw => state.bank.push(f)?,
            NeighborSource::CacheRefined => state.bank.push(&refined)?,
        }
    }
    state.seen += 1;

    Ok(Prediction {
        predicted_class,
        logits_final,
        logits_clip,
        logits_aux,
        entropy_clip,
        refined,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Compactness {
    /// Mean cosine of samples to their own normalized class centroid.
    pub intra: f64,
    /// Mean cosine between distinct normalized class centroids.
    pub inter: f64,
}

pub fn compactness_metrics<E: AsRef<[f64]>>(embeddings: &[E], labels: &[usize]) -> Result<Compactness> {
    if embeddings.len() != labels.len() {
        return Err(Error::DimMismatch {
            expected: labels.len(),
            found: embeddings.len(),
        });
    }
    let Some(first) = embeddings.first() else {
        return Err(Error::EmptyDataset);
    };
    let d = first.as_ref().len();
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut sums = vec![vec![0.0; d]; classes];
    let mut counts = vec![0usize; classes];
    for (e, &l) in embeddings.iter().zip(labels) {
        let e = e.as_ref();
        if e.len() != d {
            return Err(Error::DimMismatch {
                expected: d,
                found: e.len(),
            });
        }
        sums[l].iter_mut().zip(e).for_each(|(s, x)| *s += x);
        counts[l] += 1;
    }
    let present: Vec<usize> = (0..classes).filter(|&c| counts[c] > 0).collect();
    if present.len() < 2 {
        return Err(Error::TooFewClasses(present.len()));
    }
    let mut centroids = vec![Vec::new(); classes];
    for &c in &present {
        let n = dot(&sums[c], &sums[c]).sqrt();
        if n < NORM_EPS {
            return Err(Error::DegenerateClass(c));
        }
        centroids[c] = sums[c].iter().map(|x| x / n).collect();
    }

    let intra = embeddings
        .iter()
        .zip(labels)
        .map(|(e, &l)| dot(e.as_ref(), &centroids[l]))
        .sum::<f64>()
        / embeddings.len() as f64;

    let mut inter = 0.0;
    let mut pairs = 0usize;
    for (i, &a) in present.iter().enumerate() {
        for &b in &present[i + 1..] {
            inter += dot(&centroids[a], &centroids[b]);
            pairs += 1;
        }
    }
    Ok(Compactness {
        intra,
        inter: inter / pairs as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub dataset: String,
    pub n_samples: usize,
    pub correct: usize,
    pub top1_accuracy: f64,
    /// `None` for classes with no samples.
    pub per_class_accuracy: Vec<Option<f64>>,
    pub per_class_count: Vec<usize>,
    /// Intra-class compactness of the raw features.
    pub compactness_before: Option<f64>,
    /// Intra-class compactness of the embeddings used for retrieval.
    pub compactness_after: Option<f64>,
    pub separation_before: Option<f64>,
    pub separation_after: Option<f64>,
    /// Stored rows that were not unit-norm before loading.
    pub renormalized_rows: usize,
    pub config_echo: RunConfig,
    pub wall_time_ms: u64,
}

impl Report {
    /// Copy with the wall-clock field zeroed, for determinism comparisons.
    pub fn without_timing(&self) -> Report {
        Report {
            wall_time_ms: 0,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone)]
pub struct StreamOutcome {
    pub report: Report,
    pub predictions: Vec<Prediction>,
    pub state: StreamState,
}

/// Runs the stream in stored order with batch size one and keeps every
/// prediction.
pub fn run_stream(ds: &EmbDataset, cfg: &RunConfig) -> Result<StreamOutcome> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let started = Instant::now();
    let classes = ds.classes();
    let mut state = StreamState::new(cfg, classes)?;
    let mut predictions = Vec::with_capacity(ds.len());
    for f in ds.features() {
        predictions.push(process_sample(f, &mut state, cfg, ds.text())?);
    }

    let mut per_class_count = vec![0usize; classes];
    let mut per_class_correct = vec![0usize; classes];
    for (p, &label) in predictions.iter().zip(ds.labels()) {
        per_class_count[label] += 1;
        if p.predicted_class == label {
            per_class_correct[label] += 1;
        }
    }
    let correct: usize = per_class_correct.iter().sum();
    let per_class_accuracy = per_class_correct
        .iter()
        .zip(&per_class_count)
        .map(|(&hit, &n)| (n > 0).then(|| hit as f64 / n as f64))
        .collect();

    let before = compactness_metrics(ds.features(), ds.labels()).ok();
    let refined: Vec<&Embedding> = predictions.iter().map(|p| &p.refined).collect();
    let after = compactness_metrics(&refined, ds.labels()).ok();

    let report = Report {
        dataset: ds.name().to_owned(),
        n_samples: ds.len(),
        correct,
        top1_accuracy: correct as f64 / ds.len() as f64,
        per_class_accuracy,
        per_class_count,
        compactness_before: before.map(|c| c.intra),
        compactness_after: after.map(|c| c.intra),
        separation_before: before.map(|c| c.inter),
        separation_after: after.map(|c| c.inter),
        renormalized_rows: ds.renormalized_rows(),
        config_echo: *cfg,
        wall_time_ms: started.elapsed().as_millis() as u64,
    };
    Ok(StreamOutcome {
        report,
        predictions,
        state,
    })
}

pub fn evaluate_stream(ds: &EmbDataset, cfg: &RunConfig) -> Result<Report> {
    run_stream(ds, cfg).map(|o| o.report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Alpha,
    K,
    Q,
    Lambda,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Alpha => "alpha",
            SweepAxis::K => "k",
            SweepAxis::Q => "q",
            SweepAxis::Lambda => "lambda",
        }
    }

    pub fn is_integer(self) -> bool {
        matches!(self, SweepAxis::K | SweepAxis::Q)
    }

    /// `base` with this axis set to `value`.
    pub fn apply(self, base: &RunConfig, value: f64) -> Result<RunConfig> {
        let mut cfg = *base;
        let as_count = |name: &'static str| -> Result<usize> {
            if value >= 0.0 && value.fract() == 0.0 && value <= u32::MAX as f64 {
                Ok(value as usize)
            } else {
                Err(Error::OutOfRange {
                    name,
                    value,
                    range: "non-negative integers",
                })
            }
        };
        match self {
            SweepAxis::Alpha => cfg.ms.alpha = value,
            SweepAxis::K => cfg.ms.k = as_count("k")?,
            SweepAxis::Q => cfg.cache_q = as_count("q")?,
            SweepAxis::Lambda => cfg.lambda = value,
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "alpha" => Ok(SweepAxis::Alpha),
            "k" => Ok(SweepAxis::K),
            "q" | "cache_q" => Ok(SweepAxis::Q),
            "lambda" => Ok(SweepAxis::Lambda),
            other => Err(Error::InvalidConfig(format!("unknown sweep axis {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub value: f64,
    pub report: Report,
}

/// One independent evaluation per value, sorted by value.
///
/// Evaluations run on a rayon pool of `threads` workers (the global pool if
/// `None`); the output order does not depend on scheduling.
pub fn sweep(
    ds: &EmbDataset,
    base: &RunConfig,
    axis: SweepAxis,
    values: &[f64],
    threads: Option<usize>,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::InvalidConfig("sweep needs at least one value".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let configs = sorted
        .iter()
        .map(|&v| axis.apply(base, v))
        .collect::<Result<Vec<_>>>()?;

    let run = || {
        configs
            .par_iter()
            .zip(&sorted)
            .map(|(cfg, &value)| {
                evaluate_stream(ds, cfg).map(|report| SweepRow {
                    axis,
                    value,
                    report,
                })
            })
            .collect::<Result<Vec<_>>>()
    };
    match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?
            .install(run),
        None => run(),
    }
}
