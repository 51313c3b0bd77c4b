//! Vector types and scoring primitives shared by the rest of the crate.
//!
//! Everything is computed in `f64`, regardless of how the inputs were stored.

use crate::error::{Error, Result};

/// Norm below which a vector is treated as zero.
pub const NORM_EPS: f64 = 1e-12;

/// Inner product with sixteen independent accumulators so the loop vectorizes.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 16];
    let chunks_a = a.chunks_exact(16);
    let chunks_b = b.chunks_exact(16);
    let tail: f64 = chunks_a
        .remainder()
        .iter()
        .zip(chunks_b.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (ca, cb) in chunks_a.zip(chunks_b) {
        for i in 0..16 {
            acc[i] += ca[i] * cb[i];
        }
    }
    let mut width = 8;
    while width > 0 {
        for i in 0..width {
            acc[i] += acc[i + width];
        }
        width /= 2;
    }
    acc[0] + tail
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// A unit-norm feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    values: Vec<f64>,
}

impl Embedding {
    /// Normalizes `v` to unit L2 norm.
    pub fn normalize(v: &[f64]) -> Result<Self> {
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
        let n = norm(v);
        // Finite components can still overflow the squared norm.
        if !n.is_finite() {
            return Err(Error::NonFinite);
        }
        if n < NORM_EPS {
            return Err(Error::ZeroVector);
        }
        Ok(Self {
            values: v.iter().map(|x| x / n).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn dot(&self, other: &Embedding) -> f64 {
        dot(&self.values, &other.values)
    }
}

impl AsRef<[f64]> for Embedding {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

/// Free-function spelling of [`Embedding::normalize`].
pub fn l2_normalize(v: &[f64]) -> Result<Embedding> {
    Embedding::normalize(v)
}

/// One unit-norm text embedding per class.
#[derive(Debug, Clone, PartialEq)]
pub struct TextClassMatrix {
    rows: Vec<Embedding>,
    class_names: Option<Vec<String>>,
}

impl TextClassMatrix {
    pub fn new(rows: Vec<Embedding>, class_names: Option<Vec<String>>) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::TooFewClasses(rows.len()));
        }
        let d = rows[0].dim();
        if let Some(bad) = rows.iter().find(|r| r.dim() != d) {
            return Err(Error::DimMismatch {
                expected: d,
                found: bad.dim(),
            });
        }
        if let Some(names) = &class_names {
            if names.len() != rows.len() {
                return Err(Error::InvalidConfig(format!(
                    "{} class names given for {} classes",
                    names.len(),
                    rows.len()
                )));
            }
        }
        Ok(Self { rows, class_names })
    }

    pub fn classes(&self) -> usize {
        self.rows.len()
    }

    pub fn dim(&self) -> usize {
        self.rows[0].dim()
    }

    pub fn rows(&self) -> &[Embedding] {
        &self.rows
    }

    pub fn class_names(&self) -> Option<&[String]> {
        self.class_names.as_deref()
    }
}

/// Unnormalized per-class scores.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits(pub Vec<f64>);

impl Logits {
    pub fn zeros(classes: usize) -> Self {
        Logits(vec![0.0; classes])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `self + weight * other`, componentwise.
    pub fn fused(&self, other: &Logits, weight: f64) -> Logits {
        Logits(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| a + weight * b)
                .collect(),
        )
    }
}

/// A probability distribution over classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// One-hot class assignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PseudoLabel {
    class_index: usize,
    classes: usize,
}

impl PseudoLabel {
    pub fn new(class_index: usize, classes: usize) -> Result<Self> {
        if class_index >= classes {
            return Err(Error::BadClassIndex {
                index: class_index,
                classes,
            });
        }
        Ok(Self {
            class_index,
            classes,
        })
    }

    pub fn class_index(&self) -> usize {
        self.class_index
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn one_hot(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.classes];
        v[self.class_index] = 1.0;
        v
    }
}

/// Cosine score of `f` against every class row.
pub fn zero_shot_logits(f: &Embedding, w: &TextClassMatrix) -> Result<Logits> {
    if f.dim() != w.dim() {
        return Err(Error::DimMismatch {
            expected: w.dim(),
            found: f.dim(),
        });
    }
    Ok(Logits(w.rows().iter().map(|row| f.dot(row)).collect()))
}

/// Softmax of `scale * l`, evaluated with max-subtraction.
pub fn softmax(l: &Logits, scale: f64) -> Result<ProbVector> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::OutOfRange {
            name: "softmax scale",
            value: scale,
            range: "(0, inf)",
        });
    }
    if l.0.is_empty() {
        return Err(Error::TooFewClasses(0));
    }
    if l.0.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite);
    }
    let max = l.0.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = l.0.iter().map(|x| (scale * (x - max)).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(ProbVector(exps.into_iter().map(|e| e / total).collect()))
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy(p: &ProbVector) -> f64 {
    let h: f64 = p
        .0
        .iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| -x * x.ln())
        .sum();
    // Rounding can leave a tiny negative value for one-hot inputs.
    h.max(0.0)
}

/// Index of the largest logit; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn one_hot_argmax(l: &Logits) -> PseudoLabel {
    PseudoLabel {
        class_index: argmax(&l.0),
        classes: l.0.len(),
    }
}
