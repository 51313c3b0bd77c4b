//! kNN neighborhoods on the unit hypersphere and the single-step mean-shift
//! transform applied to streaming features.
//!
//! The refined embedding of a feature `f` with neighbors `n_1..n_k` is
//!
//! ```text
//! z = normalize((1 - alpha) * f + (alpha / k) * sum_j n_j)
//! ```
//!
//! The query is never a member of the bank at retrieval time, so the
//! self-term of the neighborhood is carried entirely by `1 - alpha`.
//!
//! [`classical_mean_shift`] is the iterative fixed-radius procedure. It is not
//! used by the streaming path and exists as a mode-seeking reference.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{dot, norm, Embedding, NORM_EPS};

/// Where streaming neighbors are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeighborSource {
    /// Raw features of previously seen samples.
    #[default]
    BankRaw,
    /// Mean-shifted embeddings of previously seen samples.
    CacheRefined,
}

impl std::str::FromStr for NeighborSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bank_raw" | "bank-raw" | "raw" => Ok(NeighborSource::BankRaw),
            "cache_refined" | "cache-refined" | "refined" => Ok(NeighborSource::CacheRefined),
            other => Err(Error::InvalidConfig(format!(
                "unknown neighbor source {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeanShiftConfig {
    pub alpha: f64,
    pub k: usize,
    pub neighbor_source: NeighborSource,
    /// `None` keeps every observed feature.
    pub bank_capacity: Option<usize>,
}

impl Default for MeanShiftConfig {
    fn default() -> Self {
        Self {
            alpha: 0.8,
            k: 3,
            neighbor_source: NeighborSource::BankRaw,
            bank_capacity: None,
        }
    }
}

impl MeanShiftConfig {
    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        if self.k == 0 {
            return Err(Error::OutOfRange {
                name: "k",
                value: 0.0,
                range: "[1, inf)",
            });
        }
        if self.bank_capacity == Some(0) {
            return Err(Error::OutOfRange {
                name: "bank_capacity",
                value: 0.0,
                range: "[1, inf)",
            });
        }
        Ok(())
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::OutOfRange {
            name: "alpha",
            value: alpha,
            range: "[0, 1]",
        })
    }
}

/// Ordered store of unit-norm features with optional FIFO eviction.
///
/// Rows live in one contiguous buffer. When bounded and full, the oldest row
/// is overwritten in place and `start` advances, so logical index 0 is always
/// the oldest surviving entry.
///
/// An `f32` copy of every row is kept alongside for the coarse similarity
/// scan in [`knn`].
#[derive(Debug, Clone, Default)]
pub struct FeatureBank {
    dim: usize,
    capacity: Option<usize>,
    data: Vec<f64>,
    coarse: Vec<f32>,
    start: usize,
    len: usize,
}

impl FeatureBank {
    pub fn unbounded() -> Self {
        Self::default()
    }

    pub fn with_capacity(capacity: Option<usize>) -> Result<Self> {
        if capacity == Some(0) {
            return Err(Error::OutOfRange {
                name: "bank_capacity",
                value: 0.0,
                range: "[1, inf)",
            });
        }
        Ok(Self {
            capacity,
            ..Self::default()
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> Option<usize> {
        self.capacity
    }

    /// Appends `e`, evicting the oldest entry if the bank is full.
    pub fn push(&mut self, e: &Embedding) -> Result<()> {
        if self.len == 0 && self.data.is_empty() {
            self.dim = e.dim();
        } else if e.dim() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                found: e.dim(),
            });
        }
        let d = self.dim;
        match self.capacity {
            Some(cap) if self.len == cap => {
                let slot = self.start * d;
                self.data[slot..slot + d].copy_from_slice(e.as_slice());
                for (c, &x) in self.coarse[slot..slot + d].iter_mut().zip(e.as_slice()) {
                    *c = x as f32;
                }
                self.start = (self.start + 1) % cap;
            }
            _ => {
                self.data.extend_from_slice(e.as_slice());
                self.coarse.extend(e.as_slice().iter().map(|&x| x as f32));
                self.len += 1;
            }
        }
        Ok(())
    }

    /// Row at logical position `index` (0 = oldest).
    pub fn get(&self, index: usize) -> Option<&[f64]> {
        if index >= self.len {
            return None;
        }
        let slot = (self.start + index) % self.len;
        Some(&self.data[slot * self.dim..(slot + 1) * self.dim])
    }

    /// Rows in logical order.
    pub fn iter(&self) -> impl Iterator<Item = &[f64]> + '_ {
        let (newer, older) = self.segments();
        let d = self.dim.max(1);
        older.chunks_exact(d).chain(newer.chunks_exact(d))
    }

    fn iter_coarse(&self) -> impl Iterator<Item = &[f32]> + '_ {
        let (newer, older) = self.coarse.split_at(self.start * self.dim);
        let d = self.dim.max(1);
        older.chunks_exact(d).chain(newer.chunks_exact(d))
    }

    /// `(physically first, physically second)` halves; the second holds the
    /// oldest rows once the ring has wrapped.
    fn segments(&self) -> (&[f64], &[f64]) {
        let split = self.start * self.dim;
        let (head, tail) = self.data.split_at(split);
        (head, tail)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    /// Logical bank index (0 = oldest).
    pub index: usize,
    pub similarity: f64,
}

/// The `min(k, |bank|)` entries with the largest inner product with `query`,
/// most similar first. Equal similarities keep the lower bank index first.
pub fn knn(query: &Embedding, bank: &FeatureBank, k: usize) -> Vec<Neighbor> {
    top_k(query, bank, k, None)
}

/// Upper bound on `|dot_coarse(q, r) - dot(q, r)|` for unit `q` and `r`:
/// rounding each row component to `f32` moves the product by at most
/// `2^-24 * |q| * |r|`, and accumulation error is far below that.
const COARSE_MARGIN: f64 = 1e-6;

/// Below this many rows the exact scan alone is cheaper than two passes.
const COARSE_MIN_ROWS: usize = 256;

fn dot_coarse(q: &[f64], r: &[f32]) -> f64 {
    let mut acc = [0.0f64; 8];
    let chunks_q = q.chunks_exact(8);
    let chunks_r = r.chunks_exact(8);
    let tail: f64 = chunks_q
        .remainder()
        .iter()
        .zip(chunks_r.remainder())
        .map(|(&x, &y)| x * f64::from(y))
        .sum();
    for (cq, cr) in chunks_q.zip(chunks_r) {
        for i in 0..8 {
            acc[i] += cq[i] * f64::from(cr[i]);
        }
    }
    (acc[0] + acc[4]) + (acc[1] + acc[5]) + (acc[2] + acc[6]) + (acc[3] + acc[7]) + tail
}

fn top_k(query: &Embedding, bank: &FeatureBank, k: usize, skip: Option<usize>) -> Vec<Neighbor> {
    let available = bank.len() - usize::from(skip.is_some_and(|s| s < bank.len()));
    let k = k.min(available);
    if k == 0 {
        return Vec::new();
    }
    let q = query.as_slice();
    if available < COARSE_MIN_ROWS || k == available {
        let rows = bank.iter().enumerate().filter(|&(i, _)| Some(i) != skip);
        return select_top_k(rows.map(|(i, row)| (i, dot(q, row))), k);
    }

    // Any row in the exact top k scores within the margin of its coarse
    // score, so it survives a cut at the k-th coarse score minus twice that.
    let mut coarse: Vec<f64> = bank.iter_coarse().map(|row| dot_coarse(q, row)).collect();
    if let Some(s) = skip.filter(|&s| s < coarse.len()) {
        coarse[s] = f64::NEG_INFINITY;
    }
    let mut scratch = coarse.clone();
    let (_, kth, _) = scratch.select_nth_unstable_by(k - 1, |a, b| b.total_cmp(a));
    let cut = *kth - 2.0 * COARSE_MARGIN;
    let candidates = coarse
        .iter()
        .enumerate()
        .filter(|&(_, &c)| c >= cut)
        .map(|(i, _)| (i, dot(q, bank.get(i).expect("index within bank"))));
    select_top_k(candidates, k)
}

/// `(index, similarity)` pairs must arrive in increasing index order.
fn select_top_k(scored: impl Iterator<Item = (usize, f64)>, k: usize) -> Vec<Neighbor> {
    let mut best: Vec<Neighbor> = Vec::with_capacity(k + 1);
    for (index, similarity) in scored {
        if best.len() == k && similarity <= best[k - 1].similarity {
            continue;
        }
        // Rows arrive in increasing index, so an equal score never overtakes.
        let pos = best.partition_point(|n| n.similarity >= similarity);
        best.insert(pos, Neighbor { index, similarity });
        best.truncate(k);
    }
    best
}

/// Weights of the truncated kernel: `1 - alpha` on the center, `alpha / k` on
/// each neighbor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelWeights {
    pub self_weight: f64,
    pub neighbor_weight: f64,
    pub alpha: f64,
    pub k: usize,
}

pub fn kernel_weights(alpha: f64, k: usize) -> Result<KernelWeights> {
    check_alpha(alpha)?;
    if k == 0 {
        return Err(Error::OutOfRange {
            name: "k",
            value: 0.0,
            range: "[1, inf)",
        });
    }
    Ok(KernelWeights {
        self_weight: 1.0 - alpha,
        neighbor_weight: alpha / k as f64,
        alpha,
        k,
    })
}

/// One mean-shift step of `f` toward `neighbors`.
///
/// The per-neighbor weight uses the number of neighbors actually supplied.
/// With no neighbors, or `alpha == 0`, `f` is returned unchanged.
pub fn mean_shift_step<N: AsRef<[f64]>>(
    f: &Embedding,
    neighbors: &[N],
    alpha: f64,
) -> Result<Embedding> {
    check_alpha(alpha)?;
    if neighbors.is_empty() || alpha == 0.0 {
        return Ok(f.clone());
    }
    let w = kernel_weights(alpha, neighbors.len())?;
    let mut acc: Vec<f64> = f.as_slice().iter().map(|x| w.self_weight * x).collect();
    for n in neighbors {
        let n = n.as_ref();
        if n.len() != acc.len() {
            return Err(Error::DimMismatch {
                expected: acc.len(),
                found: n.len(),
            });
        }
        for (a, x) in acc.iter_mut().zip(n) {
            *a += w.neighbor_weight * x;
        }
    }
    if norm(&acc) < NORM_EPS {
        return Err(Error::DegenerateShift);
    }
    Embedding::normalize(&acc)
}

/// Refines `f` using its `cfg.k` nearest neighbors in `bank`.
///
/// A degenerate shift falls back to `f`.
pub fn shift_streaming(f: &Embedding, bank: &FeatureBank, cfg: &MeanShiftConfig) -> Result<Embedding> {
    if cfg.alpha == 0.0 || bank.is_empty() {
        return Ok(f.clone());
    }
    if bank.dim != f.dim() {
        return Err(Error::DimMismatch {
            expected: bank.dim,
            found: f.dim(),
        });
    }
    let neighbors: Vec<&[f64]> = knn(f, bank, cfg.k)
        .iter()
        .filter_map(|n| bank.get(n.index))
        .collect();
    match mean_shift_step(f, &neighbors, cfg.alpha) {
        Err(Error::DegenerateShift) => Ok(f.clone()),
        other => other,
    }
}

/// Shifts every point toward its `cfg.k` nearest neighbors among all the
/// other points: the batch form of [`shift_streaming`] over a fixed set.
pub fn shift_leave_one_out(points: &[Embedding], cfg: &MeanShiftConfig) -> Result<Vec<Embedding>> {
    cfg.validate()?;
    let mut bank = FeatureBank::unbounded();
    for p in points {
        bank.push(p)?;
    }
    points
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let neighbors: Vec<&[f64]> = top_k(f, &bank, cfg.k, Some(i))
                .iter()
                .filter_map(|n| bank.get(n.index))
                .collect();
            match mean_shift_step(f, &neighbors, cfg.alpha) {
                Err(Error::DegenerateShift) => Ok(f.clone()),
                other => other,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Kernel {
    /// Weight 1 inside the radius, 0 outside.
    #[default]
    Flat,
    /// `exp(-d^2 / (2 h^2))` over all points, `h` being the radius.
    Gaussian,
}

/// Iterative mean-shift over a fixed point set.
///
/// Each point repeatedly moves to the kernel-weighted mean of the original
/// points around its current position, until it moves less than `tol` or
/// `max_iter` updates have been applied.
pub fn classical_mean_shift(
    points: &[Vec<f64>],
    radius: f64,
    max_iter: usize,
    tol: f64,
    kernel: Kernel,
) -> Result<Vec<Vec<f64>>> {
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::OutOfRange {
            name: "radius",
            value: radius,
            range: "(0, inf)",
        });
    }
    if !(tol > 0.0) {
        return Err(Error::OutOfRange {
            name: "tol",
            value: tol,
            range: "(0, inf)",
        });
    }
    let Some(first) = points.first() else {
        return Ok(Vec::new());
    };
    let dim = first.len();
    if let Some(bad) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::DimMismatch {
            expected: dim,
            found: bad.len(),
        });
    }

    let mut out = Vec::with_capacity(points.len());
    for start in points {
        let mut x = start.clone();
        for _ in 0..max_iter {
            let Some(next) = weighted_mean(&x, points, radius, kernel) else {
                break;
            };
            let shift = next
                .iter()
                .zip(&x)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            x = next;
            if shift < tol {
                break;
            }
        }
        out.push(x);
    }
    Ok(out)
}

fn weighted_mean(x: &[f64], points: &[Vec<f64>], radius: f64, kernel: Kernel) -> Option<Vec<f64>> {
    let mut acc = vec![0.0; x.len()];
    let mut total = 0.0;
    for p in points {
        let d2: f64 = p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
        let w = match kernel {
            Kernel::Flat if d2.sqrt() <= radius => 1.0,
            Kernel::Flat => continue,
            Kernel::Gaussian => (-d2 / (2.0 * radius * radius)).exp(),
        };
        total += w;
        for (a, v) in acc.iter_mut().zip(p) {
            *a += w * v;
        }
    }
    if total > 0.0 {
        acc.iter_mut().for_each(|a| *a /= total);
        Some(acc)
    } else {
        None
    }
}
