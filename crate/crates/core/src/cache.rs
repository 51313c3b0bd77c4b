//! Per-pseudo-class store of the most confident embeddings seen so far.
//!
//! Each class keeps at most `Q` entries. A new entry replaces the
//! highest-entropy resident only if its entropy is strictly lower, so a class
//! always holds the `Q` lowest-entropy entries offered to it, with ties going
//! to the earlier arrival.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{dot, Embedding, Logits, PseudoLabel};

#[derive(Debug, Clone, PartialEq)]
pub struct CacheEntry {
    pub embedding: Embedding,
    pub pseudo_label: PseudoLabel,
    /// Prediction entropy in nats.
    pub entropy: f64,
    /// Position of the sample in the stream; must increase across offers.
    pub arrival_index: u64,
}

#[derive(Debug, Clone)]
pub struct EntropyCache {
    classes: usize,
    capacity: usize,
    threshold: Option<f64>,
    dim: Option<usize>,
    per_class: Vec<Vec<CacheEntry>>,
}

impl EntropyCache {
    /// A capacity of zero yields a cache that rejects everything.
    pub fn new(classes: usize, capacity_per_class: usize, entropy_threshold: Option<f64>) -> Self {
        Self {
            classes,
            capacity: capacity_per_class,
            threshold: entropy_threshold,
            dim: None,
            per_class: vec![Vec::new(); classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn capacity_per_class(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.per_class.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Entries of `class` in arrival order.
    pub fn class_entries(&self, class: usize) -> &[CacheEntry] {
        self.per_class.get(class).map_or(&[], Vec::as_slice)
    }

    /// Offers `entry` to the queue of its pseudo-class and reports whether it
    /// was stored.
    pub fn offer(&mut self, entry: CacheEntry) -> Result<bool> {
        let class = entry.pseudo_label.class_index();
        if class >= self.classes || entry.pseudo_label.classes() != self.classes {
            return Err(Error::BadClassIndex {
                index: class,
                classes: self.classes,
            });
        }
        if !entry.entropy.is_finite() || entry.entropy < 0.0 {
            return Err(Error::OutOfRange {
                name: "entropy",
                value: entry.entropy,
                range: "[0, ln C]",
            });
        }
        match self.dim {
            Some(d) if d != entry.embedding.dim() => {
                return Err(Error::DimMismatch {
                    expected: d,
                    found: entry.embedding.dim(),
                })
            }
            _ => {}
        }
        if self.threshold.is_some_and(|t| entry.entropy > t) || self.capacity == 0 {
            return Ok(false);
        }
        self.dim = Some(entry.embedding.dim());

        let queue = &mut self.per_class[class];
        if queue.len() < self.capacity {
            queue.push(entry);
            return Ok(true);
        }
        // Highest entropy; among equals, the latest arrival.
        let (worst, worst_entry) = queue
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| {
                a.entropy
                    .total_cmp(&b.entropy)
                    .then(a.arrival_index.cmp(&b.arrival_index))
            })
            .expect("queue is at capacity and capacity > 0");
        if entry.entropy < worst_entry.entropy {
            queue.remove(worst);
            let pos = queue.partition_point(|e| e.arrival_index < entry.arrival_index);
            queue.insert(pos, entry);
            Ok(true)
        } else {
            Ok(false)
        }
    }

    /// Stored embeddings and labels, ordered by class and then by arrival.
    pub fn snapshot(&self) -> CacheSnapshot {
        let dim = self.dim.unwrap_or(0);
        let mut snap = CacheSnapshot {
            dim,
            classes: self.classes,
            z: Vec::with_capacity(self.len() * dim),
            labels: Vec::with_capacity(self.len()),
        };
        for (class, queue) in self.per_class.iter().enumerate() {
            for e in queue {
                snap.z.extend_from_slice(e.embedding.as_slice());
                snap.labels.push(class);
            }
        }
        snap
    }

    /// Same result as `cache_logits(z, &self.snapshot())` without
    /// materializing the snapshot.
    pub fn logits(&self, z: &Embedding) -> Result<Logits> {
        if let Some(d) = self.dim {
            if d != z.dim() {
                return Err(Error::DimMismatch {
                    expected: d,
                    found: z.dim(),
                });
            }
        }
        let mut out = vec![0.0; self.classes];
        for (class, queue) in self.per_class.iter().enumerate() {
            for e in queue {
                out[class] += z.dot(&e.embedding);
            }
        }
        Ok(Logits(out))
    }

    /// Diagnostic view without embeddings.
    pub fn dump(&self) -> CacheDump {
        CacheDump {
            classes: self.classes,
            capacity_per_class: self.capacity,
            entropy_threshold: self.threshold,
            per_class: self
                .per_class
                .iter()
                .enumerate()
                .map(|(class, queue)| ClassDump {
                    class,
                    entries: queue
                        .iter()
                        .map(|e| EntryDump {
                            arrival_index: e.arrival_index,
                            entropy: e.entropy,
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}

/// Stored embeddings `Z` (M x d, row-major) and their pseudo-classes.
#[derive(Debug, Clone, PartialEq)]
pub struct CacheSnapshot {
    dim: usize,
    classes: usize,
    z: Vec<f64>,
    labels: Vec<usize>,
}

impl CacheSnapshot {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.z[i * self.dim..(i + 1) * self.dim]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// The M x C one-hot label matrix.
    pub fn y_matrix(&self) -> Vec<Vec<f64>> {
        self.labels
            .iter()
            .map(|&c| {
                let mut row = vec![0.0; self.classes];
                row[c] = 1.0;
                row
            })
            .collect()
    }
}

/// `z Z^T Y`: the summed similarity of `z` to the cached entries of each class.
pub fn cache_logits(z: &Embedding, snap: &CacheSnapshot) -> Result<Logits> {
    let mut out = vec![0.0; snap.classes];
    if snap.is_empty() {
        return Ok(Logits(out));
    }
    if snap.dim != z.dim() {
        return Err(Error::DimMismatch {
            expected: snap.dim,
            found: z.dim(),
        });
    }
    for (i, &class) in snap.labels.iter().enumerate() {
        out[class] += dot(z.as_slice(), snap.row(i));
    }
    Ok(Logits(out))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CacheDump {
    pub classes: usize,
    pub capacity_per_class: usize,
    pub entropy_threshold: Option<f64>,
    pub per_class: Vec<ClassDump>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassDump {
    pub class: usize,
    pub entries: Vec<EntryDump>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntryDump {
    pub arrival_index: u64,
    pub entropy: f64,
}
