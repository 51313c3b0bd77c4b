//! Property tests against brute-force and closed-form oracles.

use mstta_core::cache::{cache_logits, CacheEntry, EntropyCache};
use mstta_core::dataset::{read_dataset, write_dataset, EmbDataset};
use mstta_core::math::{entropy, one_hot_argmax, softmax, zero_shot_logits, Embedding, Logits, PseudoLabel, TextClassMatrix};
use mstta_core::meanshift::{kernel_weights, knn, mean_shift_step, FeatureBank};
use mstta_core::synth::{synth_generate, SynthSpec};
use proptest::prelude::*;

fn raw_vec(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, dim).prop_filter("nonzero", |v| v.iter().any(|x| x.abs() > 1e-3))
}

fn unit(v: &[f64]) -> Embedding {
    Embedding::normalize(v).unwrap()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

proptest! {
    #[test]
    fn normalize_is_idempotent(v in raw_vec(12)) {
        let once = unit(&v);
        let twice = unit(once.as_slice());
        for (a, b) in once.as_slice().iter().zip(twice.as_slice()) {
            prop_assert!((a - b).abs() < 1e-6);
        }
        prop_assert!((dot(once.as_slice(), once.as_slice()).sqrt() - 1.0).abs() < 1e-5);
    }

    #[test]
    fn zero_shot_is_linear(f in raw_vec(6), g in raw_vec(6), a in -3.0f64..3.0, b in -3.0f64..3.0,
                           rows in prop::collection::vec(raw_vec(6), 2..6)) {
        let w = TextClassMatrix::new(rows.iter().map(|r| unit(r)).collect(), None).unwrap();
        // Logits of raw vectors: scale the unit logits back by the norm.
        let raw_logits = |v: &[f64]| -> Vec<f64> {
            let n = dot(v, v).sqrt();
            zero_shot_logits(&unit(v), &w).unwrap().values().iter().map(|x| x * n).collect()
        };
        let combo: Vec<f64> = f.iter().zip(&g).map(|(x, y)| a * x + b * y).collect();
        prop_assume!(dot(&combo, &combo).sqrt() > 1e-3);
        let lhs = raw_logits(&combo);
        let (lf, lg) = (raw_logits(&f), raw_logits(&g));
        for c in 0..lhs.len() {
            prop_assert!((lhs[c] - (a * lf[c] + b * lg[c])).abs() < 1e-6);
        }
    }

    #[test]
    fn entropy_falls_as_scale_rises(l in prop::collection::vec(-1.0f64..1.0, 2..12)) {
        let logits = Logits(l);
        let mut prev = f64::INFINITY;
        for s in [0.5, 1.0, 2.0, 10.0, 100.0] {
            let p = softmax(&logits, s).unwrap();
            prop_assert!((p.values().iter().sum::<f64>() - 1.0).abs() < 1e-6);
            let h = entropy(&p);
            prop_assert!(h >= 0.0 && h <= (logits.len() as f64).ln() + 1e-12);
            prop_assert!(h <= prev + 1e-12, "entropy rose from {prev} to {h} at scale {s}");
            prev = h;
        }
    }

    #[test]
    fn argmax_ignores_shift_and_positive_scale(l in prop::collection::vec(-1.0f64..1.0, 2..12),
                                               shift in -5.0f64..5.0, scale in 0.1f64..50.0) {
        let base = one_hot_argmax(&Logits(l.clone())).class_index();
        let shifted = one_hot_argmax(&Logits(l.iter().map(|x| x + shift).collect())).class_index();
        let scaled = one_hot_argmax(&Logits(l.iter().map(|x| x * scale).collect())).class_index();
        prop_assert_eq!(base, shifted);
        prop_assert_eq!(base, scaled);
    }

    #[test]
    fn shift_output_is_unit_norm(f in raw_vec(8), ns in prop::collection::vec(raw_vec(8), 0..6), alpha in 0.0f64..=1.0) {
        let f = unit(&f);
        let ns: Vec<Embedding> = ns.iter().map(|n| unit(n)).collect();
        if let Ok(z) = mean_shift_step(&f, &ns, alpha) {
            prop_assert!((dot(z.as_slice(), z.as_slice()).sqrt() - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn shift_pulls_toward_neighbor_mean(f in raw_vec(8), ns in prop::collection::vec(raw_vec(8), 1..6), alpha in 0.0f64..=1.0) {
        let f = unit(&f);
        // Reflect each neighbor into the hemisphere around f.
        let ns: Vec<Embedding> = ns
            .iter()
            .map(|n| {
                let n = unit(n);
                if f.dot(&n) >= 0.0 { n } else { unit(&n.as_slice().iter().map(|x| -x).collect::<Vec<_>>()) }
            })
            .collect();
        let sum: Vec<f64> = (0..8).map(|i| ns.iter().map(|n| n.as_slice()[i]).sum()).collect();
        prop_assume!(dot(&sum, &sum).sqrt() > 1e-6);
        let c = unit(&sum);
        let z = mean_shift_step(&f, &ns, alpha).unwrap();
        prop_assert!(z.dot(&c) >= f.dot(&c) - 1e-9);
    }

    #[test]
    fn dataset_round_trip_is_exact(n in 1usize..8, d in 2usize..6, c in 2usize..4, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |len: usize| -> Vec<f32> {
            (0..len).map(|_| rng.random_range(0.1f32..1.0)).collect()
        };
        let features = draw(n * d);
        let text = draw(c * d);
        let labels: Vec<usize> = (0..n).map(|i| i % c).collect();
        let ds = EmbDataset::from_raw(features, labels, text, d, None, "prop").unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&ds, dir.path()).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        prop_assert_eq!(back.features_raw(), ds.features_raw());
        prop_assert_eq!(back.text_raw(), ds.text_raw());
        prop_assert_eq!(back.labels(), ds.labels());
        prop_assert_eq!(back.features(), ds.features());
    }
}

#[test]
fn kernel_weights_sum_to_one() {
    for alpha in [0.0, 0.25, 0.5, 0.75, 1.0] {
        for k in 1..=16 {
            let w = kernel_weights(alpha, k).unwrap();
            assert!((w.self_weight + k as f64 * w.neighbor_weight - 1.0).abs() < 1e-12);
            assert!(w.self_weight >= 0.0 && w.neighbor_weight >= 0.0);
        }
    }
}

/// Sort-based reference: top-k by (similarity desc, index asc).
fn brute_force_knn(query: &[f64], rows: &[Vec<f64>], k: usize) -> Vec<usize> {
    let mut scored: Vec<(f64, usize)> = rows.iter().enumerate().map(|(i, r)| (dot(query, r), i)).collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    scored.into_iter().take(k).map(|(_, i)| i).collect()
}

#[test]
fn knn_matches_brute_force_with_duplicates_and_eviction() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    for trial in 0..40 {
        let d = 3;
        let cap = rng.random_range(1..600usize);
        let mut bank = FeatureBank::with_capacity(Some(cap)).unwrap();
        let mut live: std::collections::VecDeque<Vec<f64>> = Default::default();
        // Coarse coordinates force many exact ties.
        for _ in 0..rng.random_range(0..1200usize) {
            let v: Vec<f64> = (0..d).map(|_| f64::from(rng.random_range(-2i32..=2))).collect();
            let Ok(e) = Embedding::normalize(&v) else { continue };
            bank.push(&e).unwrap();
            live.push_back(e.into_vec());
            if live.len() > cap {
                live.pop_front();
            }
        }
        let rows: Vec<Vec<f64>> = live.into_iter().collect();
        let q = unit(&[1.0, 0.5, -0.5]);
        let k = rng.random_range(1..10usize);
        let got: Vec<usize> = knn(&q, &bank, k).iter().map(|n| n.index).collect();
        assert_eq!(got, brute_force_knn(q.as_slice(), &rows, k), "trial {trial}");
    }
}

/// Offline reference: per class, the Q lowest entropies, earlier arrival on ties.
fn oracle_cache(offers: &[(usize, f64)], classes: usize, q: usize) -> Vec<Vec<u64>> {
    (0..classes)
        .map(|c| {
            let mut mine: Vec<(f64, u64)> = offers
                .iter()
                .enumerate()
                .filter(|(_, (cls, _))| *cls == c)
                .map(|(i, (_, h))| (*h, i as u64))
                .collect();
            mine.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut kept: Vec<u64> = mine.into_iter().take(q).map(|(_, i)| i).collect();
            kept.sort_unstable();
            kept
        })
        .collect()
}

fn stream_cache(offers: &[(usize, f64)], classes: usize, q: usize) -> EntropyCache {
    let e = unit(&[1.0, 0.0]);
    let mut cache = EntropyCache::new(classes, q, None);
    for (i, &(class, h)) in offers.iter().enumerate() {
        cache
            .offer(CacheEntry {
                embedding: e.clone(),
                pseudo_label: PseudoLabel::new(class, classes).unwrap(),
                entropy: h,
                arrival_index: i as u64,
            })
            .unwrap();
    }
    cache
}

fn arrivals(cache: &EntropyCache) -> Vec<Vec<u64>> {
    (0..cache.classes())
        .map(|c| cache.class_entries(c).iter().map(|e| e.arrival_index).collect())
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cache_matches_sort_oracle(offers in prop::collection::vec((0usize..5, 0u8..8), 0..300), q in 1usize..5) {
        // Entropies on a coarse grid so ties are common.
        let offers: Vec<(usize, f64)> = offers.into_iter().map(|(c, h)| (c, f64::from(h) * 0.125)).collect();
        let cache = stream_cache(&offers, 5, q);
        prop_assert_eq!(arrivals(&cache), oracle_cache(&offers, 5, q));
        prop_assert!(cache.len() <= 5 * q);
    }

    #[test]
    fn cache_contents_ignore_order_for_distinct_entropies(
        mut hs in prop::collection::vec(0.0f64..2.0, 1..60), q in 1usize..4, seed in any::<u64>()
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        hs.sort_by(f64::total_cmp);
        hs.dedup();
        let offers: Vec<(usize, f64)> = hs.iter().enumerate().map(|(i, &h)| (i % 3, h)).collect();
        let mut shuffled = offers.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let kept = |offers: &[(usize, f64)]| -> Vec<Vec<u64>> {
            let cache = stream_cache(offers, 3, q);
            (0..3)
                .map(|c| {
                    let mut v: Vec<u64> = cache.class_entries(c).iter().map(|e| e.entropy.to_bits()).collect();
                    v.sort_unstable();
                    v
                })
                .collect()
        };
        prop_assert_eq!(kept(&offers), kept(&shuffled));
    }

    #[test]
    fn cache_logits_match_explicit_loop(entries in prop::collection::vec((raw_vec(5), 0usize..4, 0.0f64..1.0), 0..20),
                                        z in raw_vec(5)) {
        let mut cache = EntropyCache::new(4, 3, None);
        for (i, (v, c, h)) in entries.iter().enumerate() {
            cache.offer(CacheEntry {
                embedding: unit(v),
                pseudo_label: PseudoLabel::new(*c, 4).unwrap(),
                entropy: *h,
                arrival_index: i as u64,
            }).unwrap();
        }
        let z = unit(&z);
        let snap = cache.snapshot();
        let y = snap.y_matrix();
        let mut expected = vec![0.0; 4];
        for (i, y_row) in y.iter().enumerate() {
            let s = dot(z.as_slice(), snap.row(i));
            for c in 0..4 {
                expected[c] += s * y_row[c];
            }
        }
        let got = cache_logits(&z, &snap).unwrap();
        for c in 0..4 {
            prop_assert!((got.values()[c] - expected[c]).abs() < 1e-9);
        }
        prop_assert_eq!(cache.logits(&z).unwrap(), got);
        for i in 0..snap.len() {
            prop_assert!((dot(snap.row(i), snap.row(i)).sqrt() - 1.0).abs() < 1e-5);
        }
    }
}

#[test]
fn synth_compactness_grows_with_concentration() {
    let intra = |kappa_test: f64| {
        let ds = synth_generate(&SynthSpec {
            kappa_test,
            ..SynthSpec::default()
        })
        .unwrap();
        mstta_core::pipeline::compactness_metrics(ds.features(), ds.labels())
            .unwrap()
            .intra
    };
    let (a, b, c) = (intra(5.0), intra(20.0), intra(100.0));
    assert!(a < b && b < c, "{a} {b} {c}");
}
