//! Mean accuracy of each mode and of an alpha grid over ten seeds of the
//! default synthetic shift benchmark.
//!
//! `cargo run --release -p mstta-core --example shift_benchmark`

use mstta_core::meanshift::MeanShiftConfig;
use mstta_core::pipeline::{evaluate_stream, Mode, RunConfig};
use mstta_core::synth::{synth_generate, SynthSpec};

fn main() -> mstta_core::Result<()> {
    let seeds = 0..10u64;
    let alphas = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];
    let mut clip = 0.0;
    let mut baseline = 0.0;
    let mut by_alpha = vec![0.0; alphas.len()];
    let mut gain = 0.0;
    for seed in seeds.clone() {
        let ds = synth_generate(&SynthSpec { seed, ..SynthSpec::default() })?;
        let c = evaluate_stream(&ds, &RunConfig::with_mode(Mode::ClipOnly))?.top1_accuracy;
        let b = evaluate_stream(&ds, &RunConfig::with_mode(Mode::Baseline))?.top1_accuracy;
        clip += c;
        baseline += b;
        let mut row = Vec::new();
        for (i, &alpha) in alphas.iter().enumerate() {
            let cfg = RunConfig {
                ms: MeanShiftConfig { alpha, ..MeanShiftConfig::default() },
                ..RunConfig::default()
            };
            let r = evaluate_stream(&ds, &cfg)?;
            by_alpha[i] += r.top1_accuracy;
            row.push(r.top1_accuracy);
            if alpha == 0.8 {
                gain += r.compactness_after.unwrap_or(0.0) - r.compactness_before.unwrap_or(0.0);
            }
        }
        println!("seed {seed}: clip {c:.4} baseline {b:.4} alpha grid {row:.4?}");
    }
    let n = seeds.count() as f64;
    println!("mean clip {:.4} baseline {:.4}", clip / n, baseline / n);
    for (a, acc) in alphas.iter().zip(&by_alpha) {
        println!("mean alpha {a:.1}: {:.4}", acc / n);
    }
    println!("mean compactness gain at alpha 0.8: {:.4}", gain / n);
    Ok(())
}
