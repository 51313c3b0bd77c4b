//! Times a 10k-sample stream at d=512, C=100 with a 4096-entry bank and k=8.
//!
//! `cargo run --release -p mstta-core --example throughput`

use std::time::Instant;

use mstta_core::meanshift::MeanShiftConfig;
use mstta_core::pipeline::{evaluate_stream, Mode, RunConfig};
use mstta_core::synth::{synth_generate, SynthSpec};

fn main() -> mstta_core::Result<()> {
    let ds = synth_generate(&SynthSpec {
        classes: 100,
        dim: 512,
        per_class: 100,
        seed: 10,
        ..SynthSpec::default()
    })?;
    for mode in [Mode::ClipOnly, Mode::Baseline, Mode::MsTta] {
        let cfg = RunConfig {
            mode,
            ms: MeanShiftConfig {
                k: 8,
                bank_capacity: Some(4096),
                ..MeanShiftConfig::default()
            },
            ..RunConfig::default()
        };
        let started = Instant::now();
        let r = evaluate_stream(&ds, &cfg)?;
        println!("{mode}: {:?} acc {:.4}", started.elapsed(), r.top1_accuracy);
    }
    Ok(())
}
