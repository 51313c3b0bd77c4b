use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use mstta_core::cache::CacheDump;
use mstta_core::dataset::{read_dataset, write_atomic, write_dataset};
use mstta_core::pipeline::{run_stream, sweep, Mode, RunConfig, SweepAxis};
use mstta_core::report::{format_sig6, render_sweep, write_report, ReportFormat};
use mstta_core::synth::{synth_generate, SynthSpec};
use serde::Serialize;

use crate::config::FileConfig;
use crate::error::{usage, CliError, Result};
use crate::{Cli, Command, InspectArgs, ModelArgs, RunArgs, SweepArgs, SynthArgs};

/// Environment variable bounding the number of sweep workers.
const THREADS_VAR: &str = "MSTTA_THREADS";

pub fn dispatch(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    match cli.command {
        Command::Synth(args) => synth(args, file),
        Command::Run(args) => run(args, file),
        Command::Sweep(args) => sweep_cmd(args, file),
        Command::Inspect(args) => inspect(args, file),
    }
}

fn parse_opt<T: FromStr<Err = mstta_core::Error>>(s: Option<&str>) -> Result<Option<T>> {
    s.map(|s| s.parse().map_err(|e: mstta_core::Error| usage(e.to_string())))
        .transpose()
}

fn required(path: Option<PathBuf>, flag: &str) -> Result<PathBuf> {
    path.ok_or_else(|| usage(format!("missing --{flag}")))
}

fn synth(args: SynthArgs, file: FileConfig) -> Result<()> {
    let d = SynthSpec::default();
    let spec = SynthSpec {
        classes: args.classes.or(file.classes).unwrap_or(d.classes),
        dim: args.dim.or(file.dim).unwrap_or(d.dim),
        per_class: args.per_class.or(file.per_class).unwrap_or(d.per_class),
        kappa_text: args.kappa_text.or(file.kappa_text).unwrap_or(d.kappa_text),
        kappa_test: args.kappa_test.or(file.kappa_test).unwrap_or(d.kappa_test),
        shift_angle: args.shift_angle.or(file.shift_angle).unwrap_or(d.shift_angle),
        label_noise: args.label_noise.or(file.label_noise).unwrap_or(d.label_noise),
        seed: args.seed.or(file.seed).unwrap_or(d.seed),
    };
    spec.validate()?;
    let out = required(args.out.or(file.out), "out")?;
    let ds = synth_generate(&spec)?;
    write_dataset(&ds, &out)?;
    println!(
        "synth n={} d={} c={} seed={} out={}",
        ds.len(),
        ds.dim(),
        ds.classes(),
        spec.seed,
        out.display()
    );
    println!("checksum={}", ds.checksum());
    Ok(())
}

fn run_config(m: &ModelArgs, file: &FileConfig) -> Result<RunConfig> {
    let mode = match m.mode {
        Some(mode) => mode,
        None => parse_opt::<Mode>(file.mode.as_deref())?.unwrap_or(RunConfig::default().mode),
    };
    let mut cfg = RunConfig::with_mode(mode);
    if let Some(v) = m.alpha.or(file.alpha) {
        cfg.ms.alpha = v;
    }
    if let Some(v) = m.k.or(file.k) {
        cfg.ms.k = v;
    }
    if let Some(v) = m.q.or(file.q) {
        cfg.cache_q = v;
    }
    if let Some(v) = m.lambda.or(file.lambda) {
        cfg.lambda = v;
    }
    if let Some(v) = m.scale.or(file.scale) {
        cfg.softmax_scale = v;
    }
    if let Some(v) = m.neighbor_source {
        cfg.ms.neighbor_source = v;
    } else if let Some(v) = parse_opt(file.neighbor_source.as_deref())? {
        cfg.ms.neighbor_source = v;
    }
    if let Some(v) = m.entropy_threshold.or(file.entropy_threshold) {
        cfg.entropy_threshold = Some(v);
    }
    if let Some(v) = m.bank_capacity.or(file.bank_capacity) {
        cfg.ms.bank_capacity = Some(v);
    }
    if let Some(v) = m.seed.or(file.seed) {
        cfg.seed = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn format_from(flag: Option<ReportFormat>, file: &FileConfig, default: ReportFormat) -> Result<ReportFormat> {
    match flag {
        Some(f) => Ok(f),
        None => Ok(parse_opt(file.format.as_deref())?.unwrap_or(default)),
    }
}

#[derive(Serialize)]
struct PredictionLine<'a> {
    index: usize,
    label: usize,
    predicted_class: usize,
    logits_final: &'a [f64],
}

fn run(args: RunArgs, file: FileConfig) -> Result<()> {
    let cfg = run_config(&args.model, &file)?;
    let format = format_from(args.format, &file, ReportFormat::Json)?;
    let data = required(args.data.or(file.data.clone()), "data")?;
    let report_path = args.report.or(file.report.clone());

    let ds = read_dataset(&data)?;
    let outcome = run_stream(&ds, &cfg)?;

    if let Some(path) = &args.predictions {
        let mut lines = String::new();
        for (index, (p, &label)) in outcome.predictions.iter().zip(ds.labels()).enumerate() {
            let line = PredictionLine {
                index,
                label,
                predicted_class: p.predicted_class,
                logits_final: p.logits_final.values(),
            };
            lines.push_str(&serde_json::to_string(&line).expect("prediction serializes"));
            lines.push('\n');
        }
        write_atomic(path, lines.as_bytes())?;
    }
    if let Some(path) = &args.cache_dump {
        let dump = serde_json::to_string_pretty(&outcome.state.cache.dump()).expect("dump serializes");
        write_atomic(path, (dump + "\n").as_bytes())?;
    }
    if let Some(path) = &report_path {
        write_report(&outcome.report, path, format)?;
    }
    let r = &outcome.report;
    println!("mode={} acc={} n={}", cfg.mode, format_sig6(r.top1_accuracy), r.n_samples);
    Ok(())
}

fn parse_values(raw: &str) -> Result<Vec<f64>> {
    let values = raw
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| usage(format!("sweep value {s:?} is not a finite number")))
        })
        .collect::<Result<Vec<_>>>()?;
    if values.is_empty() {
        return Err(usage("--values is empty"));
    }
    Ok(values)
}

fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_VAR) {
        Err(std::env::VarError::NotPresent) => Ok(None),
        Ok(s) if s.trim().is_empty() => Ok(None),
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(usage(format!("{THREADS_VAR} must be a positive integer, got {s:?}"))),
        },
        Err(e) => Err(usage(format!("{THREADS_VAR}: {e}"))),
    }
}

fn sweep_cmd(args: SweepArgs, file: FileConfig) -> Result<()> {
    let base = run_config(&args.model, &file)?;
    let format = format_from(args.format, &file, ReportFormat::Csv)?;
    let axis = match args.axis {
        Some(a) => a,
        None => parse_opt::<SweepAxis>(file.axis.as_deref())?.ok_or_else(|| usage("missing --axis"))?,
    };
    let values = match (&args.values, &file.values) {
        (Some(raw), _) => parse_values(raw)?,
        (None, Some(v)) if !v.is_empty() => v.clone(),
        _ => return Err(usage("missing --values")),
    };
    let threads = threads_from_env()?;
    let data = required(args.data.or(file.data.clone()), "data")?;
    let out = args.out.or(file.out.clone());
    // Every value is validated before the dataset is touched.
    for &v in &values {
        axis.apply(&base, v).map_err(|e| usage(e.to_string()))?;
    }

    let ds = read_dataset(&data)?;
    let rows = sweep(&ds, &base, axis, &values, threads)?;
    let table = render_sweep(&rows, format)?;
    match out {
        Some(path) => write_atomic(&path, table.as_bytes())?,
        None => print!("{table}"),
    }
    Ok(())
}

#[derive(Serialize)]
struct DatasetSummary {
    n: usize,
    d: usize,
    c: usize,
    unit_norm_ok: bool,
    renormalized_rows: usize,
    checksum: String,
    provenance: String,
    class_counts: Vec<usize>,
}

#[derive(Serialize)]
struct ClassSummary {
    class: usize,
    count: usize,
    entropy_min: Option<f64>,
    entropy_max: Option<f64>,
}

#[derive(Serialize)]
struct CacheSummary {
    classes: usize,
    capacity_per_class: usize,
    entropy_threshold: Option<f64>,
    entries: usize,
    per_class: Vec<ClassSummary>,
}

fn inspect(args: InspectArgs, file: FileConfig) -> Result<()> {
    let text = match (args.cache_dump, args.data.or(file.data)) {
        (Some(path), _) => render_cache(&summarize_cache(&path)?, args.json),
        (None, Some(dir)) => render_dataset(&summarize_dataset(&dir)?, args.json),
        (None, None) => return Err(usage("inspect needs --data or --cache-dump")),
    };
    print!("{text}");
    Ok(())
}

fn summarize_dataset(dir: &Path) -> Result<DatasetSummary> {
    let ds = read_dataset(dir)?;
    let mut class_counts = vec![0; ds.classes()];
    for &l in ds.labels() {
        class_counts[l] += 1;
    }
    Ok(DatasetSummary {
        n: ds.len(),
        d: ds.dim(),
        c: ds.classes(),
        unit_norm_ok: ds.renormalized_rows() == 0,
        renormalized_rows: ds.renormalized_rows(),
        checksum: ds.checksum(),
        provenance: ds.name().to_owned(),
        class_counts,
    })
}

fn render_dataset(s: &DatasetSummary, json: bool) -> String {
    if json {
        return serde_json::to_string_pretty(s).expect("summary serializes") + "\n";
    }
    let counts: Vec<String> = s.class_counts.iter().map(usize::to_string).collect();
    let mut out = String::new();
    writeln!(out, "n={} d={} c={}", s.n, s.d, s.c).unwrap();
    writeln!(
        out,
        "unit_norm={} renormalized_rows={}",
        if s.unit_norm_ok { "ok" } else { "off" },
        s.renormalized_rows
    )
    .unwrap();
    writeln!(out, "checksum={}", s.checksum).unwrap();
    writeln!(out, "provenance={}", s.provenance).unwrap();
    writeln!(out, "class_counts={}", counts.join(",")).unwrap();
    out
}

fn summarize_cache(path: &Path) -> Result<CacheSummary> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_owned(),
        source,
    })?;
    let dump: CacheDump = serde_json::from_str(&text).map_err(|e| CliError::Invalid {
        path: path.to_owned(),
        detail: e.to_string(),
    })?;
    let per_class: Vec<ClassSummary> = dump
        .per_class
        .iter()
        .map(|c| {
            let entropies = c.entries.iter().map(|e| e.entropy);
            ClassSummary {
                class: c.class,
                count: c.entries.len(),
                entropy_min: entropies.clone().reduce(f64::min),
                entropy_max: entropies.reduce(f64::max),
            }
        })
        .collect();
    Ok(CacheSummary {
        classes: dump.classes,
        capacity_per_class: dump.capacity_per_class,
        entropy_threshold: dump.entropy_threshold,
        entries: per_class.iter().map(|c| c.count).sum(),
        per_class,
    })
}

fn render_cache(s: &CacheSummary, json: bool) -> String {
    if json {
        return serde_json::to_string_pretty(s).expect("summary serializes") + "\n";
    }
    let opt = |x: Option<f64>| x.map(format_sig6).unwrap_or_else(|| "none".into());
    let mut out = String::new();
    writeln!(
        out,
        "classes={} capacity_per_class={} entropy_threshold={} entries={}",
        s.classes,
        s.capacity_per_class,
        opt(s.entropy_threshold),
        s.entries
    )
    .unwrap();
    for c in &s.per_class {
        writeln!(
            out,
            "class={} count={} entropy_min={} entropy_max={}",
            c.class,
            c.count,
            opt(c.entropy_min),
            opt(c.entropy_max)
        )
        .unwrap();
    }
    out
}
