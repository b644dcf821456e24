use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use gta_core::ingest::{self, parse_trace_file, write_bundle};
use gta_core::metrics::{effort, lc_sweep, render_report, sweep_csv, threshold_range, DriveMetrics, EffortReport, Report};
use gta_core::model::{DriveBundle, TruthLabel};
use gta_core::pipeline::{analyze_bundle_with, DriveAnalysis, ProviderChoice};
use gta_core::scenario::{generate_spec, random_layout, traffic_light_spec, LayoutSpec, RandomLayoutParams};
use gta_core::Execution;
use gta_review::{DriveInput, ReviewState};
use rayon::prelude::*;

use crate::args::{AnalyzeArgs, GenArgs, IngestArgs, Provider, ServeArgs, SweepArgs};
use crate::config::Settings;
use crate::CliError;

pub struct Analyzed {
    pub path: PathBuf,
    pub bundle: DriveBundle,
    pub analysis: DriveAnalysis,
}

fn analyze_one(path: &Path, s: &Settings) -> anyhow::Result<Analyzed> {
    let bundle = ingest::load(path)?;
    let choice = match s.provider {
        Provider::Recorded => ProviderChoice::Recorded,
        Provider::Synthetic => ProviderChoice::Synthetic(s.synthetic),
        Provider::Auto if bundle.recorded_scores.is_some() => ProviderChoice::Recorded,
        Provider::Auto => ProviderChoice::Synthetic(s.synthetic),
    };
    let analysis = analyze_bundle_with(Execution::Sequential, &bundle, choice, &s.pipeline)?;
    Ok(Analyzed { path: path.to_path_buf(), bundle, analysis })
}

/// Loads and analyzes every path, up to `jobs` at a time. Results keep
/// input order; failures are reported to `err` and dropped.
pub fn analyze_paths(paths: &[PathBuf], s: &Settings, err: &mut dyn Write) -> Result<(Vec<Analyzed>, usize), CliError> {
    let work = |p: &PathBuf| analyze_one(p, s).with_context(|| p.display().to_string());
    let results: Vec<anyhow::Result<Analyzed>> = if s.jobs == 1 || paths.len() == 1 {
        paths.iter().map(work).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(s.jobs).build().context("thread pool")?;
        pool.install(|| paths.par_iter().map(work).collect())
    };

    let mut ok = Vec::new();
    let mut failed = 0;
    let mut seen = BTreeSet::new();
    for r in results {
        match r {
            Ok(a) if !seen.insert(a.analysis.drive_id.clone()) => {
                writeln!(err, "error: {}: drive id {} already analyzed", a.path.display(), a.analysis.drive_id)?;
                failed += 1;
            }
            Ok(a) => ok.push(a),
            Err(e) => {
                writeln!(err, "error: {e:#}")?;
                failed += 1;
            }
        }
    }
    Ok((ok, failed))
}

fn drive_line(a: &DriveAnalysis) -> String {
    format!(
        "{}: {} detections, {} decided, {} skipped, {} flagged",
        a.drive_id,
        a.results.len() + a.skipped.len(),
        a.results.len(),
        a.skipped.len(),
        a.flagged()
    )
}

fn decisions_csv(a: &DriveAnalysis) -> String {
    let mut out = String::from("id,t_det_us,length_m,label,confidence,flagged\n");
    for r in &a.results {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.detection.id,
            r.detection.t_det.0,
            r.detection.length,
            r.outcome.label,
            r.outcome.confidence,
            r.outcome.flagged()
        );
    }
    for s in &a.skipped {
        let _ = writeln!(out, "{},,,skipped,,", s.id);
    }
    out
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

fn write_decisions(out: &Path, a: &DriveAnalysis) -> Result<(), CliError> {
    let dir = out.join(&a.drive_id);
    fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
    write_file(&dir.join("decisions.json"), &(serde_json::to_string_pretty(a).context("serialize decisions")? + "\n"))?;
    write_file(&dir.join("decisions.csv"), &decisions_csv(a))
}

fn effort_of(done: &[&Analyzed], s: &Settings) -> Option<EffortReport> {
    let flagged = done.iter().map(|a| a.analysis.flagged()).sum();
    let scored = done.iter().map(|a| a.analysis.scored()).sum();
    let seconds = done.iter().map(|a| a.analysis.duration_s).sum();
    effort(flagged, scored, seconds, &s.effort).ok()
}

fn truth_of(a: &Analyzed) -> anyhow::Result<&std::collections::BTreeMap<u64, TruthLabel>> {
    a.bundle.ground_truth.as_ref().ok_or_else(|| anyhow!("{}: bundle has no truth", a.path.display()))
}

/// Writes `report.json` and `report.txt` into `dir`; returns the text.
fn write_report(dir: &Path, report: &Report) -> Result<String, CliError> {
    let rendered = render_report(report);
    write_file(&dir.join("report.json"), &(rendered.json + "\n"))?;
    write_file(&dir.join("report.txt"), &rendered.text)?;
    Ok(rendered.text)
}

/// Per-drive confusion tables and the aggregate report over the drives
/// that have truth.
fn build_report(
    done: &[Analyzed],
    s: &Settings,
    out_dir: &Path,
    err: &mut dyn Write,
) -> Result<(Option<Report>, usize), CliError> {
    let mut per_drive = Vec::new();
    let mut samples = Vec::new();
    let mut kept = Vec::new();
    let mut failed = 0;
    for a in done {
        let scored = truth_of(a).and_then(|t| {
            let table = a.analysis.confusion(t)?;
            let sweep = a.analysis.sweep_samples(t)?;
            Ok((table, sweep))
        });
        match scored.with_context(|| a.path.display().to_string()) {
            Ok((table, sweep)) => {
                let metrics = DriveMetrics::new(a.analysis.drive_id.clone(), table);
                let own = Report::from_drives(vec![metrics.clone()], effort_of(&[a], s), s.generated_at);
                write_report(&out_dir.join(&a.analysis.drive_id), &own)?;
                per_drive.push(metrics);
                samples.extend(sweep);
                kept.push(a);
            }
            Err(e) => {
                writeln!(err, "error: {e:#}")?;
                failed += 1;
            }
        }
    }
    if kept.is_empty() {
        return Ok((None, failed));
    }
    let mut report = Report::from_drives(per_drive, effort_of(&kept, s), s.generated_at);
    let seconds: f64 = kept.iter().map(|a| a.analysis.duration_s).sum();
    report.sweep = lc_sweep(&samples, &threshold_range(0.5, 1.0, 0.05), seconds, &s.effort).ok();
    Ok((Some(report), failed))
}

/// Returns whether every bundle succeeded.
pub fn run_analyze(args: &AnalyzeArgs, s: &Settings, out: &mut dyn Write, err: &mut dyn Write) -> Result<bool, CliError> {
    let (done, mut failed) = analyze_paths(&args.paths, s, err)?;
    fs::create_dir_all(&args.out).with_context(|| format!("cannot create {}", args.out.display()))?;
    for a in &done {
        writeln!(out, "{}", drive_line(&a.analysis))?;
        write_decisions(&args.out, &a.analysis)?;
    }
    if args.truth {
        let (report, bad) = build_report(&done, s, &args.out, err)?;
        failed += bad;
        if let Some(report) = report {
            let text = write_report(&args.out, &report)?;
            writeln!(out)?;
            write!(out, "{text}")?;
        }
    } else if let Some(e) = effort_of(&done.iter().collect::<Vec<_>>(), s) {
        writeln!(
            out,
            "human review: {} of {} detections, {:.1} s; reduction vs legacy {:.2}%",
            e.n_lc,
            e.n_total,
            e.review_seconds,
            e.reduction_vs_legacy * 100.0
        )?;
    }
    if args.serve {
        serve(&args.out, args.port, done, s, out)?;
    }
    Ok(failed == 0)
}

pub fn run_sweep(args: &SweepArgs, s: &Settings, out: &mut dyn Write, err: &mut dyn Write) -> Result<bool, CliError> {
    if !(args.step > 0.0) || args.to < args.from || !(0.0..=1.0).contains(&args.from) || !(0.0..=1.0).contains(&args.to) {
        return Err(CliError::Usage(format!("invalid threshold range {}..{} step {}", args.from, args.to, args.step)));
    }
    let (done, mut failed) = analyze_paths(&args.paths, s, err)?;
    let mut samples = Vec::new();
    let mut seconds = 0.0;
    for a in &done {
        match truth_of(a).and_then(|t| Ok(a.analysis.sweep_samples(t)?)) {
            Ok(v) => {
                samples.extend(v);
                seconds += a.analysis.duration_s;
            }
            Err(e) => {
                writeln!(err, "error: {e:#}")?;
                failed += 1;
            }
        }
    }
    if seconds > 0.0 {
        let points = lc_sweep(&samples, &threshold_range(args.from, args.to, args.step), seconds, &s.effort)
            .context("sweep")?;
        fs::create_dir_all(&args.out).with_context(|| format!("cannot create {}", args.out.display()))?;
        write_file(&args.out.join("sweep.csv"), &sweep_csv(&points))?;
        writeln!(out, "{:>9}  {:>7}  {:>10}  {:>15}", "threshold", "flagged", "f1 average", "relative effort")?;
        for p in &points {
            let f1 = p.f1_average.map_or("/".to_string(), |v| format!("{:.1}%", v * 100.0));
            writeln!(out, "{:>9.2}  {:>7}  {:>10}  {:>14.2}%", p.threshold, p.flagged, f1, p.relative_effort * 100.0)?;
        }
    }
    Ok(failed == 0)
}

fn serve(out_dir: &Path, port: u16, done: Vec<Analyzed>, s: &Settings, out: &mut dyn Write) -> Result<(), CliError> {
    if done.is_empty() {
        return Err(CliError::Data(anyhow!("nothing to review")));
    }
    let inputs = done
        .into_iter()
        .map(|a| {
            let image_root = if a.path.is_dir() { Some(a.path.clone()) } else { a.path.parent().map(Path::to_path_buf) };
            DriveInput { bundle: a.bundle, analysis: a.analysis, image_root }
        })
        .collect();
    let state = ReviewState::new(inputs, s.effort, Some(out_dir.join("labels.jsonl"))).map_err(anyhow::Error::from)?;
    let addr = SocketAddr::from(([127, 0, 0, 1], port));
    let runtime = tokio::runtime::Runtime::new().context("async runtime")?;
    runtime.block_on(async {
        let listener = gta_review::bind(addr).await?;
        writeln!(out, "review service listening on http://{addr}")?;
        out.flush()?;
        gta_review::serve_on(listener, gta_review::shared(state)).await?;
        Ok(())
    })
}

pub fn run_serve(args: &ServeArgs, s: &Settings, out: &mut dyn Write, err: &mut dyn Write) -> Result<bool, CliError> {
    let (done, failed) = analyze_paths(&args.paths, s, err)?;
    fs::create_dir_all(&args.out).with_context(|| format!("cannot create {}", args.out.display()))?;
    for a in &done {
        writeln!(out, "{}", drive_line(&a.analysis))?;
    }
    serve(&args.out, args.port, done, s, out)?;
    Ok(failed == 0)
}

pub fn run_gen(args: &GenArgs, out: &mut dyn Write) -> Result<bool, CliError> {
    if args.spec.is_empty() && args.random.is_none() && !args.traffic_light {
        return Err(CliError::Usage("nothing to generate: give --spec, --random or --traffic-light".into()));
    }
    if !(args.frame_period_ms > 0.0) {
        return Err(CliError::Usage("--frame-period-ms must be positive".into()));
    }
    let mut specs: Vec<LayoutSpec> = Vec::new();
    for path in &args.spec {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        specs.push(serde_json::from_str(&text).with_context(|| format!("invalid layout spec {}", path.display()))?);
    }
    let params = RandomLayoutParams { frame_period_ms: args.frame_period_ms, ..Default::default() };
    for seed in args.seed..args.seed + args.random.unwrap_or(0) {
        specs.push(random_layout(seed, &params));
    }
    if args.traffic_light {
        specs.push(traffic_light_spec(90.0, args.frame_period_ms));
    }

    fs::create_dir_all(&args.out).with_context(|| format!("cannot create {}", args.out.display()))?;
    for spec in &specs {
        let drive = generate_spec(spec, &Default::default()).with_context(|| format!("layout {}", spec.drive_id()))?;
        let b = &drive.bundle;
        write_bundle(b, &args.out.join(&b.drive_id))?;
        let layout_path = args.out.join(&b.drive_id).join("layout.json");
        write_file(&layout_path, &(serde_json::to_string_pretty(spec).context("serialize layout")? + "\n"))?;
        let truth = b.ground_truth.as_ref().map(|t| t.values().copied().collect::<Vec<_>>()).unwrap_or_default();
        let count = |l: TruthLabel| truth.iter().filter(|&&t| t == l).count();
        writeln!(
            out,
            "{}: {} detections ({} parking, {} non-parking, {} cross), {} frames",
            b.drive_id,
            b.detections.len(),
            count(TruthLabel::Parking),
            count(TruthLabel::NonParking),
            count(TruthLabel::Cross),
            b.frames.len()
        )?;
    }
    Ok(true)
}

pub fn run_ingest(args: &IngestArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<bool, CliError> {
    let mut ok = true;
    for path in &args.traces {
        let result = parse_trace_file(path).map_err(anyhow::Error::from).and_then(|b| {
            let dir = args.out.join(&b.drive_id);
            write_bundle(&b, &dir)?;
            Ok((b, dir))
        });
        match result {
            Ok((b, dir)) => writeln!(
                out,
                "{} -> {}: {} odometry samples, {} detections, {} frames",
                path.display(),
                dir.display(),
                b.odometry.len(),
                b.detections.len(),
                b.frames.len()
            )?,
            Err(e) => {
                writeln!(err, "error: {}: {e:#}", path.display())?;
                ok = false;
            }
        }
    }
    Ok(ok)
}
