use std::collections::BTreeMap;
use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::process::Command;

use gta_core::decision::{rethreshold, DecisionConfig};
use gta_core::ingest::load;
use gta_core::metrics::{ConfusionTable, Report};
use gta_core::model::{DriveBundle, Label, TruthLabel};
use gta_core::pipeline::{analyze_bundle, DriveAnalysis, PipelineConfig, ProviderChoice};
use gta_core::classifier::SyntheticNoiseModel;
use tempfile::TempDir;

struct Run {
    code: i32,
    out: String,
    err: String,
}

fn gta_with_input(args: &[&str], input: &str) -> Run {
    let mut argv = vec!["gta"];
    argv.extend_from_slice(args);
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = gta_cli::run(argv, &mut Cursor::new(input.as_bytes()), &mut out, &mut err);
    Run { code, out: String::from_utf8(out).unwrap(), err: String::from_utf8(err).unwrap() }
}

fn gta(args: &[&str]) -> Run {
    gta_with_input(args, "")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Generates `n` random drives into `<tmp>/drives` and returns their paths.
fn drives(tmp: &TempDir, n: u64, seed: u64) -> Vec<PathBuf> {
    let dir = tmp.path().join("drives");
    let r = gta(&["gen", "--random", &n.to_string(), "--seed", &seed.to_string(), "--out", s(&dir)]);
    assert_eq!(r.code, 0, "{}", r.err);
    (seed..seed + n).map(|i| dir.join(format!("layout-{i}"))).collect()
}

fn args_with<'a>(head: &[&'a str], paths: &'a [PathBuf], tail: &[&'a str]) -> Vec<&'a str> {
    let mut v = head.to_vec();
    v.extend(paths.iter().map(|p| s(p)));
    v.extend_from_slice(tail);
    v
}

fn read_json<T: serde::de::DeserializeOwned>(p: &Path) -> T {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn default_analysis(b: &DriveBundle) -> DriveAnalysis {
    let noise = SyntheticNoiseModel::new(0, SyntheticNoiseModel::default().flip_prob, SyntheticNoiseModel::default().concentration).unwrap();
    analyze_bundle(b, ProviderChoice::Synthetic(noise), &PipelineConfig::default()).unwrap()
}

/// Straight count of the six confusion cells from labels and truth.
fn recount(labels: &BTreeMap<u64, (Label, bool)>, truth: &BTreeMap<u64, TruthLabel>) -> [u64; 6] {
    let mut c = [0u64; 6];
    for (id, (label, lc)) in labels {
        let t = truth[id];
        if *label == Label::Cross || t == TruthLabel::Cross {
            continue;
        }
        let said = *label == Label::Parking;
        let is = t == TruthLabel::Parking;
        let cell = match (said == is, is, lc) {
            (true, true, false) => 0,
            (false, false, _) => 1,
            (true, false, false) => 2,
            (false, true, _) => 3,
            (true, true, true) => 4,
            (true, false, true) => 5,
        };
        c[cell] += 1;
    }
    c
}

fn cells(t: &ConfusionTable) -> [u64; 6] {
    [t.tp, t.fp, t.tn, t.fn_, t.tp_lc, t.tn_lc]
}

#[test]
fn analyze_report_is_reproducible_and_counts_match() {
    let tmp = TempDir::new().unwrap();
    let paths = drives(&tmp, 6, 11);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        let argv = args_with(&["analyze", "--truth", "--pin-timestamp", "42", "--jobs", "3", "--out", s(out)], &paths, &[]);
        let r = gta(&argv);
        assert_eq!(r.code, 0, "{}", r.err);
        assert!(r.out.contains("f1 score average"), "{}", r.out);
    }
    let ra = fs::read(a.join("report.json")).unwrap();
    assert_eq!(ra, fs::read(b.join("report.json")).unwrap());
    let report: Report = serde_json::from_slice(&ra).unwrap();
    assert_eq!(report.generated_at, 42);
    assert_eq!(report.drive_ids.len(), 6);
    assert_eq!(report.sweep.as_ref().map(Vec::len), Some(11));

    let mut total = [0u64; 6];
    let mut summed = ConfusionTable::default();
    for p in &paths {
        let bundle = load(p).unwrap();
        let own: Report = read_json(&a.join(&bundle.drive_id).join("report.json"));
        assert_eq!(own.drive_ids, vec![bundle.drive_id.clone()]);
        summed += own.confusion;
        let written: DriveAnalysis = read_json(&a.join(&bundle.drive_id).join("decisions.json"));
        assert_eq!(written, default_analysis(&bundle));
        let labels = written.results.iter().map(|r| (r.detection.id, (r.outcome.label, r.outcome.flagged()))).collect();
        let c = recount(&labels, bundle.ground_truth.as_ref().unwrap());
        for i in 0..6 {
            total[i] += c[i];
        }
    }
    assert_eq!(cells(&report.confusion), total);
    assert_eq!(report.confusion, summed);
}

#[test]
fn lc_threshold_flag_matches_rethresholding() {
    let tmp = TempDir::new().unwrap();
    let paths = drives(&tmp, 4, 100);
    let out = tmp.path().join("out");
    let r = gta(&args_with(&["analyze", "--lc-threshold", "0.8", "--out", s(&out)], &paths, &[]));
    assert_eq!(r.code, 0, "{}", r.err);
    assert!(r.out.contains("human review:"));
    for p in &paths {
        let bundle = load(p).unwrap();
        let expected = default_analysis(&bundle)
            .results
            .iter()
            .filter(|d| rethreshold(&d.outcome, 0.8).flagged())
            .count();
        let line = format!("{}: ", bundle.drive_id);
        let got = r.out.lines().find(|l| l.starts_with(&line)).unwrap();
        assert!(got.ends_with(&format!(", {expected} flagged")), "{got} vs {expected}");
        let csv = fs::read_to_string(out.join(&bundle.drive_id).join("decisions.csv")).unwrap();
        assert_eq!(csv.lines().filter(|l| l.ends_with(",true")).count(), expected);
    }
}

#[test]
fn sweep_is_monotone_and_ends_at_full_review() {
    let tmp = TempDir::new().unwrap();
    let paths = drives(&tmp, 8, 0);
    let out = tmp.path().join("sweep");
    let r = gta(&args_with(&["sweep", "--out", s(&out)], &paths, &[]));
    assert_eq!(r.code, 0, "{}", r.err);
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let rows: Vec<Vec<String>> = csv.lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(rows.len(), 11);
    let effort: Vec<f64> = rows.iter().map(|r| r[2].parse().unwrap()).collect();
    assert!(effort.windows(2).all(|w| w[0] <= w[1]), "{effort:?}");
    let last = rows.last().unwrap();
    assert_eq!(last[0], "1");
    assert_eq!(last[1].parse::<f64>().unwrap(), 1.0);

    let flagged: Vec<usize> = r.out.lines().skip(1).map(|l| l.split_whitespace().nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(flagged.len(), 11);
    assert!(flagged.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn full_review_threshold_alone() {
    let tmp = TempDir::new().unwrap();
    let paths = drives(&tmp, 3, 40);
    let out = tmp.path().join("one");
    let r = gta(&args_with(&["sweep", "--from", "1.0", "--to", "1.0", "--out", s(&out)], &paths, &[]));
    assert_eq!(r.code, 0, "{}", r.err);
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].starts_with("1,1,"), "{}", rows[0]);
    assert!(r.out.lines().nth(1).unwrap().contains("100.0%"), "{}", r.out);
}

#[test]
fn bad_sweep_range_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    let paths = drives(&tmp, 1, 0);
    let r = gta(&args_with(&["sweep", "--from", "0.9", "--to", "0.5"], &paths, &[]));
    assert_eq!(r.code, 1);
    assert!(r.err.contains("invalid threshold range"));
}

#[test]
fn one_bad_path_fails_the_run_but_not_the_others() {
    let tmp = TempDir::new().unwrap();
    let mut paths = drives(&tmp, 2, 5);
    paths.insert(1, tmp.path().join("missing-drive"));
    let out = tmp.path().join("out");
    let r = gta(&args_with(&["analyze", "--out", s(&out)], &paths, &[]));
    assert_eq!(r.code, 2);
    assert!(r.err.contains("missing-drive"), "{}", r.err);
    assert!(out.join("layout-5/decisions.json").is_file());
    assert!(out.join("layout-6/decisions.json").is_file());
}

#[test]
fn truth_is_required_for_scoring() {
    let tmp = TempDir::new().unwrap();
    let paths = drives(&tmp, 1, 3);
    fs::remove_file(paths[0].join("truth.csv")).unwrap();
    let r = gta(&args_with(&["analyze", "--truth", "--out", s(&tmp.path().join("o"))], &paths, &[]));
    assert_eq!(r.code, 2);
    assert!(r.err.contains("no truth"), "{}", r.err);
}

#[test]
fn duplicate_drive_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let paths = drives(&tmp, 1, 3);
    let twice = [paths[0].clone(), paths[0].clone()];
    let r = gta(&args_with(&["analyze", "--out", s(&tmp.path().join("o"))], &twice, &[]));
    assert_eq!(r.code, 2);
    assert!(r.err.contains("already analyzed"));
}

#[test]
fn config_file_sits_between_defaults_and_flags() {
    let tmp = TempDir::new().unwrap();
    let paths = drives(&tmp, 3, 20);
    let cfg = tmp.path().join("gta.toml");
    fs::write(&cfg, "seed = 0\n[decision]\nlc_threshold = 0.95\n").unwrap();

    let flagged = |extra: &[&str]| -> usize {
        let out = tmp.path().join(format!("o{}", extra.len()));
        let mut head = vec!["analyze", "--config", s(&cfg), "--out", s(&out)];
        head.extend_from_slice(extra);
        let r = gta(&args_with(&head, &paths, &[]));
        assert_eq!(r.code, 0, "{}", r.err);
        r.out.lines().filter_map(|l| l.strip_suffix(" flagged")?.rsplit(' ').next()?.parse::<usize>().ok()).sum()
    };
    let expect = |thr: f64| -> usize {
        paths
            .iter()
            .map(|p| default_analysis(&load(p).unwrap()).results.iter().filter(|d| rethreshold(&d.outcome, thr).flagged()).count())
            .sum()
    };
    assert_eq!(flagged(&[]), expect(0.95));
    assert_eq!(flagged(&["--lc-threshold", "0.6"]), expect(0.6));
    assert_ne!(expect(0.95), expect(0.6));
    assert_eq!(DecisionConfig::default().lc_threshold, 0.7);
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    let paths = drives(&tmp, 1, 0);
    let cfg = tmp.path().join("gta.toml");
    fs::write(&cfg, "[decision]\nlc_treshold = 0.9\n").unwrap();
    let r = gta(&args_with(&["analyze", "--config", s(&cfg)], &paths, &[]));
    assert_eq!(r.code, 1);
    assert!(r.err.contains("lc_treshold"), "{}", r.err);

    let r = gta(&args_with(&["analyze", "--lc-threshold", "1.5"], &paths, &[]));
    assert_eq!(r.code, 1);
    let r = gta(&args_with(&["analyze", "--jobs", "0"], &paths, &[]));
    assert_eq!(r.code, 1);
}

fn normalize(text: &str, tmp: &Path) -> String {
    text.replace(s(tmp), "<tmp>")
}

#[test]
fn guide_transcript() {
    let tmp = TempDir::new().unwrap();
    drives(&tmp, 2, 0);
    let work = tmp.path().join("drives");
    let out = tmp.path().join("guided");
    let input = format!("{}/nowhere\n{}\nlayout-0 layout-9\nlayout-0 layout-1\n3\n1\nmaybe\ny\n{}\n", s(tmp.path()), s(&work), s(&out));
    let r = gta_with_input(&["guide", "--pin-timestamp", "7"], &input);
    assert_eq!(r.code, 0, "{}", r.err);
    let text = normalize(&r.out, tmp.path());
    let head: String = text.lines().take_while(|l| !l.starts_with("layout-0:")).map(|l| format!("{l}\n")).collect();
    let expected = "\
GTA guide: answer each question, or press Ctrl-D to abort.
Work path:   not a directory: <tmp>/nowhere
Work path: Measurement files (space separated):   not found in <tmp>/drives: layout-9
Measurement files (space separated): Action, [1] analyze or [2] sweep:   unknown choice '3', enter 1 or 2
Action, [1] analyze or [2] sweep: Compare against ground truth? [y/n]:   answer y or n, not 'maybe'
Compare against ground truth? [y/n]: Output directory [gta-report]: running: gta analyze <tmp>/drives/layout-0 <tmp>/drives/layout-1 --truth --out <tmp>/guided
";
    assert_eq!(head, expected);

    let flags = tmp.path().join("flags");
    let r2 = gta(&[
        "analyze",
        s(&work.join("layout-0")),
        s(&work.join("layout-1")),
        "--truth",
        "--out",
        s(&flags),
        "--pin-timestamp",
        "7",
    ]);
    assert_eq!(r2.code, 0);
    for f in ["report.json", "report.txt", "layout-0/decisions.json", "layout-1/decisions.csv"] {
        assert_eq!(fs::read(out.join(f)).unwrap(), fs::read(flags.join(f)).unwrap(), "{f}");
    }
    assert!(r.out.ends_with(&r2.out));
}

#[test]
fn guide_sweep_choice_runs_the_sweep() {
    let tmp = TempDir::new().unwrap();
    drives(&tmp, 1, 0);
    let work = tmp.path().join("drives");
    let out = tmp.path().join("s");
    let r = gta_with_input(&["guide"], &format!("{}\nlayout-0\n2\n{}\n", s(&work), s(&out)));
    assert_eq!(r.code, 0, "{}", r.err);
    assert!(normalize(&r.out, tmp.path()).contains("running: gta sweep <tmp>/drives/layout-0 --out <tmp>/s"));
    assert!(out.join("sweep.csv").is_file());
}

#[test]
fn guide_aborts_on_end_of_input() {
    let r = gta_with_input(&["guide"], "");
    assert_eq!(r.code, 1);
    assert!(r.err.contains("aborted"));
    let r = gta_with_input(&["guide"], "/\n");
    assert_eq!(r.code, 1);
}

#[test]
fn gen_writes_bundles_with_layouts() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("d");
    let r = gta(&["gen", "--traffic-light", "--random", "1", "--out", s(&dir)]);
    assert_eq!(r.code, 0, "{}", r.err);
    assert!(r.out.contains("traffic-light: 1 detections (0 parking, 1 non-parking, 0 cross)"), "{}", r.out);
    for d in ["layout-0", "traffic-light"] {
        assert!(dir.join(d).join("layout.json").is_file());
        assert!(load(&dir.join(d)).unwrap().ground_truth.is_some());
    }

    let spec = dir.join("layout-0/layout.json");
    let again = tmp.path().join("again");
    let r = gta(&["gen", "--spec", s(&spec), "--out", s(&again)]);
    assert_eq!(r.code, 0, "{}", r.err);
    for f in ["odometry.csv", "detections.csv", "frames.csv", "truth.csv"] {
        assert_eq!(fs::read(dir.join("layout-0").join(f)).unwrap(), fs::read(again.join("layout-0").join(f)).unwrap());
    }

    assert_eq!(gta(&["gen"]).code, 1);
}

/// Trace form of a bundle, timestamps shifted by `base`.
fn to_trace(b: &DriveBundle, base: u64) -> String {
    let mut lines: Vec<(u64, u8, String)> = Vec::new();
    for o in &b.odometry {
        lines.push((o.t.0, 0, format!("{} ODO {}", o.t.0 + base, o.v)));
    }
    for d in &b.detections {
        lines.push((d.t_det.0, 1, format!("{} USS {} {} {}", d.t_det.0 + base, d.id, d.ps_xpos, d.length)));
    }
    for f in &b.frames {
        lines.push((f.t.0, 2, format!("{} NRC {} {}", f.t.0 + base, f.frame_id, f.image_ref)));
    }
    lines.sort_by_key(|l| (l.0, l.1));
    lines.into_iter().map(|l| l.2 + "\n").collect()
}

#[test]
fn ingest_then_analyze_matches_the_trace() {
    let tmp = TempDir::new().unwrap();
    let paths = drives(&tmp, 1, 9);
    let bundle = load(&paths[0]).unwrap();
    let trace = tmp.path().join("run-9.trace");
    fs::write(&trace, to_trace(&bundle, 1_700_000_000_000_000)).unwrap();
    let bad = tmp.path().join("bad.trace");
    fs::write(&bad, "0 ODO 1\n5 XYZ 1\n").unwrap();

    let out = tmp.path().join("bundles");
    let r = gta(&["ingest", s(&trace), s(&bad), "--out", s(&out)]);
    assert_eq!(r.code, 2);
    assert!(r.err.contains("bad.trace"), "{}", r.err);
    assert!(r.out.contains(&format!("{} detections", bundle.detections.len())));

    let ingested = load(&out.join("run-9")).unwrap();
    assert_eq!(ingested.odometry, bundle.odometry);
    assert_eq!(ingested.detections, bundle.detections);
    assert_eq!(ingested.frames, bundle.frames);

    let (x, y) = (tmp.path().join("x"), tmp.path().join("y"));
    assert_eq!(gta(&["analyze", s(&trace), "--out", s(&x)]).code, 0);
    assert_eq!(gta(&["analyze", s(&out.join("run-9")), "--out", s(&y)]).code, 0);
    assert_eq!(fs::read(x.join("run-9/decisions.csv")).unwrap(), fs::read(y.join("run-9/decisions.csv")).unwrap());
}

fn binary(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_gta")).args(args).output().unwrap()
}

#[test]
fn process_exit_codes() {
    assert_eq!(binary(&["--help"]).status.code(), Some(0));
    assert_eq!(binary(&["--version"]).status.code(), Some(0));
    assert_eq!(binary(&[]).status.code(), Some(1));
    assert_eq!(binary(&["analyze"]).status.code(), Some(1));
    assert_eq!(binary(&["sweep"]).status.code(), Some(1));
    assert_eq!(binary(&["frobnicate"]).status.code(), Some(1));
    let missing = binary(&["analyze", "/definitely/not/here"]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("/definitely/not/here"));
}

#[test]
fn serve_reports_a_busy_port() {
    let tmp = TempDir::new().unwrap();
    let paths = drives(&tmp, 1, 0);
    let held = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = held.local_addr().unwrap().port().to_string();
    let r = gta(&args_with(&["serve", "--port", &port, "--out", s(&tmp.path().join("o"))], &paths, &[]));
    assert_eq!(r.code, 2);
    assert!(r.err.contains(&port), "{}", r.err);
}
