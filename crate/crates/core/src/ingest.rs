//! Trace parsing and the on-disk bundle format.
//!
//! A trace is a line-oriented UTF-8 file, optionally gzip-wrapped:
//!
//! ```text
//! # comment
//! <t_us> ODO <v_mps>
//! <t_us> USS <id> <ps_xpos_m> <length_m>
//! <t_us> NRC <frame_id> <image_ref>
//! ```
//!
//! Timestamps are absolute microseconds and are rebased so that the first
//! odometry sample sits at zero. A bundle directory holds `drive.json`,
//! `odometry.csv`, `detections.csv`, `frames.csv` and, when present,
//! `scores.csv` and `truth.csv`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};

use flate2::read::MultiGzDecoder;
use serde::{Deserialize, Serialize};

use crate::error::IngestError;
use crate::model::{
    validate_bundle, ClassScores, Detection, DriveBundle, Frame, OdometrySample, Timestamp, TruthLabel,
};

const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];

pub const DRIVE_FILE: &str = "drive.json";
pub const ODOMETRY_FILE: &str = "odometry.csv";
pub const DETECTIONS_FILE: &str = "detections.csv";
pub const FRAMES_FILE: &str = "frames.csv";
pub const SCORES_FILE: &str = "scores.csv";
pub const TRUTH_FILE: &str = "truth.csv";

pub const ODOMETRY_HEADER: &[&str] = &["t_us", "v_mps"];
pub const DETECTIONS_HEADER: &[&str] = &["id", "t_det_us", "ps_xpos_m", "length_m"];
pub const FRAMES_HEADER: &[&str] = &["frame_id", "t_us", "image_ref"];
pub const SCORES_HEADER: &[&str] = &["frame_id", "car", "construction", "non_parking", "parking"];
pub const TRUTH_HEADER: &[&str] = &["detection_id", "label"];

#[derive(Debug, Serialize, Deserialize)]
struct DriveMeta {
    drive_id: String,
    duration_s: f64,
}

/// Channel of one trace line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    Odo,
    Uss,
    Nrc,
}

impl Channel {
    fn parse(s: &str) -> Option<Channel> {
        match s {
            "ODO" => Some(Channel::Odo),
            "USS" => Some(Channel::Uss),
            "NRC" => Some(Channel::Nrc),
            _ => None,
        }
    }

    fn arity(self) -> usize {
        match self {
            Channel::Odo => 1,
            Channel::Uss => 3,
            Channel::Nrc => 2,
        }
    }
}

/// Space-separated tokens with their 1-based byte columns.
fn tokenize(line: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in line.char_indices() {
        if c == ' ' || c == '\t' {
            if let Some(s) = start.take() {
                out.push((s + 1, &line[s..i]));
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push((s + 1, &line[s..]));
    }
    out
}

fn parse_err(line: usize, column: usize, message: impl Into<String>) -> IngestError {
    IngestError::Parse { line, column, message: message.into() }
}

fn parse_u64(line: usize, (col, tok): (usize, &str), what: &str) -> Result<u64, IngestError> {
    tok.parse::<u64>()
        .map_err(|_| parse_err(line, col, format!("expected unsigned integer {what}, found `{tok}`")))
}

fn parse_f64(line: usize, (col, tok): (usize, &str), what: &str) -> Result<f64, IngestError> {
    match tok.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(parse_err(line, col, format!("expected decimal {what}, found `{tok}`"))),
    }
}

/// Wraps `reader` in a gzip decoder when the stream starts with the gzip
/// magic bytes.
fn maybe_decompress<'a, R: Read + 'a>(reader: R) -> std::io::Result<Box<dyn BufRead + 'a>> {
    let mut buffered = BufReader::new(reader);
    let head = buffered.fill_buf()?;
    if head.len() >= 2 && head[..2] == GZIP_MAGIC {
        Ok(Box::new(BufReader::new(MultiGzDecoder::new(buffered))))
    } else {
        Ok(Box::new(buffered))
    }
}

struct ChannelClock {
    last: Option<u64>,
}

impl ChannelClock {
    fn advance(&mut self, t: u64, line: usize, name: &str) -> Result<(), IngestError> {
        if let Some(prev) = self.last {
            if t <= prev {
                return Err(IngestError::Structure {
                    line,
                    message: format!("{name} timestamp {t} does not increase (previous {prev})"),
                });
            }
        }
        self.last = Some(t);
        Ok(())
    }
}

/// Parses a (possibly gzip-compressed) trace into a validated bundle.
pub fn parse_trace<R: Read>(reader: R, drive_id: &str) -> Result<DriveBundle, IngestError> {
    let io_err = |source| IngestError::Io { path: PathBuf::from("<trace>"), source };
    let mut input = maybe_decompress(reader).map_err(io_err)?;

    let mut odometry: Vec<(u64, f64)> = Vec::new();
    let mut detections: Vec<(usize, u64, Detection)> = Vec::new();
    let mut frames: Vec<(usize, u64, u64, String)> = Vec::new();
    let mut clocks = [ChannelClock { last: None }, ChannelClock { last: None }, ChannelClock { last: None }];
    let mut det_ids = BTreeSet::new();
    let mut frame_ids = BTreeSet::new();

    let mut buf = Vec::new();
    let mut line_no = 0usize;
    loop {
        buf.clear();
        let n = input.read_until(b'\n', &mut buf).map_err(io_err)?;
        if n == 0 {
            break;
        }
        line_no += 1;
        let text = std::str::from_utf8(&buf).map_err(|e| parse_err(line_no, e.valid_up_to() + 1, "invalid UTF-8"))?;
        let text = text.trim_end_matches('\n').trim_end_matches('\r');
        if text.trim_start().is_empty() || text.trim_start().starts_with('#') {
            continue;
        }
        let tokens = tokenize(text);
        if tokens.len() < 2 {
            let col = tokens.first().map_or(1, |t| t.0 + t.1.len());
            return Err(parse_err(line_no, col, "expected `<t_us> <channel> ...`"));
        }
        let t = parse_u64(line_no, tokens[0], "timestamp")?;
        let channel = Channel::parse(tokens[1].1)
            .ok_or_else(|| parse_err(line_no, tokens[1].0, format!("unknown channel `{}`", tokens[1].1)))?;
        let payload = &tokens[2..];
        if payload.len() != channel.arity() {
            let col = payload
                .get(channel.arity())
                .map_or_else(|| text.len() + 1, |t| t.0);
            return Err(parse_err(
                line_no,
                col,
                format!("{} expects {} payload fields, found {}", tokens[1].1, channel.arity(), payload.len()),
            ));
        }
        match channel {
            Channel::Odo => {
                let v = parse_f64(line_no, payload[0], "velocity")?;
                if v < 0.0 {
                    return Err(parse_err(line_no, payload[0].0, "velocity must be >= 0"));
                }
                clocks[0].advance(t, line_no, "ODO")?;
                odometry.push((t, v));
            }
            Channel::Uss => {
                let id = parse_u64(line_no, payload[0], "detection id")?;
                let ps_xpos = parse_f64(line_no, payload[1], "ps_xpos")?;
                let length = parse_f64(line_no, payload[2], "length")?;
                clocks[1].advance(t, line_no, "USS")?;
                if !det_ids.insert(id) {
                    return Err(IngestError::Structure { line: line_no, message: format!("duplicate detection id {id}") });
                }
                detections.push((line_no, t, Detection { id, t_det: Timestamp::ZERO, ps_xpos, length }));
            }
            Channel::Nrc => {
                let frame_id = parse_u64(line_no, payload[0], "frame id")?;
                clocks[2].advance(t, line_no, "NRC")?;
                if !frame_ids.insert(frame_id) {
                    return Err(IngestError::Structure {
                        line: line_no,
                        message: format!("duplicate frame id {frame_id}"),
                    });
                }
                if let Some(prev) = frames.last() {
                    if frame_id <= prev.2 {
                        return Err(IngestError::Structure {
                            line: line_no,
                            message: format!("frame id {frame_id} out of capture order (previous {})", prev.2),
                        });
                    }
                }
                frames.push((line_no, t, frame_id, payload[1].1.to_string()));
            }
        }
    }

    let Some(&(start, _)) = odometry.first() else {
        return Err(IngestError::Structure { line: line_no, message: "trace contains no ODO samples".into() });
    };
    let rebase = |line: usize, t: u64| {
        t.checked_sub(start).map(Timestamp).ok_or_else(|| IngestError::Structure {
            line,
            message: format!("timestamp {t} precedes drive start {start}"),
        })
    };

    let odometry: Vec<OdometrySample> =
        odometry.into_iter().map(|(t, v)| OdometrySample { t: Timestamp(t - start), v }).collect();
    let duration = odometry.last().map(|s| s.t).unwrap_or_default();
    let detections = detections
        .into_iter()
        .map(|(line, t, d)| Ok(Detection { t_det: rebase(line, t)?, ..d }))
        .collect::<Result<Vec<_>, IngestError>>()?;
    let frames = frames
        .into_iter()
        .map(|(line, t, frame_id, image_ref)| Ok(Frame { frame_id, t: rebase(line, t)?, image_ref }))
        .collect::<Result<Vec<_>, IngestError>>()?;

    let bundle = DriveBundle {
        drive_id: drive_id.to_string(),
        duration,
        odometry,
        detections,
        frames,
        recorded_scores: None,
        ground_truth: None,
    };
    let violations = validate_bundle(&bundle);
    if violations.is_empty() {
        Ok(bundle)
    } else {
        Err(IngestError::Invalid(violations))
    }
}

/// Parses a trace file; the drive id is the file name without `.gz` and
/// `.trace` suffixes.
pub fn parse_trace_file(path: &Path) -> Result<DriveBundle, IngestError> {
    let file = File::open(path).map_err(|source| IngestError::Io { path: path.to_path_buf(), source })?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("drive");
    let id = name.strip_suffix(".gz").unwrap_or(name);
    let id = id.strip_suffix(".trace").unwrap_or(id);
    parse_trace(file, id)
}

/// Loads a bundle directory or a trace file.
pub fn load(path: &Path) -> Result<DriveBundle, IngestError> {
    if path.is_dir() {
        read_bundle(path)
    } else if path.is_file() {
        parse_trace_file(path)
    } else {
        Err(IngestError::MissingFile(path.to_path_buf()))
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>, IngestError> {
    let file = File::create(path).map_err(|source| IngestError::Io { path: path.to_path_buf(), source })?;
    Ok(csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(file))
}

fn write_rows<I>(path: &Path, header: &[&str], rows: I) -> Result<(), IngestError>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv_writer(path)?;
    let wrap = |e: csv::Error| IngestError::Io { path: path.to_path_buf(), source: e.into() };
    w.write_record(header).map_err(wrap)?;
    for row in rows {
        w.write_record(&row).map_err(wrap)?;
    }
    w.flush().map_err(|source| IngestError::Io { path: path.to_path_buf(), source })
}

/// Writes `bundle` to `dir` in the bundle directory format.
///
/// Floats are written in shortest round-trip form so that reading the
/// directory back yields bit-identical values.
pub fn write_bundle(bundle: &DriveBundle, dir: &Path) -> Result<(), IngestError> {
    let violations = validate_bundle(bundle);
    if !violations.is_empty() {
        return Err(IngestError::Invalid(violations));
    }
    fs::create_dir_all(dir).map_err(|source| IngestError::Io { path: dir.to_path_buf(), source })?;

    let meta = DriveMeta { drive_id: bundle.drive_id.clone(), duration_s: bundle.duration.as_secs_f64() };
    let drive_path = dir.join(DRIVE_FILE);
    let json = serde_json::to_string_pretty(&meta).expect("drive metadata serializes");
    fs::write(&drive_path, json + "\n").map_err(|source| IngestError::Io { path: drive_path, source })?;

    write_rows(
        &dir.join(ODOMETRY_FILE),
        ODOMETRY_HEADER,
        bundle.odometry.iter().map(|s| vec![s.t.0.to_string(), s.v.to_string()]),
    )?;
    write_rows(
        &dir.join(DETECTIONS_FILE),
        DETECTIONS_HEADER,
        bundle
            .detections
            .iter()
            .map(|d| vec![d.id.to_string(), d.t_det.0.to_string(), d.ps_xpos.to_string(), d.length.to_string()]),
    )?;
    write_rows(
        &dir.join(FRAMES_FILE),
        FRAMES_HEADER,
        bundle.frames.iter().map(|f| vec![f.frame_id.to_string(), f.t.0.to_string(), f.image_ref.clone()]),
    )?;
    if let Some(scores) = &bundle.recorded_scores {
        write_rows(
            &dir.join(SCORES_FILE),
            SCORES_HEADER,
            scores.iter().map(|(id, s)| {
                let mut row = vec![id.to_string()];
                row.extend(s.as_array().iter().map(f64::to_string));
                row
            }),
        )?;
    }
    if let Some(truth) = &bundle.ground_truth {
        write_rows(
            &dir.join(TRUTH_FILE),
            TRUTH_HEADER,
            truth.iter().map(|(id, l)| vec![id.to_string(), l.name().to_string()]),
        )?;
    }
    Ok(())
}

struct CsvTable {
    path: PathBuf,
    rows: Vec<(usize, csv::StringRecord)>,
}

impl CsvTable {
    fn open(path: PathBuf, header: &[&str]) -> Result<CsvTable, IngestError> {
        if !path.is_file() {
            return Err(IngestError::MissingFile(path));
        }
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(&path)
            .map_err(|e| IngestError::Io { path: path.clone(), source: e.into() })?;
        let found = reader
            .headers()
            .map_err(|e| IngestError::Record { file: path.clone(), line: 1, message: e.to_string() })?
            .clone();
        if found.iter().ne(header.iter().copied()) {
            return Err(IngestError::Schema {
                file: path,
                expected: header.join(","),
                found: found.iter().collect::<Vec<_>>().join(","),
            });
        }
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| IngestError::Record {
                file: path.clone(),
                line: e.position().map_or(0, |p| p.line() as usize),
                message: e.to_string(),
            })?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            rows.push((line, rec));
        }
        Ok(CsvTable { path, rows })
    }

    fn err(&self, line: usize, message: impl Into<String>) -> IngestError {
        IngestError::Record { file: self.path.clone(), line, message: message.into() }
    }

    fn u64_at(&self, line: usize, rec: &csv::StringRecord, i: usize, name: &str) -> Result<u64, IngestError> {
        rec[i].parse().map_err(|_| self.err(line, format!("{name}: expected unsigned integer, found `{}`", &rec[i])))
    }

    fn f64_at(&self, line: usize, rec: &csv::StringRecord, i: usize, name: &str) -> Result<f64, IngestError> {
        match rec[i].parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(self.err(line, format!("{name}: expected decimal, found `{}`", &rec[i]))),
        }
    }
}

/// Reads and validates a bundle directory.
pub fn read_bundle(dir: &Path) -> Result<DriveBundle, IngestError> {
    let drive_path = dir.join(DRIVE_FILE);
    if !drive_path.is_file() {
        return Err(IngestError::MissingFile(drive_path));
    }
    let text =
        fs::read_to_string(&drive_path).map_err(|source| IngestError::Io { path: drive_path.clone(), source })?;
    let meta: DriveMeta = serde_json::from_str(&text)
        .map_err(|e| IngestError::Record { file: drive_path.clone(), line: e.line(), message: e.to_string() })?;
    if !meta.duration_s.is_finite() || meta.duration_s < 0.0 {
        return Err(IngestError::Record { file: drive_path, line: 1, message: "duration_s must be >= 0".into() });
    }

    let odo = CsvTable::open(dir.join(ODOMETRY_FILE), ODOMETRY_HEADER)?;
    let det = CsvTable::open(dir.join(DETECTIONS_FILE), DETECTIONS_HEADER)?;
    let frm = CsvTable::open(dir.join(FRAMES_FILE), FRAMES_HEADER)?;

    let mut odometry = Vec::with_capacity(odo.rows.len());
    for (line, rec) in &odo.rows {
        odometry.push(OdometrySample {
            t: Timestamp(odo.u64_at(*line, rec, 0, "t_us")?),
            v: odo.f64_at(*line, rec, 1, "v_mps")?,
        });
    }
    let mut detections = Vec::with_capacity(det.rows.len());
    for (line, rec) in &det.rows {
        detections.push(Detection {
            id: det.u64_at(*line, rec, 0, "id")?,
            t_det: Timestamp(det.u64_at(*line, rec, 1, "t_det_us")?),
            ps_xpos: det.f64_at(*line, rec, 2, "ps_xpos_m")?,
            length: det.f64_at(*line, rec, 3, "length_m")?,
        });
    }
    let mut frames = Vec::with_capacity(frm.rows.len());
    for (line, rec) in &frm.rows {
        frames.push(Frame {
            frame_id: frm.u64_at(*line, rec, 0, "frame_id")?,
            t: Timestamp(frm.u64_at(*line, rec, 1, "t_us")?),
            image_ref: rec[2].to_string(),
        });
    }

    let mut violations = Vec::new();
    let scores_path = dir.join(SCORES_FILE);
    let recorded_scores = if scores_path.exists() {
        let table = CsvTable::open(scores_path, SCORES_HEADER)?;
        let mut map = BTreeMap::new();
        for (line, rec) in &table.rows {
            let id = table.u64_at(*line, rec, 0, "frame_id")?;
            let mut v = [0.0; 4];
            for (k, slot) in v.iter_mut().enumerate() {
                *slot = table.f64_at(*line, rec, k + 1, SCORES_HEADER[k + 1])?;
            }
            match ClassScores::from_array(v) {
                Ok(s) => {
                    if map.insert(id, s).is_some() {
                        violations.push(format!("scores: frame {id}: duplicate row"));
                    }
                }
                Err(e) => violations.push(format!("scores: frame {id}: {e}")),
            }
        }
        Some(map)
    } else {
        None
    };

    let truth_path = dir.join(TRUTH_FILE);
    let ground_truth = if truth_path.exists() {
        let table = CsvTable::open(truth_path, TRUTH_HEADER)?;
        let mut map = BTreeMap::new();
        for (line, rec) in &table.rows {
            let id = table.u64_at(*line, rec, 0, "detection_id")?;
            let label = TruthLabel::parse(&rec[1])
                .ok_or_else(|| table.err(*line, format!("label: expected parking|non_parking|cross, found `{}`", &rec[1])))?;
            if map.insert(id, label).is_some() {
                violations.push(format!("truth: detection {id}: duplicate row"));
            }
        }
        Some(map)
    } else {
        None
    };

    let bundle = DriveBundle {
        drive_id: meta.drive_id,
        duration: Timestamp::from_secs_f64(meta.duration_s),
        odometry,
        detections,
        frames,
        recorded_scores,
        ground_truth,
    };
    violations.extend(validate_bundle(&bundle));
    if violations.is_empty() {
        Ok(bundle)
    } else {
        Err(IngestError::Invalid(violations))
    }
}
