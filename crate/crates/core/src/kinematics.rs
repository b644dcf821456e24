//! Odometry integration and detection windows.
//!
//! Velocity is integrated with the trapezoidal rule into a cumulative
//! distance profile. Between samples the profile is linearly interpolated in
//! both directions, so `invert_profile(p, p.distance_at(t)) == t` holds up to
//! microsecond rounding.

use serde::{Deserialize, Serialize};

use crate::error::KinematicsError;
use crate::model::{Detection, Frame, OdometrySample, Timestamp};

/// Tolerance, in meters, for treating a raw-space start as the drive start.
const START_SLACK_M: f64 = 1e-9;

/// Cumulative distance over time. `s` is non-decreasing and zero at the
/// first sample.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceProfile {
    samples: Vec<(Timestamp, f64)>,
}

impl DistanceProfile {
    pub fn samples(&self) -> &[(Timestamp, f64)] {
        &self.samples
    }

    pub fn start(&self) -> Timestamp {
        self.samples[0].0
    }

    pub fn end(&self) -> Timestamp {
        self.samples[self.samples.len() - 1].0
    }

    /// Distance covered over the whole profile.
    pub fn total(&self) -> f64 {
        self.samples[self.samples.len() - 1].1
    }

    /// Distance at `t`, clamped to the profile's time range.
    pub fn distance_at(&self, t: Timestamp) -> f64 {
        self.distance_at_micros(t.0 as f64)
    }

    /// Distance at a fractional microsecond time, clamped to the range.
    pub fn distance_at_micros(&self, t_us: f64) -> f64 {
        let first = &self.samples[0];
        let last = &self.samples[self.samples.len() - 1];
        if t_us <= first.0 .0 as f64 {
            return first.1;
        }
        if t_us >= last.0 .0 as f64 {
            return last.1;
        }
        // First sample strictly after t_us; guaranteed in 1..len.
        let k = self.samples.partition_point(|(ts, _)| (ts.0 as f64) <= t_us);
        let (t0, s0) = self.samples[k - 1];
        let (t1, s1) = self.samples[k];
        let frac = (t_us - t0.0 as f64) / (t1.0 - t0.0) as f64;
        s0 + (s1 - s0) * frac
    }
}

/// Integrates odometry with the trapezoidal rule.
pub fn build_profile(odometry: &[OdometrySample]) -> Result<DistanceProfile, KinematicsError> {
    if odometry.len() < 2 {
        return Err(KinematicsError::TooFewSamples(odometry.len()));
    }
    let mut samples = Vec::with_capacity(odometry.len());
    let mut s = 0.0;
    for (i, o) in odometry.iter().enumerate() {
        if !o.v.is_finite() || o.v < 0.0 {
            return Err(KinematicsError::InvalidVelocity { index: i, v: o.v });
        }
        if i > 0 {
            let prev = &odometry[i - 1];
            if o.t <= prev.t {
                return Err(KinematicsError::NonMonotone { index: i });
            }
            let dt = (o.t.0 - prev.t.0) as f64 / 1e6;
            s += 0.5 * (prev.v + o.v) * dt;
        }
        samples.push((o.t, s));
    }
    Ok(DistanceProfile { samples })
}

/// Earliest time at which the profile reaches `s_target`.
///
/// Inside a segment the crossing is linearly interpolated; on a plateau
/// (standstill) the plateau's start is returned. The result is rounded up to
/// whole microseconds.
pub fn invert_profile(profile: &DistanceProfile, s_target: f64) -> Result<Timestamp, KinematicsError> {
    let max = profile.total();
    if !(0.0..=max).contains(&s_target) {
        return Err(KinematicsError::OutOfRange { target: s_target, max });
    }
    let samples = &profile.samples;
    let k = samples.partition_point(|&(_, s)| s < s_target);
    if k == 0 {
        return Ok(samples[0].0);
    }
    let (t0, s0) = samples[k - 1];
    let (t1, s1) = samples[k];
    let frac = (s_target - s0) / (s1 - s0);
    let t_us = t0.0 as f64 + frac * (t1.0 - t0.0) as f64;
    let rounded = (t_us - 1e-6).ceil().clamp(t0.0 as f64, t1.0 as f64);
    Ok(Timestamp(rounded as u64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowConfig {
    /// Longitudinal distance of the camera ahead of the odometry reference
    /// point, in meters.
    pub camera_offset_m: f64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig { camera_offset_m: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowFrame {
    pub frame_id: u64,
    pub t: Timestamp,
    /// Meters of street this frame stands for.
    pub length_weight: f64,
}

/// The time span during which the camera passed a raw space, and the frames
/// captured in it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionWindow {
    pub detection_id: u64,
    pub t_0: Timestamp,
    pub t_end: Timestamp,
    pub frames: Vec<WindowFrame>,
}

impl DetectionWindow {
    pub fn total_length_weight(&self) -> f64 {
        self.frames.iter().map(|f| f.length_weight).sum()
    }
}

/// Locates a detection's raw space in time and selects its frames.
///
/// The raw space ends `ps_xpos` meters behind the vehicle position at
/// `t_det` and starts `length` meters before that. Each frame's length
/// weight spans from the midpoint with its predecessor to the midpoint with
/// its successor; the outermost frames extend to the window edges, so the
/// weights sum to the distance covered inside the window. `frames` must be
/// in capture order.
pub fn compute_window(
    profile: &DistanceProfile,
    det: &Detection,
    frames: &[Frame],
    cfg: &WindowConfig,
) -> Result<DetectionWindow, KinematicsError> {
    if det.t_det < profile.start() || det.t_det > profile.end() {
        return Err(KinematicsError::DetectionOutsideDrive { id: det.id, t_det_us: det.t_det.0 });
    }
    let s_det = profile.distance_at(det.t_det);
    let s_end = s_det - det.ps_xpos - cfg.camera_offset_m;
    let mut s_start = s_end - det.length;
    if s_start < 0.0 {
        if s_start < -START_SLACK_M {
            return Err(KinematicsError::BeforeDriveStart { id: det.id, overshoot: -s_start });
        }
        s_start = 0.0;
    }
    let t_0 = invert_profile(profile, s_start)?;
    let t_end = invert_profile(profile, s_end.min(profile.total()))?;

    let lo = frames.partition_point(|f| f.t < t_0);
    let hi = frames.partition_point(|f| f.t <= t_end);
    let selected = &frames[lo..hi.max(lo)];
    if selected.is_empty() {
        return Err(KinematicsError::EmptyWindow { id: det.id, t0_us: t_0.0, t_end_us: t_end.0 });
    }

    let n = selected.len();
    let mut bounds = Vec::with_capacity(n + 1);
    bounds.push(t_0.0 as f64);
    for pair in selected.windows(2) {
        bounds.push(0.5 * (pair[0].t.0 as f64 + pair[1].t.0 as f64));
    }
    bounds.push(t_end.0 as f64);
    let distances: Vec<f64> = bounds.iter().map(|&b| profile.distance_at_micros(b)).collect();

    let frames = selected
        .iter()
        .zip(distances.windows(2))
        .map(|(f, d)| WindowFrame { frame_id: f.frame_id, t: f.t, length_weight: (d[1] - d[0]).max(0.0) })
        .collect();
    Ok(DetectionWindow { detection_id: det.id, t_0, t_end, frames })
}
