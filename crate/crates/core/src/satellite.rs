//! LEO satellites for the vehicle-satellite-infrastructure path.
//!
//! Orbits are circular two-body: the radius follows from the mean motion by
//! Kepler's third law and the satellite advances uniformly in argument of
//! latitude. Earth is a sphere of radius [`EARTH_RADIUS_M`] rotating at
//! [`EARTH_ROTATION_RAD_S`]; the ground frame coincides with the inertial
//! frame at scenario start.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MU_EARTH: f64 = 3.986004418e14;
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;
pub const EARTH_ROTATION_RAD_S: f64 = 7.292_115_9e-5;
const SECONDS_PER_DAY: f64 = 86_400.0;

#[derive(Debug, Error, PartialEq)]
pub enum TleError {
    #[error("line checksum mismatch (expected {expected}, found {found}): {line}")]
    Checksum { line: String, expected: u8, found: u8 },
    #[error("malformed TLE line ({reason}): {line}")]
    Format { line: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TleRecord {
    pub name: String,
    pub inclination_deg: f64,
    pub raan_deg: f64,
    pub arg_perigee_deg: f64,
    pub mean_anomaly_deg: f64,
    /// Revolutions per day.
    pub mean_motion: f64,
    /// Epoch as days since 2000-01-01T00:00 (fractional).
    pub epoch_days: f64,
    /// Epoch relative to scenario start, seconds. Zero until rebased.
    pub epoch_s: f64,
}

impl TleRecord {
    pub fn mean_motion_rad_s(&self) -> f64 {
        self.mean_motion * 2.0 * PI / SECONDS_PER_DAY
    }

    pub fn semi_major_axis_m(&self) -> f64 {
        let n = self.mean_motion_rad_s();
        (MU_EARTH / (n * n)).cbrt()
    }

    pub fn period_s(&self) -> f64 {
        SECONDS_PER_DAY / self.mean_motion
    }
}

/// Mean motion (rev/day) of a circular orbit at `altitude_m`.
pub fn mean_motion_for_altitude(altitude_m: f64) -> f64 {
    let a = EARTH_RADIUS_M + altitude_m;
    (MU_EARTH / a.powi(3)).sqrt() * SECONDS_PER_DAY / (2.0 * PI)
}

/// Modulo-10 TLE checksum over the first 68 columns: digits count at face
/// value, `-` counts as one, everything else zero.
pub fn tle_checksum(line: &str) -> u8 {
    line.bytes()
        .take(68)
        .map(|b| match b {
            b'0'..=b'9' => (b - b'0') as u32,
            b'-' => 1,
            _ => 0,
        })
        .sum::<u32>() as u8
        % 10
}

fn check_line(line: &str, number: char) -> Result<(), TleError> {
    let fmt = |reason: &str| TleError::Format { line: line.to_string(), reason: reason.to_string() };
    if !line.is_ascii() {
        return Err(fmt("non-ASCII"));
    }
    if line.len() != 69 {
        return Err(fmt(&format!("length {} instead of 69", line.len())));
    }
    if !line.starts_with(number) || line.as_bytes()[1] != b' ' {
        return Err(fmt(&format!("expected line number {number} in column 1")));
    }
    let found = line.as_bytes()[68];
    if !found.is_ascii_digit() {
        return Err(fmt("checksum column is not a digit"));
    }
    let expected = tle_checksum(line);
    let found = found - b'0';
    if expected != found {
        return Err(TleError::Checksum { line: line.to_string(), expected, found });
    }
    Ok(())
}

/// Fixed-column field, 1-based inclusive columns as in the TLE layout.
fn field(line: &str, from: usize, to: usize, what: &str) -> Result<f64, TleError> {
    let raw = line[from - 1..to].trim();
    raw.parse::<f64>()
        .map_err(|_| TleError::Format { line: line.to_string(), reason: format!("{what} not numeric: {raw:?}") })
}

fn days_since_2000(year: i32, day_of_year: f64) -> f64 {
    let mut days = 0.0;
    let is_leap = |y: i32| (y % 4 == 0 && y % 100 != 0) || y % 400 == 0;
    if year >= 2000 {
        for y in 2000..year {
            days += if is_leap(y) { 366.0 } else { 365.0 };
        }
    } else {
        for y in year..2000 {
            days -= if is_leap(y) { 366.0 } else { 365.0 };
        }
    }
    days + day_of_year - 1.0
}

pub fn parse_tle(line1: &str, line2: &str, name: &str) -> Result<TleRecord, TleError> {
    let line1 = line1.trim_end_matches(['\r', '\n']);
    let line2 = line2.trim_end_matches(['\r', '\n']);
    check_line(line1, '1')?;
    check_line(line2, '2')?;
    if line1[2..7] != line2[2..7] {
        return Err(TleError::Format { line: line2.to_string(), reason: "catalog number differs from line 1".into() });
    }
    let yy = field(line1, 19, 20, "epoch year")? as i32;
    let year = if yy < 57 { 2000 + yy } else { 1900 + yy };
    let day = field(line1, 21, 32, "epoch day")?;
    let rec = TleRecord {
        name: name.trim().to_string(),
        inclination_deg: field(line2, 9, 16, "inclination")?,
        raan_deg: field(line2, 18, 25, "RAAN")?,
        arg_perigee_deg: field(line2, 35, 42, "argument of perigee")?,
        mean_anomaly_deg: field(line2, 44, 51, "mean anomaly")?,
        mean_motion: field(line2, 53, 63, "mean motion")?,
        epoch_days: days_since_2000(year, day),
        epoch_s: 0.0,
    };
    if !(0.0..=180.0).contains(&rec.inclination_deg) {
        return Err(TleError::Format { line: line2.to_string(), reason: "inclination outside [0, 180]".into() });
    }
    if rec.mean_motion <= 0.0 {
        return Err(TleError::Format { line: line2.to_string(), reason: "mean motion must be positive".into() });
    }
    Ok(rec)
}

/// Parses a 3-line TLE file (name line followed by lines 1 and 2). Epochs are
/// rebased so the newest element set sits at scenario time zero.
pub fn parse_tle_file(text: &str) -> Result<Vec<TleRecord>, TleError> {
    let lines: Vec<&str> = text.lines().map(|l| l.trim_end()).filter(|l| !l.is_empty()).collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        let (name, l1, l2) = if lines[i].starts_with("1 ") && i + 1 < lines.len() && lines[i + 1].starts_with("2 ") {
            (format!("SAT-{}", lines[i][2..7].trim()), lines[i], lines[i + 1])
        } else if i + 2 < lines.len() {
            (lines[i].trim().to_string(), lines[i + 1], lines[i + 2])
        } else {
            return Err(TleError::Format { line: lines[i].to_string(), reason: "truncated element set".into() });
        };
        out.push(parse_tle(l1, l2, &name)?);
        i += if l1 == lines[i] { 2 } else { 3 };
    }
    rebase_epochs(&mut out);
    Ok(out)
}

pub fn rebase_epochs(records: &mut [TleRecord]) {
    let start = records.iter().map(|r| r.epoch_days).fold(f64::NEG_INFINITY, f64::max);
    for r in records.iter_mut() {
        r.epoch_s = (r.epoch_days - start) * SECONDS_PER_DAY;
    }
}

pub type Vec3 = [f64; 3];

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub fn distance(a: Vec3, b: Vec3) -> f64 {
    norm(sub(a, b))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SatState {
    pub sat_id: usize,
    /// Earth-fixed position, meters.
    pub position: Vec3,
    /// Inertial position, meters.
    pub inertial: Vec3,
    pub altitude: f64,
}

pub fn propagate_circular(rec: &TleRecord, sat_id: usize, t: f64) -> SatState {
    let r = rec.semi_major_axis_m();
    let n = rec.mean_motion_rad_s();
    let u = (rec.arg_perigee_deg + rec.mean_anomaly_deg).to_radians() + n * (t - rec.epoch_s);
    let (su, cu) = u.sin_cos();
    let (si, ci) = rec.inclination_deg.to_radians().sin_cos();
    let (so, co) = rec.raan_deg.to_radians().sin_cos();
    let inertial = [r * (co * cu - so * su * ci), r * (so * cu + co * su * ci), r * su * si];
    let (sg, cg) = (EARTH_ROTATION_RAD_S * t).sin_cos();
    let position = [cg * inertial[0] + sg * inertial[1], -sg * inertial[0] + cg * inertial[1], inertial[2]];
    SatState { sat_id, position, inertial, altitude: r - EARTH_RADIUS_M }
}

/// Equirectangular mapping between scenario meters and the Earth-fixed
/// frame, centred on the anchor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundFrame {
    pub anchor_lat_deg: f64,
    pub anchor_lon_deg: f64,
    pub center_x: f64,
    pub center_y: f64,
}

impl GroundFrame {
    pub fn lat_lon(&self, x: f64, y: f64) -> (f64, f64) {
        let lat0 = self.anchor_lat_deg.to_radians();
        let lat = lat0 + (y - self.center_y) / EARTH_RADIUS_M;
        let lon = self.anchor_lon_deg.to_radians() + (x - self.center_x) / (EARTH_RADIUS_M * lat0.cos());
        (lat, lon)
    }

    pub fn to_ecef(&self, x: f64, y: f64, height: f64) -> Vec3 {
        let (lat, lon) = self.lat_lon(x, y);
        let r = EARTH_RADIUS_M + height;
        [r * lat.cos() * lon.cos(), r * lat.cos() * lon.sin(), r * lat.sin()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Visibility {
    pub elevation_deg: f64,
    pub slant_range: f64,
    pub visible: bool,
}

/// Geometric elevation and slant range from an Earth-fixed ground point.
pub fn visibility(sat: &SatState, ground: Vec3, min_elevation_deg: f64) -> Visibility {
    let los = sub(sat.position, ground);
    let range = norm(los);
    let up = norm(ground);
    let sin_el = dot(los, ground) / (range * up);
    let elevation_deg = sin_el.clamp(-1.0, 1.0).asin().to_degrees();
    Visibility { elevation_deg, slant_range: range, visible: elevation_deg >= min_elevation_deg }
}

/// Walker-delta shell: `planes × per_plane` satellites, RAANs evenly spread
/// over 360°, in-plane spacing `360/per_plane` and inter-plane phase offset
/// `phasing × 360/(planes·per_plane)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConstellationSpec {
    pub altitude_km: f64,
    pub inclination_deg: f64,
    pub planes: u32,
    pub per_plane: u32,
    pub phasing: u32,
}

impl Default for ConstellationSpec {
    fn default() -> Self {
        ConstellationSpec { altitude_km: 550.0, inclination_deg: 53.0, planes: 72, per_plane: 22, phasing: 1 }
    }
}

impl ConstellationSpec {
    pub fn records(&self) -> Vec<TleRecord> {
        let n = mean_motion_for_altitude(self.altitude_km * 1e3);
        let total = (self.planes * self.per_plane) as f64;
        let mut out = Vec::with_capacity(total as usize);
        for p in 0..self.planes {
            for s in 0..self.per_plane {
                out.push(TleRecord {
                    name: format!("P{p:02}S{s:02}"),
                    inclination_deg: self.inclination_deg,
                    raan_deg: 360.0 * p as f64 / self.planes as f64,
                    arg_perigee_deg: 0.0,
                    mean_anomaly_deg: 360.0 * s as f64 / self.per_plane as f64
                        + 360.0 * (self.phasing * p) as f64 / total,
                    mean_motion: n,
                    epoch_days: 0.0,
                    epoch_s: 0.0,
                });
            }
        }
        out
    }
}

/// Satellite positions frozen at one instant, with the subset that can be
/// above the mask anywhere near the scenario anchor.
#[derive(Debug, Clone)]
pub struct SkySnapshot {
    pub time: f64,
    pub candidates: Vec<SatState>,
}

impl SkySnapshot {
    /// `margin_deg` widens the mask for the candidate pre-filter so that points
    /// a few kilometres from the anchor are still handled exactly.
    pub fn capture(records: &[TleRecord], t: f64, anchor: Vec3, min_elevation_deg: f64, margin_deg: f64) -> Self {
        let candidates = records
            .iter()
            .enumerate()
            .map(|(i, r)| propagate_circular(r, i, t))
            .filter(|s| visibility(s, anchor, min_elevation_deg - margin_deg).visible)
            .collect();
        SkySnapshot { time: t, candidates }
    }

    /// The visible satellite with the highest elevation from `ground`.
    pub fn best_visible(&self, ground: Vec3, min_elevation_deg: f64) -> Option<(&SatState, Visibility)> {
        self.candidates
            .iter()
            .map(|s| (s, visibility(s, ground, min_elevation_deg)))
            .filter(|(_, v)| v.visible)
            .max_by(|a, b| a.1.elevation_deg.total_cmp(&b.1.elevation_deg).then(b.0.sat_id.cmp(&a.0.sat_id)))
    }
}

/// Slant range at a given elevation over a spherical Earth.
pub fn slant_range_at_elevation(altitude_m: f64, elevation_deg: f64) -> f64 {
    let r = EARTH_RADIUS_M;
    let e = elevation_deg.to_radians();
    ((r + altitude_m).powi(2) - (r * e.cos()).powi(2)).sqrt() - r * e.sin()
}
