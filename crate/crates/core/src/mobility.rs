//! Transportation layer: vehicle traces, interpolation, synthetic traffic and
//! RSU placement.
//!
//! Coordinates are local planar meters. Traces come from SUMO floating-car
//! data (`<timestep><vehicle .../></timestep>`), from a flat CSV, or from the
//! Manhattan-grid generator.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MobilityError {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: u64, msg: String },
    #[error("vehicle {vehicle}: time {time} does not advance past {previous}")]
    NonMonotoneTime { vehicle: String, previous: f64, time: f64 },
    #[error("vehicle {vehicle} has two states at time {time}")]
    DuplicateState { vehicle: String, time: f64 },
    #[error("query time {t} outside [0, {duration}]")]
    OutOfRange { t: f64, duration: f64 },
    #[error("zones {a} and {b} overlap")]
    ZoneOverlap { a: usize, b: usize },
    #[error("io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub vehicle_id: String,
    pub time: f64,
    pub x: f64,
    pub y: f64,
    pub speed: f64,
    /// Degrees in [0, 360), clockwise from north (SUMO convention).
    pub heading: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleTrack {
    pub id: String,
    pub states: Vec<VehicleState>,
}

impl VehicleTrack {
    pub fn first_time(&self) -> f64 {
        self.states[0].time
    }

    pub fn last_time(&self) -> f64 {
        self.states[self.states.len() - 1].time
    }

    /// Linear interpolation between the bracketing samples; `None` outside
    /// the vehicle's lifespan.
    pub fn state_at(&self, t: f64) -> Option<VehicleState> {
        if self.states.is_empty() || t < self.first_time() || t > self.last_time() {
            return None;
        }
        let idx = self.states.partition_point(|s| s.time <= t);
        // idx >= 1 because states[0].time <= t
        let a = &self.states[idx - 1];
        if a.time == t || idx == self.states.len() {
            return Some(a.clone());
        }
        let b = &self.states[idx];
        let w = (t - a.time) / (b.time - a.time);
        Some(VehicleState {
            vehicle_id: a.vehicle_id.clone(),
            time: t,
            x: a.x + w * (b.x - a.x),
            y: a.y + w * (b.y - a.y),
            speed: a.speed + w * (b.speed - a.speed),
            heading: a.heading,
        })
    }

    /// Position only; avoids cloning the id on the simulation hot path.
    pub fn position_at(&self, t: f64) -> Option<(f64, f64)> {
        if self.states.is_empty() || t < self.first_time() || t > self.last_time() {
            return None;
        }
        let idx = self.states.partition_point(|s| s.time <= t);
        let a = &self.states[idx - 1];
        if a.time == t || idx == self.states.len() {
            return Some((a.x, a.y));
        }
        let b = &self.states[idx];
        let w = (t - a.time) / (b.time - a.time);
        Some((a.x + w * (b.x - a.x), a.y + w * (b.y - a.y)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl BoundingBox {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.min_x && x <= self.max_x && y >= self.min_y && y <= self.max_y
    }

    fn empty() -> Self {
        BoundingBox { min_x: 0.0, min_y: 0.0, max_x: 0.0, max_y: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MobilityTrace {
    /// Sorted by vehicle id.
    pub vehicles: Vec<VehicleTrack>,
    pub bbox: BoundingBox,
    pub duration: f64,
}

impl MobilityTrace {
    /// Builds a trace from unordered states, sorting per vehicle and rejecting
    /// duplicate `(vehicle, time)` pairs.
    pub fn from_states(states: Vec<VehicleState>) -> Result<Self, MobilityError> {
        let mut by_vehicle: BTreeMap<String, Vec<VehicleState>> = BTreeMap::new();
        for s in states {
            by_vehicle.entry(s.vehicle_id.clone()).or_default().push(s);
        }
        let mut vehicles = Vec::with_capacity(by_vehicle.len());
        for (id, mut st) in by_vehicle {
            st.sort_by(|a, b| a.time.total_cmp(&b.time));
            for w in st.windows(2) {
                if w[0].time == w[1].time {
                    return Err(MobilityError::DuplicateState { vehicle: id, time: w[0].time });
                }
            }
            vehicles.push(VehicleTrack { id, states: st });
        }
        Ok(Self::from_tracks(vehicles))
    }

    fn from_tracks(vehicles: Vec<VehicleTrack>) -> Self {
        let mut bbox: Option<BoundingBox> = None;
        let mut duration: f64 = 0.0;
        for s in vehicles.iter().flat_map(|v| v.states.iter()) {
            duration = duration.max(s.time);
            let b = bbox.get_or_insert(BoundingBox { min_x: s.x, min_y: s.y, max_x: s.x, max_y: s.y });
            b.min_x = b.min_x.min(s.x);
            b.min_y = b.min_y.min(s.y);
            b.max_x = b.max_x.max(s.x);
            b.max_y = b.max_y.max(s.y);
        }
        MobilityTrace { vehicles, bbox: bbox.unwrap_or_else(BoundingBox::empty), duration }
    }

    pub fn vehicle_count(&self) -> usize {
        self.vehicles.len()
    }

    pub fn state_count(&self) -> usize {
        self.vehicles.iter().map(|v| v.states.len()).sum()
    }
}

/// Parses the SUMO FCD subset: `<timestep time=..>` elements holding
/// `<vehicle id x y speed angle/>` children.
pub fn parse_fcd_trace<R: Read>(mut input: R) -> Result<MobilityTrace, MobilityError> {
    let mut text = String::new();
    input.read_to_string(&mut text).map_err(|e| MobilityError::Io(e.to_string()))?;
    let doc = roxmltree::Document::parse(&text)
        .map_err(|e| MobilityError::Parse { line: e.pos().row as u64, msg: e.to_string() })?;

    let line_of = |node: roxmltree::Node| doc.text_pos_at(node.range().start).row as u64;
    let num = |node: roxmltree::Node, attr: &str| -> Result<f64, MobilityError> {
        let raw = node.attribute(attr).ok_or_else(|| MobilityError::Parse {
            line: line_of(node),
            msg: format!("<{}> missing attribute `{attr}`", node.tag_name().name()),
        })?;
        raw.trim().parse::<f64>().map_err(|_| MobilityError::Parse {
            line: line_of(node),
            msg: format!("attribute `{attr}` is not a number: {raw:?}"),
        })
    };

    let mut tracks: BTreeMap<String, Vec<VehicleState>> = BTreeMap::new();
    for step in doc.descendants().filter(|n| n.has_tag_name("timestep")) {
        let time = num(step, "time")?;
        for v in step.children().filter(|n| n.has_tag_name("vehicle")) {
            let id = v
                .attribute("id")
                .ok_or_else(|| MobilityError::Parse { line: line_of(v), msg: "<vehicle> missing attribute `id`".into() })?
                .to_string();
            let state = VehicleState {
                vehicle_id: id.clone(),
                time,
                x: num(v, "x")?,
                y: num(v, "y")?,
                speed: num(v, "speed")?,
                heading: num(v, "angle")?.rem_euclid(360.0),
            };
            let list = tracks.entry(id.clone()).or_default();
            if let Some(prev) = list.last() {
                if time <= prev.time {
                    return Err(MobilityError::NonMonotoneTime { vehicle: id, previous: prev.time, time });
                }
            }
            list.push(state);
        }
    }
    let vehicles = tracks.into_iter().map(|(id, states)| VehicleTrack { id, states }).collect();
    Ok(MobilityTrace::from_tracks(vehicles))
}

fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

/// Writes the FCD subset read by [`parse_fcd_trace`], one `<timestep>` per
/// distinct time.
pub fn write_fcd_trace<W: Write>(trace: &MobilityTrace, mut out: W) -> Result<(), MobilityError> {
    let mut steps: BTreeMap<u64, (f64, Vec<&VehicleState>)> = BTreeMap::new();
    for s in trace.vehicles.iter().flat_map(|v| v.states.iter()) {
        // total order on non-negative times via the bit pattern
        steps.entry(s.time.to_bits()).or_insert_with(|| (s.time, Vec::new())).1.push(s);
    }
    let io = |e: std::io::Error| MobilityError::Io(e.to_string());
    writeln!(out, "<fcd-export>").map_err(io)?;
    for (time, states) in steps.values() {
        writeln!(out, "    <timestep time=\"{time}\">").map_err(io)?;
        for s in states {
            writeln!(
                out,
                "        <vehicle id=\"{}\" x=\"{}\" y=\"{}\" angle=\"{}\" speed=\"{}\"/>",
                xml_escape(&s.vehicle_id),
                s.x,
                s.y,
                s.heading,
                s.speed
            )
            .map_err(io)?;
        }
        writeln!(out, "    </timestep>").map_err(io)?;
    }
    writeln!(out, "</fcd-export>").map_err(io)
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    time: f64,
    vehicle_id: String,
    x: f64,
    y: f64,
    speed: f64,
    heading: f64,
}

pub const CSV_HEADER: [&str; 6] = ["time", "vehicle_id", "x", "y", "speed", "heading"];

/// Parses `time,vehicle_id,x,y,speed,heading`. Rows may come in any order.
pub fn parse_csv_trace<R: Read>(input: R) -> Result<MobilityTrace, MobilityError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header = rdr.headers().map_err(|e| csv_err(&e))?.clone();
    if header.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(MobilityError::Parse { line: 1, msg: format!("expected header {}", CSV_HEADER.join(",")) });
    }
    let mut states = Vec::new();
    for row in rdr.deserialize::<CsvRow>() {
        let row = row.map_err(|e| csv_err(&e))?;
        states.push(VehicleState {
            vehicle_id: row.vehicle_id,
            time: row.time,
            x: row.x,
            y: row.y,
            speed: row.speed,
            heading: row.heading,
        });
    }
    MobilityTrace::from_states(states)
}

fn csv_err(e: &csv::Error) -> MobilityError {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    MobilityError::Parse { line, msg: e.to_string() }
}

/// Writes the CSV trace format, rows ordered by time then vehicle id.
pub fn write_csv_trace<W: Write>(trace: &MobilityTrace, out: W) -> Result<(), MobilityError> {
    let mut rows: Vec<&VehicleState> = trace.vehicles.iter().flat_map(|v| v.states.iter()).collect();
    rows.sort_by(|a, b| a.time.total_cmp(&b.time).then_with(|| a.vehicle_id.cmp(&b.vehicle_id)));
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_HEADER).map_err(|e| MobilityError::Io(e.to_string()))?;
    for s in rows {
        w.serialize(CsvRow {
            time: s.time,
            vehicle_id: s.vehicle_id.clone(),
            x: s.x,
            y: s.y,
            speed: s.speed,
            heading: s.heading,
        })
        .map_err(|e| MobilityError::Io(e.to_string()))?;
    }
    w.flush().map_err(|e| MobilityError::Io(e.to_string()))
}

/// Every vehicle alive at `t`, interpolated.
pub fn positions_at(trace: &MobilityTrace, t: f64) -> Result<Vec<VehicleState>, MobilityError> {
    if !(0.0..=trace.duration).contains(&t) {
        return Err(MobilityError::OutOfRange { t, duration: trace.duration });
    }
    Ok(trace.vehicles.iter().filter_map(|v| v.state_at(t)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ZoneClass {
    Urban,
    Suburban,
    Rural,
}

impl fmt::Display for ZoneClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ZoneClass::Urban => "urban",
            ZoneClass::Suburban => "suburban",
            ZoneClass::Rural => "rural",
        };
        f.write_str(s)
    }
}

/// Axis-aligned rectangle, lower-left corner at `(x_m, y_m)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Zone {
    pub class: ZoneClass,
    pub x_m: f64,
    pub y_m: f64,
    pub width_m: f64,
    pub height_m: f64,
}

impl Zone {
    fn overlaps(&self, other: &Zone) -> bool {
        let ox = (self.x_m + self.width_m).min(other.x_m + other.width_m) - self.x_m.max(other.x_m);
        let oy = (self.y_m + self.height_m).min(other.y_m + other.height_m) - self.y_m.max(other.y_m);
        ox > 0.0 && oy > 0.0
    }

    pub fn area_km2(&self) -> f64 {
        self.width_m * self.height_m * 1e-6
    }
}

/// Per-class parameters: RSU spacing, road-grid block size, traffic density
/// weight (vehicles per km of road) and a speed range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassProfile {
    pub rsu_spacing_m: f64,
    pub block_m: f64,
    pub density_per_km: f64,
    pub speed_min_mps: f64,
    pub speed_max_mps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassProfiles {
    pub urban: ClassProfile,
    pub suburban: ClassProfile,
    pub rural: ClassProfile,
}

impl ClassProfiles {
    pub fn get(&self, class: ZoneClass) -> &ClassProfile {
        match class {
            ZoneClass::Urban => &self.urban,
            ZoneClass::Suburban => &self.suburban,
            ZoneClass::Rural => &self.rural,
        }
    }
}

impl Default for ClassProfiles {
    fn default() -> Self {
        ClassProfiles {
            urban: ClassProfile {
                rsu_spacing_m: 450.0,
                block_m: 150.0,
                density_per_km: 2000.0,
                speed_min_mps: 8.0,
                speed_max_mps: 14.0,
            },
            suburban: ClassProfile {
                rsu_spacing_m: 750.0,
                block_m: 300.0,
                density_per_km: 1000.0,
                speed_min_mps: 11.0,
                speed_max_mps: 17.0,
            },
            rural: ClassProfile {
                rsu_spacing_m: 1000.0,
                block_m: 600.0,
                density_per_km: 400.0,
                speed_min_mps: 14.0,
                speed_max_mps: 22.0,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegionSpec {
    pub width_m: f64,
    pub height_m: f64,
    /// Drivable area used for road-density figures.
    pub road_area_km2: f64,
    pub anchor_lat_deg: f64,
    pub anchor_lon_deg: f64,
    pub rsu_coverage_m: f64,
    pub zones: Vec<Zone>,
    pub classes: ClassProfiles,
}

impl Default for RegionSpec {
    fn default() -> Self {
        RegionSpec {
            width_m: 8700.0,
            height_m: 11700.0,
            road_area_km2: 11.81,
            anchor_lat_deg: 23.0,
            anchor_lon_deg: 120.4,
            rsu_coverage_m: 500.0,
            zones: vec![
                Zone { class: ZoneClass::Urban, x_m: 3600.0, y_m: 5000.0, width_m: 1350.0, height_m: 1350.0 },
                Zone { class: ZoneClass::Suburban, x_m: 1000.0, y_m: 1000.0, width_m: 3000.0, height_m: 2250.0 },
                Zone { class: ZoneClass::Rural, x_m: 2000.0, y_m: 8000.0, width_m: 5000.0, height_m: 2000.0 },
            ],
            classes: ClassProfiles::default(),
        }
    }
}

impl RegionSpec {
    pub fn map_area_km2(&self) -> f64 {
        self.width_m * self.height_m * 1e-6
    }

    /// Vehicles per km² of the whole map.
    pub fn map_density(&self, n_vehicles: usize) -> f64 {
        n_vehicles as f64 / self.map_area_km2()
    }

    /// Vehicles per km² of drivable road area.
    pub fn road_density(&self, n_vehicles: usize) -> f64 {
        n_vehicles as f64 / self.road_area_km2
    }

    pub fn bbox(&self) -> BoundingBox {
        BoundingBox { min_x: 0.0, min_y: 0.0, max_x: self.width_m, max_y: self.height_m }
    }

    pub fn check_zones(&self) -> Result<(), MobilityError> {
        for (i, a) in self.zones.iter().enumerate() {
            for (j, b) in self.zones.iter().enumerate().skip(i + 1) {
                if a.overlaps(b) {
                    return Err(MobilityError::ZoneOverlap { a: i, b: j });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RsuId(pub u32);

impl fmt::Display for RsuId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "rsu{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RsuRole {
    Miner,
    Regular,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RsuNode {
    pub rsu_id: RsuId,
    pub x: f64,
    pub y: f64,
    pub coverage_radius: f64,
    pub role: RsuRole,
    pub zone: usize,
}

/// Grid coordinates along one axis: `floor(len/spacing) + 1` points centred
/// in the span (a single point at the centre when the span is shorter than
/// the spacing).
fn grid_axis(origin: f64, len: f64, spacing: f64) -> Vec<f64> {
    let n = (len / spacing + 1e-9).floor() as usize + 1;
    let offset = (len - (n - 1) as f64 * spacing) / 2.0;
    (0..n).map(|i| origin + offset + i as f64 * spacing).collect()
}

/// Places RSUs on per-zone grids. Ordering is zone by zone, row-major within
/// a zone; the first `n_miners` in that order are miners.
pub fn place_rsus(region: &RegionSpec, n_miners: usize) -> Result<Vec<RsuNode>, MobilityError> {
    region.check_zones()?;
    let mut out = Vec::new();
    for (zi, zone) in region.zones.iter().enumerate() {
        let spacing = region.classes.get(zone.class).rsu_spacing_m;
        let xs = grid_axis(zone.x_m, zone.width_m, spacing);
        let ys = grid_axis(zone.y_m, zone.height_m, spacing);
        for &y in &ys {
            for &x in &xs {
                let id = out.len() as u32;
                out.push(RsuNode {
                    rsu_id: RsuId(id),
                    x,
                    y,
                    coverage_radius: region.rsu_coverage_m,
                    role: if (id as usize) < n_miners { RsuRole::Miner } else { RsuRole::Regular },
                    zone: zi,
                });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dir {
    East,
    North,
    West,
    South,
}

impl Dir {
    fn unit(self) -> (f64, f64) {
        match self {
            Dir::East => (1.0, 0.0),
            Dir::North => (0.0, 1.0),
            Dir::West => (-1.0, 0.0),
            Dir::South => (0.0, -1.0),
        }
    }

    fn left(self) -> Dir {
        match self {
            Dir::East => Dir::North,
            Dir::North => Dir::West,
            Dir::West => Dir::South,
            Dir::South => Dir::East,
        }
    }

    fn right(self) -> Dir {
        self.left().left().left()
    }

    fn back(self) -> Dir {
        self.left().left()
    }

    fn heading(self) -> f64 {
        match self {
            Dir::North => 0.0,
            Dir::East => 90.0,
            Dir::South => 180.0,
            Dir::West => 270.0,
        }
    }
}

struct RoadGrid {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl RoadGrid {
    fn for_zone(zone: &Zone, block: f64) -> RoadGrid {
        let line = |origin: f64, len: f64| {
            let n = (len / block + 1e-9).floor() as usize;
            (0..=n).map(|i| origin + i as f64 * block).collect::<Vec<_>>()
        };
        RoadGrid { xs: line(zone.x_m, zone.width_m), ys: line(zone.y_m, zone.height_m) }
    }

    fn length_km(&self) -> f64 {
        let w = self.xs.last().unwrap() - self.xs[0];
        let h = self.ys.last().unwrap() - self.ys[0];
        (self.xs.len() as f64 * h + self.ys.len() as f64 * w) * 1e-3
    }

    /// Whether leaving intersection (ix, iy) in `dir` stays on the grid.
    fn can_go(&self, ix: usize, iy: usize, dir: Dir) -> bool {
        match dir {
            Dir::East => ix + 1 < self.xs.len(),
            Dir::West => ix > 0,
            Dir::North => iy + 1 < self.ys.len(),
            Dir::South => iy > 0,
        }
    }

    fn step(ix: usize, iy: usize, dir: Dir) -> (usize, usize) {
        match dir {
            Dir::East => (ix + 1, iy),
            Dir::West => (ix - 1, iy),
            Dir::North => (ix, iy + 1),
            Dir::South => (ix, iy - 1),
        }
    }
}

/// Largest-remainder split of `n` proportionally to `weights`.
fn apportion(n: usize, weights: &[f64]) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return vec![0; weights.len()];
    }
    let quotas: Vec<f64> = weights.iter().map(|w| n as f64 * w / total).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut rest: Vec<(usize, f64)> = quotas.iter().enumerate().map(|(i, q)| (i, q - q.floor())).collect();
    rest.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let assigned: usize = counts.iter().sum();
    for &(i, _) in rest.iter().take(n - assigned) {
        counts[i] += 1;
    }
    counts
}

const SAMPLE_STEP_S: f64 = 1.0;

/// Manhattan-grid traffic. Vehicles are split across zones in proportion to
/// `density_per_km × road length`, start at random points on their zone's
/// road grid, drive at a constant per-vehicle speed and pick straight/left/
/// right (0.5/0.25/0.25) at every intersection, reversing at dead ends.
/// States are recorded every second and at every turn.
pub fn generate_synthetic<R: Rng + ?Sized>(
    region: &RegionSpec,
    n_vehicles: usize,
    duration: f64,
    rng: &mut R,
) -> MobilityTrace {
    let grids: Vec<RoadGrid> = region
        .zones
        .iter()
        .map(|z| RoadGrid::for_zone(z, region.classes.get(z.class).block_m))
        .collect();
    let weights: Vec<f64> = region
        .zones
        .iter()
        .zip(&grids)
        .map(|(z, g)| region.classes.get(z.class).density_per_km * g.length_km())
        .collect();
    let counts = apportion(n_vehicles, &weights);

    let width = n_vehicles.max(1).to_string().len();
    let mut vehicles = Vec::with_capacity(n_vehicles);
    let mut next_id = 0usize;
    for (zi, zone) in region.zones.iter().enumerate() {
        let grid = &grids[zi];
        let profile = region.classes.get(zone.class);
        for _ in 0..counts[zi] {
            let id = format!("veh{:0width$}", next_id, width = width);
            next_id += 1;
            vehicles.push(drive_one(id, grid, profile, duration, rng));
        }
    }
    vehicles.sort_by(|a, b| a.id.cmp(&b.id));
    let mut trace = MobilityTrace::from_tracks(vehicles);
    trace.bbox = region.bbox();
    trace.duration = duration;
    trace
}

fn drive_one<R: Rng + ?Sized>(id: String, grid: &RoadGrid, p: &ClassProfile, duration: f64, rng: &mut R) -> VehicleTrack {
    let speed = if p.speed_max_mps > p.speed_min_mps {
        rng.random_range(p.speed_min_mps..p.speed_max_mps)
    } else {
        p.speed_min_mps
    };
    // Start on a random road segment heading towards intersection (ix, iy).
    let horizontal = grid.xs.len() > 1 && (grid.ys.len() == 1 || rng.random_bool(0.5));
    let (mut ix, mut iy, mut dir);
    if horizontal {
        iy = rng.random_range(0..grid.ys.len());
        let seg = rng.random_range(0..grid.xs.len() - 1);
        dir = if rng.random_bool(0.5) { Dir::East } else { Dir::West };
        ix = if dir == Dir::East { seg + 1 } else { seg };
    } else if grid.ys.len() > 1 {
        ix = rng.random_range(0..grid.xs.len());
        let seg = rng.random_range(0..grid.ys.len() - 1);
        dir = if rng.random_bool(0.5) { Dir::North } else { Dir::South };
        iy = if dir == Dir::North { seg + 1 } else { seg };
    } else {
        // single-point grid: parked vehicle
        ix = 0;
        iy = 0;
        dir = Dir::East;
    }
    let frac: f64 = rng.random();
    let (ux, uy) = dir.unit();
    let (tx, ty) = (grid.xs[ix], grid.ys[iy]);
    let seg_len = if horizontal { grid.xs.get(1).map(|x| x - grid.xs[0]).unwrap_or(0.0) } else { grid.ys.get(1).map(|y| y - grid.ys[0]).unwrap_or(0.0) };
    let mut x = tx - ux * seg_len * frac;
    let mut y = ty - uy * seg_len * frac;
    let moving = seg_len > 0.0 && speed > 0.0;

    let mut states = Vec::new();
    let mut t = 0.0;
    let mut next_sample = 0.0;
    let push = |states: &mut Vec<VehicleState>, t: f64, x: f64, y: f64, dir: Dir| {
        if states.last().map(|s: &VehicleState| t > s.time).unwrap_or(true) {
            states.push(VehicleState {
                vehicle_id: id.clone(),
                time: t,
                x,
                y,
                speed: if moving { speed } else { 0.0 },
                heading: dir.heading(),
            });
        }
    };
    if !moving {
        let mut s = 0.0;
        while s <= duration + 1e-9 {
            push(&mut states, s.min(duration), x, y, dir);
            s += SAMPLE_STEP_S;
        }
        return VehicleTrack { id: id.clone(), states };
    }
    while t <= duration {
        let (tx, ty) = (grid.xs[ix], grid.ys[iy]);
        let dist = ((tx - x).powi(2) + (ty - y).powi(2)).sqrt();
        let t_arrive = t + dist / speed;
        // samples strictly before reaching the intersection
        while next_sample < t_arrive && next_sample <= duration {
            let w = (next_sample - t) * speed;
            let (ux, uy) = dir.unit();
            push(&mut states, next_sample, x + ux * w, y + uy * w, dir);
            next_sample += SAMPLE_STEP_S;
        }
        if t_arrive > duration {
            break;
        }
        t = t_arrive;
        x = tx;
        y = ty;
        let options: Vec<Dir> = [dir, dir.left(), dir.right()]
            .into_iter()
            .filter(|d| grid.can_go(ix, iy, *d))
            .collect();
        let chosen = if options.is_empty() {
            dir.back()
        } else if options.len() == 3 {
            let u: f64 = rng.random();
            if u < 0.5 {
                options[0]
            } else if u < 0.75 {
                options[1]
            } else {
                options[2]
            }
        } else {
            options[rng.random_range(0..options.len())]
        };
        dir = chosen;
        push(&mut states, t, x, y, dir);
        let (nx, ny) = RoadGrid::step(ix, iy, dir);
        ix = nx;
        iy = ny;
    }
    // close the track exactly at `duration`; (x, y) is the last intersection
    // passed (or the start point) at time t <= duration
    let (ux, uy) = dir.unit();
    let dt = duration - t;
    push(&mut states, duration, x + ux * speed * dt, y + uy * speed * dt, dir);
    VehicleTrack { id, states }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{RngStreams, StreamId};

    const ONE: &str = r#"<fcd-export>
  <timestep time="0.00">
    <vehicle id="v0" x="10" y="20" angle="90" type="car" speed="5" pos="1" lane="a" slope="0"/>
  </timestep>
</fcd-export>"#;

    #[test]
    fn fcd_single_state() {
        let tr = parse_fcd_trace(ONE.as_bytes()).unwrap();
        assert_eq!(tr.vehicle_count(), 1);
        assert_eq!(tr.state_count(), 1);
        let s = &tr.vehicles[0].states[0];
        assert_eq!((s.x, s.y, s.speed, s.heading), (10.0, 20.0, 5.0, 90.0));
    }

    #[test]
    fn fcd_two_steps_ordered() {
        let xml = r#"<fcd-export>
<timestep time="0"><vehicle id="a" x="0" y="0" speed="1" angle="0"/></timestep>
<timestep time="0.5"><vehicle id="a" x="0" y="0.5" speed="1" angle="0"/></timestep>
</fcd-export>"#;
        let tr = parse_fcd_trace(xml.as_bytes()).unwrap();
        let times: Vec<f64> = tr.vehicles[0].states.iter().map(|s| s.time).collect();
        assert_eq!(times, vec![0.0, 0.5]);
    }

    #[test]
    fn fcd_time_regression_rejected() {
        let xml = r#"<fcd-export>
<timestep time="1.0"><vehicle id="a" x="0" y="0" speed="1" angle="0"/></timestep>
<timestep time="0.5"><vehicle id="a" x="0" y="0" speed="1" angle="0"/></timestep>
</fcd-export>"#;
        let err = parse_fcd_trace(xml.as_bytes()).unwrap_err();
        assert!(matches!(err, MobilityError::NonMonotoneTime { .. }));
    }

    #[test]
    fn fcd_missing_attribute_reports_line() {
        let xml = "<fcd-export>\n<timestep time=\"0\">\n<vehicle id=\"a\" x=\"0\" speed=\"1\" angle=\"0\"/>\n</timestep>\n</fcd-export>";
        match parse_fcd_trace(xml.as_bytes()).unwrap_err() {
            MobilityError::Parse { line, msg } => {
                assert_eq!(line, 3);
                assert!(msg.contains("`y`"));
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn fcd_malformed_xml() {
        assert!(matches!(parse_fcd_trace("<fcd-export><timestep>".as_bytes()), Err(MobilityError::Parse { .. })));
    }

    #[test]
    fn csv_two_vehicles() {
        let csv = "time,vehicle_id,x,y,speed,heading\n0,a,0,0,1,0\n0,b,5,5,2,90\n1,a,0,1,1,0\n";
        let tr = parse_csv_trace(csv.as_bytes()).unwrap();
        assert_eq!(tr.vehicle_count(), 2);
        assert_eq!(tr.state_count(), 3);
    }

    #[test]
    fn csv_header_only_is_empty() {
        let tr = parse_csv_trace("time,vehicle_id,x,y,speed,heading\n".as_bytes()).unwrap();
        assert_eq!(tr.vehicle_count(), 0);
        assert_eq!(tr.duration, 0.0);
    }

    #[test]
    fn csv_unsorted_rows_are_sorted() {
        let csv = "time,vehicle_id,x,y,speed,heading\n2,a,2,0,1,90\n0,a,0,0,1,90\n1,a,1,0,1,90\n";
        let tr = parse_csv_trace(csv.as_bytes()).unwrap();
        let xs: Vec<f64> = tr.vehicles[0].states.iter().map(|s| s.x).collect();
        assert_eq!(xs, vec![0.0, 1.0, 2.0]);
    }

    #[test]
    fn csv_duplicate_state() {
        let csv = "time,vehicle_id,x,y,speed,heading\n1,a,0,0,1,0\n1,a,3,0,1,0\n";
        assert!(matches!(parse_csv_trace(csv.as_bytes()), Err(MobilityError::DuplicateState { .. })));
    }

    #[test]
    fn csv_bad_number_has_row() {
        let csv = "time,vehicle_id,x,y,speed,heading\n0,a,0,0,1,0\n1,a,zz,0,1,0\n";
        match parse_csv_trace(csv.as_bytes()).unwrap_err() {
            MobilityError::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("{e:?}"),
        }
    }

    fn two_point_track() -> MobilityTrace {
        let csv = "time,vehicle_id,x,y,speed,heading\n0,a,0,0,10,90\n1,a,10,0,10,90\n10,late,0,0,0,0\n12,late,1,0,0,0\n";
        parse_csv_trace(csv.as_bytes()).unwrap()
    }

    #[test]
    fn interpolates_midpoint() {
        let tr = two_point_track();
        let s = positions_at(&tr, 0.5).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].x, 5.0);
    }

    #[test]
    fn sample_time_returns_sample() {
        let tr = two_point_track();
        let s = positions_at(&tr, 1.0).unwrap();
        assert_eq!(s[0], tr.vehicles[0].states[1]);
    }

    #[test]
    fn absent_before_entry() {
        let tr = two_point_track();
        let s = positions_at(&tr, 5.0).unwrap();
        assert!(s.iter().all(|v| v.vehicle_id != "late"));
    }

    #[test]
    fn out_of_range_query() {
        let tr = two_point_track();
        assert!(matches!(positions_at(&tr, 12.5), Err(MobilityError::OutOfRange { .. })));
        assert!(matches!(positions_at(&tr, -0.1), Err(MobilityError::OutOfRange { .. })));
    }

    #[test]
    fn synthetic_inside_box_and_deterministic() {
        let region = RegionSpec::default();
        let streams = RngStreams::new(11);
        let a = generate_synthetic(&region, 100, 50.0, &mut streams.stream(StreamId::Mobility));
        let b = generate_synthetic(&region, 100, 50.0, &mut streams.stream(StreamId::Mobility));
        assert_eq!(a, b);
        assert_eq!(a.vehicle_count(), 100);
        let bb = region.bbox();
        for v in &a.vehicles {
            assert_eq!(v.first_time(), 0.0);
            assert_eq!(v.last_time(), 50.0);
            for w in v.states.windows(2) {
                assert!(w[1].time > w[0].time);
            }
            for s in &v.states {
                assert!(bb.contains(s.x, s.y), "{s:?}");
                assert!(s.speed >= 0.0);
                assert!((0.0..360.0).contains(&s.heading));
            }
        }
    }

    #[test]
    fn synthetic_stays_on_roads() {
        let region = RegionSpec::default();
        let tr = generate_synthetic(&region, 60, 30.0, &mut RngStreams::new(5).stream(StreamId::Mobility));
        for v in &tr.vehicles {
            for t in [0.0, 3.3, 7.25, 19.9, 30.0] {
                let (x, y) = v.position_at(t).unwrap();
                let on_road = region.zones.iter().any(|z| {
                    let b = region.classes.get(z.class).block_m;
                    let inside = x >= z.x_m - 1e-6 && x <= z.x_m + z.width_m + 1e-6 && y >= z.y_m - 1e-6 && y <= z.y_m + z.height_m + 1e-6;
                    let near = |v: f64, o: f64| {
                        let r = (v - o).rem_euclid(b);
                        r < 1e-6 || b - r < 1e-6
                    };
                    inside && (near(x, z.x_m) || near(y, z.y_m))
                });
                assert!(on_road, "{} at {t}: ({x}, {y})", v.id);
            }
        }
    }

    #[test]
    fn density_figures() {
        let r = RegionSpec::default();
        assert!((r.map_density(500) - 4.912).abs() < 1e-3);
        assert!((r.road_density(500) - 42.34).abs() < 5e-3);
        assert!((r.road_density(100) - 8.47).abs() < 5e-3);
    }

    #[test]
    fn urban_square_gives_nine_rsus() {
        let region = RegionSpec {
            zones: vec![Zone { class: ZoneClass::Urban, x_m: 0.0, y_m: 0.0, width_m: 900.0, height_m: 900.0 }],
            ..RegionSpec::default()
        };
        let rsus = place_rsus(&region, 0).unwrap();
        assert_eq!(rsus.len(), 9);
    }

    #[test]
    fn small_zone_single_centre_rsu() {
        let region = RegionSpec {
            zones: vec![Zone { class: ZoneClass::Rural, x_m: 100.0, y_m: 200.0, width_m: 400.0, height_m: 300.0 }],
            ..RegionSpec::default()
        };
        let rsus = place_rsus(&region, 1).unwrap();
        assert_eq!(rsus.len(), 1);
        assert_eq!((rsus[0].x, rsus[0].y), (300.0, 350.0));
        assert_eq!(rsus[0].role, RsuRole::Miner);
    }

    #[test]
    fn default_layout_is_54_with_30_miners() {
        let rsus = place_rsus(&RegionSpec::default(), 30).unwrap();
        assert_eq!(rsus.len(), 54);
        assert_eq!(rsus.iter().filter(|r| r.role == RsuRole::Miner).count(), 30);
        assert_eq!(rsus.iter().filter(|r| r.role == RsuRole::Regular).count(), 24);
    }

    #[test]
    fn overlapping_zones_rejected() {
        let region = RegionSpec {
            zones: vec![
                Zone { class: ZoneClass::Urban, x_m: 0.0, y_m: 0.0, width_m: 900.0, height_m: 900.0 },
                Zone { class: ZoneClass::Rural, x_m: 800.0, y_m: 800.0, width_m: 900.0, height_m: 900.0 },
            ],
            ..RegionSpec::default()
        };
        assert_eq!(place_rsus(&region, 0).unwrap_err(), MobilityError::ZoneOverlap { a: 0, b: 1 });
    }

    #[test]
    fn rsu_nearest_neighbour_within_spacing_bounds() {
        let region = RegionSpec::default();
        let rsus = place_rsus(&region, 30).unwrap();
        for r in &rsus {
            let spacing = region.classes.get(region.zones[r.zone].class).rsu_spacing_m;
            let nn = rsus
                .iter()
                .filter(|o| o.zone == r.zone && o.rsu_id != r.rsu_id)
                .map(|o| ((o.x - r.x).powi(2) + (o.y - r.y).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min);
            assert!(nn >= spacing - 1e-9 && nn <= spacing * 2f64.sqrt() + 1e-9, "{nn}");
        }
    }
}
