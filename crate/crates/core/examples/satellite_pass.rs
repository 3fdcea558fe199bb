//! Tracks the best visible satellite over a ground point for ten minutes,
//! from the bundled TLE fixture and from the parametric shell.

use siov_sim::satellite::{parse_tle_file, propagate_circular, slant_range_at_elevation, visibility, ConstellationSpec, GroundFrame, SkySnapshot};

fn main() {
    let frame = GroundFrame { anchor_lat_deg: 40.0, anchor_lon_deg: 116.0, center_x: 0.0, center_y: 0.0 };
    let ground = frame.to_ecef(0.0, 0.0, 1.5);

    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/starlink.tle");
    let tle = parse_tle_file(&std::fs::read_to_string(path).unwrap()).unwrap();
    for rec in &tle {
        let s = propagate_circular(rec, 0, 0.0);
        let v = visibility(&s, ground, 10.0);
        println!("{}: altitude {:.1} km, period {:.1} min, elevation {:.1} deg", rec.name, s.altitude / 1e3, rec.period_s() / 60.0, v.elevation_deg);
    }

    let shell = ConstellationSpec::default();
    let records = shell.records();
    println!("parametric shell: {} satellites at {} km", records.len(), shell.altitude_km);
    for minute in 0..=10 {
        let t = minute as f64 * 60.0;
        let sky = SkySnapshot::capture(&records, t, ground, 10.0, 2.0);
        match sky.best_visible(ground, 10.0) {
            Some((sat, v)) => println!(
                "t={t:>4} s: {} candidates, best {} at {:.1} deg, {:.1} km",
                sky.candidates.len(),
                records[sat.sat_id].name,
                v.elevation_deg,
                v.slant_range / 1e3
            ),
            None => println!("t={t:>4} s: nothing above the mask"),
        }
    }
    println!("slant range at the 10 deg mask: {:.1} km", slant_range_at_elevation(shell.altitude_km * 1e3, 10.0) / 1e3);
}
