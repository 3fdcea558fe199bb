//! Loads the bundled SUMO FCD trace, samples positions, and converts it to
//! the CSV trace format.

use siov_sim::mobility::{parse_fcd_trace, positions_at, write_csv_trace};

fn main() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/urban.fcd.xml");
    let trace = parse_fcd_trace(std::fs::File::open(path).unwrap()).unwrap();
    println!("{} vehicles, {} states, {:.1} s", trace.vehicle_count(), trace.state_count(), trace.duration);
    for t in [0.0, 2.5, 5.0] {
        for s in positions_at(&trace, t).unwrap() {
            println!("t={t:>4}: {} at ({:.1}, {:.1}) {:.1} m/s heading {:.0}", s.vehicle_id, s.x, s.y, s.speed, s.heading);
        }
    }
    write_csv_trace(&trace, std::io::stdout()).unwrap();
}
