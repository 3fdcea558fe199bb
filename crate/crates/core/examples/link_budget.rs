//! Walks one V2I hop through the link budget: noise floor, received power,
//! SINR, Shannon rate and the delay check.

use siov_sim::channel::{link_outcome, median_pathloss_db, noise_power_dbm, received_power_dbm, sinr, ChannelConfig, LinkGeometry, LinkType};

fn main() {
    let cfg = ChannelConfig::default();
    let noise = noise_power_dbm(cfg.terrestrial_bandwidth_hz, cfg.bs_noise_figure_db);
    println!("noise floor: {noise:.2} dBm");

    for distance in [50.0, 100.0, 200.0, 400.0] {
        let geom = LinkGeometry {
            link_type: LinkType::V2I,
            distance,
            carrier_ghz: cfg.carrier_ghz,
            tx_antenna: cfg.vehicle_antenna,
            rx_antenna: cfg.bs_antenna,
        };
        let pl = median_pathloss_db(&geom, cfg.model_for(LinkType::V2I));
        let pr = received_power_dbm(23.0, &geom, pl, 1.0);
        let s = sinr(pr, noise, &[]);
        let out = link_outcome(s, cfg.terrestrial_bandwidth_hz, cfg.payload_bits(), distance, &cfg.limits());
        println!(
            "{distance:>5} m: pathloss {pl:.2} dB, rx {pr:.2} dBm, SINR {:.2} dB, {:.3} Mb/s, {:.3} ms, {}",
            10.0 * s.log10(),
            out.rate_bps / 1e6,
            out.latency_s * 1e3,
            if out.success { "delivered" } else { "failed" }
        );
    }

    // a co-channel interferer 10 dB below the signal
    let s = sinr(-90.0, noise, &[-100.0]);
    println!("with one interferer at -100 dBm: SINR {s:.2}");
}
