// scratch debug: time the FWR reach and count segments per mode
use piha_core::flowpipe::{reach_sets, ReachConfig};
use piha_core::fwr::{build_fwr_piha, CircuitParams};
use std::time::Instant;

fn main() {
    let piha = build_fwr_piha(&CircuitParams::default(), (3.8, 4.2), 0.04).unwrap();
    let t0 = Instant::now();
    match reach_sets(&piha, None, &ReachConfig::default()) {
        Ok(segs) => {
            let mut counts = std::collections::BTreeMap::new();
            for s in &segs {
                *counts.entry(s.mode.clone()).or_insert(0usize) += 1;
            }
            println!("ok: {} segments in {:.2?}: {:?}", segs.len(), t0.elapsed(), counts);
        }
        Err(e) => println!("err after {:.2?}: {e:?}", t0.elapsed()),
    }
}
