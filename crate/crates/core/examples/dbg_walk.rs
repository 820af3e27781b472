// scratch debug: replicate reach worklist with verbose entry trace + filter
use piha_core::flowpipe::{flowpipe_mode_segments, ReachConfig};
use piha_core::fwr::{build_fwr_piha, CircuitParams};
use piha_core::geometry::{default_template, Halfspace, Polytope, Support};
use std::collections::VecDeque;

fn main() {
    let piha = build_fwr_piha(&CircuitParams::default(), (3.8, 4.2), 0.04).unwrap();
    let cfg = ReachConfig::default();
    let template = default_template(3);
    let mut queue: VecDeque<(usize, Polytope, f64, f64)> = VecDeque::new();
    for (i, m) in piha.modes.iter().enumerate() {
        let seed = piha.ics.intersect(&m.invariant).unwrap();
        if !seed.is_empty().unwrap() {
            queue.push_back((i, seed, 0.0, 0.0));
        }
    }
    let mut processed: Vec<Vec<Polytope>> = vec![Vec::new(); 4];
    let mut pops = 0;
    let mut total = 0;
    while let Some((mode_idx, region, t_lo, smear)) = queue.pop_front() {
        pops += 1;
        if pops > 80 {
            println!("... break, queue={}", queue.len());
            break;
        }
        let sub = processed[mode_idx].iter().any(|p| p.contains_polytope(&region).unwrap());
        println!("pop {pops}: {} t_lo={:.5} smear={:.5} queue={} sub={}", piha.modes[mode_idx].id, t_lo, smear, queue.len(), sub);
        if sub { continue; }
        processed[mode_idx].push(region.clone());
        let pipe = flowpipe_mode_segments(&piha, mode_idx, &region, t_lo, &cfg).unwrap();
        total += pipe.segments.len();
        println!("   {} segs stop {:?} total {total}", pipe.segments.len(), pipe.stop);
        for tr in &piha.transitions {
            if tr.source != piha.modes[mode_idx].id { continue; }
            let tgt = piha.mode_index(&tr.target).unwrap();
            let tinv = &piha.modes[tgt].invariant;
            // outward normal like flowpipe.rs
            let dynamics = &piha.modes[mode_idx].dynamics;
            let mut plane_out: Option<nalgebra::DVector<f64>> = None;
            let rows = tr.guard.constraints();
            'outer: for (i, gi) in rows.iter().enumerate() {
                for gj in &rows[i+1..] {
                    let (ni, nj) = (gi.normal.norm(), gj.normal.norm());
                    if ni == 0.0 || nj == 0.0 { continue; }
                    let c = gi.normal.dot(&gj.normal)/(ni*nj);
                    if c < -1.0 + 1e-12 && (gi.offset/ni + gj.offset/nj).abs() <= 1e-9 {
                        let plane = &gi.normal / ni;
                        for hs in piha.modes[mode_idx].invariant.constraints() {
                            let ns = hs.normal.norm();
                            if ns == 0.0 { continue; }
                            let a = hs.normal.dot(&plane)/ns;
                            if a.abs() > 1.0-1e-12 && (hs.offset/ns - a.signum()*gi.offset/ni).abs() <= 1e-9 {
                                plane_out = Some(hs.normal.clone()/ns);
                                break 'outer;
                            }
                        }
                    }
                }
            }
            let mut run: Vec<(f64,f64)> = Vec::new();
            let mut crossings: Vec<Polytope> = Vec::new();
            for seg in pipe.segments.iter() {
                let hi = (seg.t_hi + smear).min(piha.horizon).max(seg.t_lo);
                let slice = seg.region.intersect(&tr.guard).unwrap().intersect(tinv).unwrap();
                let mut crossing = !slice.is_empty().unwrap();
                if crossing {
                    if let Some(n) = &plane_out {
                        let dir = dynamics.a().transpose() * n;
                        let drift = n.dot(dynamics.b());
                        crossing = match slice.support(&dir).unwrap() {
                            Support::Bounded { value, .. } => value + drift >= -1e-6,
                            Support::Unbounded => true,
                            Support::Empty => false,
                        };
                    }
                }
                if crossing {
                    run.push((seg.t_lo, hi));
                    crossings.push(slice);
                } else if !run.is_empty() {
                    flush(&template, tr, tinv, tgt, &mut run, &mut crossings, &mut queue, piha.horizon);
                }
            }
            if !run.is_empty() {
                flush(&template, tr, tinv, tgt, &mut run, &mut crossings, &mut queue, piha.horizon);
            }
        }
    }
    println!("done: pops={pops} total={total}");
}

#[allow(clippy::too_many_arguments)]
fn flush(
    template: &[nalgebra::DVector<f64>],
    tr: &piha_core::model::Transition,
    tinv: &Polytope,
    tgt: usize,
    run: &mut Vec<(f64, f64)>,
    crossings: &mut Vec<Polytope>,
    queue: &mut VecDeque<(usize, Polytope, f64, f64)>,
    horizon: f64,
) {
    let mut halves = Vec::new();
    for dir in template {
        let mut offset = f64::NEG_INFINITY;
        for c in crossings.iter() {
            if let Support::Bounded { value, .. } = c.support(dir).unwrap() {
                offset = offset.max(value);
            }
        }
        halves.push(Halfspace::new(dir.clone(), offset));
    }
    let hull = Polytope::new(3, halves).unwrap();
    let entry = hull.intersect(&tr.guard).unwrap().intersect(tinv).unwrap();
    let (lo, hi) = (run[0].0, run[run.len() - 1].1);
    if lo < horizon {
        queue.push_back((tgt, entry, lo, (hi - lo).max(0.0)));
    }
    run.clear();
    crossings.clear();
}
