//! Geometry operations against an independent brute-force oracle.
//!
//! The oracle enumerates candidate vertices from every `dim`-subset of
//! constraint rows with its own Gauss-Jordan elimination (no shared code
//! with the library path, which goes through LP feasibility and nalgebra
//! LU). On bounded instances a nonempty polytope has a feasible vertex, so
//! the oracle decides emptiness exactly and lists the exact vertex set.

use nalgebra::DVector;
use piha_core::geometry::{Halfspace, Polytope, SampleStrategy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SLACK_TOL: f64 = 1e-9;

/// Gauss-Jordan solve with partial pivoting; `None` on (near-)singular.
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-10 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        let d = a[col][col];
        for k in col..n {
            a[col][k] /= d;
        }
        b[col] /= d;
        for row in 0..n {
            if row != col && a[row][col] != 0.0 {
                let factor = a[row][col];
                for k in col..n {
                    a[row][k] -= factor * a[col][k];
                }
                b[row] -= factor * b[col];
            }
        }
    }
    Some(b)
}

fn index_combinations(m: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut combo: Vec<usize> = (0..k).collect();
    if k > m {
        return out;
    }
    loop {
        out.push(combo.clone());
        // advance
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if combo[i] != i + m - k {
                break;
            }
            if i == 0 {
                return out;
            }
        }
        combo[i] += 1;
        for j in i + 1..k {
            combo[j] = combo[j - 1] + 1;
        }
    }
}

struct RawPoly {
    dim: usize,
    rows: Vec<(Vec<f64>, f64)>,
}

impl RawPoly {
    fn satisfied(&self, x: &[f64]) -> bool {
        self.rows.iter().all(|(n, c)| {
            let dot: f64 = n.iter().zip(x).map(|(a, b)| a * b).sum();
            let norm: f64 = n.iter().map(|v| v * v).sum::<f64>().sqrt();
            dot <= c + SLACK_TOL * norm
        })
    }

    fn oracle_vertices(&self) -> Vec<Vec<f64>> {
        let mut found: Vec<Vec<f64>> = Vec::new();
        for combo in index_combinations(self.rows.len(), self.dim) {
            let a: Vec<Vec<f64>> = combo.iter().map(|&i| self.rows[i].0.clone()).collect();
            let b: Vec<f64> = combo.iter().map(|&i| self.rows[i].1).collect();
            let Some(x) = solve_dense(a, b) else { continue };
            if !x.iter().all(|v| v.is_finite()) || !self.satisfied(&x) {
                continue;
            }
            let scale = 1.0 + x.iter().map(|v| v.abs()).fold(0.0, f64::max);
            if !found.iter().any(|y| {
                y.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) <= 1e-8 * scale
            }) {
                found.push(x);
            }
        }
        found
    }

    fn oracle_is_empty(&self) -> bool {
        self.oracle_vertices().is_empty()
    }

    fn to_polytope(&self) -> Polytope {
        let constraints = self
            .rows
            .iter()
            .map(|(n, c)| Halfspace::from_slice(n, *c))
            .collect();
        Polytope::new(self.dim, constraints).unwrap()
    }
}

/// Random halfspaces intersected with a bounding box, so every instance is
/// bounded and the vertex oracle is exact.
fn random_poly(rng: &mut ChaCha8Rng, dim: usize, style: u8) -> RawPoly {
    let m = rng.gen_range(3..=8);
    let mut rows = Vec::new();
    for _ in 0..m {
        let mut n: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm: f64 = n.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 0.1 {
            n[0] += 0.5;
        }
        let c = match style {
            0 => rng.gen_range(-0.3..1.2),
            _ => rng.gen_range(0.2..1.2),
        };
        rows.push((n, c));
    }
    if style == 1 {
        // Force emptiness with a contradictory opposing pair.
        let n: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let flipped: Vec<f64> = n.iter().map(|v| -v).collect();
        rows.push((n, -0.1));
        rows.push((flipped, -0.1));
    }
    let side = 3.0;
    for axis in 0..dim {
        let mut up = vec![0.0; dim];
        up[axis] = 1.0;
        let mut down = vec![0.0; dim];
        down[axis] = -1.0;
        rows.push((up, side));
        rows.push((down, side));
    }
    RawPoly { dim, rows }
}

#[test]
fn emptiness_matches_vertex_enumeration_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut empties = 0;
    let mut total = 0;
    for dim in [2usize, 3] {
        for i in 0..500 {
            let style = match i % 4 {
                0 | 1 => 0,
                2 => 1,
                _ => 2,
            };
            let raw = random_poly(&mut rng, dim, style);
            let poly = raw.to_polytope();
            let oracle_empty = raw.oracle_is_empty();
            let lp_empty = poly.is_empty().unwrap();
            assert_eq!(
                lp_empty, oracle_empty,
                "disagreement on instance {i} (dim {dim}, style {style})"
            );
            total += 1;
            if oracle_empty {
                empties += 1;
            }
        }
    }
    assert_eq!(total, 1000);
    assert!(empties >= 100, "want a real mix of verdicts, got {empties} empty");
    assert!(total - empties >= 100);
}

#[test]
fn vertex_sampling_matches_oracle_sets() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut checked = 0;
    for dim in [2usize, 3] {
        for i in 0..500 {
            let raw = random_poly(&mut rng, dim, if i % 3 == 0 { 0 } else { 2 });
            let oracle = raw.oracle_vertices();
            if oracle.is_empty() {
                continue;
            }
            let poly = raw.to_polytope();
            let mine = poly.sample_points(SampleStrategy::Vertices).unwrap();
            let close = |a: &DVector<f64>, b: &[f64]| {
                a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) <= 1e-7
            };
            for v in &mine {
                assert!(
                    oracle.iter().any(|o| close(v, o)),
                    "instance {i}/{dim}: library vertex {v:?} unknown to oracle {oracle:?}"
                );
            }
            for o in &oracle {
                assert!(
                    mine.iter().any(|v| close(v, o)),
                    "instance {i}/{dim}: oracle vertex {o:?} missed; library produced {mine:?}"
                );
            }
            checked += 1;
        }
    }
    assert!(checked >= 300, "too few nonempty instances ({checked})");
}

#[test]
fn intersection_membership_matches_direct_evaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for i in 0..20 {
        let a = random_poly(&mut rng, 2, 0);
        let b = random_poly(&mut rng, 2, 0);
        let pa = a.to_polytope();
        let pb = b.to_polytope();
        let inter = pa.intersect(&pb).unwrap();
        for _ in 0..500 {
            let x = [rng.gen_range(-3.5..3.5), rng.gen_range(-3.5..3.5)];
            let v = DVector::from_row_slice(&x);
            let both = pa.contains_point(&v, 0.0).unwrap() && pb.contains_point(&v, 0.0).unwrap();
            assert_eq!(
                inter.contains_point(&v, 0.0).unwrap(),
                both,
                "instance {i}, point {x:?}"
            );
        }
    }
}

#[test]
fn emptiness_of_intersection_agrees_with_sampling() {
    // One-sided probabilistic check: if random sampling finds a common
    // point, the LP must agree the intersection is nonempty; and the exact
    // vertex oracle of the concatenated system settles every instance.
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..60 {
        let a = random_poly(&mut rng, 2, 0);
        let b = random_poly(&mut rng, 2, 0);
        let inter_raw = RawPoly {
            dim: 2,
            rows: a.rows.iter().chain(b.rows.iter()).cloned().collect(),
        };
        let inter = a.to_polytope().intersect(&b.to_polytope()).unwrap();
        let lp_empty = inter.is_empty().unwrap();
        assert_eq!(lp_empty, inter_raw.oracle_is_empty());
        let mut sampled_hit = false;
        for _ in 0..2000 {
            let x = DVector::from_row_slice(&[rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)]);
            if inter.contains_point(&x, 0.0).unwrap() {
                sampled_hit = true;
                break;
            }
        }
        if sampled_hit {
            assert!(!lp_empty);
        }
    }
}

#[test]
fn bloat_contains_nearby_points() {
    // Constructive distance oracle: q = p + delta with p in P and
    // |delta| <= 0.05 is within distance 0.05 of P, so bloat(P, 0.1) must
    // contain it.
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut tested = 0;
    'outer: for _ in 0..40 {
        let raw = random_poly(&mut rng, 3, 2);
        let poly = raw.to_polytope();
        let fat = poly.bloat(0.1).unwrap();
        let vertices = match poly.sample_points(SampleStrategy::Vertices) {
            Ok(v) if !v.is_empty() => v,
            _ => continue 'outer,
        };
        for _ in 0..25 {
            // Random convex combination of vertices lies in P.
            let mut weights: Vec<f64> = (0..vertices.len()).map(|_| rng.gen_range(0.0..1.0)).collect();
            let total: f64 = weights.iter().sum();
            for w in &mut weights {
                *w /= total;
            }
            let mut p = DVector::zeros(3);
            for (w, v) in weights.iter().zip(&vertices) {
                p += v * *w;
            }
            let mut delta = DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0));
            let norm = delta.norm();
            if norm > 0.0 {
                delta *= rng.gen_range(0.0..0.05) / norm;
            }
            let q = &p + delta;
            assert!(
                fat.contains_point(&q, 1e-12).unwrap(),
                "bloated polytope misses point at distance <= 0.05"
            );
            tested += 1;
        }
    }
    assert!(tested >= 500);
}

#[test]
fn template_hull_contains_convex_hull() {
    // Containment of random convex combinations implies the template hull
    // covers the exact convex hull (and so has at least its volume).
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let points: Vec<DVector<f64>> = (0..100)
        .map(|_| DVector::from_fn(3, |_, _| rng.gen_range(-2.0..2.0)))
        .collect();
    let hull = piha_core::geometry::template_hull(&points, &piha_core::geometry::default_template(3)).unwrap();
    for p in &points {
        assert!(hull.contains_point(p, 1e-12).unwrap());
    }
    for _ in 0..2000 {
        let i = rng.gen_range(0..points.len());
        let j = rng.gen_range(0..points.len());
        let k = rng.gen_range(0..points.len());
        let (a, b) = (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
        let (a, b) = if a + b > 1.0 { (1.0 - a, 1.0 - b) } else { (a, b) };
        let combo = &points[i] * a + &points[j] * b + &points[k] * (1.0 - a - b);
        assert!(hull.contains_point(&combo, 1e-9).unwrap());
    }
}
