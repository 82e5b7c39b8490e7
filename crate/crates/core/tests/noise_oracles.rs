use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;
use segweight_core::dataio::gen_synthetic;
use segweight_core::losses::{dice, Mask};
use segweight_core::noisegen::{
    apply_noise, axis_aligned_4, mask_to_polygon, maximal_mask, rasterize, simplify_to_k, Importance, NoiseSpec,
    Point, Polygon, TIE_TOLERANCE,
};

/// Straightforward replay: rescore every vertex each round, drop the first
/// minimum (ties within the relative tolerance go to the lower index).
fn replay(poly: &Polygon, k: usize, importance: Importance) -> Vec<Point> {
    let mut v = poly.vertices().to_vec();
    while v.len() > k {
        let m = v.len();
        let scores: Vec<f64> = (0..m).map(|i| importance.score(v[(i + m - 1) % m], v[i], v[(i + 1) % m])).collect();
        let mut best = 0;
        for i in 1..m {
            let scale = scores[i].abs().max(scores[best].abs()).max(f64::MIN_POSITIVE);
            if scores[i] < scores[best] - TIE_TOLERANCE * scale {
                best = i;
            }
        }
        v.remove(best);
    }
    v
}

fn regular(n: usize, radius: f64) -> Polygon {
    let pts = (0..n)
        .map(|i| {
            let t = 2.0 * PI * i as f64 / n as f64;
            Point::new(10.0 + radius * t.sin(), 10.0 + radius * t.cos())
        })
        .collect();
    Polygon::new(pts).unwrap()
}

fn random_blob(rng: &mut ChaCha8Rng, side: usize) -> Mask {
    let (cy, cx) = (rng.random_range(0.3..0.7) * side as f64, rng.random_range(0.3..0.7) * side as f64);
    let (a, b) = (rng.random_range(2.0..side as f64 / 2.5), rng.random_range(2.0..side as f64 / 2.5));
    let rot = rng.random_range(0.0..PI);
    let wobble = rng.random_range(0.0..0.3);
    let phase = rng.random_range(0.0..2.0 * PI);
    Mask::from_fn(side, side, |r, c| {
        let (dy, dx) = (r as f64 + 0.5 - cy, c as f64 + 0.5 - cx);
        let (u, v) = (dx * rot.cos() + dy * rot.sin(), -dx * rot.sin() + dy * rot.cos());
        let t = dy.atan2(dx);
        (u / a).powi(2) + (v / b).powi(2) < (1.0 + wobble * (3.0 * t + phase).sin()).powi(2)
    })
}

fn random_convex(rng: &mut ChaCha8Rng, side: f64) -> Polygon {
    let n = rng.random_range(3..10);
    let mut angles: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    angles.sort_by(f64::total_cmp);
    let (cy, cx) = (rng.random_range(0.3..0.7) * side, rng.random_range(0.3..0.7) * side);
    let (a, b) = (rng.random_range(1.5..side / 2.0), rng.random_range(1.5..side / 2.0));
    let pts = angles.iter().map(|t| Point::new(cy + b * t.sin(), cx + a * t.cos())).collect();
    Polygon::new(pts).unwrap()
}

/// Winding-number containment of a point.
fn inside(poly: &Polygon, y: f64, x: f64) -> bool {
    let v = poly.vertices();
    let mut winding = 0i32;
    for i in 0..v.len() {
        let (a, b) = (v[i], v[(i + 1) % v.len()]);
        let side = (b.col - a.col) * (y - a.row) - (x - a.col) * (b.row - a.row);
        if a.row <= y && b.row > y && side > 0.0 {
            winding += 1;
        } else if a.row > y && b.row <= y && side < 0.0 {
            winding -= 1;
        }
    }
    winding != 0
}

pub fn octagon_to_seven_drops_lowest_index_tie() {
    let oct = regular(8, 5.0);
    let (out, warning) = simplify_to_k(&oct, 7, Importance::AngleLength).unwrap();
    assert!(warning.is_none());
    assert_eq!(out.len(), 7);
    assert_eq!(out.vertices(), replay(&oct, 7, Importance::AngleLength).as_slice());
    assert_eq!(out.vertices(), &oct.vertices()[1..]);
}

pub fn hexagon_to_three_matches_replay() {
    let hex = regular(6, 4.0);
    for importance in [Importance::AngleLength, Importance::TriangleArea] {
        let (out, _) = simplify_to_k(&hex, 3, importance).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(out.vertices(), replay(&hex, 3, importance).as_slice());
    }
}

pub fn simplify_counts_and_replay_on_traced_masks() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut checked = 0;
    while checked < 60 {
        let mask = random_blob(&mut rng, 24);
        if mask.count() < 6 {
            continue;
        }
        let (poly, _) = mask_to_polygon(&mask).unwrap();
        for k in [3, 4, 5, 7] {
            for importance in [Importance::AngleLength, Importance::TriangleArea] {
                match simplify_to_k(&poly, k, importance) {
                    Ok((out, None)) => {
                        assert_eq!(out.len(), k);
                        assert_eq!(out.vertices(), replay(&poly, k, importance).as_slice());
                    }
                    Ok((out, Some(_))) => assert_eq!(out.len(), poly.len()),
                    // Removal can leave a zero-area polygon on tiny masks.
                    Err(e) => assert!(e.is_contract()),
                }
            }
        }
        checked += 1;
    }
}

pub fn simplify_rejects_small_k_and_warns_when_short() {
    let sq = regular(4, 3.0);
    assert!(simplify_to_k(&sq, 2, Importance::AngleLength).unwrap_err().is_contract());
    let (out, warning) = simplify_to_k(&sq, 7, Importance::AngleLength).unwrap();
    assert_eq!(out, sq);
    assert!(warning.is_some());
}

pub fn axis_aligned_contains_and_is_tight() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut checked = 0;
    while checked < 100 {
        let side = rng.random_range(8..32);
        let mask = random_blob(&mut rng, side);
        if mask.count() == 0 {
            continue;
        }
        let rect = rasterize(&axis_aligned_4(&mask).unwrap(), side, side).unwrap();
        let (mut r0, mut r1, mut c0, mut c1) = (side, 0, side, 0);
        for r in 0..side {
            for c in 0..side {
                if mask.get(r, c) {
                    assert!(rect.get(r, c), "mask pixel ({r},{c}) outside rectangle");
                    (r0, r1, c0, c1) = (r0.min(r), r1.max(r), c0.min(c), c1.max(c));
                }
            }
        }
        assert_eq!(rect.count(), (r1 - r0 + 1) * (c1 - c0 + 1));
        checked += 1;
    }
}

pub fn maximal_mask_counts() {
    for (h, w, band) in [(24, 24, 1), (24, 24, 3), (96, 96, 2), (10, 17, 4), (3, 3, 1)] {
        let m = maximal_mask(h, w, band).unwrap();
        assert_eq!(m.count(), (h - 2 * band) * (w - 2 * band));
    }
    assert!(maximal_mask(4, 10, 2).is_err());
    let clean = Mask::from_fn(24, 24, |r, c| r == c);
    let noisy = apply_noise(&clean, NoiseSpec::Maximal { band: 1 }, Importance::AngleLength).unwrap();
    assert_eq!(noisy.mask.count(), 484);
}

pub fn rasterize_matches_point_in_polygon() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..50 {
        let side = rng.random_range(6..40);
        let poly = random_convex(&mut rng, side as f64);
        let m = rasterize(&poly, side, side).unwrap();
        for r in 0..side {
            for c in 0..side {
                assert_eq!(m.get(r, c), inside(&poly, r as f64 + 0.5, c as f64 + 0.5), "pixel ({r},{c})");
            }
        }
    }
}

pub fn trace_then_rasterize_round_trips() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..50 {
        let side = rng.random_range(6..30);
        let convex = rasterize(&random_convex(&mut rng, side as f64), side, side).unwrap();
        if convex.count() == 0 {
            continue;
        }
        let (poly, warnings) = mask_to_polygon(&convex).unwrap();
        if warnings.is_empty() {
            assert_eq!(rasterize(&poly, side, side).unwrap(), convex);
        }
    }
    for s in gen_synthetic(20, 24, 5).unwrap() {
        let (poly, warnings) = mask_to_polygon(&s.clean_mask).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(rasterize(&poly, 24, 24).unwrap(), s.clean_mask);
    }
}

pub fn polygon_vertices_lie_on_pixel_corners_and_bound_the_mask() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    for _ in 0..30 {
        let mask = random_blob(&mut rng, 20);
        if mask.count() == 0 {
            continue;
        }
        let (poly, _) = mask_to_polygon(&mask).unwrap();
        assert!(poly.area() > 0.0);
        for p in poly.vertices() {
            assert_eq!(p.row.fract(), 0.0);
            assert_eq!(p.col.fract(), 0.0);
            assert!((0.0..=20.0).contains(&p.row) && (0.0..=20.0).contains(&p.col));
        }
    }
}

pub fn noise_severity_ordering_on_synthetic_corpus() {
    let corpus = gen_synthetic(40, 24, 3).unwrap();
    let mean_dice = |spec: NoiseSpec| {
        let total: f64 = corpus
            .iter()
            .map(|s| dice(&apply_noise(&s.clean_mask, spec, Importance::AngleLength).unwrap().mask, &s.clean_mask).unwrap())
            .sum();
        total / corpus.len() as f64
    };
    let seven = mean_dice(NoiseSpec::KVertex { k: 7 });
    let three = mean_dice(NoiseSpec::KVertex { k: 3 });
    let maximal = mean_dice(NoiseSpec::Maximal { band: 1 });
    assert!(seven >= three && three >= maximal, "7: {seven}, 3: {three}, maximal: {maximal}");
}

/// Every check in this file, by name.
#[allow(dead_code)]
pub const CHECKS: &[(&str, fn())] = &[
    ("octagon_to_seven_drops_lowest_index_tie", octagon_to_seven_drops_lowest_index_tie),
    ("hexagon_to_three_matches_replay", hexagon_to_three_matches_replay),
    ("simplify_counts_and_replay_on_traced_masks", simplify_counts_and_replay_on_traced_masks),
    ("simplify_rejects_small_k_and_warns_when_short", simplify_rejects_small_k_and_warns_when_short),
    ("axis_aligned_contains_and_is_tight", axis_aligned_contains_and_is_tight),
    ("maximal_mask_counts", maximal_mask_counts),
    ("rasterize_matches_point_in_polygon", rasterize_matches_point_in_polygon),
    ("trace_then_rasterize_round_trips", trace_then_rasterize_round_trips),
    ("polygon_vertices_lie_on_pixel_corners_and_bound_the_mask", polygon_vertices_lie_on_pixel_corners_and_bound_the_mask),
    ("noise_severity_ordering_on_synthetic_corpus", noise_severity_ordering_on_synthetic_corpus),
];

#[cfg(test)]
mod tests {
    #[test]
    fn octagon_to_seven_drops_lowest_index_tie() {
        super::octagon_to_seven_drops_lowest_index_tie();
    }

    #[test]
    fn hexagon_to_three_matches_replay() {
        super::hexagon_to_three_matches_replay();
    }

    #[test]
    fn simplify_counts_and_replay_on_traced_masks() {
        super::simplify_counts_and_replay_on_traced_masks();
    }

    #[test]
    fn simplify_rejects_small_k_and_warns_when_short() {
        super::simplify_rejects_small_k_and_warns_when_short();
    }

    #[test]
    fn axis_aligned_contains_and_is_tight() {
        super::axis_aligned_contains_and_is_tight();
    }

    #[test]
    fn maximal_mask_counts() {
        super::maximal_mask_counts();
    }

    #[test]
    fn rasterize_matches_point_in_polygon() {
        super::rasterize_matches_point_in_polygon();
    }

    #[test]
    fn trace_then_rasterize_round_trips() {
        super::trace_then_rasterize_round_trips();
    }

    #[test]
    fn polygon_vertices_lie_on_pixel_corners_and_bound_the_mask() {
        super::polygon_vertices_lie_on_pixel_corners_and_bound_the_mask();
    }

    #[test]
    fn noise_severity_ordering_on_synthetic_corpus() {
        super::noise_severity_ordering_on_synthetic_corpus();
    }
}
