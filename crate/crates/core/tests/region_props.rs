//! Properties of the upper convex hull used to assemble rate regions.

use bdrelay::region::{chebyshev_eta_grid, upper_hull, weighted_shortfall, RatePoint};
use proptest::prelude::*;

fn points() -> impl Strategy<Value = Vec<RatePoint>> {
    prop::collection::vec((0.0..5.0f64, 0.0..5.0f64), 1..40).prop_map(|v| {
        v.into_iter()
            .map(|(a, b)| RatePoint::new(0.5, a, b, "p"))
            .collect()
    })
}

fn weights() -> Vec<f64> {
    (0..=100).map(|k| k as f64 / 100.0).collect()
}

proptest! {
    #[test]
    fn hull_is_concave_and_ordered(mut pts in points()) {
        let hull = upper_hull(&mut pts);
        prop_assert!(!hull.is_empty());
        for pair in hull.windows(2) {
            prop_assert!(pair[0].r12 < pair[1].r12);
            prop_assert!(pair[0].r21 >= pair[1].r21);
        }
        for tri in hull.windows(3) {
            let s1 = (tri[1].r21 - tri[0].r21) / (tri[1].r12 - tri[0].r12);
            let s2 = (tri[2].r21 - tri[1].r21) / (tri[2].r12 - tri[1].r12);
            prop_assert!(s2 <= s1 + 1e-9, "slopes {s1} then {s2}");
        }
    }

    #[test]
    fn hull_contains_every_point(mut pts in points()) {
        let hull = upper_hull(&mut pts);
        let w = weights();
        for p in &pts {
            prop_assert!(weighted_shortfall(&hull, p, &w) <= 1e-9);
        }
    }

    #[test]
    fn interior_flags_match_hull_membership(mut pts in points()) {
        let hull = upper_hull(&mut pts);
        let on_hull = |p: &RatePoint| hull.iter().any(|h| h.r12 == p.r12 && h.r21 == p.r21);
        for p in &pts {
            if !p.interior {
                prop_assert!(on_hull(p));
            }
        }
        let flagged_out = pts.iter().filter(|p| !p.interior).count();
        prop_assert_eq!(flagged_out, hull.len());
    }

    #[test]
    fn extremes_are_on_the_hull(mut pts in points()) {
        let hull = upper_hull(&mut pts);
        let max12 = pts.iter().map(|p| p.r12).fold(f64::NEG_INFINITY, f64::max);
        let max21 = pts.iter().map(|p| p.r21).fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(hull.last().unwrap().r12, max12);
        prop_assert_eq!(hull[0].r21, max21);
    }

    #[test]
    fn grid_is_symmetric_and_inside(n in 1usize..64) {
        let g = chebyshev_eta_grid(n);
        prop_assert_eq!(g.len(), n);
        for &eta in &g {
            prop_assert!(eta > 0.0 && eta < 1.0);
        }
        for k in 0..n / 2 {
            prop_assert_eq!(g[n - 1 - k], 1.0 - g[k]);
            prop_assert!(g[k] < g[k + 1]);
        }
    }
}

#[test]
fn dominated_point_is_interior() {
    let mut pts = vec![
        RatePoint::new(0.5, 0.0, 2.0, "a"),
        RatePoint::new(0.5, 2.0, 0.0, "b"),
        RatePoint::new(0.5, 0.9, 0.9, "c"),
        RatePoint::new(0.5, 1.5, 1.5, "d"),
    ];
    let hull = upper_hull(&mut pts);
    assert_eq!(hull.len(), 3);
    assert!(pts[2].interior);
    assert!(!pts[3].interior);
}
