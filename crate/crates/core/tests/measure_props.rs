use mfvi_core::measure::{w2, Grid1D, GridMeasure1D, QuantileMeasure1D};
use mfvi_core::oracle::discrete_ot_bruteforce;
use mfvi_core::rng::CounterRng;
use proptest::prelude::*;
use rand::Rng;

/// Levels divisible by every atom count up to six.
const LEVELS: usize = 240;

fn atom_grid() -> Grid1D {
    Grid1D::new(-4.0, 4.0, 64).unwrap()
}

/// Shared cells would merge atoms into one wider block, so keep them apart.
fn distinct_cells(rng: &mut CounterRng, n: usize, cells: usize) -> Vec<usize> {
    rand::seq::index::sample(rng, cells, n).into_vec()
}

/// Equal-weight atoms snapped to cell centers, as a grid measure.
fn atoms_on_grid(g: &Grid1D, cells: &[usize]) -> (GridMeasure1D, Vec<f64>) {
    let mut raw = vec![0.0; g.len()];
    for &c in cells {
        raw[c] += 1.0;
    }
    let centers = cells.iter().map(|&c| g.center(c)).collect();
    (GridMeasure1D::normalize(&raw, *g).unwrap(), centers)
}

#[test]
fn grid_w2_matches_exhaustive_transport() {
    let g = atom_grid();
    for case in 0..200u64 {
        let mut rng = CounterRng::new(2024, &[case]);
        let n = rng.random_range(1..=6usize);
        let a = distinct_cells(&mut rng, n, g.len());
        let b = distinct_cells(&mut rng, n, g.len());
        let (mu, xa) = atoms_on_grid(&g, &a);
        let (nu, xb) = atoms_on_grid(&g, &b);
        let exact = discrete_ot_bruteforce(&xa, &xb).unwrap();
        let got = w2(&mu, &nu, LEVELS);
        assert!((got - exact).abs() < 1e-10, "case {case}: {got} vs {exact}");
    }
}

#[test]
fn gaussian_pairs_match_closed_form() {
    let g = Grid1D::new(-8.0, 8.0, 512).unwrap();
    for case in 0..50u64 {
        let mut rng = CounterRng::new(77, &[case]);
        let (m1, m2) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let (s1, s2): (f64, f64) = (rng.random_range(0.3..1.5), rng.random_range(0.3..1.5));
        let a = GridMeasure1D::gaussian(g, m1, s1 * s1).unwrap();
        let b = GridMeasure1D::gaussian(g, m2, s2 * s2).unwrap();
        let exact = ((m1 - m2).powi(2) + (s1 - s2).powi(2)).sqrt();
        assert!((w2(&a, &b, 2048) - exact).abs() < 2e-2);
    }
}

fn arb_density(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, len).prop_filter("some mass", |v| v.iter().sum::<f64>() > 1e-3)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn w2_is_a_metric(a in arb_density(32), b in arb_density(32), c in arb_density(32)) {
        let g = Grid1D::new(-2.0, 2.0, 32).unwrap();
        let (a, b, c) = (
            GridMeasure1D::normalize(&a, g).unwrap(),
            GridMeasure1D::normalize(&b, g).unwrap(),
            GridMeasure1D::normalize(&c, g).unwrap(),
        );
        let k = 128;
        prop_assert!(w2(&a, &a, k) < 1e-12);
        prop_assert!((w2(&a, &b, k) - w2(&b, &a, k)).abs() < 1e-14);
        prop_assert!(w2(&a, &c, k) <= w2(&a, &b, k) + w2(&b, &c, k) + 1e-12);
    }

    #[test]
    fn integer_shift_moves_by_the_shift(a in arb_density(32), cells in 1usize..8) {
        // the same density placed `cells` cells further right
        let g = Grid1D::new(-2.0, 2.0, 40).unwrap();
        let mut left = a.clone();
        left.extend(std::iter::repeat(0.0).take(8));
        let mut right = vec![0.0; cells];
        right.extend(a.iter().copied());
        right.extend(std::iter::repeat(0.0).take(8 - cells));
        let mu = GridMeasure1D::normalize(&left, g).unwrap();
        let nu = GridMeasure1D::normalize(&right, g).unwrap();
        prop_assert!((w2(&mu, &nu, 160) - cells as f64 * g.dx()).abs() < 1e-10);
    }

    #[test]
    fn moments_survive_a_quantile_round_trip(mean in -1.5f64..1.5, sd in 0.4f64..1.5) {
        let g = Grid1D::new(-8.0, 8.0, 256).unwrap();
        let m = GridMeasure1D::gaussian(g, mean, sd * sd).unwrap();
        let back = m.to_quantile(1024).to_density(g).unwrap();
        prop_assert!((back.mass() - 1.0).abs() < 1e-12);
        prop_assert!((back.mean() - mean).abs() < 1e-3);
        prop_assert!((back.variance() - sd * sd).abs() < 2e-3 * sd * sd);
        prop_assert!(w2(&m, &back, 1024) < 2e-3);
    }

    #[test]
    fn quantile_vectors_round_trip_through_w2(xs in prop::collection::vec(-3.0f64..3.0, 2..20)) {
        let mut q = xs.clone();
        q.sort_by(f64::total_cmp);
        let a = QuantileMeasure1D::new(q.clone()).unwrap();
        let shifted = QuantileMeasure1D::new(q.iter().map(|x| x + 0.25).collect()).unwrap();
        prop_assert!((a.w2(&shifted) - 0.25).abs() < 1e-12);
    }
}
