//! Invariants of the correlation estimators and closed-form models.

use ghostdiff::correlation::{
    analytic_g_classical, analytic_g_entangled, cut, rank_ratio, Axis, CoherenceKernel, CorrelationAccumulator,
    FieldCorrelationModel,
};
use ghostdiff::field::Grid;
use ghostdiff::propagation::impulse_matrix;
use ghostdiff::scenario::ScenarioConfig;
use proptest::prelude::*;

const N1: usize = 10;
const N2: usize = 8;

fn accumulate(frames: &[Vec<f64>]) -> CorrelationAccumulator {
    let mut acc = CorrelationAccumulator::new(Grid::one_d(N1, 1.0).unwrap(), Grid::one_d(N2, 1.0).unwrap()).unwrap();
    for f in frames {
        acc.accumulate_batch(&f[..N1], &f[N1..], 1).unwrap();
    }
    acc
}

fn frame() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..10.0f64, N1 + N2)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn merge_matches_sequential(frames in prop::collection::vec(frame(), 3..40), split in 1usize..39) {
        let split = split.min(frames.len() - 1);
        let whole = accumulate(&frames).finalize().unwrap();
        let mut left = accumulate(&frames[..split]);
        left.merge(&accumulate(&frames[split..])).unwrap();
        let merged = left.finalize().unwrap();
        for (a, b) in whole.g.iter().zip(&merged.g) {
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn covariance_ignores_offsets(frames in prop::collection::vec(frame(), 3..30), shift in 0.0..100.0f64) {
        let shifted: Vec<Vec<f64>> = frames.iter().map(|f| f.iter().map(|v| v + shift).collect()).collect();
        let a = accumulate(&frames).finalize().unwrap();
        let b = accumulate(&shifted).finalize().unwrap();
        for (x, y) in a.g.iter().zip(&b.g) {
            prop_assert!((x - y).abs() <= 1e-9 * (1.0 + shift).powi(2));
        }
    }

    #[test]
    fn reflection_holds_for_any_gaussian_width(cells in 0.5..4.0f64) {
        let cfg = ScenarioConfig::oracle_default();
        let grid = cfg.grid;
        let lambda = cfg.source.wavelength;
        let (t1, t2) = cfg.trains().unwrap();
        let h1 = impulse_matrix(&t1, grid, t1.output_grid(&grid, lambda).unwrap(), lambda).unwrap();
        let h2 = impulse_matrix(&t2, grid, t2.output_grid(&grid, lambda).unwrap(), lambda).unwrap();
        let sigma = cells * grid.dx();
        let gamma = (0..grid.n())
            .map(|k| {
                let d = k as f64 * grid.dx();
                (-d * d / (2.0 * sigma * sigma)).exp()
            })
            .collect();
        let ones = vec![1.0; grid.n()];
        let cl = analytic_g_classical(
            &FieldCorrelationModel::classical(grid, ones.clone(), CoherenceKernel::Tabulated(gamma)).unwrap(),
            &h1,
            &h2,
        )
        .unwrap();
        let ent = analytic_g_entangled(&FieldCorrelationModel::entangled(grid, ones, Some(sigma)).unwrap(), &h1, &h2)
            .unwrap()
            .reflect_x1();
        let scale = cl.max();
        for (a, b) in ent.g.iter().zip(&cl.g) {
            prop_assert!((a - b).abs() <= 1e-8 * scale);
        }
    }
}

#[test]
fn coherent_source_gives_rank_one_g() {
    let cfg = ScenarioConfig::oracle_default();
    let grid = cfg.grid;
    let lambda = cfg.source.wavelength;
    let (t1, t2) = cfg.trains().unwrap();
    let h1 = impulse_matrix(&t1, grid, t1.output_grid(&grid, lambda).unwrap(), lambda).unwrap();
    let h2 = impulse_matrix(&t2, grid, t2.output_grid(&grid, lambda).unwrap(), lambda).unwrap();
    let g = analytic_g_classical(
        &FieldCorrelationModel::classical(grid, vec![1.0; grid.n()], CoherenceKernel::Constant).unwrap(),
        &h1,
        &h2,
    )
    .unwrap();
    assert!(rank_ratio(&g) < 1e-6);
    // Every x2-cut is a multiple of every other.
    let a = cut(&g, Axis::X2, 10).unwrap();
    let b = cut(&g, Axis::X2, 40).unwrap();
    let ratio = b[32] / a[32];
    for (x, y) in a.iter().zip(&b) {
        assert!((y - ratio * x).abs() <= 1e-8 * g.max());
    }
}
