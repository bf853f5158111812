use chreode::landscape::{
    read_dataset, write_dataset, DatasetError, Fate, Landscape, LandscapeKind, Snapshot, TrajectoryDataset,
};
use chreode::population_losses::{mmd, KernelBank};
use chreode::seeding::item_rng;
use ndarray::{Array2, Axis};
use proptest::prelude::*;
use std::f64::consts::PI;

#[test]
fn time_zero_is_the_initial_gaussian() {
    let l = Landscape::new(LandscapeKind::WellPlusRotation, 8);
    let n = 4000;
    let s = l.simulate_population(0.0, n, 11).unwrap();
    let mean = s.cells.mean_axis(Axis(0)).unwrap();
    let bound = 3.0 * l.init_std / (n as f64).sqrt();
    for (m, c) in mean.iter().zip(&l.init_center) {
        assert!((m - c).abs() < bound, "{m} vs {c}");
    }
}

#[test]
fn gradient_flow_descends_to_the_wells() {
    let mut l = Landscape::new(LandscapeKind::DoubleWell, 3);
    l.sigma = vec![0.0; 3];
    let starts = l.simulate_population(0.0, 50, 2).unwrap().cells;
    for row in starts.rows() {
        let mut z = row.to_vec();
        let mut u = l.potential(&z);
        let mut rng = item_rng(0, 0);
        for _ in 0..1000 {
            l.integrate(&mut z, 0.01, &mut rng);
            let next = l.potential(&z);
            assert!(next <= u, "U rose from {u} to {next}");
            u = next;
        }
        assert!((z[0].abs() - 1.0).abs() < 1e-3, "ended at z1 = {}", z[0]);
    }
}

#[test]
fn oversized_step_is_halved_for_gradient_flow() {
    let mut l = Landscape::new(LandscapeKind::DoubleWell, 2);
    l.sigma = vec![0.0; 2];
    l.dt = 0.9;
    let mut rng = item_rng(0, 0);
    for start in [[1.8, 0.4], [-0.2, 2.5], [0.05, -1.0]] {
        let mut z = start;
        l.integrate(&mut z, 5.0, &mut rng);
        assert!(l.potential(&z) <= l.potential(&start));
        assert!(z.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn quarter_turn_of_pure_rotation() {
    let mut l = Landscape::new(LandscapeKind::RotationOnly, 2);
    l.sigma = vec![0.0; 2];
    l.dt = 1e-3;
    let start = Array2::from_shape_vec((1, 2), vec![1.0, 0.0]).unwrap();
    let end = l.evolve(&start, PI / (2.0 * l.omega), 0).unwrap();
    assert!(end[[0, 0]].abs() < 1e-3, "{end}");
    assert!((end[[0, 1]] - 1.0).abs() < 1e-3, "{end}");
}

#[test]
fn evolve_is_independent_of_thread_count() {
    let l = Landscape::new(LandscapeKind::WellPlusRotation, 4);
    let starts = l.simulate_population(0.0, 64, 5).unwrap().cells;
    let a = l.evolve(&starts, 0.7, 9).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let b = pool.install(|| l.evolve(&starts, 0.7, 9).unwrap());
    assert_eq!(a, b);
}

#[test]
fn noiseless_clones_share_a_fate() {
    let mut l = Landscape::new(LandscapeKind::WellPlusRotation, 4);
    l.sigma = vec![0.0; 4];
    let bench = l.simulate_clones(0.0, 3.0, 20, 5, 1).unwrap();
    let fates = bench.atlas.fates.as_ref().unwrap();
    for c in fates.chunks(5) {
        assert!(c.iter().all(|f| *f == c[0]));
    }
    for r in bench.ratios.iter().flatten() {
        assert!(*r == 0.0 || *r == 1.0);
    }
}

#[test]
fn saddle_clones_split_evenly() {
    // every source sits exactly on the ridge, so left and right are equally
    // likely; the mean ratio over 200 clones has standard error ≈ 0.02
    let mut l = Landscape::new(LandscapeKind::DoubleWell, 2);
    l.init_center = vec![0.0, 0.0];
    l.init_std = 0.0;
    let bench = l.simulate_clones(0.0, 3.0, 200, 20, 4).unwrap();
    let r: Vec<f64> = bench.ratios.iter().flatten().copied().collect();
    assert!(r.len() > 190);
    let mean = r.iter().sum::<f64>() / r.len() as f64;
    assert!((mean - 0.5).abs() < 0.08, "mean ratio {mean}");
    let spread = r.iter().filter(|v| **v > 0.2 && **v < 0.8).count();
    assert!(spread > r.len() / 2, "ratios concentrate around 0.5");
}

#[test]
fn default_step_has_converged() {
    let l = Landscape::new(LandscapeKind::WellPlusRotation, 8);
    let c = l.dt_convergence(1.5, 1000, 3).unwrap();
    assert!(c.relative_change < 0.01, "{c:?}");
}

#[test]
fn dataset_round_trips_with_provenance() {
    let l = Landscape::new(LandscapeKind::DoubleWell, 3);
    let ds = l.simulate_dataset(&[0.0, 0.5, 1.0], 40, 8).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ds.txt");
    write_dataset(&ds, &path).unwrap();
    let back = read_dataset(&path).unwrap();
    assert_eq!(back, ds);
    assert!(back.provenance.is_some());

    let bench = l.simulate_clones(0.5, 1.5, 6, 4, 2).unwrap();
    let clones = TrajectoryDataset {
        snapshots: vec![bench.source.clone(), bench.atlas.clone()],
        provenance: None,
    };
    write_dataset(&clones, &path).unwrap();
    assert_eq!(read_dataset(&path).unwrap(), clones);
}

#[test]
fn corrupted_cell_count_is_reported() {
    let l = Landscape::new(LandscapeKind::DoubleWell, 2);
    let ds = l.simulate_dataset(&[0.0, 1.0], 5, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ds.txt");
    write_dataset(&ds, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap().replacen("n=5", "n=7", 1);
    std::fs::write(&path, text).unwrap();
    assert!(matches!(read_dataset(&path), Err(DatasetError::CountMismatch { expected: 7, found: 5, .. })));
}

#[test]
fn empty_snapshot_refused_at_write() {
    let ds = TrajectoryDataset {
        snapshots: vec![
            Snapshot::new(0.0, Array2::zeros((0, 2))),
            Snapshot::new(1.0, Array2::zeros((3, 2))),
        ],
        provenance: None,
    };
    let dir = tempfile::tempdir().unwrap();
    let err = write_dataset(&ds, &dir.path().join("x")).unwrap_err();
    assert!(matches!(err, DatasetError::EmptySnapshot(t) if t == 0.0));
}

#[test]
fn fate_band() {
    assert_eq!(Fate::of(-0.31), Fate::LeftWell);
    assert_eq!(Fate::of(0.29), Fate::Undecided);
    assert_eq!(Fate::of(-0.29), Fate::Undecided);
    assert_eq!(Fate::of(1.0), Fate::RightWell);
}

proptest! {
    #![proptest_config(cases(256))]

    #[test]
    fn analytic_gradient_matches_central_differences(
        z in prop::collection::vec(-2.0f64..2.0, 4),
    ) {
        let l = Landscape::new(LandscapeKind::WellPlusRotation, 4);
        let mut g = vec![0.0; 4];
        l.potential_grad(&z, &mut g);
        let h = 1e-5;
        for i in 0..4 {
            let (mut p, mut m) = (z.clone(), z.clone());
            p[i] += h;
            m[i] -= h;
            let fd = (l.potential(&p) - l.potential(&m)) / (2.0 * h);
            prop_assert!((fd - g[i]).abs() < 1e-8, "coord {}: {} vs {}", i, fd, g[i]);
        }
    }

    #[test]
    fn potential_is_nonnegative_with_minima_at_the_wells(z1 in -3.0f64..3.0, z2 in -3.0f64..3.0) {
        let l = Landscape::new(LandscapeKind::DoubleWell, 2);
        let u = l.potential(&[z1, z2]);
        prop_assert!(u >= 0.0);
        prop_assert!(u >= l.potential(&[1.0, 0.0]));
        prop_assert_eq!(l.potential(&[-1.0, 0.0]), 0.0);
    }

    #[test]
    fn clone_ratios_are_fractions(seed in 0u64..1000, t_end in 0.6f64..2.0) {
        let l = Landscape::new(LandscapeKind::WellPlusRotation, 3);
        let bench = l.simulate_clones(0.5, t_end, 4, 6, seed).unwrap();
        for r in bench.ratios.iter().flatten() {
            prop_assert!((0.0..=1.0).contains(r));
        }
    }

    #[test]
    fn cell_order_does_not_change_losses(seed in 0u64..1000) {
        let l = Landscape::new(LandscapeKind::WellPlusRotation, 3);
        let a = l.simulate_population(1.0, 30, seed).unwrap().cells;
        let b = l.simulate_population(1.5, 25, seed).unwrap().cells;
        let perm: Vec<usize> = (0..30).rev().collect();
        let ap = a.select(Axis(0), &perm);
        let bank = KernelBank::default();
        let (m1, m2) = (mmd(&a, &b, &bank).unwrap(), mmd(&ap, &b, &bank).unwrap());
        prop_assert!((m1 - m2).abs() <= 1e-12 * m1.abs().max(1e-12));
    }
}

fn cases(n: u32) -> ProptestConfig {
    ProptestConfig {
        cases: n,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}
