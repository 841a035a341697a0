use std::collections::BTreeMap;
use std::fs;

use npode::data::{
    denormalize, denormalize_std, generate_spiral, generate_synthetic6, load_csv, split_indices, split_train_test,
    spiral_flow, write_csv, Column, Dataset, DatasetMetadata, Provenance, SpiralConfig, SplitSpec, SYNTHETIC6_RANGES,
};
use npode::Error;
use proptest::prelude::*;

fn table(rows: &[(Vec<f64>, Vec<f64>)]) -> Dataset {
    Dataset::from_rows(rows, Provenance::Csv).unwrap()
}

#[test]
fn spiral_matches_closed_form_when_noiseless() {
    let ds = generate_spiral(&SpiralConfig { noise_std: 0.0, ..Default::default() }).unwrap();
    assert_eq!((ds.len(), ds.x_dim(), ds.y_dim()), (200, 1, 2));
    for i in [0, 37, 199] {
        let x = ds.x_row(i)[0];
        // independent oracle: rotate (1, 0) by x and damp
        let want = [4.0 * (-0.1 * x).exp() * x.cos(), 4.0 * (-0.1 * x).exp() * x.sin()];
        for k in 0..2 {
            assert!((ds.y_row(i)[k] - want[k]).abs() < 1e-12);
        }
    }
    assert!((ds.x_row(199)[0] - 4.0 * std::f64::consts::PI).abs() < 1e-12);
    assert_eq!(ds.clean_y().unwrap(), ds.y());
}

#[test]
fn spiral_flow_solves_its_ode() {
    let h = 1e-6;
    for &x in &[0.3, 2.0, 7.5] {
        let y = spiral_flow(x, [0.4, -1.2]);
        let (a, b) = (spiral_flow(x + h, [0.4, -1.2]), spiral_flow(x - h, [0.4, -1.2]));
        let dy = [(a[0] - b[0]) / (2.0 * h), (a[1] - b[1]) / (2.0 * h)];
        assert!((dy[0] - (-0.1 * y[0] - y[1])).abs() < 1e-8);
        assert!((dy[1] - (y[0] - 0.1 * y[1])).abs() < 1e-8);
    }
}

#[test]
fn spiral_noise_has_requested_variance() {
    let cfg = SpiralConfig { n_points: 5000, noise_std: 0.1, seed: 3, ..Default::default() };
    let ds = generate_spiral(&cfg).unwrap();
    let resid: Vec<f64> = ds.y().iter().zip(ds.clean_y().unwrap()).map(|(a, b)| a - b).collect();
    let var = resid.iter().map(|r| r * r).sum::<f64>() / resid.len() as f64;
    assert!(var > 0.6 * 0.01 && var < 1.5 * 0.01, "{var}");
    let again = generate_spiral(&cfg).unwrap();
    assert_eq!(ds, again);
}

#[test]
fn synthetic6_shape_ranges_and_determinism() {
    let ds = generate_synthetic6(106, 0.05, 4).unwrap();
    assert_eq!((ds.len(), ds.x_dim(), ds.y_dim()), (106, 6, 1));
    for i in 0..ds.len() {
        for (v, (lo, hi)) in ds.x_row(i).iter().zip(SYNTHETIC6_RANGES) {
            assert!(*v >= lo && *v <= hi);
        }
    }
    assert_eq!(ds, generate_synthetic6(106, 0.05, 4).unwrap());
    assert_ne!(ds, generate_synthetic6(106, 0.05, 5).unwrap());
    assert!(ds.normalize().is_ok());
}

#[test]
fn csv_round_trip_is_bit_exact() {
    let ds = generate_synthetic6(20, 0.05, 6).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.csv");
    write_csv(&ds, &path).unwrap();
    let back = load_csv(&path).unwrap();
    assert_eq!(back.x(), ds.x());
    assert_eq!(back.y(), ds.y());
}

#[test]
fn csv_header_order_does_not_matter() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    fs::write(&a, "x1,x2,y1\n1,2,3\n4,5,6\n").unwrap();
    fs::write(&b, "y1,x2,x1\n3,2,1\n6,5,4\n").unwrap();
    let (da, db) = (load_csv(&a).unwrap(), load_csv(&b).unwrap());
    assert_eq!(da.x(), db.x());
    assert_eq!(da.y(), db.y());
    assert_eq!(da.x(), &[1.0, 2.0, 4.0, 5.0]);
}

#[test]
fn csv_errors_name_the_offending_row() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    fs::write(&path, "x1,y1\n1,2\n3,oops\n").unwrap();
    match load_csv(&path) {
        Err(Error::Ingest { location, .. }) => assert!(location.contains("row 2"), "{location}"),
        other => panic!("{other:?}"),
    }
    fs::write(&path, "x1,y1\n1,2\n3\n").unwrap();
    assert!(matches!(load_csv(&path), Err(Error::Ingest { .. })));
    fs::write(&path, "x1,z1\n1,2\n").unwrap();
    assert!(matches!(load_csv(&path), Err(Error::Ingest { .. })));
    fs::write(&path, "x1,y1\n1,NaN\n").unwrap();
    assert!(load_csv(&path).is_err());
    assert!(load_csv(&dir.path().join("missing.csv")).is_err());
}

#[test]
fn normalization_maps_to_the_unit_box_and_back() {
    let ds = generate_synthetic6(50, 0.05, 7).unwrap();
    let n = ds.normalize().unwrap();
    for j in 0..6 {
        let col = n.x_column(j);
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!((lo + 2.0).abs() < 1e-12 && (hi - 2.0).abs() < 1e-12);
    }
    let back = n.denormalized().unwrap();
    for (a, b) in back.x().iter().chain(back.y()).zip(ds.x().iter().chain(ds.y())) {
        assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
    }
    let y = denormalize(&n, &n.y_column(0), Column::Output(0)).unwrap();
    for (a, b) in y.iter().zip(ds.y()) {
        assert!((a - b).abs() < 1e-12);
    }
    let span = ds.y().iter().copied().fold(f64::NEG_INFINITY, f64::max)
        - ds.y().iter().copied().fold(f64::INFINITY, f64::min);
    let s = denormalize_std(&n, &[1.0], Column::Output(0)).unwrap();
    assert!((s[0] - span / 4.0).abs() < 1e-12);
}

#[test]
fn constant_column_is_named() {
    let ds = table(&[(vec![1.0, 5.0], vec![0.0]), (vec![2.0, 5.0], vec![1.0])]);
    match ds.normalize() {
        Err(Error::DegenerateColumn { column }) => assert_eq!(column, "x2"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn held_out_rows_use_training_ranges() {
    let train = table(&[(vec![0.0], vec![0.0]), (vec![4.0], vec![8.0])]);
    let test = table(&[(vec![6.0], vec![2.0])]);
    let n = train.normalize().unwrap();
    let t = test.normalize_with(n.normalization().unwrap()).unwrap();
    assert_eq!(t.x(), &[4.0]);
    assert_eq!(t.y(), &[-1.0]);
}

#[test]
fn nested_splits_are_prefixes_and_disjoint_from_test() {
    let spec = SplitSpec { test_count: 20, nested_train_sizes: vec![5, 10, 40, 86], seed: 8 };
    let s = split_indices(106, &spec).unwrap();
    assert_eq!(s.test.len(), 20);
    assert_eq!(s.train.len(), 86);
    let mut all: Vec<usize> = s.train.iter().chain(&s.test).copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..106).collect::<Vec<_>>());
    for w in s.nested.windows(2) {
        assert_eq!(&w[1][..w[0].len()], &w[0][..]);
    }
    assert_eq!(s, split_indices(106, &spec).unwrap());
    let ds = generate_synthetic6(106, 0.05, 0).unwrap();
    let (train, test, nested) = split_train_test(&ds, &spec).unwrap();
    assert_eq!((train.len(), test.len(), nested.len()), (86, 20, 4));
    assert_eq!(nested[0].x_row(0), ds.x_row(s.train[0]));
}

#[test]
fn invalid_split_specs_are_rejected() {
    let bad = [
        SplitSpec { test_count: 10, nested_train_sizes: vec![], seed: 0 },
        SplitSpec { test_count: 2, nested_train_sizes: vec![5, 5], seed: 0 },
        SplitSpec { test_count: 2, nested_train_sizes: vec![9], seed: 0 },
        SplitSpec { test_count: 2, nested_train_sizes: vec![0, 3], seed: 0 },
    ];
    for spec in bad {
        assert!(split_indices(10, &spec).is_err(), "{spec:?}");
    }
}

#[test]
fn metadata_sidecar_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let gen = BTreeMap::from([("noise_std".to_string(), "0.05".to_string())]);
    let mut texts = Vec::new();
    for name in ["a.json", "b.json"] {
        let ds = generate_synthetic6(10, 0.05, 9).unwrap();
        let path = dir.path().join(name);
        DatasetMetadata::describe(&ds, Some(9), gen.clone()).write(&path).unwrap();
        texts.push(fs::read(&path).unwrap());
    }
    assert_eq!(texts[0], texts[1]);
    let v: serde_json::Value = serde_json::from_slice(&texts[0]).unwrap();
    assert_eq!(v["rows"], 10);
    assert_eq!(v["seed"], 9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn csv_round_trip_any_finite_values(
        rows in prop::collection::vec((prop::collection::vec(-1e12f64..1e12, 2), -1e-9f64..1e9), 1..20)
    ) {
        let rows: Vec<(Vec<f64>, Vec<f64>)> = rows.into_iter().map(|(x, y)| (x, vec![y])).collect();
        let ds = table(&rows);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        write_csv(&ds, &path).unwrap();
        let back = load_csv(&path).unwrap();
        prop_assert_eq!(back.x(), ds.x());
        prop_assert_eq!(back.y(), ds.y());
    }

    #[test]
    fn normalize_round_trip(values in prop::collection::vec(-1e6f64..1e6, 3..30)) {
        let rows: Vec<(Vec<f64>, Vec<f64>)> = values.iter().enumerate().map(|(i, &v)| (vec![i as f64], vec![v])).collect();
        let ds = table(&rows);
        prop_assume!(ds.normalize().is_ok());
        let back = ds.normalize().unwrap().denormalized().unwrap();
        for (a, b) in back.y().iter().zip(ds.y()) {
            prop_assert!((a - b).abs() <= 1e-12 * 1e6);
        }
        for (a, b) in back.x().iter().zip(ds.x()) {
            prop_assert!((a - b).abs() <= 1e-12 * 30.0);
        }
    }
}
