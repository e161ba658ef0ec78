use proptest::prelude::*;
use rydberg_eit::pair::counter_analytics;
use rydberg_eit::scan::*;
use rydberg_eit::{Error, PhysicalParams};

fn base() -> PhysicalParams {
    let mut p = PhysicalParams { gamma: 1.0, delta: 20.0, omega: 40.0, g_sqrt_n: Some(400.0), medium_length: 0.05, ..Default::default() };
    // d_B = 2
    p.c6 = p.c6_for_blockade_radius(2.0 / (4.0 * 400.0 * 400.0));
    p
}

fn spec(key: &str, values: Vec<f64>, hold: Hold) -> ScanSpec {
    ScanSpec { swept_key: key.into(), values, base: base(), observables: Observable::ALL.to_vec(), hold }
}

fn strip_index(csv: &str) -> Vec<String> {
    csv.lines().skip(1).map(|l| l.split_once(',').unwrap().1.to_string()).collect()
}

#[test]
fn single_point_scan_is_a_single_run() {
    let recs = run_scan(&spec("delta", vec![20.0], Hold::None)).unwrap();
    assert_eq!(recs.len(), 1);
    let (direct, _) = evaluate(&base(), &Observable::ALL).unwrap();
    assert_eq!(recs[0].observables, direct);
    assert!(recs[0].ok());
    assert_eq!(recs[0].config_hash.len(), 64);
}

#[test]
fn phase_scales_inversely_with_detuning_at_fixed_depth() {
    let recs = run_scan(&spec("delta", vec![10.0, 20.0, 40.0, 80.0], Hold::BlockadeRadius)).unwrap();
    for r in &recs {
        assert!((r.depth - 2.0).abs() < 1e-9, "d_B drifted to {}", r.depth);
    }
    let x: Vec<f64> = recs.iter().map(|r| r.swept_value).collect();
    let y: Vec<f64> = recs.iter().map(|r| r.observables[&Observable::Phi]).collect();
    let (slope, resid) = power_law_fit(&x, &y);
    assert!((slope + 1.0).abs() < 0.05, "slope {slope}");
    assert!(resid < 0.05, "residual {resid}");
}

#[test]
fn depth_scan_follows_analytic_curve() {
    // g sqrt(n) = 400 Delta, z_B/sigma from 0.0025 to 0.03
    let mut p = base();
    p.g_sqrt_n = Some(400.0 * p.delta);
    let g2n = p.g_sqrt_n.unwrap().powi(2);
    let sigma = 4.0 / (4.0 * g2n * 0.03);
    let values: Vec<f64> = [0.0025, 0.005, 0.01, 0.02, 0.03].iter().map(|f| f * sigma).collect();
    let s = ScanSpec { swept_key: "z_B".into(), values, base: p, observables: vec![Observable::Phi, Observable::Eta, Observable::DB], hold: Hold::None };
    let recs = run_scan(&s).unwrap();
    let cmp = compare_to_analytic(&recs).unwrap();
    assert!(cmp.pass, "{:?}", cmp.failures().collect::<Vec<_>>());
    let cos: Vec<f64> = recs.iter().map(|r| r.observables[&Observable::Phi].cos()).collect();
    assert!(cos.windows(2).all(|w| w[1] < w[0]), "{cos:?}");
    assert!((recs[4].depth - 4.0).abs() < 1e-9);
}

#[test]
fn analytic_self_comparison_has_zero_deviation() {
    let mut recs = run_scan(&spec("d_B", vec![0.5, 1.0, 2.0, 4.0], Hold::None)).unwrap();
    for r in &mut recs {
        let a = counter_analytics(&r.config.params).unwrap();
        r.observables.retain(|o, _| matches!(o, Observable::Phi | Observable::Eta));
        r.observables.insert(Observable::Phi, a.phase);
        r.observables.insert(Observable::Eta, a.eta);
    }
    let cmp = compare_to_analytic(&recs).unwrap();
    assert!(cmp.pass);
    assert_eq!(cmp.rows.len(), 8);
    assert!(cmp.rows.iter().all(|r| r.relative_deviation == 0.0));
}

#[test]
fn corrupted_record_fails_with_named_criterion() {
    let mut recs = run_scan(&spec("d_B", vec![1.0, 2.0], Hold::None)).unwrap();
    assert!(compare_to_analytic(&recs).unwrap().pass);
    *recs[1].observables.get_mut(&Observable::Eta).unwrap() = 0.5;
    let cmp = compare_to_analytic(&recs).unwrap();
    assert!(!cmp.pass);
    let fails: Vec<_> = cmp.failures().collect();
    assert_eq!(fails.len(), 1);
    assert_eq!((fails[0].index, fails[0].observable), (1, Observable::Eta));
    assert!(fails[0].criterion.starts_with("4:"), "{}", fails[0].criterion);
}

#[test]
fn resonant_delay_has_no_analytic_branch() {
    let mut p = base();
    p.delta = 0.0;
    p.c6 = p.c6_for_blockade_radius(1e-5);
    let s = ScanSpec { swept_key: "d_b".into(), values: vec![2.0], base: p, observables: vec![Observable::Delay], hold: Hold::None };
    let recs = run_scan(&s).unwrap();
    assert!(recs[0].ok(), "{:?}", recs[0].error);
    assert!(matches!(compare_to_analytic(&recs), Err(Error::MissingAnalytic(_))));
}

#[test]
fn point_failures_are_recorded_and_the_scan_continues() {
    let recs = run_scan(&spec("medium_length", vec![-1.0, 0.05], Hold::None)).unwrap();
    assert!(!recs[0].ok());
    assert!(recs[0].error.as_ref().unwrap().contains("medium_length"));
    assert!(recs[1].ok());
    let csv = to_csv(&recs);
    assert!(csv.lines().nth(1).unwrap().contains("failed: "));
    let cmp = compare_to_analytic(&recs).unwrap();
    assert!(!cmp.pass);
    assert!(cmp.failures().all(|f| f.index == 0));
}

#[test]
fn invalid_specs_are_rejected() {
    assert!(run_scan(&spec("delta", vec![10.0, 30.0, 20.0], Hold::None)).is_err());
    assert!(run_scan(&spec("delta", vec![10.0, 10.0], Hold::None)).is_err());
    assert!(run_scan(&spec("temperature", vec![1.0], Hold::None)).is_err());
    assert!(run_scan(&spec("delta", vec![], Hold::None)).is_err());
}

#[test]
fn records_replay_exactly() {
    let recs = run_scan(&spec("omega", vec![20.0, 40.0, 80.0], Hold::None)).unwrap();
    for r in &recs {
        let again = replay(r).unwrap();
        for (o, v) in &r.observables {
            assert!((again[o] - v).abs() <= 1e-12 * v.abs(), "{o:?}: {} vs {v}", again[o]);
        }
    }
}

#[test]
fn reversed_scan_reverses_rows() {
    let values = vec![0.5, 1.0, 2.0, 4.0];
    let fwd = to_csv(&run_scan(&spec("d_B", values.clone(), Hold::None)).unwrap());
    let rev = to_csv(&run_scan(&spec("d_B", values.into_iter().rev().collect(), Hold::None)).unwrap());
    let mut a = strip_index(&fwd);
    a.reverse();
    assert_eq!(a, strip_index(&rev));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]
    #[test]
    fn points_are_pure(perm in Just(vec![0usize, 1, 2, 3]).prop_shuffle()) {
        let values = [10.0, 20.0, 40.0, 80.0];
        let s = spec("delta", values.to_vec(), Hold::BlockadeRadius);
        let reference = strip_index(&to_csv(&run_points(&s)));
        let shuffled = ScanSpec { values: perm.iter().map(|&i| values[i]).collect(), ..s };
        let rows = strip_index(&to_csv(&run_points(&shuffled)));
        for (k, &i) in perm.iter().enumerate() {
            prop_assert_eq!(&rows[k], &reference[i]);
        }
    }
}

#[test]
fn golden_round_trip_and_mismatch_reporting() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scan.csv");
    let recs = run_scan(&spec("d_B", vec![1.0, 2.0, 4.0], Hold::None)).unwrap();
    emit_golden(&recs, &path).unwrap();
    assert!(check_golden(&recs, &path).unwrap().pass());

    let mut bumped = recs.clone();
    *bumped[2].observables.get_mut(&Observable::Phi).unwrap() *= 1.0 + 1e-6;
    let v = check_golden(&bumped, &path).unwrap();
    assert_eq!(v.mismatches.len(), 1, "{:?}", v.mismatches);
    assert!(v.mismatches[0].contains("row 2, column 'phi'"), "{}", v.mismatches[0]);

    // below the 1e-9 tolerance
    let mut tiny = recs.clone();
    *tiny[0].observables.get_mut(&Observable::Eta).unwrap() *= 1.0 + 1e-12;
    assert!(check_golden(&tiny, &path).unwrap().pass());

    let mut fewer = recs.clone();
    for r in &mut fewer {
        r.observables.remove(&Observable::Delay);
    }
    let v = check_golden(&fewer, &path).unwrap();
    assert_eq!(v.mismatches, vec!["schema: column 'delay' missing from current output".to_string()]);

    let v = check_golden(&recs[..2], &path).unwrap();
    assert!(v.mismatches[0].starts_with("row count"), "{:?}", v.mismatches);
}

#[test]
fn golden_bytes_do_not_depend_on_thread_count() {
    let s = spec("delta", vec![10.0, 20.0, 40.0, 80.0, 160.0], Hold::BlockadeRadius);
    let run = |n: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
        pool.install(|| to_csv(&run_scan(&s).unwrap()))
    };
    let one = run(1);
    assert_eq!(one.as_bytes(), run(4).as_bytes());
    assert_eq!(one.as_bytes(), run(3).as_bytes());
}

#[test]
fn spec_from_config() {
    let text = "gamma = 1\ndelta = 20 gamma\nomega = 40 gamma\ng_sqrt_n = 400 gamma\nc6 = 1e-30 gamma*(c/gamma)^6\nmedium_length = 0.05 c/gamma\nlight_speed = 1\n[run]\nscan_key = delta\nscan_values = 10, 20 40\nobservables = phi eta\nhold = z_B\n";
    let cfg = rydberg_eit::config::Config::parse(text).unwrap();
    let s = ScanSpec::from_config(&cfg).unwrap();
    assert_eq!(s.values, vec![10.0, 20.0, 40.0]);
    assert_eq!(s.observables, vec![Observable::Phi, Observable::Eta]);
    assert_eq!(s.hold, Hold::BlockadeRadius);
    let bad = rydberg_eit::config::Config::parse(&text.replace("phi eta", "phi colour")).unwrap();
    assert!(ScanSpec::from_config(&bad).is_err());
    let recs = run_scan(&s).unwrap();
    let kv = report_kv(&recs, Some(&compare_to_analytic(&recs).unwrap()));
    assert!(kv.contains("points=3\n") && kv.contains("failed_points=0\n") && kv.contains("comparison=pass\n"), "{kv}");
}
