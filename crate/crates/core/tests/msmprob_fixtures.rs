use std::collections::BTreeMap;
use std::path::PathBuf;

use msm_core::data::*;
use msm_core::msmprob::*;
use msm_core::regression::Ties;

fn fixture(name: &str) -> Dataset {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name);
    parse_csv(&std::fs::read(p).unwrap(), None).unwrap()
}

fn colon() -> ValidatedIdmData {
    let m = IdmMapping {
        time1: "time1".into(),
        event1: "event1".into(),
        stime: "Stime".into(),
        event: "event".into(),
        covariates: vec!["rx".into(), "sex".into(), "age".into()],
    };
    bind_idm(&fixture("colonIDM.csv"), &m).unwrap()
}

fn ebmt() -> LongFormatData {
    let edges = [
        (1, 2),
        (1, 3),
        (1, 5),
        (1, 6),
        (2, 4),
        (2, 5),
        (2, 6),
        (3, 4),
        (3, 5),
        (3, 6),
        (4, 5),
        (4, 6),
    ];
    let states = ["rec", "ae", "recae", "rel", "srv"]
        .iter()
        .map(|s| StateColumns {
            time: s.to_string(),
            status: format!("{s}.s"),
        })
        .collect();
    let m = MsmMapping {
        system: TransitionSystem::build(6, None, &edges).unwrap(),
        states,
        covariates: vec![
            "year".into(),
            "agecl".into(),
            "proph".into(),
            "match".into(),
        ],
        id: Some("id".into()),
        tie_priority: None,
    };
    msm_to_long(&bind_msm(&fixture("ebmt4.csv"), &m).unwrap()).unwrap()
}

const GRID: [f64; 4] = [730.0, 1095.0, 1460.0, 1825.0];

fn assert_rows_stochastic(curves: &[ProbabilityCurve], label: &str) {
    let mut rows: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for c in curves {
        let r = rows
            .entry(c.from)
            .or_insert_with(|| vec![0.0; c.grid.len()]);
        for (k, g) in c.grid.iter().enumerate() {
            assert!(g.est >= -1e-12 && g.est <= 1.0 + 1e-12, "{label}: {g:?}");
            r[k] += g.est;
        }
    }
    for (h, sums) in rows {
        for v in sums {
            assert!((v - 1.0).abs() < 1e-10, "{label} row {h}: {v}");
        }
    }
}

#[test]
fn colon_rows_are_stochastic() {
    let d = colon();
    let long = idm_to_long(&d).unwrap();
    assert_rows_stochastic(&aalen_johansen(&long, 365.0, Some(&GRID)).unwrap(), "aj");
    assert_rows_stochastic(&landmark_idm(&d, 365.0, Some(&GRID)).unwrap(), "lm");
    assert_rows_stochastic(
        &presmoothed_landmark_idm(&d, 365.0, Some(&GRID)).unwrap(),
        "plm",
    );
    for h in 1..=2 {
        assert_rows_stochastic(
            &landmark_aalen_johansen(&long, 365.0, h, Some(&GRID)).unwrap(),
            "lmaj",
        );
    }
    assert_rows_stochastic(
        &ipcw_conditional(&d, 365.0, Some(&GRID), "age", 48.0, None).unwrap(),
        "ipcw",
    );
    let profile = BTreeMap::from([
        ("rx".to_string(), "Obs".to_string()),
        ("sex".to_string(), "1".to_string()),
        ("age".to_string(), "48".to_string()),
    ]);
    let cov: Vec<String> = ["rx", "sex", "age"].map(String::from).to_vec();
    assert_rows_stochastic(
        &breslow_conditional(&long, 365.0, Some(&GRID), &cov, &profile, Ties::Efron).unwrap(),
        "breslow",
    );
}

#[test]
fn ebmt_rows_are_stochastic() {
    let long = ebmt();
    assert_rows_stochastic(&aalen_johansen(&long, 365.0, Some(&GRID)).unwrap(), "aj");
    for h in 1..=4 {
        assert_rows_stochastic(
            &landmark_aalen_johansen(&long, 365.0, h, Some(&GRID)).unwrap(),
            "lmaj",
        );
    }
    let profile = BTreeMap::from([
        ("year".to_string(), "1995-1998".to_string()),
        ("agecl".to_string(), "<=20".to_string()),
        ("proph".to_string(), "no".to_string()),
    ]);
    let cov: Vec<String> = ["year", "agecl", "proph"].map(String::from).to_vec();
    assert_rows_stochastic(
        &breslow_conditional(&long, 365.0, Some(&GRID), &cov, &profile, Ties::Efron).unwrap(),
        "breslow",
    );
}

#[test]
fn colon_per_transition_fits() {
    let long = idm_to_long(&colon()).unwrap();
    let cov: Vec<String> = ["rx", "sex", "age"].map(String::from).to_vec();
    let fits = per_transition_cox(&long, &cov, ClockMode::Markov, Ties::Efron).unwrap();
    assert_eq!(fits.len(), 3);
    assert!(fits
        .iter()
        .all(|f| f.fit.as_ref().is_some_and(|f| f.converged)));
}

#[test]
fn bootstrap_is_deterministic() {
    let d = colon();
    let opts = BootstrapOptions {
        n_boot: 20,
        conf_level: 0.95,
        seed: 42,
    };
    let run = || {
        let point = landmark_idm(&d, 365.0, Some(&GRID)).unwrap();
        let c = bootstrap_ci(point, d.len(), &opts, |idx| {
            landmark_idm(&d.select(idx), 365.0, Some(&GRID))
        })
        .unwrap();
        serde_json::to_string(&c).unwrap()
    };
    let a = run();
    assert_eq!(a, run());
    assert!(a.contains("\"lower\""));
}
