use std::collections::HashMap;
use std::path::PathBuf;

use msm_core::data::*;

fn fixture(name: &str) -> Vec<u8> {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name);
    std::fs::read(p).unwrap()
}

fn ebmt_mapping() -> MsmMapping {
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
    let labels = ["Tx", "Rec", "AE", "Rec+AE", "Rel", "Death"]
        .map(String::from)
        .to_vec();
    let states = ["rec", "ae", "recae", "rel", "srv"]
        .iter()
        .map(|s| StateColumns {
            time: s.to_string(),
            status: format!("{s}.s"),
        })
        .collect();
    MsmMapping {
        system: TransitionSystem::build(6, Some(labels), &edges).unwrap(),
        states,
        covariates: vec![
            "year".into(),
            "agecl".into(),
            "proph".into(),
            "match".into(),
        ],
        id: Some("id".into()),
        tie_priority: None,
    }
}

#[test]
fn aml_fixture_binds_without_drops() {
    let d = parse_csv(&fixture("aml.csv"), None).unwrap();
    assert_eq!(d.column("x").unwrap().kind, ColumnKind::Categorical);
    let v = bind_survival(
        &d,
        &SurvivalMapping {
            time: "time1".into(),
            status: "status".into(),
            covariates: vec!["x".into()],
        },
    )
    .unwrap();
    assert_eq!(v.dropped, 0);
    assert_eq!(v.len(), 23);
}

#[test]
fn colon_idm_fixture_binds_929_rows() {
    let d = parse_csv(&fixture("colonIDM.csv"), None).unwrap();
    let v = bind_idm(
        &d,
        &IdmMapping {
            time1: "time1".into(),
            event1: "event1".into(),
            stime: "Stime".into(),
            event: "event".into(),
            covariates: vec!["rx".into(), "sex".into(), "age".into()],
        },
    )
    .unwrap();
    assert_eq!(v.len(), 929);
    assert_eq!(v.dropped, 0);

    let long = idm_to_long(&v).unwrap();
    let mut per_subject = vec![0usize; v.len()];
    for r in &long.rows {
        per_subject[r.subject] += 1;
    }
    for (i, &n) in per_subject.iter().enumerate() {
        assert_eq!(n, if v.event1[i] { 3 } else { 2 });
    }

    // Brute-force tally straight from the CSV columns.
    let (mut n12, mut n13, mut n23, mut cens1, mut cens2) = (0, 0, 0, 0, 0);
    for i in 0..v.len() {
        match (v.event1[i], v.event[i]) {
            (true, true) => {
                n12 += 1;
                n23 += 1
            }
            (true, false) => {
                n12 += 1;
                cens2 += 1
            }
            (false, true) => n13 += 1,
            (false, false) => cens1 += 1,
        }
    }
    let c = count_transitions(&long);
    assert_eq!(c.counts[0][1], n12);
    assert_eq!(c.counts[0][2], n13);
    assert_eq!(c.counts[1][2], n23);
    assert_eq!(c.no_event, vec![cens1, cens2, 0]);
    assert_eq!(c.counts[0][1] + c.counts[0][2] + c.no_event[0], 929);
}

#[test]
fn ebmt4_expansion_matches_reference_long_format() {
    let d = parse_csv(&fixture("ebmt4.csv"), None).unwrap();
    let v = bind_msm(&d, &ebmt_mapping()).unwrap();
    assert_eq!(v.len(), 2279);
    let long = msm_to_long(&v).unwrap();
    assert_eq!(long.n_subjects(), 2279);

    let reference = parse_csv(&fixture("ebmt4_long_reference.csv"), None).unwrap();
    assert_eq!(long.rows.len(), reference.n_rows());
    let col = |n: &str| reference.numeric(n).unwrap();
    let (id, from, to, trans, start, stop, status) = (
        col("id"),
        col("from"),
        col("to"),
        col("trans"),
        col("Tstart"),
        col("Tstop"),
        col("status"),
    );
    let mut expected: HashMap<(usize, usize), (usize, usize, f64, f64, bool)> = HashMap::new();
    for i in 0..reference.n_rows() {
        expected.insert(
            (id[i].unwrap() as usize, trans[i].unwrap() as usize),
            (
                from[i].unwrap() as usize,
                to[i].unwrap() as usize,
                start[i].unwrap(),
                stop[i].unwrap(),
                status[i].unwrap() == 1.0,
            ),
        );
    }
    for r in &long.rows {
        let e = expected
            .get(&(r.id, r.trans))
            .unwrap_or_else(|| panic!("unexpected row {r:?}"));
        assert_eq!(
            *e,
            (r.from, r.to, r.tstart, r.tstop, r.status),
            "subject {}",
            r.id
        );
    }

    let c = count_transitions(&long);
    let per_trans: Vec<usize> = long
        .system
        .transitions()
        .iter()
        .map(|t| c.counts[t.from - 1][t.to - 1])
        .collect();
    assert_eq!(
        per_trans,
        vec![785, 907, 95, 160, 227, 112, 39, 433, 56, 197, 107, 137]
    );
}

#[test]
fn csv_round_trip_on_fixtures() {
    for name in ["veteran.csv", "colonIDM.csv", "ebmt4.csv"] {
        let d = parse_csv(&fixture(name), None).unwrap();
        let again = parse_csv(d.to_csv(b';').as_bytes(), None).unwrap();
        assert_eq!(d, again, "{name}");
    }
}
