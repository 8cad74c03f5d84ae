//! Curve grids as CSV, one row per step point.

use msm_core::analysis::AnalysisKind;
use serde_json::Value;

pub fn supported(kind: AnalysisKind) -> bool {
    matches!(
        kind,
        AnalysisKind::Km | AnalysisKind::TransProb | AnalysisKind::Cif
    )
}

fn cell(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn items(v: &Value) -> &[Value] {
    v.as_array().map(Vec::as_slice).unwrap_or(&[])
}

pub fn curves_csv(kind: AnalysisKind, result: &Value) -> Result<String, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    match kind {
        AnalysisKind::Km => {
            let fields = ["time", "n_risk", "n_event", "surv", "se", "lower", "upper"];
            let mut header = vec!["group"];
            header.extend(fields);
            w.write_record(&header)?;
            for c in items(&result["curves"]) {
                for p in items(&c["points"]) {
                    let mut row = vec![cell(&c["group"])];
                    row.extend(fields.iter().map(|f| cell(&p[*f])));
                    w.write_record(&row)?;
                }
            }
        }
        AnalysisKind::TransProb => {
            w.write_record(["method", "s", "from", "to", "t", "est", "lower", "upper"])?;
            for c in items(&result["curves"]) {
                for g in items(&c["grid"]) {
                    w.write_record([
                        cell(&c["method"]),
                        cell(&c["s"]),
                        cell(&c["from"]),
                        cell(&c["to"]),
                        cell(&g["t"]),
                        cell(&g["est"]),
                        cell(&g["lower"]),
                        cell(&g["upper"]),
                    ])?;
                }
            }
        }
        AnalysisKind::Cif => {
            w.write_record(["t", "est", "lower", "upper"])?;
            for g in items(&result["grid"]) {
                w.write_record([
                    cell(&g["t"]),
                    cell(&g["est"]),
                    cell(&g["lower"]),
                    cell(&g["upper"]),
                ])?;
            }
        }
        _ => {}
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("utf8"))
}
