//! Agreement of merged scores with a golden set.

use std::collections::{BTreeMap, BTreeSet};

use super::collect::RawJudgment;
use super::judge::JudgeEndpoint;
use super::merge::{merge_average, merge_score, MergeStrategy};
use super::prompt::VariantId;
use crate::analyze::mae_mse;
use crate::artifact::{fmt_f64, CsvTable, CALIBRATION_HEADER};
use crate::corpus::{Corpus, Dimension};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Agreement {
    pub n: usize,
    pub mae: f64,
    pub mse: f64,
}

/// Per-dimension MAE and MSE of `merged` against `golden` over normalized
/// scores. Both corpora must hold the same ids; dimensions the golden set
/// does not score are skipped.
pub fn calibrate(merged: &Corpus, golden: &Corpus) -> Result<BTreeMap<Dimension, Agreement>> {
    let ids_m: BTreeSet<&str> = merged.iter().map(|r| r.id.as_str()).collect();
    let ids_g: BTreeSet<&str> = golden.iter().map(|r| r.id.as_str()).collect();
    let unmatched: Vec<String> = ids_m.symmetric_difference(&ids_g).map(|s| s.to_string()).collect();
    if !unmatched.is_empty() {
        return Err(Error::IdMismatch(unmatched));
    }
    let by_id: BTreeMap<&str, _> = merged.iter().map(|r| (r.id.as_str(), r)).collect();
    let mut out = BTreeMap::new();
    for dim in Dimension::ALL {
        let mut preds = Vec::new();
        let mut golds = Vec::new();
        for g in golden.iter() {
            let Some(gold) = g.scores.get(dim) else { continue };
            let pred = by_id[g.id.as_str()]
                .scores
                .get(dim)
                .ok_or_else(|| Error::MissingField {
                    id: g.id.clone(),
                    what: format!("{dim} score"),
                })?;
            preds.push(pred);
            golds.push(gold);
        }
        if preds.is_empty() {
            continue;
        }
        let (mae, mse) = mae_mse(&preds, &golds)?;
        out.insert(
            dim,
            Agreement {
                n: preds.len(),
                mae,
                mse,
            },
        );
    }
    Ok(out)
}

/// Row labels of the golden-set comparison table, in display order.
pub const TABLE_ROWS: [&str; 7] = [
    "Scale 1-4",
    "Scale 1-4 with Examples",
    "Scale 1-5",
    "Scale 1-5 with Examples",
    "Average",
    "Most Occurrence",
    "LLM",
];

/// Published (MAE, MSE) per row for naturalness, comprehensiveness and
/// on-topic, shown next to measured values as the reference baseline.
pub const REPORTED_REFERENCE: [[(f64, f64); 3]; 7] = [
    [(0.1467, 0.0458), (0.1120, 0.0393), (0.1018, 0.0375)],
    [(0.1426, 0.0452), (0.1067, 0.0405), (0.1023, 0.0410)],
    [(0.1608, 0.0506), (0.1204, 0.0398), (0.1235, 0.0487)],
    [(0.1492, 0.0464), (0.1161, 0.0376), (0.1045, 0.0401)],
    [(0.1265, 0.0310), (0.0929, 0.0212), (0.0934, 0.0248)],
    [(0.1342, 0.0412), (0.0951, 0.0333), (0.0903, 0.0362)],
    [(0.1438, 0.0435), (0.1065, 0.0378), (0.1065, 0.0438)],
];

fn row_label(method: &str) -> Option<&'static str> {
    Some(match method {
        "s4" => TABLE_ROWS[0],
        "s4ex" => TABLE_ROWS[1],
        "s5" => TABLE_ROWS[2],
        "s5ex" => TABLE_ROWS[3],
        "average" => TABLE_ROWS[4],
        "mode" => TABLE_ROWS[5],
        "llm" => TABLE_ROWS[6],
        _ => return None,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationRow {
    /// A variant tag (that prompt's judges averaged) or a merge strategy tag.
    pub method: String,
    pub dimension: Dimension,
    pub agreement: Agreement,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CalibrationReport {
    pub rows: Vec<CalibrationRow>,
}

/// Scores every group of judgments by each single prompt variant and by each
/// merge strategy, then calibrates each method against `golden`. The LLM row
/// is produced only when a merge judge is given.
pub fn calibration_report(
    judgments: &[RawJudgment],
    golden: &Corpus,
    llm: Option<&dyn JudgeEndpoint>,
) -> Result<CalibrationReport> {
    let mut groups: BTreeMap<(Dimension, &str), Vec<RawJudgment>> = BTreeMap::new();
    for j in judgments {
        groups
            .entry((j.dimension, j.conversation_id.as_str()))
            .or_default()
            .push(j.clone());
    }
    let dims: BTreeSet<Dimension> = groups.keys().map(|(d, _)| *d).collect();
    let mut methods: Vec<String> = VariantId::ALL.iter().map(|v| v.tag().to_string()).collect();
    methods.extend(["average", "mode"].map(String::from));
    if llm.is_some() {
        methods.push("llm".into());
    }
    let mut report = CalibrationReport::default();
    for dim in dims {
        let golden_dim = Corpus {
            records: golden
                .iter()
                .filter_map(|r| {
                    let s = r.scores.get(dim)?;
                    let mut r = r.clone();
                    r.scores = Default::default();
                    r.scores.set(dim, s);
                    Some(r)
                })
                .collect(),
        };
        for method in &methods {
            let mut records = Vec::new();
            for ((d, id), js) in &groups {
                if *d != dim {
                    continue;
                }
                let score = match method.parse::<VariantId>() {
                    Ok(v) => {
                        let subset: Vec<RawJudgment> = js.iter().filter(|j| j.variant_id == v).cloned().collect();
                        if subset.is_empty() {
                            continue;
                        }
                        merge_average(&subset)?
                    }
                    Err(_) => merge_score(js, method.parse::<MergeStrategy>()?, dim, llm)?,
                };
                let mut r = golden_dim
                    .get(id)
                    .cloned()
                    .ok_or_else(|| Error::IdMismatch(vec![id.to_string()]))?;
                r.scores = Default::default();
                r.scores.set(dim, score);
                records.push(r);
            }
            if records.is_empty() {
                continue;
            }
            let agreement = calibrate(&Corpus { records }, &golden_dim)?[&dim];
            report.rows.push(CalibrationRow {
                method: method.clone(),
                dimension: dim,
                agreement,
            });
        }
    }
    Ok(report)
}

impl CalibrationReport {
    pub fn get(&self, method: &str, dim: Dimension) -> Option<Agreement> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.dimension == dim)
            .map(|r| r.agreement)
    }

    pub fn table(&self) -> CsvTable {
        let mut t = CsvTable::new(&CALIBRATION_HEADER);
        for r in &self.rows {
            t.push(vec![
                r.method.clone(),
                r.dimension.tag().to_string(),
                r.agreement.n.to_string(),
                fmt_f64(r.agreement.mae),
                fmt_f64(r.agreement.mse),
            ]);
        }
        t
    }

    /// Plain-text table in the published row layout: one row per method,
    /// one `measured (reference)` cell per dimension.
    pub fn render(&self) -> String {
        let mut out = String::from("Prompt (MAE, MSE) | Naturalness | Comprehensiveness | On Topic\n");
        for (k, label) in TABLE_ROWS.iter().enumerate() {
            let method = ["s4", "s4ex", "s5", "s5ex", "average", "mode", "llm"][k];
            debug_assert_eq!(row_label(method), Some(*label));
            let cells: Vec<String> = Dimension::ALL
                .iter()
                .enumerate()
                .map(|(d, &dim)| {
                    let (pm, ps) = REPORTED_REFERENCE[k][d];
                    let measured = match self.get(method, dim) {
                        Some(a) => format!("{:.4}, {:.4}", a.mae, a.mse),
                        None => "-".to_string(),
                    };
                    format!("{measured} (reported {pm:.4}, {ps:.4})")
                })
                .collect();
            out.push_str(&format!("{label} | {}\n", cells.join(" | ")));
        }
        out
    }
}
