//! Validity, proximity and report assembly.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::feedback::{CounterfactualRecord, DirectRecord};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("no input graph is classified 0; validity is undefined")]
    EmptyDenominator,
    #[error("no reports to aggregate")]
    NoReports,
    #[error("report i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("report csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("report json: {0}")]
    Json(#[from] serde_json::Error),
}

/// What the metrics need to know about one input graph and its
/// counterfactual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub graph_id: u64,
    /// Classifier label of the input.
    pub input_label: u8,
    /// Classifier label of the counterfactual; `None` if none was produced.
    pub cf_label: Option<u8>,
    pub feasible: bool,
    pub distance: Option<f64>,
}

impl Outcome {
    pub fn is_candidate(&self) -> bool {
        self.input_label == 0
    }

    pub fn flipped(&self) -> bool {
        self.is_candidate() && self.cf_label == Some(1)
    }

    pub fn is_valid(&self, require_feasibility: bool) -> bool {
        self.flipped() && (self.feasible || !require_feasibility)
    }
}

impl From<&CounterfactualRecord> for Outcome {
    fn from(r: &CounterfactualRecord) -> Self {
        Self {
            graph_id: r.graph_id,
            input_label: r.input_label,
            cf_label: (!r.degenerate).then_some(r.label),
            feasible: r.feasible,
            distance: r.distance,
        }
    }
}

impl Outcome {
    /// Direct-edit records; the input label is supplied by the caller.
    pub fn from_direct(r: &DirectRecord, input_label: u8) -> Self {
        Self { graph_id: r.graph_id, input_label, cf_label: r.label, feasible: r.feasible, distance: r.distance }
    }
}

/// Percentage of inputs classified 0 whose counterfactual is classified 1
/// (and feasible, if required).
pub fn validity(outcomes: &[Outcome], require_feasibility: bool) -> Result<f64, EvalError> {
    let denom = outcomes.iter().filter(|o| o.is_candidate()).count();
    if denom == 0 {
        return Err(EvalError::EmptyDenominator);
    }
    let num = outcomes.iter().filter(|o| o.is_valid(require_feasibility)).count();
    Ok(100.0 * num as f64 / denom as f64)
}

/// Mean distance over the valid counterfactuals; `None` when there are none.
pub fn proximity(outcomes: &[Outcome], require_feasibility: bool) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for o in outcomes.iter().filter(|o| o.is_valid(require_feasibility)) {
        sum += o.distance.expect("a valid counterfactual has a distance");
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerGraph {
    pub graph_id: u64,
    pub flipped: bool,
    pub feasible: bool,
    pub distance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub validity_feas: f64,
    pub validity_nofeas: f64,
    pub proximity_feas: Option<f64>,
    pub proximity_nofeas: Option<f64>,
    /// Inputs classified 0 only.
    pub per_graph: Vec<PerGraph>,
}

pub fn evaluate(outcomes: &[Outcome]) -> Result<EvalReport, EvalError> {
    Ok(EvalReport {
        validity_feas: validity(outcomes, true)?,
        validity_nofeas: validity(outcomes, false)?,
        proximity_feas: proximity(outcomes, true),
        proximity_nofeas: proximity(outcomes, false),
        per_graph: outcomes
            .iter()
            .filter(|o| o.is_candidate())
            .map(|o| PerGraph { graph_id: o.graph_id, flipped: o.flipped(), feasible: o.feasible, distance: o.distance })
            .collect(),
    })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.2}"))
}

impl EvalReport {
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<14}{:>12}{:>12}", "", "w/o Feas.", "w. Feas.");
        let _ = writeln!(s, "{:<14}{:>12.2}{:>12.2}", "Validity (%)", self.validity_nofeas, self.validity_feas);
        let _ = writeln!(s, "{:<14}{:>12}{:>12}", "Proximity", cell(self.proximity_nofeas), cell(self.proximity_feas));
        s
    }

    pub fn write_json(&self, path: &Path) -> Result<(), EvalError> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self, EvalError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["graph_id", "flipped", "feasible", "distance"])?;
        for g in &self.per_graph {
            let d = g.distance.map(|d| d.to_string()).unwrap_or_default();
            w.write_record([g.graph_id.to_string(), g.flipped.to_string(), g.feasible.to_string(), d])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Self { mean, std: var.sqrt(), n: values.len() })
    }
}

impl std::fmt::Display for MeanStd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.2} ± {:.2}", self.mean, self.std)
    }
}

/// Seed aggregate. Proximity statistics skip runs where it is n/a.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub runs: usize,
    pub validity_feas: MeanStd,
    pub validity_nofeas: MeanStd,
    pub proximity_feas: Option<MeanStd>,
    pub proximity_nofeas: Option<MeanStd>,
}

pub fn aggregate(reports: &[EvalReport]) -> Result<Summary, EvalError> {
    let pick = |f: fn(&EvalReport) -> Option<f64>| reports.iter().filter_map(f).collect::<Vec<_>>();
    Ok(Summary {
        runs: reports.len(),
        validity_feas: MeanStd::of(&pick(|r| Some(r.validity_feas))).ok_or(EvalError::NoReports)?,
        validity_nofeas: MeanStd::of(&pick(|r| Some(r.validity_nofeas))).ok_or(EvalError::NoReports)?,
        proximity_feas: MeanStd::of(&pick(|r| r.proximity_feas)),
        proximity_nofeas: MeanStd::of(&pick(|r| r.proximity_nofeas)),
    })
}

impl Summary {
    pub fn table(&self) -> String {
        let c = |m: Option<MeanStd>| m.map_or_else(|| "n/a".to_string(), |m| m.to_string());
        let mut s = String::new();
        let _ = writeln!(s, "{:<14}{:>18}{:>18}", format!("({} runs)", self.runs), "w/o Feas.", "w. Feas.");
        let _ = writeln!(s, "{:<14}{:>18}{:>18}", "Validity (%)", self.validity_nofeas.to_string(), self.validity_feas.to_string());
        let _ = writeln!(s, "{:<14}{:>18}{:>18}", "Proximity", c(self.proximity_nofeas), c(self.proximity_feas));
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn o(id: u64, input: u8, cf: Option<u8>, feasible: bool, d: f64) -> Outcome {
        Outcome { graph_id: id, input_label: input, cf_label: cf, feasible, distance: Some(d) }
    }

    #[test]
    fn validity_counts_candidates_only() {
        let v = [o(0, 0, Some(1), true, 2.0), o(1, 0, Some(0), true, 1.0), o(2, 0, None, false, 0.0), o(3, 0, Some(1), false, 4.0), o(4, 1, Some(1), true, 9.0)];
        assert_eq!(validity(&v, false).unwrap(), 50.0);
        assert_eq!(validity(&v, true).unwrap(), 25.0);
        assert_eq!(proximity(&v, false), Some(3.0));
        assert_eq!(proximity(&v, true), Some(2.0));
        assert!(matches!(validity(&v[4..], false), Err(EvalError::EmptyDenominator)));
        assert_eq!(proximity(&v[1..3], false), None);
        let r = evaluate(&v).unwrap();
        assert_eq!(r.per_graph.len(), 4);
        assert!(r.table().contains("n/a") || r.proximity_feas.is_some());
    }

    #[test]
    fn aggregation_uses_population_std() {
        let r = |v: f64, p: Option<f64>| EvalReport { validity_feas: v, validity_nofeas: v, proximity_feas: p, proximity_nofeas: p, per_graph: vec![] };
        let s = aggregate(&[r(100.0, Some(2.0)), r(80.0, None)]).unwrap();
        assert_eq!(s.validity_nofeas, MeanStd { mean: 90.0, std: 10.0, n: 2 });
        assert_eq!(s.proximity_feas, Some(MeanStd { mean: 2.0, std: 0.0, n: 1 }));
        assert!(s.table().contains("90.00 ± 10.00"));
        assert!(aggregate(&[]).is_err());
    }
}
