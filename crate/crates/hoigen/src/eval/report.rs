//! Metric reports and the ordering comparison tool.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EvalError;

/// Reference values the orderings are judged against: the same metrics under
/// shuffled identities / shuffled categories / random mask selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ReportBaselines {
    pub identity_human_shuffled: f64,
    pub identity_object_shuffled: f64,
    pub identity_pair_shuffled: f64,
    pub holistic_shuffled: f64,
    pub kl_retrieval: f64,
    pub kl_random: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub identity_human: f64,
    pub identity_object: f64,
    pub identity_pair: f64,
    pub holistic_accuracy: f64,
    pub kl_distance: f64,
    pub box_compliance: f64,
    pub sample_count: usize,
    pub rules_hash: String,
    #[serde(default)]
    pub baselines: ReportBaselines,
    #[serde(default)]
    pub notes: Vec<String>,
}

impl MetricReport {
    pub fn validate(&self) -> Result<(), EvalError> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(unit(self.identity_human)
            && unit(self.identity_object)
            && unit(self.identity_pair)
            && unit(self.holistic_accuracy)
            && unit(self.box_compliance)
            && self.kl_distance >= 0.0
            && self.sample_count > 0)
        {
            return Err(EvalError::Parse("metric out of range".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), EvalError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| EvalError::Parse(e.to_string()))?;
        std::fs::write(path, text).map_err(|source| EvalError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<MetricReport, EvalError> {
        let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| EvalError::Parse(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingCheck {
    pub name: String,
    pub ours: f64,
    pub reference: f64,
    pub pass: bool,
}

/// The three orderings a trained pipeline must win over its baseline report:
/// identity scores above shuffled-identity, holistic accuracy above shuffled
/// categories, KL below random/retrieval selection.
pub fn compare_reports(ours: &MetricReport, baseline: &MetricReport) -> Vec<OrderingCheck> {
    let mut checks = Vec::new();
    let mut push = |name: &str, ours: f64, reference: f64, pass: bool| {
        checks.push(OrderingCheck {
            name: name.to_string(),
            ours,
            reference,
            pass,
        });
    };
    push(
        "identity_human > shuffled",
        ours.identity_human,
        baseline.identity_human,
        ours.identity_human > baseline.identity_human,
    );
    push(
        "identity_object > shuffled",
        ours.identity_object,
        baseline.identity_object,
        ours.identity_object > baseline.identity_object,
    );
    push(
        "identity_pair > shuffled",
        ours.identity_pair,
        baseline.identity_pair,
        ours.identity_pair > baseline.identity_pair,
    );
    push(
        "holistic_accuracy > shuffled",
        ours.holistic_accuracy,
        baseline.holistic_accuracy,
        ours.holistic_accuracy > baseline.holistic_accuracy,
    );
    push(
        "kl_distance < baseline",
        ours.kl_distance,
        baseline.kl_distance,
        ours.kl_distance < baseline.kl_distance,
    );
    checks
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_roundtrip_and_compare() {
        let dir = std::env::temp_dir().join("hoigen_report_test");
        std::fs::create_dir_all(&dir).unwrap();
        let ours = MetricReport {
            identity_human: 0.9,
            identity_object: 0.85,
            identity_pair: 0.88,
            holistic_accuracy: 0.8,
            kl_distance: 0.2,
            box_compliance: 0.95,
            sample_count: 100,
            rules_hash: "abc".into(),
            baselines: ReportBaselines::default(),
            notes: vec![],
        };
        ours.validate().unwrap();
        let p = dir.join("r.json");
        ours.save(&p).unwrap();
        assert_eq!(MetricReport::load(&p).unwrap(), ours);

        let mut baseline = ours.clone();
        baseline.identity_human = 0.3;
        baseline.identity_object = 0.3;
        baseline.identity_pair = 0.3;
        baseline.holistic_accuracy = 0.2;
        baseline.kl_distance = 2.0;
        let checks = compare_reports(&ours, &baseline);
        assert_eq!(checks.len(), 5);
        assert!(checks.iter().all(|c| c.pass));
        let checks_rev = compare_reports(&baseline, &ours);
        assert!(checks_rev.iter().all(|c| !c.pass));
    }
}
