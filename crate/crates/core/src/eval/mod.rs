//! Attribution quality metrics (identical class and subclass, mislabel and
//! shortcut detection, LDS, coreset and pruning curves) and surrogate
//! faithfulness, with a counterfactual engine that refits the head on subsets.

mod curves;
mod faithfulness;
mod lds;
mod mislabel;
mod rank;
mod retrain;
mod retrieval;

pub use curves::{coreset_curve, global_importance, pruning_curve, weighted_average, LossCurve};
pub use faithfulness::{cosine, faithfulness, multiclass_mcc, Faithfulness};
pub use lds::{lds, lds_with_retraining, sample_subsets, LdsOptions, LdsResult};
pub use mislabel::{inject_mislabels, mislabel_auc, self_influence, self_influence_with};
pub use rank::{average_ranks, pearson, rank_descending, spearman};
pub use retrain::{test_loss, RetrainConfig};
pub use retrieval::{
    add_offset, average_precision, identical_class, identical_subclass, inject_shortcut, shortcut_auprc,
};

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

/// Named (grid, values) series.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Curve {
    pub grid_name: String,
    pub value_name: String,
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
}

/// Output of one metric run, with its configuration echoed.
#[derive(Debug, Clone, Serialize)]
pub struct MetricReport {
    pub metric: String,
    pub score: f64,
    pub extra: BTreeMap<String, f64>,
    pub curve: Option<Curve>,
    pub config: serde_json::Value,
}

impl MetricReport {
    pub fn new(metric: impl Into<String>, score: f64, config: impl Serialize) -> Result<Self> {
        let config = serde_json::to_value(config).map_err(|e| Error::Validation(e.to_string()))?;
        Ok(MetricReport { metric: metric.into(), score, extra: BTreeMap::new(), curve: None, config })
    }

    pub fn with_extra(mut self, key: &str, value: f64) -> Self {
        self.extra.insert(key.to_string(), value);
        self
    }

    pub fn with_curve(mut self, curve: Curve) -> Self {
        self.curve = Some(curve);
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    /// Writes the curve as a two-column CSV with a header row.
    pub fn write_curve_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let curve = self
            .curve
            .as_ref()
            .ok_or_else(|| Error::State(format!("metric {} has no curve", self.metric)))?;
        let mut w = csv::Writer::from_path(path.as_ref()).map_err(csv_err)?;
        w.write_record([&curve.grid_name, &curve.value_name]).map_err(csv_err)?;
        for (g, v) in curve.grid.iter().zip(&curve.values) {
            w.write_record([g.to_string(), v.to_string()]).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}
