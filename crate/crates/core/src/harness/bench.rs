//! Models × datasets benchmark grid.

use serde::{Deserialize, Serialize};

use super::{evaluate, train, DataSource, HarnessError, Result, SplitName, TrainConfig};
use crate::arch::Arch;
use crate::metrics::{Cell, F1Average, MetricsReport, ResultTable, TableModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteCell {
    pub arch: Arch,
    pub data: DataSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub cells: Vec<SuiteCell>,
    /// Overrides the 100-epoch default for every cell.
    #[serde(default)]
    pub max_epochs: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub f1_average: F1Average,
}

impl SuiteConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| HarnessError::InvalidConfig(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchOutput {
    pub table: ResultTable,
    pub reports: Vec<MetricsReport>,
    /// `(model, dataset, error)` of every failed cell.
    pub failures: Vec<(TableModel, String, String)>,
}

fn table_models(arch: Arch) -> &'static [TableModel] {
    match arch {
        Arch::FourCnn => &[TableModel::FourCNN],
        Arch::GruEncoder => &[TableModel::GRUNetwork],
        Arch::Autoencoder => &[TableModel::AutoencoderKNN, TableModel::AutoencoderRF],
    }
}

fn run_cell(cell: &SuiteCell, suite: &SuiteConfig) -> Result<Vec<MetricsReport>> {
    let mut config = TrainConfig::new(cell.arch, cell.data.clone());
    config.seed = suite.seed;
    if let Some(e) = suite.max_epochs {
        config.max_epochs = e;
    }
    let ds = cell.data.load()?;
    let outcome = train(&config)?;
    evaluate(&outcome.checkpoint, &ds, SplitName::Test, suite.f1_average)
}

/// Trains and tests every cell in order. A failing cell is rendered as
/// `ERROR` and does not stop the others.
pub fn bench(suite: &SuiteConfig) -> BenchOutput {
    let mut datasets: Vec<String> = Vec::new();
    for cell in &suite.cells {
        let label = cell.data.label();
        if !datasets.contains(&label) {
            datasets.push(label);
        }
    }
    let mut table = ResultTable::new(datasets);
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for cell in &suite.cells {
        let label = cell.data.label();
        log::info!("bench: {} on {label}", cell.arch);
        match run_cell(cell, suite) {
            Ok(rs) => {
                for (r, &model) in rs.iter().zip(table_models(cell.arch)) {
                    table.set(
                        model,
                        &label,
                        Cell::Score {
                            acc: r.accuracy,
                            f1: r.f1,
                        },
                    );
                }
                reports.extend(rs);
            }
            Err(e) => {
                log::error!("bench: {} on {label} failed: {e}", cell.arch);
                for &model in table_models(cell.arch) {
                    table.set(model, &label, Cell::Error(e.to_string()));
                    failures.push((model, label.clone(), e.to_string()));
                }
            }
        }
    }
    BenchOutput {
        table,
        reports,
        failures,
    }
}
