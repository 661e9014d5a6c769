//! Row types for the output files and a CSV/JSON writer.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    fn extension(&self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ContractRow {
    #[serde(rename = "type")]
    pub type_label: String,
    pub d: f64,
    #[serde(rename = "rL")]
    pub reward: f64,
    pub pi: f64,
    pub kappa: f64,
    #[serde(rename = "A")]
    pub a: f64,
    #[serde(rename = "B")]
    pub b: f64,
    pub block_id: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct EquilibriumRow {
    pub user: usize,
    #[serde(rename = "type")]
    pub type_label: String,
    pub loss: f64,
    pub revoke: u8,
}

#[derive(Debug, Clone, Serialize)]
pub struct RetentionRow {
    pub user: usize,
    pub shapley: f64,
    pub retained: u8,
    /// Empty for revokers who are let go.
    #[serde(rename = "rU")]
    pub incentive: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareRow {
    pub mechanism: String,
    #[serde(rename = "I")]
    pub users: usize,
    pub cost_mean: f64,
    pub cost_stderr: f64,
    pub payoff_mean: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub p: f64,
    pub q: f64,
    pub p_hat: f64,
    pub q_hat: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundsRow {
    pub t: usize,
    pub gap_mean: f64,
    pub gap_stderr: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SummaryRow {
    pub mechanism: String,
    #[serde(rename = "I")]
    pub users: usize,
    pub revokers: usize,
    pub retained: usize,
    pub cost: f64,
    pub accuracy: f64,
    pub learning_rewards: f64,
    pub retention_rewards: f64,
    pub cost_without_retention: f64,
    pub payoff_mean: f64,
    pub negative_incentives: usize,
    pub equilibria_agree: u8,
}

/// A record type with a fixed column list.
pub trait Row: Serialize {
    const HEADER: &'static [&'static str];
}

impl Row for ContractRow {
    const HEADER: &'static [&'static str] = &["type", "d", "rL", "pi", "kappa", "A", "B", "block_id"];
}

impl Row for EquilibriumRow {
    const HEADER: &'static [&'static str] = &["user", "type", "loss", "revoke"];
}

impl Row for RetentionRow {
    const HEADER: &'static [&'static str] = &["user", "shapley", "retained", "rU"];
}

impl Row for CompareRow {
    const HEADER: &'static [&'static str] = &["mechanism", "I", "cost_mean", "cost_stderr", "payoff_mean"];
}

impl Row for SweepRow {
    const HEADER: &'static [&'static str] = &["p", "q", "p_hat", "q_hat", "cost"];
}

impl Row for BoundsRow {
    const HEADER: &'static [&'static str] = &["t", "gap_mean", "gap_stderr", "bound"];
}

impl Row for SummaryRow {
    const HEADER: &'static [&'static str] = &[
        "mechanism",
        "I",
        "revokers",
        "retained",
        "cost",
        "accuracy",
        "learning_rewards",
        "retention_rewards",
        "cost_without_retention",
        "payoff_mean",
        "negative_incentives",
        "equilibria_agree",
    ];
}

/// Writes `rows` to `<dir>/<stem>.<ext>` and returns the path.
pub fn write_rows<T: Row>(dir: &Path, stem: &str, format: Format, rows: &[T]) -> std::io::Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(format!("{stem}.{}", format.extension()));
    let file = BufWriter::new(File::create(&path)?);
    match format {
        Format::Csv => {
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
            w.write_record(T::HEADER).map_err(std::io::Error::other)?;
            for r in rows {
                w.serialize(r).map_err(std::io::Error::other)?;
            }
            w.flush()?;
        }
        Format::Json => {
            let mut file = file;
            serde_json::to_writer_pretty(&mut file, rows).map_err(std::io::Error::other)?;
            writeln!(file)?;
            file.flush()?;
        }
    }
    Ok(path)
}
