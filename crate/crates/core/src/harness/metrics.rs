//! Training records, residual-weight snapshots and histograms.

use std::fmt::Write as _;

use crate::residual::Network;
use crate::tensor::Element;

pub const METRICS_HEADER: &str = "iteration,epoch,loss,reg,base_lr,lambda_lr,test_acc,wall_s";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainRecord {
    /// Completed optimizer steps.
    pub iteration: u64,
    /// Completed passes over the training split, fractional.
    pub epoch: f64,
    /// Mean cross-entropy over the steps since the previous record.
    pub loss: f64,
    pub reg: f64,
    pub base_lr: f64,
    pub lambda_lr: f64,
    pub test_acc: Option<f64>,
    pub wall_s: f64,
}

impl TrainRecord {
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{:.3}",
            self.iteration,
            self.epoch,
            self.loss,
            self.reg,
            self.base_lr,
            self.lambda_lr,
            self.test_acc.map(|a| a.to_string()).unwrap_or_default(),
            self.wall_s
        )
    }

    /// Bitwise equality of everything except wall time.
    pub fn same_metrics(&self, other: &Self) -> bool {
        let bits = |r: &Self| {
            (
                r.iteration,
                r.epoch.to_bits(),
                r.loss.to_bits(),
                r.reg.to_bits(),
                r.base_lr.to_bits(),
                r.lambda_lr.to_bits(),
                r.test_acc.map(f64::to_bits),
            )
        };
        bits(self) == bits(other)
    }
}

/// Residual weights of every weighted unit, in network order.
#[derive(Clone, Debug, PartialEq)]
pub struct LambdaSnapshot {
    pub iteration: u64,
    pub values: Vec<(usize, f64)>,
}

impl LambdaSnapshot {
    pub fn of<T: Element>(network: &Network<T>, iteration: u64) -> Self {
        LambdaSnapshot {
            iteration,
            values: network.lambda_values().into_iter().enumerate().collect(),
        }
    }

    pub fn in_bounds(&self) -> bool {
        self.values.iter().all(|&(_, v)| (-1.0..=1.0).contains(&v))
    }

    pub fn lambdas(&self) -> Vec<f64> {
        self.values.iter().map(|&(_, v)| v).collect()
    }

    /// `unit,lambda` rows.
    pub fn listing_csv(&self) -> String {
        let mut out = String::from("unit,lambda\n");
        for (unit, v) in &self.values {
            let _ = writeln!(out, "{unit},{v}");
        }
        out
    }
}

/// Equal-width bins over `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Index of the bin holding `value`.
    ///
    /// Values on an interior edge go to the bin farther from zero, so zero
    /// itself lands in the bin starting at zero for even bin counts.
    pub fn bin_of(bins: usize, value: f64) -> usize {
        let pos = (value.clamp(-1.0, 1.0) + 1.0) * bins as f64 / 2.0;
        let idx = if value >= 0.0 {
            pos.floor() as isize
        } else {
            pos.ceil() as isize - 1
        };
        idx.clamp(0, bins as isize - 1) as usize
    }

    pub fn zero_bin(&self) -> usize {
        Self::bin_of(self.counts.len(), 0.0)
    }

    /// `bin_lo,bin_hi,count` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            let _ = writeln!(out, "{},{},{c}", self.edges[i], self.edges[i + 1]);
        }
        out
    }
}

pub fn export_lambda_histogram(values: &[f64], bins: usize) -> Histogram {
    let bins = bins.max(1);
    let edges = (0..=bins)
        .map(|i| -1.0 + 2.0 * i as f64 / bins as f64)
        .collect();
    let mut counts = vec![0; bins];
    for &v in values {
        counts[Histogram::bin_of(bins, v)] += 1;
    }
    Histogram { edges, counts }
}
