//! Per-channel histograms and multi-trial accuracy aggregation.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{Image, CHANNELS};

/// 256-bin per-channel intensity histogram of one storage-domain image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelHistogram {
    /// bins[channel][intensity]
    pub bins: [[u64; 256]; 3],
    /// Pixels per channel (H*W).
    pub total: usize,
}

/// Count intensities per channel. The image must be in the storage
/// domain; any value outside [0, 255] after rounding signals a pipeline
/// bug upstream and is reported as an internal error.
pub fn histogram(image: &Image) -> Result<ChannelHistogram> {
    let mut bins = [[0u64; 256]; 3];
    for (ch, channel_bins) in bins.iter_mut().enumerate().take(CHANNELS) {
        for &v in image.plane(ch) {
            let rounded = v.round();
            if !(0.0..=255.0).contains(&rounded) {
                return Err(Error::Internal(format!(
                    "histogram input value {v} outside the storage domain"
                )));
            }
            channel_bins[rounded as usize] += 1;
        }
    }
    Ok(ChannelHistogram {
        bins,
        total: image.plane_len(),
    })
}

/// Histogram CSV: header `channel,bin,count`, then 3x256 rows with
/// channels named r, g, b.
pub fn emit_histogram_csv(hist: &ChannelHistogram, path: &Path) -> Result<()> {
    let mut out = String::from("channel,bin,count\n");
    for (ch, name) in ["r", "g", "b"].iter().enumerate() {
        for bin in 0..256 {
            out.push_str(&format!("{},{},{}\n", name, bin, hist.bins[ch][bin]));
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Aggregated accuracy of one attack across trials.
///
/// `std` is the population standard deviation (divisor N); `drop_percent`
/// is `100 * (baseline - mean) / baseline`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialReport {
    pub attack_name: String,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub baseline_accuracy: f64,
    pub drop_percent: f64,
}

/// Reduce per-trial accuracies (fractions in [0, 1]) against the clean
/// baseline.
pub fn aggregate(attack_name: &str, accuracies: &[f64], baseline: f64) -> Result<TrialReport> {
    if accuracies.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no trial accuracies for {attack_name}"
        )));
    }
    if let Some(bad) = accuracies.iter().find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(Error::InvalidArgument(format!(
            "accuracy {bad} outside [0, 1] for {attack_name}"
        )));
    }
    let n = accuracies.len() as f64;
    let mean = accuracies.iter().sum::<f64>() / n;
    let var = accuracies.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    let min = accuracies.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = accuracies.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let drop_percent = 100.0 * (baseline - mean) / baseline;
    Ok(TrialReport {
        attack_name: attack_name.to_string(),
        accuracies: accuracies.to_vec(),
        mean,
        std,
        min,
        max,
        baseline_accuracy: baseline,
        drop_percent,
    })
}

/// Results CSV. Raw block first (`attack,trial,accuracy`, trials
/// 1-based), then the summary block
/// (`attack,mean,std,min,max,drop_percent`); UTF-8, LF endings, 4-decimal
/// fixed formatting. Both headers appear even when the report list is
/// empty.
pub fn emit_csv(reports: &[TrialReport], path: &Path) -> Result<()> {
    fs::write(path, render_csv(reports)).map_err(|e| Error::io(path, e))
}

pub fn render_csv(reports: &[TrialReport]) -> String {
    let mut out = String::from("attack,trial,accuracy\n");
    for report in reports {
        for (i, acc) in report.accuracies.iter().enumerate() {
            out.push_str(&format!("{},{},{:.4}\n", report.attack_name, i + 1, acc));
        }
    }
    out.push_str("attack,mean,std,min,max,drop_percent\n");
    for report in reports {
        out.push_str(&format!(
            "{},{:.4},{:.4},{:.4},{:.4},{:.4}\n",
            report.attack_name, report.mean, report.std, report.min, report.max,
            report.drop_percent
        ));
    }
    out
}
