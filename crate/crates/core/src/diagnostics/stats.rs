use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::numeric::percentile;

/// Lower edge of the first decade bin.
pub const HIST_MIN: f64 = 1e-12;
/// Upper edge of the last decade bin.
pub const HIST_MAX: f64 = 1e2;
/// Decades between [`HIST_MIN`] and [`HIST_MAX`].
pub const HIST_DECADES: usize = 14;
/// One underflow bin (below `HIST_MIN`, zeros included), the decades, one overflow bin.
pub const HIST_BINS: usize = HIST_DECADES + 2;

/// Gradient magnitude summary for one label class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub count: usize,
    pub mean_abs: f64,
    pub p90_abs: f64,
    pub max_abs: f64,
    pub histogram: [u64; HIST_BINS],
}

impl ClassStats {
    fn from_magnitudes(mags: &[f64]) -> Self {
        let mut histogram = [0u64; HIST_BINS];
        for &m in mags {
            histogram[hist_bin(m)] += 1;
        }
        let mut sorted = mags.to_vec();
        sorted.sort_by(f64::total_cmp);
        let (mean_abs, p90_abs, max_abs) = match sorted.last() {
            None => (0.0, 0.0, 0.0),
            Some(&max) => (sorted.iter().sum::<f64>() / sorted.len() as f64, percentile(&sorted, 0.9), max),
        };
        Self { count: mags.len(), mean_abs, p90_abs, max_abs, histogram }
    }
}

/// Per-step magnitude statistics split by label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradStats {
    pub step: usize,
    pub positive: ClassStats,
    pub negative: ClassStats,
}

/// Histogram bin of a magnitude.
pub fn hist_bin(m: f64) -> usize {
    if !(m >= HIST_MIN) {
        0
    } else if m >= HIST_MAX {
        HIST_BINS - 1
    } else {
        let decade = (m / HIST_MIN).log10().floor() as usize;
        1 + decade.min(HIST_DECADES - 1)
    }
}

/// Summarize `|grad|` per class. For dual-logit losses pass the per-sample
/// norms from [`crate::LossOutput::per_sample_norms`].
///
/// # Panics
/// If `grads` and `labels` differ in length.
pub fn grad_norm_report(grads: &[f64], labels: &[u8], step: usize) -> GradStats {
    assert_eq!(grads.len(), labels.len(), "one gradient per label");
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (g, &y) in grads.iter().zip(labels) {
        if y == 1 {
            pos.push(g.abs());
        } else {
            neg.push(g.abs());
        }
    }
    GradStats { step, positive: ClassStats::from_magnitudes(&pos), negative: ClassStats::from_magnitudes(&neg) }
}

/// Header of [`write_grad_stats_csv`]; `h0` is the underflow bin and `h15` the overflow bin.
pub fn grad_stats_header() -> Vec<String> {
    let mut h: Vec<String> = ["step", "class", "count", "mean_abs", "p90_abs", "max_abs"].map(String::from).into();
    h.extend((0..HIST_BINS).map(|b| format!("h{b}")));
    h
}

/// One row per step per class.
pub fn write_grad_stats_csv<W: Write>(stats: &[GradStats], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(grad_stats_header())?;
    for s in stats {
        for (name, c) in [("positive", &s.positive), ("negative", &s.negative)] {
            let mut rec = vec![
                s.step.to_string(),
                name.to_string(),
                c.count.to_string(),
                c.mean_abs.to_string(),
                c.p90_abs.to_string(),
                c.max_abs.to_string(),
            ];
            rec.extend(c.histogram.iter().map(|n| n.to_string()));
            w.write_record(rec)?;
        }
    }
    w.flush()?;
    Ok(())
}
