use serde::{Deserialize, Serialize};

use crate::losses::{bce, ranknet_pairwise, LabeledBatch, LossError};

/// Signs of the BCE and RankNet gradients on the same logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionReport {
    pub bce_signs: Vec<i8>,
    pub rank_signs: Vec<i8>,
    /// Fraction of samples whose two gradient signs coincide.
    pub agreement_fraction: f64,
    /// Samples where either gradient points against its class (a negative
    /// pushed down or a positive pushed up, in descent terms).
    pub wrong_direction: usize,
}

fn sign(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// Compare gradient directions of BCE (unweighted) and RankNet.
pub fn direction_audit(batch: &LabeledBatch) -> Result<DirectionReport, LossError> {
    let rank = ranknet_pairwise(batch)?;
    let clf = bce(batch, 1.0)?;
    let bce_signs: Vec<i8> = clf.grad_logits.iter().map(|&g| sign(g)).collect();
    let rank_signs: Vec<i8> = rank.grad_logits.iter().map(|&g| sign(g)).collect();
    let agree = bce_signs.iter().zip(&rank_signs).filter(|(a, b)| a == b).count();
    let wrong_direction = batch
        .labels()
        .iter()
        .zip(bce_signs.iter().zip(&rank_signs))
        .filter(|&(&y, (&a, &b))| {
            let expected = if y == 1 { -1 } else { 1 };
            a != expected || b != expected
        })
        .count();
    Ok(DirectionReport {
        agreement_fraction: agree as f64 / batch.len() as f64,
        bce_signs,
        rank_signs,
        wrong_direction,
    })
}

/// Per-negative margin of the RankNet gradient over the BCE gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominanceReport {
    pub n_negatives: usize,
    /// Negatives whose RankNet gradient strictly exceeds their BCE gradient.
    pub n_dominated: usize,
    pub min_margin: f64,
    /// Every positive logit is below zero, the condition under which
    /// domination of every negative is guaranteed.
    pub hypothesis_holds: bool,
}

/// Report, for every negative `j`, `rank_grad_j − bce_grad_j` (BCE unweighted).
/// Domination is only guaranteed when `hypothesis_holds`; otherwise this is
/// informational.
pub fn dominance_check(batch: &LabeledBatch) -> Result<DominanceReport, LossError> {
    let rank = ranknet_pairwise(batch)?;
    let clf = bce(batch, 1.0)?;
    let mut n_negatives = 0;
    let mut n_dominated = 0;
    let mut min_margin = f64::INFINITY;
    for (i, &y) in batch.labels().iter().enumerate() {
        if y == 0 {
            let margin = rank.grad_logits[i] - clf.grad_logits[i];
            n_negatives += 1;
            n_dominated += (margin > 0.0) as usize;
            min_margin = min_margin.min(margin);
        }
    }
    let hypothesis_holds = batch.logits().iter().zip(batch.labels()).filter(|(_, &y)| y == 1).all(|(&z, _)| z < 0.0);
    Ok(DominanceReport { n_negatives, n_dominated, min_margin, hypothesis_holds })
}
