use super::dd::{log_sum_exp, DD};
use crate::losses::{focal_normalized_offset, LabeledBatch, LossError, LossKind, LossSpec};

/// Floor of the relative-error denominator.
pub const REL_ERROR_FLOOR: f64 = 1e-10;

/// Loss of `spec` at `coords` (the batch's logit coordinates, laid out like
/// [`LabeledBatch::coords`]) evaluated in double-double arithmetic.
///
/// With `focus = Some(k)`, additive terms that do not involve coordinate `k`
/// are left out. They are identical on both sides of a central difference in
/// `k` and cancel. `neg_offset` is the stop-gradient offset of the
/// normalized focal loss.
fn reference_loss(spec: &LossSpec, batch: &LabeledBatch, coords: &[DD], focus: Option<usize>, neg_offset: f64) -> DD {
    let labels = batch.labels();
    let weights = batch.weights();
    let n = DD::from_f64(batch.len() as f64);
    let beta = DD::from_f64(spec.beta_pos);
    let gamma = DD::from_f64(spec.gamma);
    let alpha = spec.alpha;
    let wants = |i: usize| focus.is_none_or(|k| k == i);

    let pointwise = |modulated: bool, offset: Option<f64>| {
        let mut s = DD::ZERO;
        for i in (0..batch.len()).filter(|&i| wants(i)) {
            let z = coords[i];
            let w = DD::from_f64(weights[i]);
            s = s + if labels[i] == 1 {
                let nll = (-z).softplus();
                let m = if modulated { (-(gamma * z.softplus())).exp() } else { DD::ONE };
                w * beta * m * nll
            } else {
                let nll = z.softplus();
                let mut m = if modulated { (-(gamma * (-z).softplus())).exp() } else { DD::ONE };
                if let Some(c) = offset {
                    m = m + DD::from_f64(c);
                }
                w * m * nll
            };
        }
        s / n
    };

    let ranknet = || {
        let pos: Vec<usize> = (0..batch.len()).filter(|&i| labels[i] == 1).collect();
        let neg: Vec<usize> = (0..batch.len()).filter(|&i| labels[i] == 0).collect();
        let mut s = DD::ZERO;
        for &i in &pos {
            for &j in &neg {
                if wants(i) || wants(j) {
                    s = s + (coords[j] - coords[i]).softplus();
                }
            }
        }
        s / DD::from_f64((pos.len() * neg.len()) as f64)
    };

    let listwise = |scores: Vec<DD>| {
        let lse = log_sum_exp(&scores);
        let pos: Vec<usize> = (0..batch.len()).filter(|&i| labels[i] == 1).collect();
        let s = pos.iter().fold(DD::ZERO, |acc, &i| acc + (lse - scores[i]));
        s / DD::from_f64(pos.len() as f64)
    };
    let listnet = || listwise(coords.to_vec());
    let rcr = || listwise(coords.iter().map(|z| z.log_sigmoid()).collect());

    let combine = |clf: &dyn Fn() -> DD, rank: &dyn Fn() -> DD| {
        if alpha == 1.0 {
            clf()
        } else if alpha == 0.0 {
            rank()
        } else {
            DD::from_f64(alpha) * clf() + DD::from_f64(1.0 - alpha) * rank()
        }
    };

    match spec.kind {
        LossKind::Bce => pointwise(false, None),
        LossKind::RankNet => ranknet(),
        LossKind::CombinedPair => combine(&|| pointwise(false, None), &ranknet),
        LossKind::ListNet => listnet(),
        LossKind::CombinedList => combine(&|| pointwise(false, None), &listnet),
        LossKind::RcrRank => rcr(),
        LossKind::RcrCombined => combine(&|| pointwise(false, None), &rcr),
        LossKind::Focal => pointwise(true, None),
        LossKind::FocalNormalized => pointwise(true, Some(neg_offset)),
        LossKind::Jrc => {
            let pair = |i: usize| [coords[2 * i], coords[2 * i + 1]];
            let clf = || {
                let mut s = DD::ZERO;
                for i in 0..batch.len() {
                    let y = labels[i] as usize;
                    let p = pair(i);
                    let w = DD::from_f64(weights[i]) * if y == 1 { beta } else { DD::ONE };
                    s = s + w * (p[1 - y] - p[y]).softplus();
                }
                s / n
            };
            let rank = || {
                let mut s = DD::ZERO;
                for c in 0..2 {
                    let column: Vec<DD> = (0..batch.len()).map(|i| pair(i)[c]).collect();
                    let lse = log_sum_exp(&column);
                    for i in (0..batch.len()).filter(|&i| labels[i] as usize == c) {
                        s = s + (lse - column[i]);
                    }
                }
                s / n
            };
            combine(&clf, &rank)
        }
    }
}

fn focus_of(spec: &LossSpec, coord: usize) -> Option<usize> {
    match spec.kind {
        LossKind::Bce | LossKind::Focal | LossKind::FocalNormalized | LossKind::RankNet | LossKind::CombinedPair => Some(coord),
        _ => None,
    }
}

/// Central finite differences of the double-double reference loss, one per
/// logit coordinate. For the normalized focal loss the negative-weight offset
/// is held at its value for the unperturbed batch, matching the analytic
/// gradient, which treats it as a constant.
pub fn finite_diff_grad(spec: &LossSpec, batch: &LabeledBatch, epsilon: f64) -> Result<Vec<f64>, LossError> {
    spec.validate()?;
    let offset = if spec.kind == LossKind::FocalNormalized { focal_normalized_offset(batch, spec.gamma)? } else { 0.0 };
    let base: Vec<DD> = batch.coords().into_iter().map(DD::from_f64).collect();
    let eps = DD::from_f64(epsilon);
    let mut out = Vec::with_capacity(base.len());
    let mut x = base.clone();
    for k in 0..base.len() {
        let focus = focus_of(spec, if batch.is_dual() { k / 2 } else { k });
        x[k] = base[k] + eps;
        let up = reference_loss(spec, batch, &x, focus, offset);
        x[k] = base[k] - eps;
        let down = reference_loss(spec, batch, &x, focus, offset);
        x[k] = base[k];
        out.push(((up - down) / (DD::from_f64(2.0) * eps)).to_f64());
    }
    Ok(out)
}

/// Loss value of `spec` on `batch` computed in double-double arithmetic.
pub fn reference_value(spec: &LossSpec, batch: &LabeledBatch) -> Result<f64, LossError> {
    spec.validate()?;
    let offset = if spec.kind == LossKind::FocalNormalized { focal_normalized_offset(batch, spec.gamma)? } else { 0.0 };
    let coords: Vec<DD> = batch.coords().into_iter().map(DD::from_f64).collect();
    Ok(reference_loss(spec, batch, &coords, None, offset).to_f64())
}

/// Worst per-coordinate relative error between `analytic` and `numeric`,
/// with denominator `max(|analytic|, 1e-10)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient lengths differ");
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| {
            let e = (a - n).abs() / a.abs().max(REL_ERROR_FLOOR);
            if e.is_nan() {
                f64::INFINITY
            } else {
                e
            }
        })
        .fold(0.0, f64::max)
}

fn check_epsilon(epsilon: f64) -> Result<(), LossError> {
    if (1e-8..=1e-4).contains(&epsilon) {
        Ok(())
    } else {
        Err(LossError::InvalidInput(format!("epsilon {epsilon} outside [1e-8, 1e-4]")))
    }
}

/// Worst relative error between the closed-form gradient of `spec` and
/// central finite differences with step `epsilon`.
///
/// The differences are taken on a double-double evaluation of the loss, so
/// their rounding error sits far below the 1e-5 tolerance even for the tiny
/// gradients of confidently classified samples.
pub fn finite_diff_check(spec: &LossSpec, batch: &LabeledBatch, epsilon: f64) -> Result<f64, LossError> {
    let analytic = spec.evaluate(batch)?;
    finite_diff_check_against(spec, batch, epsilon, &analytic.grad_logits)
}

/// [`finite_diff_check`] against a caller-supplied gradient.
pub fn finite_diff_check_against(
    spec: &LossSpec,
    batch: &LabeledBatch,
    epsilon: f64,
    analytic: &[f64],
) -> Result<f64, LossError> {
    check_epsilon(epsilon)?;
    if analytic.len() != batch.n_coords() {
        return Err(LossError::InvalidInput(format!(
            "{} gradient values for {} coordinates",
            analytic.len(),
            batch.n_coords()
        )));
    }
    let numeric = finite_diff_grad(spec, batch, epsilon)?;
    Ok(max_relative_error(analytic, &numeric))
}
