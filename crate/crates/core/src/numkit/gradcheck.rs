use crate::error::{DnkError, Result};

/// Maximum relative error between `analytic` and central finite differences
/// of `loss` around `params`:
/// `max_i |analytic_i − numeric_i| / (|numeric_i| + 1e-12)`.
///
/// Coordinates where both values are below `1e-9` in magnitude are treated as
/// agreeing exactly, since a relative measure there only reports rounding.
/// The loss is evaluated twice at `params` first; differing values are an
/// error.
pub fn grad_check<F>(params: &[f64], analytic: &[f64], h: f64, mut loss: F) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    if params.len() != analytic.len() {
        return Err(DnkError::dim("grad_check", params.len(), analytic.len()));
    }
    if !(h > 0.0) {
        return Err(DnkError::InvalidArgument(format!("step h must be positive, got {h}")));
    }
    let first = loss(params);
    let second = loss(params);
    if first.to_bits() != second.to_bits() {
        return Err(DnkError::NonDeterministicLoss { first, second });
    }

    let mut p = params.to_vec();
    let mut worst = 0.0f64;
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + h;
        let up = loss(&p);
        p[i] = orig - h;
        let down = loss(&p);
        p[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        if !numeric.is_finite() {
            return Err(DnkError::NonFinite("grad_check loss"));
        }
        let a = analytic[i];
        if a.abs() < 1e-9 && numeric.abs() < 1e-9 {
            continue;
        }
        worst = worst.max((a - numeric).abs() / (numeric.abs() + 1e-12));
    }
    Ok(worst)
}

/// Concatenates parameter blocks into one vector.
pub fn flatten(blocks: &[&[f64]]) -> Vec<f64> {
    blocks.iter().flat_map(|b| b.iter().copied()).collect()
}

/// Writes a flat vector back into parameter blocks (inverse of [`flatten`]).
pub fn unflatten_into(blocks: &mut [&mut [f64]], flat: &[f64]) {
    let mut off = 0;
    for b in blocks.iter_mut() {
        let n = b.len();
        b.copy_from_slice(&flat[off..off + n]);
        off += n;
    }
    debug_assert_eq!(off, flat.len());
}
