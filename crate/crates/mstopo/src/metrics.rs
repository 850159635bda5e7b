//! Displacement-error metrics and bound comparisons reported by runs.

use crate::error::{Error, Result};
use crate::fem::Material;
use crate::homog::{bulk_modulus, hs_upper_bound, HomogenizationResult};

/// Root mean square error over dofs with positive mask weight.
pub fn masked_rmse(u: &[f64], target: &[f64], mask: &[f64]) -> Result<f64> {
    if u.len() != target.len() || u.len() != mask.len() {
        return Err(Error::Input(format!(
            "rmse over mismatched lengths {} / {} / {}",
            u.len(),
            target.len(),
            mask.len()
        )));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..u.len() {
        let d = u[i] - target[i];
        num += mask[i] * d * d;
        den += mask[i];
    }
    if den == 0.0 {
        return Err(Error::Input("rmse mask selects no dofs".into()));
    }
    Ok((num / den).sqrt())
}

/// RMSE over every dof (unit mask).
pub fn rmse(u: &[f64], target: &[f64]) -> Result<f64> {
    masked_rmse(u, target, &vec![1.0; u.len()])
}

/// Entries of `v` where the mask is positive, in dof order.
pub fn select_masked(v: &[f64], mask: &[f64]) -> Vec<f64> {
    v.iter()
        .zip(mask)
        .filter(|(_, &m)| m > 0.0)
        .map(|(&x, _)| x)
        .collect()
}

/// Displacement deviation in the printed benchmark form,
/// `sqrt(sum (u - u_t)^2) / sum u_t^2`.
///
/// The numerator and denominator carry different units; see
/// [`delta_normalized`] for the dimensionless variant. Both are reported.
pub fn delta_metric(u: &[f64], target: &[f64]) -> Result<f64> {
    let (num2, den) = delta_parts(u, target)?;
    Ok(num2.sqrt() / den)
}

/// Dimensionless companion form `sqrt(sum (u - u_t)^2 / sum u_t^2)`.
pub fn delta_normalized(u: &[f64], target: &[f64]) -> Result<f64> {
    let (num2, den) = delta_parts(u, target)?;
    Ok((num2 / den).sqrt())
}

fn delta_parts(u: &[f64], target: &[f64]) -> Result<(f64, f64)> {
    if u.len() != target.len() {
        return Err(Error::Input(format!(
            "deviation over mismatched lengths {} / {}",
            u.len(),
            target.len()
        )));
    }
    let mut num2 = 0.0;
    let mut den = 0.0;
    for i in 0..u.len() {
        let d = u[i] - target[i];
        num2 += d * d;
        den += target[i] * target[i];
    }
    if den == 0.0 {
        return Err(Error::Input("deviation against a zero target".into()));
    }
    Ok((num2, den))
}

/// Per-cell and mean percentage of the theoretical upper bound attained,
/// `100 * bulk(E_c) / bound(actual volume fraction of the cell)`.
pub fn percent_hs_report(
    results: &[HomogenizationResult],
    actual_volumes: &[f64],
    material: Material,
) -> Result<(Vec<f64>, f64)> {
    if results.len() != actual_volumes.len() {
        return Err(Error::Input(format!(
            "{} cells but {} volume fractions",
            results.len(),
            actual_volumes.len()
        )));
    }
    if results.is_empty() {
        return Err(Error::Input("no cells to report on".into()));
    }
    let mut per_cell = Vec::with_capacity(results.len());
    for (r, &vf) in results.iter().zip(actual_volumes) {
        let bound = hs_upper_bound(vf, material);
        // NaN fails this check too.
        if bound.is_nan() || bound <= 0.0 {
            return Err(Error::Numerical(format!(
                "degenerate bound {bound} at volume fraction {vf}"
            )));
        }
        per_cell.push(100.0 * bulk_modulus(&r.tensor) / bound);
    }
    let mean = per_cell.iter().sum::<f64>() / per_cell.len() as f64;
    Ok((per_cell, mean))
}
