//! Which parameters the planar residuals can actually determine.
//!
//! The identification Jacobian is taken over all 39 free entries. Its
//! right-singular vectors with (numerically) zero singular value are
//! parameter combinations the data cannot see; one parameter per such
//! combination has to be fixed.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::calibrator::lm::central_difference_jacobian;
use crate::calibrator::params::{FixedMask, ParameterVector, DEFAULT_FIXED};
use crate::calibrator::residuals;
use crate::error::{Error, Result};
use crate::simulator::ScanDataset;

/// Relative step of the two-sided differences. Roughly the cube root of
/// machine epsilon, which balances truncation against cancellation.
pub const JACOBIAN_STEP: f64 = 6e-6;

/// Rank tolerance used when deflating null spaces during mask selection.
const BASIS_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisOptions {
    /// Singular values below `threshold · σ₁` count as zero.
    pub threshold: f64,
    /// Upper edge of the weakly identifiable band, relative to `σ₁`.
    pub weak_band: f64,
    /// Smallest `|component|` listed as a member of a combination.
    pub membership: f64,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            threshold: 1e-8,
            weak_band: 1e-4,
            membership: 0.05,
        }
    }
}

/// One right-singular vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Combo {
    pub singular_value: f64,
    /// `σ / σ₁`.
    pub relative: f64,
    /// Members by decreasing `|component|`.
    pub members: Vec<(String, f64)>,
    /// All components, in column order; the largest one is positive.
    pub vector: Vec<f64>,
}

/// A null direction written relative to one fixed parameter: moving the
/// pivot by `1` and the other members by their components leaves every
/// residual unchanged, with the remaining fixed parameters held still.
#[derive(Clone, Debug, PartialEq)]
pub struct ResolvedCombo {
    pub pivot: String,
    /// The pivot at `1`, then the others by decreasing `|component|`.
    pub members: Vec<(String, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IdentifiabilityReport {
    /// Column names of the analysed Jacobian.
    pub parameter_names: Vec<String>,
    /// Descending.
    pub singular_values: Vec<f64>,
    pub options: AnalysisOptions,
    /// Combinations with `σ < threshold · σ₁`, smallest σ first.
    pub null_combos: Vec<Combo>,
    /// Combinations with `threshold · σ₁ ≤ σ < weak_band · σ₁`.
    pub weak_combos: Vec<Combo>,
}

impl IdentifiabilityReport {
    pub fn null_count(&self) -> usize {
        self.null_combos.len()
    }

    /// `σ_min / σ₁`, zero for an empty Jacobian.
    pub fn condition_ratio(&self) -> f64 {
        match (self.singular_values.first(), self.singular_values.last()) {
            (Some(&s1), Some(&sn)) if s1 > 0.0 => sn / s1,
            _ => 0.0,
        }
    }
}

/// Central-difference Jacobian of the residuals over the free entries of
/// `pv` (the fixed mask is ignored).
///
/// Two-sided differences are needed here: a one-sided Jacobian carries
/// relative errors near 1e-7, which would bury the exactly dependent
/// directions well above the zero threshold.
pub fn identification_jacobian(pv: &ParameterVector, data: &ScanDataset) -> (DMatrix<f64>, Vec<String>) {
    let idx = pv.free_indices();
    let f = |x: &DVector<f64>| residuals(&pv.scatter(&idx, x), data);
    let jac = central_difference_jacobian(&f, &pv.gather(&idx), JACOBIAN_STEP, JACOBIAN_STEP);
    (jac, ParameterVector::names_of(&idx))
}

/// Singular values (descending) and matching right-singular vectors (as columns).
fn right_svd(j: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = j.ncols();
    if n == 0 || j.nrows() == 0 {
        return (Vec::new(), DMatrix::zeros(n, 0));
    }
    // J = QR leaves the right-singular structure in the small factor R
    let r = if j.nrows() > n { j.clone().qr().r() } else { j.clone() };
    let svd = r.svd(false, true);
    let v_t = svd.v_t.expect("requested Vᵀ");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|a, b| svd.singular_values[*b].total_cmp(&svd.singular_values[*a]));
    let mut values: Vec<f64> = order.iter().map(|i| svd.singular_values[*i]).collect();
    let mut v = DMatrix::from_fn(n, order.len(), |row, col| v_t[(order[col], row)]);
    // a wide Jacobian still has n singular values, the missing ones zero
    if values.len() < n {
        let full = DMatrix::<f64>::identity(n, n) - &v * v.transpose();
        let extra = full.svd(true, false).u.expect("requested U");
        let missing = n - values.len();
        let mut all = DMatrix::zeros(n, n);
        all.columns_mut(0, values.len()).copy_from(&v);
        all.columns_mut(values.len(), missing).copy_from(&extra.columns(0, missing));
        v = all;
        values.extend(std::iter::repeat_n(0.0, missing));
    }
    (values, v)
}

fn make_combo(names: &[String], sigma: f64, s1: f64, v: DVector<f64>, membership: f64) -> Combo {
    let lead = v.iamax();
    let v = if v[lead] < 0.0 { -v } else { v };
    let mut members: Vec<(String, f64)> = v
        .iter()
        .enumerate()
        .filter(|(_, c)| c.abs() > membership)
        .map(|(i, c)| (names[i].clone(), *c))
        .collect();
    members.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then_with(|| a.0.cmp(&b.0)));
    Combo {
        singular_value: sigma,
        relative: if s1 > 0.0 { sigma / s1 } else { 0.0 },
        members,
        vector: v.iter().copied().collect(),
    }
}

/// SVD of `j` and the combinations whose singular values fall below the
/// threshold or inside the weak band.
pub fn singular_value_analysis(j: &DMatrix<f64>, names: &[String], opts: &AnalysisOptions) -> Result<IdentifiabilityReport> {
    if names.len() != j.ncols() {
        return Err(Error::InvalidInput(format!(
            "{} names for {} Jacobian columns",
            names.len(),
            j.ncols()
        )));
    }
    if !j.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidInput("identification Jacobian is not finite".into()));
    }
    let (values, v) = right_svd(j);
    let s1 = values.first().copied().unwrap_or(0.0);
    let mut null_combos = Vec::new();
    let mut weak_combos = Vec::new();
    // smallest first, so the most clearly degenerate directions lead
    for k in (0..values.len()).rev() {
        let rel = if s1 > 0.0 { values[k] / s1 } else { 0.0 };
        if rel >= opts.weak_band {
            continue;
        }
        let combo = make_combo(names, values[k], s1, v.column(k).into_owned(), opts.membership);
        if rel < opts.threshold {
            null_combos.push(combo);
        } else {
            weak_combos.push(combo);
        }
    }
    Ok(IdentifiabilityReport {
        parameter_names: names.to_vec(),
        singular_values: values,
        options: *opts,
        null_combos,
        weak_combos,
    })
}

/// Orthonormal basis of `{ N c : (N c)ᵢ = 0 for every fixed row i }`.
fn remaining_null_space(basis: &DMatrix<f64>, fixed_rows: &[usize]) -> DMatrix<f64> {
    let k = basis.ncols();
    let n = basis.nrows();
    if k == 0 {
        return DMatrix::zeros(n, 0);
    }
    let projected = if fixed_rows.is_empty() {
        basis.clone()
    } else {
        let nf = DMatrix::from_fn(fixed_rows.len(), k, |r, c| basis[(fixed_rows[r], c)]);
        let pinv = nf.clone().pseudo_inverse(1e-12).expect("non-negative epsilon");
        basis * (DMatrix::identity(k, k) - pinv * nf)
    };
    let svd = projected.svd(true, false);
    let u = svd.u.expect("requested U");
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|i| svd.singular_values[*i] > BASIS_TOL)
        .collect();
    DMatrix::from_fn(n, keep.len(), |r, c| u[(r, keep[c])])
}

fn null_basis(report: &IdentifiabilityReport) -> DMatrix<f64> {
    let n = report.parameter_names.len();
    let k = report.null_combos.len();
    DMatrix::from_fn(n, k, |r, c| report.null_combos[c].vector[r])
}

/// Whether fixing `rows` removes every null direction of `basis`.
fn restores_rank(basis: &DMatrix<f64>, rows: &[usize]) -> bool {
    rows.len() == basis.ncols() && remaining_null_space(basis, rows).ncols() == 0
}

/// Chooses one parameter to fix per null combination.
///
/// When the report shows exactly as many null directions as the default
/// mask has entries and fixing that mask removes all of them, the default
/// mask is returned. Otherwise each combination in turn contributes its
/// largest-`|component|` member that still removes a null direction.
pub fn select_fixed_parameters(report: &IdentifiabilityReport) -> Result<FixedMask> {
    if report.null_combos.is_empty() {
        return Ok(FixedMask::empty());
    }
    let names = &report.parameter_names;
    let basis = null_basis(report);
    let default_rows: Option<Vec<usize>> = DEFAULT_FIXED
        .iter()
        .map(|d| names.iter().position(|n| n == d))
        .collect();
    if let Some(rows) = default_rows {
        if restores_rank(&basis, &rows) {
            return Ok(FixedMask::default_mask());
        }
    }

    let mut fixed_rows: Vec<usize> = Vec::new();
    let cutoff = report.options.membership;
    for (index, combo) in report.null_combos.iter().enumerate() {
        let rem = remaining_null_space(&basis, &fixed_rows);
        if rem.ncols() == 0 {
            break;
        }
        let v = DVector::from_column_slice(&combo.vector);
        if (rem.transpose() * &v).norm() < BASIS_TOL {
            // already removed by an earlier choice
            continue;
        }
        let mut order: Vec<usize> = (0..v.len()).filter(|i| v[*i].abs() > cutoff).collect();
        order.sort_by(|a, b| v[*b].abs().total_cmp(&v[*a].abs()));
        let pick = order
            .iter()
            .copied()
            .find(|r| !fixed_rows.contains(r) && rem.row(*r).norm() > BASIS_TOL);
        match pick {
            Some(r) => fixed_rows.push(r),
            None => {
                return Err(Error::ManualReview {
                    index,
                    candidates: order.iter().map(|i| names[*i].clone()).collect(),
                })
            }
        }
    }
    // directions left over once every combination had its turn
    loop {
        let rem = remaining_null_space(&basis, &fixed_rows);
        if rem.ncols() == 0 {
            break;
        }
        let r = (0..rem.nrows())
            .filter(|r| !fixed_rows.contains(r))
            .max_by(|a, b| rem.row(*a).norm().total_cmp(&rem.row(*b).norm()))
            .expect("a non-trivial direction has a free row");
        fixed_rows.push(r);
    }

    FixedMask::from_names(&fixed_rows.iter().map(|r| names[*r].as_str()).collect::<Vec<_>>())
}

/// Re-expresses the null space in the basis pivoted on `mask`.
///
/// The SVD returns an arbitrary orthonormal basis of a degenerate null
/// space, which smears the individual dependencies together. Pivoting on
/// the fixed parameters separates them again.
pub fn resolve_combos(report: &IdentifiabilityReport, mask: &FixedMask) -> Result<Vec<ResolvedCombo>> {
    let names = &report.parameter_names;
    let basis = null_basis(report);
    let pivots = mask.names();
    let rows: Vec<usize> = pivots
        .iter()
        .map(|p| {
            names
                .iter()
                .position(|n| n == p)
                .ok_or_else(|| Error::InvalidInput(format!("`{p}` is not a column of the report")))
        })
        .collect::<Result<_>>()?;
    if !restores_rank(&basis, &rows) {
        return Err(Error::InvalidInput(
            "the mask does not pin down the null space one parameter per direction".into(),
        ));
    }
    let nf = DMatrix::from_fn(rows.len(), basis.ncols(), |r, c| basis[(rows[r], c)]);
    let inv = nf.try_inverse().ok_or_else(|| Error::InvalidInput("mask rows are singular".into()))?;
    let resolved = basis * inv;
    let cutoff = report.options.membership;
    Ok(pivots
        .iter()
        .enumerate()
        .map(|(k, pivot)| {
            let v = resolved.column(k);
            // membership is judged on the unit-normalized vector
            let scale = v.norm();
            let mut members: Vec<(String, f64)> = v
                .iter()
                .enumerate()
                .filter(|(_, c)| c.abs() > cutoff * scale)
                .map(|(i, c)| (names[i].clone(), if i == rows[k] { 1.0 } else { *c }))
                .collect();
            members.sort_by(|a, b| {
                (b.0 == *pivot)
                    .cmp(&(a.0 == *pivot))
                    .then_with(|| b.1.abs().total_cmp(&a.1.abs()))
                    .then_with(|| a.0.cmp(&b.0))
            });
            ResolvedCombo {
                pivot: pivot.clone(),
                members,
            }
        })
        .collect())
}

/// Drops the masked columns of `j`.
pub fn restrict_columns(j: &DMatrix<f64>, names: &[String], mask: &FixedMask) -> (DMatrix<f64>, Vec<String>) {
    let masked = mask.names();
    let keep: Vec<usize> = (0..names.len()).filter(|i| !masked.contains(&names[*i])).collect();
    let cols: Vec<DVector<f64>> = keep.iter().map(|i| j.column(*i).into_owned()).collect();
    let restricted = if cols.is_empty() {
        DMatrix::zeros(j.nrows(), 0)
    } else {
        DMatrix::from_columns(&cols)
    };
    (restricted, keep.iter().map(|i| names[*i].clone()).collect())
}

/// Jacobian, report and suggested mask in one call.
pub fn analyze(pv: &ParameterVector, data: &ScanDataset, opts: &AnalysisOptions) -> Result<(IdentifiabilityReport, FixedMask)> {
    data.validate()?;
    let (j, names) = identification_jacobian(pv, data);
    let report = singular_value_analysis(&j, &names, opts)?;
    let mask = select_fixed_parameters(&report)?;
    Ok((report, mask))
}
