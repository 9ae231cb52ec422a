//! Misspecification diagnostics: fit the model under several weight
//! hyperparameter sets and test whether the estimates move.
//!
//! Under a correctly specified family the estimators for every weight choice
//! are consistent for the same parameters, so scaled differences between
//! fits are asymptotically centered normal with the block covariance
//! assembled here; Wald-type quadratic forms of those differences are then
//! chi-square. Systematic movement of the estimates across weights signals
//! that the family/link is wrong, not just that outliers are present.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::censtrun::{self, ObservationRecord};
use crate::complete::{self, FitOptions, FitResult};
use crate::elements;
use crate::error::{Error, Result};
use crate::families::EdmFamily;
use crate::link::LinkSpec;
use crate::model::{Dataset, ParamVector};
use crate::numerics::{chi_square_sf, linalg};
use crate::weighting::WeightSpec;

/// Ordered collection of weight hyperparameter sets; by convention entry 1
/// is the flat-weight (MLE) configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HyperGrid {
    specs: Vec<WeightSpec>,
}

impl HyperGrid {
    /// Build a grid, rejecting duplicates (a duplicated spec makes every
    /// difference-contrast covariance singular by construction).
    pub fn new(specs: Vec<WeightSpec>) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::Precondition("empty hyperparameter grid".into()));
        }
        for i in 0..specs.len() {
            for j in (i + 1)..specs.len() {
                if specs_equal(&specs[i], &specs[j]) {
                    return Err(Error::Precondition(format!(
                        "weight specs {i} and {j} are identical"
                    )));
                }
            }
        }
        Ok(HyperGrid { specs })
    }

    pub fn specs(&self) -> &[WeightSpec] {
        &self.specs
    }

    pub fn k(&self) -> usize {
        self.specs.len()
    }
}

fn specs_equal(a: &WeightSpec, b: &WeightSpec) -> bool {
    match (a, b) {
        (WeightSpec::Mle, WeightSpec::Mle) => true,
        (
            WeightSpec::Weighted {
                beta_tilde: ba,
                phi_tilde: pa,
                scale: sa,
            },
            WeightSpec::Weighted {
                beta_tilde: bb,
                phi_tilde: pb,
                scale: sb,
            },
        ) => {
            pa == pb
                && sa == sb
                && ba.len() == bb.len()
                && ba.iter().zip(bb.iter()).all(|(x, y)| (x - y).abs() < 1e-12)
        }
        _ => false,
    }
}

/// Data carrier for diagnostics over either fitting path.
#[derive(Debug, Clone, Copy)]
pub enum DataRef<'a> {
    Complete(&'a Dataset),
    Censored(&'a [ObservationRecord]),
}

impl<'a> DataRef<'a> {
    pub fn n(&self) -> usize {
        match self {
            DataRef::Complete(d) => d.n(),
            DataRef::Censored(r) => r.len(),
        }
    }

    fn p(&self) -> usize {
        match self {
            DataRef::Complete(d) => d.p(),
            DataRef::Censored(r) => r[0].x.len(),
        }
    }
}

/// Joint covariance of the stacked fits, evaluated at `eval_params`
/// (conventionally the flat-weight fit). Block `(k, k')` is
/// `Gamma_k^{-1} Lambda_{k,k'} Gamma_{k'}^{-T}`, with expectations over the
/// covariates replaced by sample averages.
pub fn meta_covariance(
    family: &EdmFamily,
    link: &LinkSpec,
    eval_params: &ParamVector,
    specs: &[WeightSpec],
    data: DataRef<'_>,
) -> Result<DMatrix<f64>> {
    let k = specs.len();
    let n = data.n();
    let p = data.p();
    let dim = p + 1;

    // per-spec Gamma and pairwise Lambda accumulated over the sample
    let mut gammas = vec![DMatrix::<f64>::zeros(dim, dim); k];
    let mut lambdas = vec![vec![DMatrix::<f64>::zeros(dim, dim); k]; k];

    match data {
        DataRef::Complete(ds) => {
            for i in 0..ds.n() {
                let x = ds.row(i);
                for (a, spec) in specs.iter().enumerate() {
                    let g = elements::gamma_block(family, link, eval_params, spec, &x)?;
                    accumulate(&mut gammas[a], &g, &x);
                    for (b, spec_b) in specs.iter().enumerate().skip(a) {
                        let l = elements::lambda_block_cross(
                            family,
                            link,
                            eval_params,
                            spec,
                            spec_b,
                            &x,
                        )?;
                        accumulate(&mut lambdas[a][b], &l, &x);
                    }
                }
            }
        }
        DataRef::Censored(records) => {
            for rec in records {
                let (gs, ls) =
                    censtrun::meta_record_blocks(family, link, eval_params, specs, rec)?;
                for (a, g) in gs.iter().enumerate() {
                    accumulate_b2(&mut gammas[a], g, &rec.x);
                    for b in a..k {
                        accumulate_b2(&mut lambdas[a][b], ls[a][b].as_ref().unwrap(), &rec.x);
                    }
                }
            }
        }
    }

    let nf = n as f64;
    let mut gamma_invs = Vec::with_capacity(k);
    for (a, g) in gammas.iter_mut().enumerate() {
        *g /= nf;
        let inv = linalg::invert(g, "per-spec score Jacobian").map_err(|e| match e {
            Error::Singular { condition, .. } => Error::Calibration {
                message: format!(
                    "score Jacobian for spec {} is singular (condition {condition:.3e})",
                    a + 1
                ),
            },
            other => other,
        })?;
        gamma_invs.push(inv);
    }

    let mut sigma = DMatrix::zeros(dim * k, dim * k);
    for a in 0..k {
        for b in a..k {
            let lam = &lambdas[a][b] / nf;
            let block = &gamma_invs[a] * &lam * gamma_invs[b].transpose();
            sigma.view_mut((a * dim, b * dim), (dim, dim)).copy_from(&block);
            if b != a {
                sigma
                    .view_mut((b * dim, a * dim), (dim, dim))
                    .copy_from(&block.transpose());
            }
        }
    }
    Ok(sigma)
}

fn accumulate(acc: &mut DMatrix<f64>, b: &elements::ElementBlock, x: &DVector<f64>) {
    let p = x.len();
    for i in 0..p {
        for j in 0..p {
            acc[(i, j)] += b.tt * x[i] * x[j];
        }
        acc[(i, p)] += b.tp * x[i];
        acc[(p, i)] += b.pt * x[i];
    }
    acc[(p, p)] += b.pp;
}

fn accumulate_b2(acc: &mut DMatrix<f64>, b: &censtrun::Block2, x: &DVector<f64>) {
    let p = x.len();
    for i in 0..p {
        for j in 0..p {
            acc[(i, j)] += b.tt * x[i] * x[j];
        }
        acc[(i, p)] += b.tp * x[i];
        acc[(p, i)] += b.pt * x[i];
    }
    acc[(p, p)] += b.pp;
}

/// One Wald statistic with its reference distribution.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct WaldStat {
    pub value: f64,
    pub df: usize,
    pub p_value: f64,
}

fn wald_from_contrast(
    stacked: &DVector<f64>,
    sigma: &DMatrix<f64>,
    j: &DMatrix<f64>,
    n: usize,
) -> Result<WaldStat> {
    let d = j * stacked;
    let jsj = j * sigma * j.transpose();
    let value = linalg::quadratic_form(&jsj, &d, n as f64)?;
    let df = j.nrows();
    Ok(WaldStat {
        value,
        df,
        p_value: chi_square_sf(value, df),
    })
}

fn stack_params(fits: &[ParamVector]) -> DVector<f64> {
    let dim = fits[0].len();
    let mut v = DVector::zeros(dim * fits.len());
    for (k, f) in fits.iter().enumerate() {
        v.rows_mut(k * dim, dim).copy_from(&f.to_vector());
    }
    v
}

/// Consecutive-difference contrast over all parameters:
/// df = (P+1)(K-1).
pub fn meta_wald(
    fits: &[ParamVector],
    sigma_meta: &DMatrix<f64>,
    n: usize,
) -> Result<WaldStat> {
    let k = fits.len();
    if k < 2 {
        return Err(Error::Precondition("meta statistic needs K >= 2".into()));
    }
    let dim = fits[0].len();
    let mut j = DMatrix::zeros(dim * (k - 1), dim * k);
    for a in 0..(k - 1) {
        for r in 0..dim {
            j[(a * dim + r, a * dim + r)] = 1.0;
            j[(a * dim + r, (a + 1) * dim + r)] = -1.0;
        }
    }
    wald_from_contrast(&stack_params(fits), sigma_meta, &j, n)
}

/// Pairwise comparison of two fits over all parameters: df = P+1.
pub fn individual_wald(
    k: usize,
    k_other: usize,
    fits: &[ParamVector],
    sigma_meta: &DMatrix<f64>,
    n: usize,
) -> Result<WaldStat> {
    if k == k_other {
        return Err(Error::Precondition(
            "individual statistic needs two distinct spec indices".into(),
        ));
    }
    let dim = fits[0].len();
    let mut j = DMatrix::zeros(dim, dim * fits.len());
    for r in 0..dim {
        j[(r, k * dim + r)] = 1.0;
        j[(r, k_other * dim + r)] = -1.0;
    }
    wald_from_contrast(&stack_params(fits), sigma_meta, &j, n)
}

/// Consecutive differences of a single parameter: df = K-1.
pub fn param_meta_wald(
    param: usize,
    fits: &[ParamVector],
    sigma_meta: &DMatrix<f64>,
    n: usize,
) -> Result<WaldStat> {
    let k = fits.len();
    if k < 2 {
        return Err(Error::Precondition("meta statistic needs K >= 2".into()));
    }
    let dim = fits[0].len();
    if param >= dim {
        return Err(Error::Precondition(format!(
            "parameter index {param} out of range ({dim} parameters)"
        )));
    }
    let mut j = DMatrix::zeros(k - 1, dim * k);
    for a in 0..(k - 1) {
        j[(a, a * dim + param)] = 1.0;
        j[(a, (a + 1) * dim + param)] = -1.0;
    }
    wald_from_contrast(&stack_params(fits), sigma_meta, &j, n)
}

/// Pairwise comparison of a single parameter: df = 1.
pub fn param_individual_wald(
    param: usize,
    k: usize,
    k_other: usize,
    fits: &[ParamVector],
    sigma_meta: &DMatrix<f64>,
    n: usize,
) -> Result<WaldStat> {
    if k == k_other {
        return Err(Error::Precondition(
            "individual statistic needs two distinct spec indices".into(),
        ));
    }
    let dim = fits[0].len();
    let mut j = DMatrix::zeros(1, dim * fits.len());
    j[(0, k * dim + param)] = 1.0;
    j[(0, k_other * dim + param)] = -1.0;
    wald_from_contrast(&stack_params(fits), sigma_meta, &j, n)
}

/// Standardized parameter deviance residuals: how far each fit moves from
/// the benchmark fit `k0`, in units of the benchmark's standard error.
pub fn residuals(
    fits: &[ParamVector],
    k0: usize,
    ses: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    if k0 >= fits.len() {
        return Err(Error::Precondition(format!(
            "benchmark index {k0} out of range"
        )));
    }
    let dim = fits[0].len();
    if ses.iter().any(|s| *s <= 0.0) {
        return Err(Error::Precondition(
            "benchmark standard errors must be positive".into(),
        ));
    }
    let base = fits[k0].to_vector();
    let mut r = DMatrix::zeros(dim, fits.len());
    for (k, f) in fits.iter().enumerate() {
        let v = f.to_vector();
        for pidx in 0..dim {
            r[(pidx, k)] = (v[pidx] - base[pidx]) / ses[pidx];
        }
    }
    Ok(r)
}

/// Full diagnostic bundle over a hyperparameter grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetaWaldReport {
    pub fits: Vec<FitResult>,
    #[serde(with = "crate::serde_util::dmatrix")]
    pub sigma_meta: DMatrix<f64>,
    pub meta_stat: WaldStat,
    /// `individual[k][k']` for `k < k'`; `None` on and below the diagonal.
    pub individual_stats: Vec<Vec<Option<WaldStat>>>,
    /// One statistic per parameter (consecutive differences).
    pub param_meta_stats: Vec<WaldStat>,
    /// `param_individual[p][k][k']` upper triangle.
    pub param_individual_stats: Vec<Vec<Vec<Option<WaldStat>>>>,
    /// `(P+1) x K`: standardized deviance residuals against fit `k0`.
    #[serde(with = "crate::serde_util::dmatrix")]
    pub residual_matrix: DMatrix<f64>,
    pub k0: usize,
    pub n: usize,
    /// True when the covariance was evaluated at a non-MLE benchmark fit
    /// because the grid has no flat-weight entry.
    pub eval_params_not_mle: bool,
}

/// Fit every grid entry and assemble all statistics.
///
/// The joint covariance is evaluated at the fitted parameters of the first
/// spec, which by convention is the flat-weight entry; a grid without one
/// is allowed but flagged in the report.
pub fn diagnose(
    family: &EdmFamily,
    link: &LinkSpec,
    grid: &HyperGrid,
    data: DataRef<'_>,
    options: &FitOptions,
    k0: usize,
) -> Result<MetaWaldReport> {
    if grid.k() < 2 {
        return Err(Error::Precondition(
            "diagnostics need a grid with K >= 2".into(),
        ));
    }
    let mut fits: Vec<FitResult> = Vec::with_capacity(grid.k());
    let mut opts = options.clone();
    for spec in grid.specs() {
        let fit = match data {
            DataRef::Complete(ds) => complete::fit(family, link, spec, ds, &opts)?,
            DataRef::Censored(records) => {
                censtrun::fit_censtrun(family, link, spec, records, &opts)?
            }
        };
        // warm-start the next spec from this solution
        opts.init = Some(fit.params.clone());
        fits.push(fit);
    }
    report_from_fits(family, link, grid, data, fits, k0)
}

/// Assemble the report from already-computed fits (the simulation harness
/// reuses this to avoid double fitting).
pub fn report_from_fits(
    family: &EdmFamily,
    link: &LinkSpec,
    grid: &HyperGrid,
    data: DataRef<'_>,
    fits: Vec<FitResult>,
    k0: usize,
) -> Result<MetaWaldReport> {
    let k = grid.k();
    let n = data.n();
    let eval_params_not_mle = !grid.specs()[0].is_mle();
    let eval_params = fits[0].params.clone();
    let sigma_meta = meta_covariance(family, link, &eval_params, grid.specs(), data)?;

    let params: Vec<ParamVector> = fits.iter().map(|f| f.params.clone()).collect();
    let meta_stat = meta_wald(&params, &sigma_meta, n)?;

    let mut individual = vec![vec![None; k]; k];
    for a in 0..k {
        for b in (a + 1)..k {
            individual[a][b] = Some(individual_wald(a, b, &params, &sigma_meta, n)?);
        }
    }

    let dim = params[0].len();
    let mut param_meta = Vec::with_capacity(dim);
    for pidx in 0..dim {
        param_meta.push(param_meta_wald(pidx, &params, &sigma_meta, n)?);
    }

    let mut param_individual = vec![vec![vec![None; k]; k]; dim];
    for (pidx, rows) in param_individual.iter_mut().enumerate() {
        for a in 0..k {
            for b in (a + 1)..k {
                rows[a][b] =
                    Some(param_individual_wald(pidx, a, b, &params, &sigma_meta, n)?);
            }
        }
    }

    let ses = fits[k0].standard_errors();
    let residual_matrix = residuals(&params, k0, &ses)?;

    Ok(MetaWaldReport {
        fits,
        sigma_meta,
        meta_stat,
        individual_stats: individual,
        param_meta_stats: param_meta,
        param_individual_stats: param_individual,
        residual_matrix,
        k0,
        n,
        eval_params_not_mle,
    })
}

impl MetaWaldReport {
    /// Triangular text table: statistics in the lower-left triangle,
    /// p-values in the upper-right.
    pub fn individual_table(&self) -> String {
        let k = self.fits.len();
        let cell = |a: usize, b: usize| -> String {
            if a == b {
                "---".to_string()
            } else if a < b {
                // upper triangle: p-value
                format!("{:.3}", self.individual_stats[a][b].unwrap().p_value)
            } else {
                format!("{:.3}", self.individual_stats[b][a].unwrap().value)
            }
        };
        render_matrix_table("k \\ k'", k, cell)
    }

    /// Same layout for a single parameter.
    pub fn param_individual_table(&self, param: usize) -> String {
        let k = self.fits.len();
        let stats = &self.param_individual_stats[param];
        let cell = |a: usize, b: usize| -> String {
            if a == b {
                "---".to_string()
            } else if a < b {
                format!("{:.3}", stats[a][b].unwrap().p_value)
            } else {
                format!("{:.3}", stats[b][a].unwrap().value)
            }
        };
        render_matrix_table("k \\ k'", k, cell)
    }

    /// Parameter-level summary: estimate, SE per fit plus the per-parameter
    /// meta statistic.
    pub fn summary_table(&self) -> String {
        let dim = self.fits[0].params.len();
        let mut out = String::new();
        out.push_str(&format!("{:<10}", "param"));
        for k in 0..self.fits.len() {
            out.push_str(&format!("{:>12}", format!("fit k={}", k + 1)));
            out.push_str(&format!("{:>10}", "SE"));
        }
        out.push_str(&format!("{:>12}{:>10}\n", "meta stat", "p"));
        for pidx in 0..dim {
            let name = if pidx + 1 == dim {
                "phi".to_string()
            } else {
                format!("beta{}", pidx + 1)
            };
            out.push_str(&format!("{name:<10}"));
            for f in &self.fits {
                let v = f.params.to_vector()[pidx];
                let se = f.covariance[(pidx, pidx)].max(0.0).sqrt();
                out.push_str(&format!("{v:>12.4}{se:>10.4}"));
            }
            let st = &self.param_meta_stats[pidx];
            out.push_str(&format!("{:>12.3}{:>10.3}\n", st.value, st.p_value));
        }
        out
    }
}

fn render_matrix_table(corner: &str, k: usize, cell: impl Fn(usize, usize) -> String) -> String {
    let mut out = String::new();
    out.push_str(&format!("{corner:<8}"));
    for b in 0..k {
        out.push_str(&format!("{:>10}", b + 1));
    }
    out.push('\n');
    for a in 0..k {
        out.push_str(&format!("{:<8}", a + 1));
        for b in 0..k {
            out.push_str(&format!("{:>10}", cell(a, b)));
        }
        out.push('\n');
    }
    out
}
