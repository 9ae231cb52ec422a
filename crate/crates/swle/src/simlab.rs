//! Seedable data generators and the replication engine for the three
//! simulation designs: plain GLMs, a heavy-tail contaminated linear model,
//! and a varying-dispersion Gamma model with left truncation and right
//! censoring.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::censtrun::{self, CensoringScheme, ObservationRecord, Outcome};
use crate::complete::{self, FitOptions, FitResult};
use crate::diagnostics::{self, DataRef, HyperGrid, WaldStat};
use crate::error::{Error, Result};
use crate::families::{EdmFamily, FamilyId};
use crate::link::LinkSpec;
use crate::model::{Dataset, ParamVector};
use crate::numerics::rng::Prng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GeneratorKind {
    PlainGlm,
    ContaminatedLinear,
    VaryingDispersionGamma,
}

/// Mixture contamination: with probability `epsilon` the response is drawn
/// from a scaled, translated Student-t centered on the regression mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Contamination {
    pub epsilon: f64,
    pub t_df: f64,
    /// Target variance of the contaminating component.
    pub variance: f64,
}

/// Random left-truncation / right-censoring: each observation draws its
/// truncation and censoring points uniformly from the listed values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensoringRule {
    pub trunc_points: Vec<f64>,
    pub cens_points: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimDesign {
    pub kind: GeneratorKind,
    pub family: EdmFamily,
    pub link: LinkSpec,
    pub true_params: ParamVector,
    pub n: usize,
    pub contamination: Option<Contamination>,
    /// Regression coefficients of `log phi_i = x_i' alpha` for the
    /// varying-dispersion generator.
    #[serde(default, with = "crate::serde_util::optional_dvector")]
    pub dispersion_coefs: Option<DVector<f64>>,
    pub censoring: Option<CensoringRule>,
    pub seed: u64,
}

impl SimDesign {
    /// Gamma GLM with log link, coefficients (1, 0.5), dispersion 0.5.
    pub fn sim1_gamma(n: usize, seed: u64) -> Self {
        SimDesign {
            kind: GeneratorKind::PlainGlm,
            family: EdmFamily::gamma(),
            link: LinkSpec::Log,
            true_params: ParamVector::from_slice(&[1.0, 0.5], 0.5),
            n,
            contamination: None,
            dispersion_coefs: None,
            censoring: None,
            seed,
        }
    }

    /// Linear model with identity link, coefficients (1, 0.5), variance 0.25.
    pub fn sim1_normal(n: usize, seed: u64) -> Self {
        SimDesign {
            kind: GeneratorKind::PlainGlm,
            family: EdmFamily::normal(),
            link: LinkSpec::Canonical,
            true_params: ParamVector::from_slice(&[1.0, 0.5], 0.25),
            n,
            contamination: None,
            dispersion_coefs: None,
            censoring: None,
            seed,
        }
    }

    /// Inverse-Gaussian GLM with log link, coefficients (1, 0.5), dispersion 0.1.
    pub fn sim1_invgauss(n: usize, seed: u64) -> Self {
        SimDesign {
            kind: GeneratorKind::PlainGlm,
            family: EdmFamily::inverse_gaussian(),
            link: LinkSpec::Log,
            true_params: ParamVector::from_slice(&[1.0, 0.5], 0.1),
            n,
            contamination: None,
            dispersion_coefs: None,
            censoring: None,
            seed,
        }
    }

    /// Contaminated linear model: 10% scaled/translated t(2.5) admixture.
    pub fn sim2(n: usize, seed: u64) -> Self {
        SimDesign {
            kind: GeneratorKind::ContaminatedLinear,
            family: EdmFamily::normal(),
            link: LinkSpec::Canonical,
            true_params: ParamVector::from_slice(&[1.0, 0.5], 0.25),
            n,
            contamination: Some(Contamination {
                epsilon: 0.1,
                t_df: 2.5,
                variance: 0.25,
            }),
            dispersion_coefs: None,
            censoring: None,
            seed,
        }
    }

    /// Varying-dispersion Gamma with left truncation at {0, 0.5} and right
    /// censoring at {10, 20}. Case I is constant dispersion 0.5; Case II
    /// lets the second covariate inflate the dispersion.
    pub fn sim3(case_two: bool, n: usize, seed: u64) -> Self {
        let alpha = if case_two {
            DVector::from_vec(vec![0.5f64.ln(), 0.25])
        } else {
            DVector::from_vec(vec![0.5f64.ln(), 0.0])
        };
        SimDesign {
            kind: GeneratorKind::VaryingDispersionGamma,
            family: EdmFamily::gamma(),
            link: LinkSpec::Log,
            true_params: ParamVector::from_slice(&[1.0, 0.5], 0.5),
            n,
            contamination: None,
            dispersion_coefs: Some(alpha),
            censoring: Some(CensoringRule {
                trunc_points: vec![0.0, 0.5],
                cens_points: vec![10.0, 20.0],
            }),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Precondition("n must be positive".into()));
        }
        if let Some(c) = &self.contamination {
            if !(0.0..1.0).contains(&c.epsilon) {
                return Err(Error::Precondition(format!(
                    "epsilon = {} not in [0, 1)",
                    c.epsilon
                )));
            }
            if c.t_df <= 2.0 {
                return Err(Error::Precondition(
                    "contamination t_df must exceed 2 for a finite variance".into(),
                ));
            }
        }
        if let Some(r) = &self.censoring {
            if r.trunc_points.is_empty() || r.cens_points.is_empty() {
                return Err(Error::Precondition(
                    "censoring rule needs truncation and censoring points".into(),
                ));
            }
        }
        if self.kind == GeneratorKind::VaryingDispersionGamma && self.dispersion_coefs.is_none() {
            return Err(Error::Precondition(
                "varying-dispersion generator needs dispersion coefficients".into(),
            ));
        }
        Ok(())
    }
}

const MAX_REJECTION_RESAMPLES: usize = 10_000;

/// Draw one replication's records; deterministic in `(design.seed, rep)`.
pub fn generate(design: &SimDesign, rep: u64) -> Result<Vec<ObservationRecord>> {
    design.validate()?;
    let mut rng = Prng::derive(design.seed, rep);
    let p = design.true_params.beta.len();
    let mut records = Vec::with_capacity(design.n);

    for i in 0..design.n {
        // covariates: intercept plus a standard normal
        let mut x = DVector::zeros(p);
        x[0] = 1.0;
        for j in 1..p {
            x[j] = rng.standard_normal();
        }
        let z = x.dot(&design.true_params.beta);
        let theta = design.link.xi(&design.family, z);
        let mu = design.family.mean(theta);

        let draw = |rng: &mut Prng, phi: f64| -> f64 {
            match design.kind {
                GeneratorKind::PlainGlm | GeneratorKind::VaryingDispersionGamma => {
                    match design.family.id {
                        FamilyId::Gamma => rng.gamma(1.0 / phi, mu * phi),
                        FamilyId::Normal => rng.normal(mu, phi),
                        FamilyId::InverseGaussian => rng.inverse_gaussian(mu, 1.0 / phi),
                    }
                }
                GeneratorKind::ContaminatedLinear => {
                    let c = design.contamination.unwrap();
                    if rng.uniform() < c.epsilon {
                        let scale = (c.variance * (c.t_df - 2.0) / c.t_df).sqrt();
                        mu + scale * rng.student_t(c.t_df)
                    } else {
                        rng.normal(mu, phi)
                    }
                }
            }
        };

        let phi_i = match (&design.kind, &design.dispersion_coefs) {
            (GeneratorKind::VaryingDispersionGamma, Some(alpha)) => x.dot(alpha).exp(),
            _ => design.true_params.phi,
        };

        match &design.censoring {
            None => {
                let y = draw(&mut rng, phi_i);
                records.push(ObservationRecord::exact(x, CensoringScheme::complete(), y));
            }
            Some(rule) => {
                let t = *rng.pick(&rule.trunc_points);
                let c = *rng.pick(&rule.cens_points);
                // left truncation by rejection
                let mut y = draw(&mut rng, phi_i);
                let mut tries = 0usize;
                while y <= t {
                    y = draw(&mut rng, phi_i);
                    tries += 1;
                    if tries > MAX_REJECTION_RESAMPLES {
                        return Err(Error::InvalidRecord {
                            index: i,
                            message: format!(
                                "rejection sampling exhausted at truncation point {t}"
                            ),
                        });
                    }
                }
                let scheme = CensoringScheme::left_trunc_right_cens(t, c);
                let rec = if y > c {
                    ObservationRecord::censored(x, scheme, 0)
                } else {
                    ObservationRecord::exact(x, scheme, y)
                };
                records.push(rec);
            }
        }
    }
    Ok(records)
}

/// Collapse complete records into a plain dataset; `None` if any record is
/// truncated or censored.
pub fn records_to_dataset(records: &[ObservationRecord]) -> Option<Dataset> {
    let p = records.first()?.x.len();
    let mut ys = Vec::with_capacity(records.len());
    let mut xs = Vec::with_capacity(records.len() * p);
    for r in records {
        if !r.scheme.is_complete() {
            return None;
        }
        match r.outcome {
            Outcome::Exact(y) => {
                ys.push(y);
                xs.extend(r.x.iter().cloned());
            }
            Outcome::CensoredIn(_) => return None,
        }
    }
    let n = ys.len();
    Dataset::new(
        DVector::from_vec(ys),
        DMatrix::from_row_slice(n, p, &xs),
    )
    .ok()
}

/// The per-`K` down-weighting schedules used throughout the studies.
pub fn delta_grid(k: usize) -> Result<Vec<f64>> {
    match k {
        2 => Ok(vec![1.0, 0.001]),
        3 => Ok(vec![1.0, 0.1, 0.001]),
        5 => Ok(vec![1.0, 0.5, 0.1, 0.01, 0.001]),
        _ => Err(Error::Precondition(format!(
            "no standard delta schedule for K = {k}"
        ))),
    }
}

/// Everything recorded from one replication.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub rep: usize,
    /// Per spec: flattened `(beta, phi)` estimates.
    #[serde(with = "crate::serde_util::dvector_list")]
    pub estimates: Vec<DVector<f64>>,
    #[serde(with = "crate::serde_util::dvector_list")]
    pub standard_errors: Vec<DVector<f64>>,
    pub meta: WaldStat,
    /// Upper-triangular pairwise statistics.
    pub individual: Vec<Vec<Option<WaldStat>>>,
    pub param_meta: Vec<WaldStat>,
    /// `Some(count)` when support filtering dropped observations.
    pub dropped_rows: usize,
}

/// Aggregated study output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicationSummary {
    pub b_requested: usize,
    pub b_completed: usize,
    pub level: f64,
    pub k: usize,
    /// Per spec: mean of the estimates across replications.
    #[serde(with = "crate::serde_util::dvector_list")]
    pub param_means: Vec<DVector<f64>>,
    /// Per spec: empirical standard deviation across replications.
    #[serde(with = "crate::serde_util::dvector_list")]
    pub param_sds: Vec<DVector<f64>>,
    /// Per spec: mean plug-in sandwich standard error.
    #[serde(with = "crate::serde_util::dvector_list")]
    pub mean_model_ses: Vec<DVector<f64>>,
    /// Per spec and parameter: share of replications whose normal-theory 95%
    /// interval covers the design truth.
    #[serde(with = "crate::serde_util::dvector_list")]
    pub coverage95: Vec<DVector<f64>>,
    pub meta_rejection_rate: f64,
    /// Upper-triangular pairwise rejection rates.
    pub individual_rejection: Vec<Vec<Option<f64>>>,
    pub param_meta_rejection: Vec<f64>,
    pub failures: Vec<(usize, String)>,
    pub replications: Vec<ReplicationRecord>,
}

/// Options for a study run.
#[derive(Debug, Clone)]
pub struct StudyOptions {
    pub b: usize,
    pub level: f64,
    /// Worker threads; 0 or 1 runs sequentially. Aggregation is performed in
    /// replication order either way, so results do not depend on this.
    pub parallelism: usize,
    /// Family/link to fit (defaults to the design's own).
    pub fit_family: Option<EdmFamily>,
    pub fit_link: Option<LinkSpec>,
}

impl Default for StudyOptions {
    fn default() -> Self {
        StudyOptions {
            b: 100,
            level: 0.05,
            parallelism: 0,
            fit_family: None,
            fit_link: None,
        }
    }
}

/// Run `B` replications of generate / fit-all-specs / diagnose and aggregate.
pub fn run_study(
    design: &SimDesign,
    grid: &HyperGrid,
    opts: &StudyOptions,
) -> Result<ReplicationSummary> {
    design.validate()?;
    if opts.b == 0 {
        return Err(Error::Precondition("B must be positive".into()));
    }
    let fit_family = opts.fit_family.unwrap_or(design.family);
    let fit_link = opts.fit_link.unwrap_or(design.link);

    let one = |rep: usize| -> Result<ReplicationRecord> {
        run_replication(design, &fit_family, &fit_link, grid, rep)
    };

    let results: Vec<(usize, std::result::Result<ReplicationRecord, String>)> =
        if opts.parallelism > 1 {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(opts.parallelism)
                .build()
                .map_err(|e| Error::Precondition(format!("thread pool: {e}")))?;
            pool.install(|| {
                (0..opts.b)
                    .into_par_iter()
                    .map(|rep| (rep, one(rep).map_err(|e| e.to_string())))
                    .collect()
            })
        } else {
            (0..opts.b)
                .map(|rep| (rep, one(rep).map_err(|e| e.to_string())))
                .collect()
        };

    let mut records = Vec::with_capacity(opts.b);
    let mut failures = Vec::new();
    for (rep, r) in results {
        match r {
            Ok(rec) => records.push(rec),
            Err(msg) => failures.push((rep, msg)),
        }
    }
    if failures.len() * 10 > opts.b {
        return Err(Error::StudyFailure {
            failed: failures.len(),
            total: opts.b,
            first: failures[0].1.clone(),
        });
    }

    Ok(aggregate(design, grid, opts, records, failures))
}

fn run_replication(
    design: &SimDesign,
    fit_family: &EdmFamily,
    fit_link: &LinkSpec,
    grid: &HyperGrid,
    rep: usize,
) -> Result<ReplicationRecord> {
    let records = generate(design, rep as u64)?;
    let censored = design.censoring.is_some();

    let mut dropped = 0usize;
    let mut fits: Vec<FitResult> = Vec::with_capacity(grid.k());
    let fit_opts_base = FitOptions::default();

    if censored {
        let mut opts = fit_opts_base.clone();
        for spec in grid.specs() {
            let fit = censtrun::fit_censtrun(fit_family, fit_link, spec, &records, &opts)?;
            opts.init = Some(fit.params.clone());
            fits.push(fit);
        }
        let report = diagnostics::report_from_fits(
            fit_family,
            fit_link,
            grid,
            DataRef::Censored(&records),
            fits,
            0,
        )?;
        Ok(record_from_report(rep, report, dropped))
    } else {
        let ds = records_to_dataset(&records).ok_or_else(|| {
            Error::Precondition("complete design produced incomplete records".into())
        })?;
        // cross-family fits may need support filtering
        let ds = if fit_family.support().lo > f64::NEG_INFINITY {
            let keep: Vec<usize> = (0..ds.n())
                .filter(|&i| fit_family.support().contains(ds.y[i]))
                .collect();
            dropped = ds.n() - keep.len();
            if dropped > 0 {
                let y = DVector::from_fn(keep.len(), |i, _| ds.y[keep[i]]);
                let x = DMatrix::from_fn(keep.len(), ds.p(), |i, j| ds.x[(keep[i], j)]);
                Dataset::new(y, x)?
            } else {
                ds
            }
        } else {
            ds
        };
        let mut opts = fit_opts_base.clone();
        for spec in grid.specs() {
            let fit = complete::fit(fit_family, fit_link, spec, &ds, &opts)?;
            opts.init = Some(fit.params.clone());
            fits.push(fit);
        }
        let report = diagnostics::report_from_fits(
            fit_family,
            fit_link,
            grid,
            DataRef::Complete(&ds),
            fits,
            0,
        )?;
        Ok(record_from_report(rep, report, dropped))
    }
}

fn record_from_report(
    rep: usize,
    report: diagnostics::MetaWaldReport,
    dropped: usize,
) -> ReplicationRecord {
    ReplicationRecord {
        rep,
        estimates: report
            .fits
            .iter()
            .map(|f| f.params.to_vector())
            .collect(),
        standard_errors: report.fits.iter().map(|f| f.standard_errors()).collect(),
        meta: report.meta_stat,
        individual: report.individual_stats,
        param_meta: report.param_meta_stats,
        dropped_rows: dropped,
    }
}

fn aggregate(
    design: &SimDesign,
    grid: &HyperGrid,
    opts: &StudyOptions,
    records: Vec<ReplicationRecord>,
    failures: Vec<(usize, String)>,
) -> ReplicationSummary {
    let k = grid.k();
    let b = records.len();
    let dim = design.true_params.len();
    let truth = design.true_params.to_vector();
    let bf = b as f64;

    let mut means: Vec<DVector<f64>> = vec![DVector::zeros(dim); k];
    let mut sds: Vec<DVector<f64>> = vec![DVector::zeros(dim); k];
    let mut mean_ses: Vec<DVector<f64>> = vec![DVector::zeros(dim); k];
    let mut coverage: Vec<DVector<f64>> = vec![DVector::zeros(dim); k];

    for rec in &records {
        for a in 0..k {
            means[a] += &rec.estimates[a];
            mean_ses[a] += &rec.standard_errors[a];
            for pidx in 0..dim {
                let est = rec.estimates[a][pidx];
                let se = rec.standard_errors[a][pidx];
                if (est - truth[pidx]).abs() <= 1.959963984540054 * se {
                    coverage[a][pidx] += 1.0;
                }
            }
        }
    }
    for a in 0..k {
        means[a] /= bf;
        mean_ses[a] /= bf;
        coverage[a] /= bf;
    }
    for rec in &records {
        for a in 0..k {
            for pidx in 0..dim {
                let d = rec.estimates[a][pidx] - means[a][pidx];
                sds[a][pidx] += d * d;
            }
        }
    }
    for a in 0..k {
        for pidx in 0..dim {
            sds[a][pidx] = (sds[a][pidx] / (bf - 1.0).max(1.0)).sqrt();
        }
    }

    let meta_rejection_rate = records
        .iter()
        .filter(|r| r.meta.p_value < opts.level)
        .count() as f64
        / bf;

    let mut individual_rejection = vec![vec![None; k]; k];
    for a in 0..k {
        for bb in (a + 1)..k {
            let rate = records
                .iter()
                .filter(|r| r.individual[a][bb].map(|s| s.p_value < opts.level).unwrap_or(false))
                .count() as f64
                / bf;
            individual_rejection[a][bb] = Some(rate);
        }
    }

    let param_meta_rejection = (0..dim)
        .map(|pidx| {
            records
                .iter()
                .filter(|r| r.param_meta[pidx].p_value < opts.level)
                .count() as f64
                / bf
        })
        .collect();

    ReplicationSummary {
        b_requested: opts.b,
        b_completed: b,
        level: opts.level,
        k,
        param_means: means,
        param_sds: sds,
        mean_model_ses: mean_ses,
        coverage95: coverage,
        meta_rejection_rate,
        individual_rejection,
        param_meta_rejection,
        failures,
        replications: records,
    }
}

impl ReplicationSummary {
    /// Flat CSV: one row per (spec, parameter) plus rejection-rate rows.
    pub fn to_csv(&self, label: &str) -> String {
        let mut out = String::from("design,k,item,value\n");
        let dim = self.param_means.first().map(|v| v.len()).unwrap_or(0);
        for a in 0..self.k {
            for pidx in 0..dim {
                let pname = if pidx + 1 == dim {
                    "phi".to_string()
                } else {
                    format!("beta{}", pidx + 1)
                };
                out.push_str(&format!(
                    "{label},{},mean_{pname},{}\n",
                    a + 1,
                    self.param_means[a][pidx]
                ));
                out.push_str(&format!(
                    "{label},{},sd_{pname},{}\n",
                    a + 1,
                    self.param_sds[a][pidx]
                ));
                out.push_str(&format!(
                    "{label},{},mean_se_{pname},{}\n",
                    a + 1,
                    self.mean_model_ses[a][pidx]
                ));
                out.push_str(&format!(
                    "{label},{},coverage95_{pname},{}\n",
                    a + 1,
                    self.coverage95[a][pidx]
                ));
            }
        }
        out.push_str(&format!(
            "{label},,meta_rejection_rate,{}\n",
            self.meta_rejection_rate
        ));
        for a in 0..self.k {
            for b in (a + 1)..self.k {
                if let Some(rate) = self.individual_rejection[a][b] {
                    out.push_str(&format!(
                        "{label},{}-{},individual_rejection,{rate}\n",
                        a + 1,
                        b + 1
                    ));
                }
            }
        }
        for (pidx, rate) in self.param_meta_rejection.iter().enumerate() {
            let pname = if pidx + 1 == dim {
                "phi".to_string()
            } else {
                format!("beta{}", pidx + 1)
            };
            out.push_str(&format!(
                "{label},,param_meta_rejection_{pname},{rate}\n"
            ));
        }
        out
    }
}

/// Calibrate the delta schedule for a design, against its own (core) model.
///
/// Contaminated designs calibrate against the uncontaminated center; the
/// censored design calibrates through the plug-in tail-weight ratio on one
/// deterministic calibration replication with the true parameters.
pub fn calibrate_design_grid(
    design: &SimDesign,
    deltas: &[f64],
    alpha: f64,
    fit_family: Option<&EdmFamily>,
    fit_link: Option<&LinkSpec>,
) -> Result<HyperGrid> {
    design.validate()?;
    let fam = *fit_family.unwrap_or(&design.family);
    let link = *fit_link.unwrap_or(&design.link);

    let mut specs = Vec::with_capacity(deltas.len());
    if design.censoring.is_some() {
        // deterministic calibration replication at the true parameters
        let records = generate(
            &SimDesign {
                dispersion_coefs: design.dispersion_coefs.as_ref().map(|a| {
                    // calibrate against the constant-dispersion core
                    let mut core = a.clone();
                    for j in 1..core.len() {
                        core[j] = 0.0;
                    }
                    core
                }),
                ..design.clone()
            },
            u64::MAX,
        )?;
        for &delta in deltas {
            specs.push(crate::weighting::calibrate_censored(
                &fam,
                &link,
                &design.true_params,
                &records,
                alpha,
                delta,
                None,
            )?);
        }
    } else {
        // covariate sample for the mixing distribution
        let mut rng = Prng::derive(design.seed, u64::MAX - 1);
        let p = design.true_params.beta.len();
        let m = 4096;
        let x_sample = DMatrix::from_fn(m, p, |_, j| if j == 0 { 1.0 } else { rng.standard_normal() });
        let opts = crate::weighting::CalibrationOptions {
            seed: crate::numerics::rng::derive_seed(design.seed, u64::MAX - 2),
            ..Default::default()
        };
        let cal = crate::weighting::CompleteCalibrator::new_cross(
            &design.family,
            &design.link,
            &design.true_params,
            &fam,
            &link,
            &x_sample,
            alpha,
            &opts,
        )?;
        for &delta in deltas {
            specs.push(cal.solve(delta)?);
        }
    }
    HyperGrid::new(specs)
}
