//! Scaling experiments over `(m, T)` grids, log-log slope fits, the
//! one-transition baseline, and CSV/SVG output.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{EpsilonRule, EstimatorKind, ModelConfig};
use crate::error::{Error, Result};
use crate::estimation::{build_cover, fisher_weighted_error, mle_continuous, mle_discretized, MleConfig, MleResult};
use crate::localization::{localization_report, LocalizationConfig, MomentConfig};
use crate::model::{fisher_information, simulate_dataset, ModelSpec};
use crate::numeric::{mean_se, median};
use crate::rng::{derive_stream, splitmix64};
use crate::types::{FisherMatrix, TrajectoryDataset};

pub const CSV_HEADER: &str = "model_id,m,T,n_reps,mean_weighted_err,median_weighted_err,mean_sq_err,se,master_seed,wall_ms";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub model_id: String,
    pub m: usize,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub n_reps: usize,
    pub mean_weighted_err: f64,
    pub median_weighted_err: f64,
    pub mean_sq_err: f64,
    pub se: f64,
    pub master_seed: u64,
    pub wall_ms: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlopeAxis {
    #[serde(rename = "mT")]
    MT,
    M,
    T,
}

impl SlopeAxis {
    fn value(&self, r: &ExperimentRecord) -> f64 {
        match self {
            SlopeAxis::MT => (r.m * r.horizon) as f64,
            SlopeAxis::M => r.m as f64,
            SlopeAxis::T => r.horizon as f64,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub stderr: f64,
    pub r2: f64,
    pub axis: SlopeAxis,
}

/// Ordinary least squares of `log y` on `log x`.
pub fn fit_loglog(xs: &[f64], ys: &[f64], axis: SlopeAxis) -> Result<SlopeFit> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch { expected: xs.len(), got: ys.len() });
    }
    if xs.iter().chain(ys).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::invalid("log-log fit needs positive finite values"));
    }
    let mut distinct: Vec<f64> = xs.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::Degenerate("need at least three distinct axis values".into()));
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ly.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = lx.iter().zip(&ly).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let stderr = if n > 2.0 { (sse / (n - 2.0) / sxx).sqrt() } else { f64::NAN };
    let r2 = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    Ok(SlopeFit {
        slope,
        intercept,
        stderr,
        r2,
        axis,
    })
}

/// Fit of `mean_weighted_err` against the chosen axis, one point per record.
pub fn fit_slope(records: &[ExperimentRecord], axis: SlopeAxis) -> Result<SlopeFit> {
    let xs: Vec<f64> = records.iter().map(|r| axis.value(r)).collect();
    let ys: Vec<f64> = records.iter().map(|r| r.mean_weighted_err).collect();
    fit_loglog(&xs, &ys, axis)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalingOptions {
    pub estimator: EstimatorKind,
    pub epsilon_rule: EpsilonRule,
    pub delta: f64,
    pub mle: MleConfig,
    /// Paths for Monte Carlo Fisher information when no closed form exists.
    pub n_fisher_mc: usize,
    /// Replicates per cell that also run the localization predicates.
    pub predicate_subsample: usize,
    pub record_timing: bool,
}

impl Default for ScalingOptions {
    fn default() -> Self {
        ScalingOptions {
            estimator: EstimatorKind::Continuous,
            epsilon_rule: EpsilonRule::Auto,
            delta: 0.05,
            mle: MleConfig::default(),
            n_fisher_mc: 20_000,
            predicate_subsample: 2,
            record_timing: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PredicateRate {
    pub m: usize,
    pub horizon: usize,
    pub n_checked: usize,
    pub radius_pass: usize,
    pub fi_radius_pass: usize,
}

#[derive(Clone, Debug)]
pub struct ScalingRun {
    pub records: Vec<ExperimentRecord>,
    pub predicates: Vec<PredicateRate>,
    /// Non-converged replicates per cell.
    pub nonconverged: Vec<usize>,
    /// Per-cell replicate weighted errors, in replicate order.
    pub errors: Vec<Vec<f64>>,
}

/// Seed of replicate `rep` in cell `(m, T)`.
pub fn replicate_seed(master_seed: u64, m: usize, horizon: usize, rep: usize) -> u64 {
    let cell = splitmix64((m as u64) << 32 ^ horizon as u64);
    splitmix64(splitmix64(master_seed ^ cell) ^ rep as u64)
}

fn fit_once(model: &dyn ModelSpec, data: &TrajectoryDataset, opts: &ScalingOptions, seed: u64) -> Result<MleResult> {
    match opts.estimator {
        EstimatorKind::Continuous => {
            let cfg = MleConfig { seed, ..opts.mle.clone() };
            mle_continuous(model, data, &cfg)
        }
        EstimatorKind::Discretized => {
            let i_max = model
                .fisher_upper_bound()
                .ok_or_else(|| Error::invalid(format!("{} has no I_max bound for covers", model.model_id())))?;
            let eps = opts.epsilon_rule.epsilon(data.m(), opts.delta);
            let cover = build_cover(model.domain(), &i_max, eps)?;
            mle_discretized(model, data, &cover)
        }
    }
}

fn light_localization(seed: u64, mle: &MleConfig) -> LocalizationConfig {
    LocalizationConfig {
        moments: MomentConfig {
            n_dirs: 32,
            n_mc: 2_000,
            n_s: 5,
            n_fisher_mc: 2_000,
            force_mc: false,
        },
        mle: mle.clone(),
        n_s: 5,
        n_quad: 16,
        n_hellinger_mc: 4_000,
        seed,
    }
}

struct Replicate {
    weighted: f64,
    sq: f64,
    converged: bool,
    predicates: Option<(bool, bool)>,
}

fn run_grid(cfg: &ModelConfig, grid: &[(usize, usize)], n_reps: usize, master_seed: u64, opts: &ScalingOptions, truncate: bool) -> Result<ScalingRun> {
    if grid.is_empty() {
        return Err(Error::invalid("grid is empty"));
    }
    if n_reps == 0 {
        return Err(Error::invalid("n_reps must be positive"));
    }
    let theta_star = cfg.theta_star();
    let mut run = ScalingRun {
        records: Vec::with_capacity(grid.len()),
        predicates: Vec::new(),
        nonconverged: Vec::new(),
        errors: Vec::new(),
    };
    for (cell, &(m, t)) in grid.iter().enumerate() {
        let start = Instant::now();
        let model = cfg.with_horizon(t).build()?;
        let fit_model = if truncate { cfg.with_horizon(2).build()? } else { cfg.with_horizon(t).build()? };
        let fisher_stream = derive_stream(master_seed, 0xF15E).child(t as u64);
        let fisher_bar: FisherMatrix = fisher_information(model.as_ref(), &theta_star, opts.n_fisher_mc, fisher_stream)?.per_step(t);
        let reps: Vec<Result<Replicate>> = (0..n_reps)
            .into_par_iter()
            .map(|r| {
                let seed = replicate_seed(master_seed, m, t, r);
                let mut data = simulate_dataset(model.as_ref(), &theta_star, m, seed)?;
                if truncate {
                    let keep = fit_model.trajectory_len();
                    data = TrajectoryDataset::new(
                        data.model_id.clone(),
                        2,
                        data.master_seed,
                        data.trajectories.iter().map(|z| z.truncated(keep)).collect(),
                    )?;
                }
                let fit = fit_once(fit_model.as_ref(), &data, opts, seed)?;
                let th = model.canonicalize(&fit.theta_hat);
                let weighted = fisher_weighted_error(&th, &theta_star, &fisher_bar)?;
                let sq = th.iter().zip(&theta_star).map(|(a, b)| (a - b) * (a - b)).sum();
                let predicates = if !truncate && r < opts.predicate_subsample {
                    let rep = localization_report(model.as_ref(), &theta_star, &th, &light_localization(seed, &opts.mle))?;
                    Some((rep.radius_ok, rep.fi_radius_ok))
                } else {
                    None
                };
                Ok(Replicate {
                    weighted,
                    sq,
                    converged: fit.converged,
                    predicates,
                })
            })
            .collect();
        let reps: Vec<Replicate> = reps.into_iter().collect::<Result<_>>()?;
        let nonconv = reps.iter().filter(|r| !r.converged).count();
        if nonconv * 10 > n_reps {
            return Err(Error::NonConvergence(format!(
                "{nonconv} of {n_reps} replicates did not converge in cell m={m}, T={t}"
            )));
        }
        let errs: Vec<f64> = reps.iter().map(|r| r.weighted).collect();
        let sqs: Vec<f64> = reps.iter().map(|r| r.sq).collect();
        let (mean, se) = mean_se(&errs);
        let checked: Vec<(bool, bool)> = reps.iter().filter_map(|r| r.predicates).collect();
        if !checked.is_empty() {
            let rate = PredicateRate {
                m,
                horizon: t,
                n_checked: checked.len(),
                radius_pass: checked.iter().filter(|p| p.0).count(),
                fi_radius_pass: checked.iter().filter(|p| p.1).count(),
            };
            info!(
                "cell {cell} (m={m}, T={t}): radius predicate {}/{}, FI-radius predicate {}/{}",
                rate.radius_pass, rate.n_checked, rate.fi_radius_pass, rate.n_checked
            );
            run.predicates.push(rate);
        }
        run.records.push(ExperimentRecord {
            model_id: model.model_id().to_string(),
            m,
            horizon: t,
            n_reps,
            mean_weighted_err: mean,
            median_weighted_err: median(&errs),
            mean_sq_err: sqs.iter().sum::<f64>() / n_reps as f64,
            se: if n_reps > 1 { se } else { 0.0 },
            master_seed,
            wall_ms: if opts.record_timing { start.elapsed().as_millis() as u64 } else { 0 },
        });
        run.nonconverged.push(nonconv);
        run.errors.push(errs);
    }
    Ok(run)
}

/// `n_reps` independent dataset → MLE → error runs per cell. `Ī(θ*)` is
/// computed once per horizon.
pub fn run_scaling(cfg: &ModelConfig, grid: &[(usize, usize)], n_reps: usize, master_seed: u64, opts: &ScalingOptions) -> Result<ScalingRun> {
    run_grid(cfg, grid, n_reps, master_seed, opts, false)
}

/// Same pipeline, but the estimator sees a single transition per
/// trajectory. Errors are weighted by the full-horizon `Ī(θ*)`.
pub fn baseline_iid(cfg: &ModelConfig, grid: &[(usize, usize)], n_reps: usize, master_seed: u64, opts: &ScalingOptions) -> Result<ScalingRun> {
    if grid.iter().any(|&(_, t)| t < 2) {
        return Err(Error::invalid("baseline needs T ≥ 2"));
    }
    run_grid(cfg, grid, n_reps, master_seed, opts, true)
}

fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

pub fn records_to_csv(records: &[ExperimentRecord]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.model_id,
            r.m,
            r.horizon,
            r.n_reps,
            fmt_f64(r.mean_weighted_err),
            fmt_f64(r.median_weighted_err),
            fmt_f64(r.mean_sq_err),
            fmt_f64(r.se),
            r.master_seed,
            r.wall_ms
        );
    }
    out
}

pub fn emit_csv(records: &[ExperimentRecord], path: &Path) -> Result<()> {
    std::fs::write(path, records_to_csv(records)).map_err(|e| Error::io(path, e))
}

pub fn parse_csv(text: &str) -> Result<Vec<ExperimentRecord>> {
    let mut rd = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let header = rd.headers().map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?;
    if header.iter().collect::<Vec<_>>().join(",") != CSV_HEADER {
        return Err(Error::Parse {
            line: 1,
            msg: "unexpected header".into(),
        });
    }
    rd.deserialize()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| Error::Parse { line: i + 2, msg: e.to_string() }))
        .collect()
}

pub fn read_csv(path: &Path) -> Result<Vec<ExperimentRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text)
}

/// Log-log scatter of `mean_weighted_err` against `mT`, with the fitted line.
pub fn records_to_svg(records: &[ExperimentRecord]) -> String {
    const W: f64 = 480.0;
    const H: f64 = 360.0;
    const PAD: f64 = 48.0;
    let pts: Vec<(f64, f64)> = records
        .iter()
        .filter(|r| r.mean_weighted_err > 0.0)
        .map(|r| (((r.m * r.horizon) as f64).log10(), r.mean_weighted_err.log10()))
        .collect();
    let (mut x0, mut x1, mut y0, mut y1) = (0.0, 1.0, 0.0, 1.0);
    if !pts.is_empty() {
        x0 = pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min) - 0.2;
        x1 = pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max) + 0.2;
        y0 = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min) - 0.2;
        y1 = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max) + 0.2;
    }
    let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);
    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M {PAD} {} L {} {} M {PAD} {PAD} L {PAD} {}" stroke="black" fill="none"/>"#,
        H - PAD,
        W - PAD,
        H - PAD,
        H - PAD
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">log10(mT)</text>"#, W / 2.0, H - 12.0);
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" font-size="12" text-anchor="middle" transform="rotate(-90 14 {})">log10(error)</text>"#,
        H / 2.0,
        H / 2.0
    );
    for (x, y) in &pts {
        let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="steelblue"/>"#, sx(*x), sy(*y));
    }
    if let Ok(fit) = fit_slope(records, SlopeAxis::MT) {
        let ln10 = std::f64::consts::LN_10;
        let at = |x: f64| (fit.intercept + fit.slope * x * ln10) / ln10;
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="firebrick"/>"#,
            sx(x0),
            sy(at(x0)),
            sx(x1),
            sy(at(x1))
        );
        let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="12">slope {:.3}</text>"#, W - PAD - 80.0, PAD - 10.0, fit.slope);
    }
    s.push_str("</svg>\n");
    s
}

pub fn emit_svg(records: &[ExperimentRecord], path: &Path) -> Result<()> {
    std::fs::write(path, records_to_svg(records)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(m: usize, t: usize, err: f64) -> ExperimentRecord {
        ExperimentRecord {
            model_id: "two_state".into(),
            m,
            horizon: t,
            n_reps: 4,
            mean_weighted_err: err,
            median_weighted_err: err,
            mean_sq_err: err,
            se: 0.1 * err,
            master_seed: 9,
            wall_ms: 0,
        }
    }

    #[test]
    fn exact_inverse_rate_gives_unit_slope() {
        let rs: Vec<_> = [(8, 8), (32, 8), (8, 32), (128, 128)].iter().map(|&(m, t)| rec(m, t, 3.0 / (m * t) as f64)).collect();
        let f = fit_slope(&rs, SlopeAxis::MT).unwrap();
        assert!((f.slope + 1.0).abs() < 1e-12 && (f.r2 - 1.0).abs() < 1e-12);
        let rs: Vec<_> = [8, 16, 64].iter().map(|&m| rec(m, 10, 2.0 / m as f64)).collect();
        assert!((fit_slope(&rs, SlopeAxis::M).unwrap().slope + 1.0).abs() < 1e-12);
        assert!(fit_slope(&rs[..2], SlopeAxis::M).is_err());
    }

    #[test]
    fn csv_round_trip() {
        assert_eq!(records_to_csv(&[]), format!("{CSV_HEADER}\n"));
        let rs = vec![rec(8, 8, 0.1 + 0.2), rec(32, 8, 1e-300), rec(8, 32, 1.0 / 3.0)];
        assert_eq!(parse_csv(&records_to_csv(&rs)).unwrap(), rs);
    }
}
