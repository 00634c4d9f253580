//! Best s-term curves of the product target in several dimensions, with
//! fitted algebraic and exponential reference lines.

use std::path::Path;
use std::time::Instant;

use holofit_core::model::{ProductTarget, RateModel};
use holofit_core::oracles::product_best_s_term;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{in_pool, seconds_since};
use crate::output::{write_outputs, RunContext};
use crate::provenance::{config_digest, BUILD_ID};
use crate::stats::loglog_slope;
use crate::{check_version, BenchError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BesttermConfig {
    pub version: u32,
    /// `δ_i = i^power`.
    #[serde(default = "default_power")]
    pub power: f64,
    pub dims: Vec<usize>,
    pub s_max: usize,
    /// Inclusive `s` range for slope and reference fits.
    #[serde(default = "default_fit_range")]
    pub fit_range: [usize; 2],
    /// Exponent of the algebraic reference `C·s^exponent`.
    #[serde(default = "default_alg_exponent")]
    pub alg_exponent: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_power() -> f64 {
    1.5
}

fn default_fit_range() -> [usize; 2] {
    [10, 200]
}

fn default_alg_exponent() -> f64 {
    -1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BesttermRow {
    pub build_id: String,
    pub config_digest: String,
    pub seed: u64,
    pub d: usize,
    pub s: usize,
    pub sigma_s: f64,
    pub alg_ref: f64,
    pub exp_ref: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimSummary {
    pub d: usize,
    pub slope: f64,
    pub alg_constant: f64,
    pub exp_constant: f64,
    pub alg_rms_log_residual: f64,
    pub exp_rms_log_residual: f64,
    /// `√(remainder)`: error floor from coefficients outside the enumeration.
    pub floor: f64,
    pub enumerated: usize,
    pub norm_sq: f64,
}

#[derive(Clone, Debug)]
pub struct BesttermOutput {
    pub rows: Vec<BesttermRow>,
    pub summary: Vec<DimSummary>,
}

impl BesttermConfig {
    fn validate(&self) -> Result<()> {
        check_version(self.version)?;
        let [lo, hi] = self.fit_range;
        if self.dims.is_empty() || self.dims.contains(&0) {
            return Err(BenchError::config("dims must be a nonempty list of positive integers"));
        }
        if lo == 0 || lo >= hi || hi > self.s_max {
            return Err(BenchError::config(format!(
                "fit_range {:?} must satisfy 1 <= lo < hi <= s_max = {}",
                self.fit_range, self.s_max
            )));
        }
        Ok(())
    }
}

fn one_dim(cfg: &BesttermConfig, d: usize, digest: &str) -> Result<(Vec<BesttermRow>, DimSummary)> {
    let target = ProductTarget::power_law(d, cfg.power)?;
    let curve = product_best_s_term(&target, cfg.s_max)?;
    let [lo, hi] = cfg.fit_range;
    let s: Vec<f64> = (lo..=hi).map(|v| v as f64).collect();
    let e: Vec<f64> = curve.sigma[lo..=hi].to_vec();
    let alg = RateModel::Algebraic {
        exponent: cfg.alg_exponent,
    };
    let exp = RateModel::exponential(target.bernstein_params())?;
    let (ca, ce) = (alg.fit_constant(&s, &e), exp.fit_constant(&s, &e));
    let rows = curve
        .sigma
        .iter()
        .enumerate()
        .map(|(k, &sigma)| BesttermRow {
            build_id: BUILD_ID.into(),
            config_digest: digest.into(),
            seed: cfg.seed,
            d,
            s: k,
            sigma_s: sigma,
            alg_ref: if k == 0 { f64::NAN } else { ca * alg.shape(k as f64) },
            exp_ref: ce * exp.shape(k as f64),
        })
        .collect();
    let summary = DimSummary {
        d,
        slope: loglog_slope(&s, &e),
        alg_constant: ca,
        exp_constant: ce,
        alg_rms_log_residual: alg.rms_log_residual(&s, &e),
        exp_rms_log_residual: exp.rms_log_residual(&s, &e),
        floor: curve.remainder.max(0.0).sqrt(),
        enumerated: curve.enumerated,
        norm_sq: curve.norm_sq,
    };
    Ok((rows, summary))
}

pub fn run(cfg: &BesttermConfig, threads: Option<usize>) -> Result<(BesttermOutput, RunContext)> {
    cfg.validate()?;
    let digest = config_digest(cfg)?;
    let (parts, threads) = in_pool(threads, || {
        cfg.dims
            .par_iter()
            .map(|&d| one_dim(cfg, d, &digest))
            .collect::<Result<Vec<_>>>()
    })?;
    let mut out = BesttermOutput {
        rows: Vec::new(),
        summary: Vec::new(),
    };
    for (rows, summary) in parts? {
        log::info!(
            "d = {}: slope {:.3}, rms(alg) {:.3}, rms(exp) {:.3}",
            summary.d,
            summary.slope,
            summary.alg_rms_log_residual,
            summary.exp_rms_log_residual
        );
        out.rows.extend(rows);
        out.summary.push(summary);
    }
    let ctx = RunContext {
        experiment: "bestterm".into(),
        config_digest: digest,
        master_seed: cfg.seed,
        threads,
    };
    Ok((out, ctx))
}

pub fn run_to_dir(cfg: &BesttermConfig, threads: Option<usize>, dir: &Path) -> Result<BesttermOutput> {
    let t = Instant::now();
    let (out, ctx) = run(cfg, threads)?;
    write_outputs(dir, &ctx, cfg, &out.rows, &out.summary, seconds_since(t))?;
    Ok(out)
}
