//! End-to-end precoder construction: the hybrid design (RF stage, effective
//! channels, digital max-min) and the fully-digital baseline.

use crate::channel::{rate_per_user, sinr_per_user, ChannelRealization, GroupConfig, HybridPrecoder};
use crate::error::Result;
use crate::linalg::{hermitian_part, trace_re, CMatrix, CVector};
use crate::rf::{design_rf_with, RfChannelMode, RfDesignResult};
use crate::sdr::{solve_maxmin, MaxMinDiagnostics, MaxMinInstance, MaxMinOptions, MaxMinSolution};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PipelineOptions {
    pub maxmin: MaxMinOptions,
    pub rf_channel: RfChannelMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignDiagnostics {
    /// Per-group rank ratios of the RF-stage surrogate problems (hybrid only).
    pub rf_rank_ratios: Vec<f64>,
    pub rf: Vec<MaxMinDiagnostics>,
    /// Rank ratios of the digital-stage covariance blocks.
    pub rank_ratios: Vec<f64>,
    pub digital: MaxMinDiagnostics,
    /// Min-SINR reported by the digital optimizer before re-evaluation on the true channels.
    pub optimizer_value: f64,
    /// Whether the final uniform rescaling to full power was applied.
    pub rescaled: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignOutput {
    pub precoder: HybridPrecoder,
    /// Relaxation bound of the digital stage.
    pub t_sdr: f64,
    /// Min-SINR of `precoder` on the true channels.
    pub t_achieved: f64,
    pub per_user_sinr: Vec<f64>,
    pub min_rate: f64,
    pub diagnostics: DesignDiagnostics,
}

/// Hybrid design with default options.
pub fn design_hybrid(channels: &ChannelRealization, config: &GroupConfig) -> Result<DesignOutput> {
    design_hybrid_with(channels, config, &PipelineOptions::default())
}

pub fn design_hybrid_with(
    channels: &ChannelRealization,
    config: &GroupConfig,
    opts: &PipelineOptions,
) -> Result<DesignOutput> {
    let rf = design_rf_with(channels, config, opts.rf_channel, &opts.maxmin)?;
    design_hybrid_from_rf(channels, config, &rf, opts)
}

/// Digital stage on top of a given RF design. The RF stage does not depend on
/// the power budget, so one design can serve a whole SNR sweep.
pub fn design_hybrid_from_rf(
    channels: &ChannelRealization,
    config: &GroupConfig,
    rf: &RfDesignResult,
    opts: &PipelineOptions,
) -> Result<DesignOutput> {
    let f = &rf.analog;
    let effective: Vec<CVector> = channels.channels().iter().map(|h| f.adjoint() * h).collect();
    let gram = f.adjoint() * f;
    let instance = MaxMinInstance::from_channels(
        &effective,
        config.membership(),
        config.power(),
        config.noise_var(),
        hermitian_part(&gram),
    )?;
    let solution = solve_maxmin(&instance, &opts.maxmin)?;
    let precoder = HybridPrecoder::new(f.clone(), stack(&solution.beamformers, f.ncols()))?;
    finish(channels, config, precoder, solution, rf.rank_ratios.clone(), rf.diagnostics.clone())
}

/// Fully-digital baseline with default options.
pub fn design_fully_digital(channels: &ChannelRealization, config: &GroupConfig) -> Result<DesignOutput> {
    design_fully_digital_with(channels, config, &PipelineOptions::default())
}

pub fn design_fully_digital_with(
    channels: &ChannelRealization,
    config: &GroupConfig,
    opts: &PipelineOptions,
) -> Result<DesignOutput> {
    let n = channels.num_antennas();
    let instance = MaxMinInstance::from_channels(
        channels.channels(),
        config.membership(),
        config.power(),
        config.noise_var(),
        CMatrix::identity(n, n),
    )?;
    let solution = solve_maxmin(&instance, &opts.maxmin)?;
    let precoder = HybridPrecoder::fully_digital(stack(&solution.beamformers, n));
    finish(channels, config, precoder, solution, Vec::new(), Vec::new())
}

fn stack(columns: &[CVector], rows: usize) -> CMatrix {
    CMatrix::from_fn(rows, columns.len(), |i, k| columns[k][i])
}

fn min_of(values: &[f64]) -> f64 {
    values.iter().copied().fold(f64::INFINITY, f64::min)
}

fn finish(
    channels: &ChannelRealization,
    config: &GroupConfig,
    mut precoder: HybridPrecoder,
    solution: MaxMinSolution,
    rf_rank_ratios: Vec<f64>,
    rf: Vec<MaxMinDiagnostics>,
) -> Result<DesignOutput> {
    let mut per_user_sinr = sinr_per_user(channels, &precoder, config)?;

    // Top up to the full budget, but only if that does not lower the min-SINR.
    let used = precoder.transmit_power();
    let mut rescaled = false;
    if used > 0.0 && used < config.power() {
        let mut candidate = precoder.clone();
        candidate.scale_digital((config.power() / used).sqrt());
        let sinr = sinr_per_user(channels, &candidate, config)?;
        if min_of(&sinr) >= min_of(&per_user_sinr) {
            precoder = candidate;
            per_user_sinr = sinr;
            rescaled = true;
        }
    }
    let t_achieved = min_of(&per_user_sinr);
    let min_rate = min_of(&rate_per_user(&per_user_sinr)?);
    Ok(DesignOutput {
        precoder,
        t_sdr: solution.relaxed_value,
        t_achieved,
        per_user_sinr,
        min_rate,
        diagnostics: DesignDiagnostics {
            rf_rank_ratios,
            rf,
            rank_ratios: solution.rank_ratios,
            digital: solution.diagnostics,
            optimizer_value: solution.achieved_value,
            rescaled,
        },
    })
}

/// `Σ_k tr(F X_k F^H)` for covariance blocks `X_k` in the digital domain.
pub fn covariance_power(analog: &CMatrix, blocks: &[CMatrix]) -> f64 {
    blocks
        .iter()
        .map(|x| trace_re(&(analog * x * analog.adjoint())))
        .sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{sample_channel, sinr_for_beamformers, ArrayGeometry, PathParams};
    use crate::linalg::{outer, C64};

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }

    fn single_path_user(n: usize, beta: C64, aod: f64) -> ChannelRealization {
        let geom = ArrayGeometry::half_wavelength(n).unwrap();
        ChannelRealization::from_paths(vec![vec![PathParams::new(beta, aod)]], geom).unwrap()
    }

    #[test]
    fn hybrid_is_lossless_for_one_single_path_user() {
        let beta = C64::new(-0.6, 1.1);
        let real = single_path_user(16, beta, 2.3);
        let config = GroupConfig::new(vec![0], 1.0, 1.0).unwrap();
        let expected = 16.0 * beta.norm_sqr();
        let hybrid = design_hybrid(&real, &config).unwrap();
        let digital = design_fully_digital(&real, &config).unwrap();
        assert!(rel(hybrid.t_achieved, expected) < 1e-6, "{} vs {expected}", hybrid.t_achieved);
        assert!(rel(digital.t_achieved, expected) < 1e-6);
        assert!((hybrid.min_rate - (1.0 + expected).log2()).abs() < 1e-9);
    }

    #[test]
    fn hybrid_uses_the_full_budget() {
        let geom = ArrayGeometry::half_wavelength(8).unwrap();
        for (seed, sizes) in [(1, vec![4]), (2, vec![2, 2, 2]), (3, vec![3, 2, 1])] {
            let m: usize = sizes.iter().sum();
            let real = sample_channel(seed, m, 2, &geom).unwrap();
            let config = GroupConfig::from_group_sizes(&sizes, 10.0, 1.0).unwrap();
            let out = design_hybrid(&real, &config).unwrap();
            assert!(rel(out.precoder.transmit_power(), 10.0) < 1e-6, "sizes {sizes:?}");
        }
    }

    #[test]
    fn noise_dominated_limit() {
        let geom = ArrayGeometry::half_wavelength(8).unwrap();
        let real = sample_channel(4, 3, 1, &geom).unwrap();
        let config = GroupConfig::new(vec![0, 1, 2], 1.0, 1e9).unwrap();
        let out = design_hybrid(&real, &config).unwrap();
        assert!(out.t_achieved < 1e-6);
        assert!(out.min_rate < 1e-6);
    }

    #[test]
    fn digital_single_user_is_mrt() {
        let geom = ArrayGeometry::half_wavelength(8).unwrap();
        let real = sample_channel(5, 1, 4, &geom).unwrap();
        let config = GroupConfig::new(vec![0], 3.0, 0.5).unwrap();
        let out = design_fully_digital(&real, &config).unwrap();
        let h = &real.channels()[0];
        assert!(rel(out.t_achieved, 3.0 * h.norm_squared() / 0.5) < 1e-6);
    }

    #[test]
    fn digital_relaxation_bounds_hybrid() {
        let geom = ArrayGeometry::half_wavelength(8).unwrap();
        for seed in 0..6 {
            let real = sample_channel(10 + seed, 6, 3, &geom).unwrap();
            let config = GroupConfig::from_group_sizes(&[2, 2, 2], 100.0, 1.0).unwrap();
            let hybrid = design_hybrid(&real, &config).unwrap();
            let digital = design_fully_digital(&real, &config).unwrap();
            assert!(hybrid.t_achieved <= digital.t_sdr * (1.0 + 1e-4), "seed {seed}");
            assert!(hybrid.t_achieved <= hybrid.t_sdr * (1.0 + 1e-4));
            assert!(digital.t_achieved <= digital.t_sdr * (1.0 + 1e-4));
        }
    }

    #[test]
    fn orthogonal_single_user_groups_decouple() {
        let n = 64;
        let geom = ArrayGeometry::half_wavelength(n).unwrap();
        // sin φ = 2k/N puts the steering vectors on orthogonal DFT columns
        let gains = [C64::new(1.0, 0.5), C64::new(-0.3, 0.8), C64::new(0.6, -0.6)];
        let paths = [0usize, 5, 17]
            .iter()
            .zip(gains)
            .map(|(&k, b)| vec![PathParams::new(b, (2.0 * k as f64 / n as f64).asin())])
            .collect();
        let real = ChannelRealization::from_paths(paths, geom).unwrap();
        let config = GroupConfig::new(vec![0, 1, 2], 10.0, 1.0).unwrap();
        let out = design_fully_digital(&real, &config).unwrap();
        let oracle = 10.0 / real.channels().iter().map(|h| 1.0 / h.norm_squared()).sum::<f64>();
        for s in &out.per_user_sinr {
            assert!(rel(*s, oracle) < 0.01, "{s} vs {oracle}");
        }
    }

    #[test]
    fn effective_channel_and_power_accounting_agree() {
        let geom = ArrayGeometry::half_wavelength(8).unwrap();
        let real = sample_channel(21, 6, 2, &geom).unwrap();
        let config = GroupConfig::from_group_sizes(&[3, 2, 1], 31.6, 1.0).unwrap();
        let out = design_hybrid(&real, &config).unwrap();
        let f = out.precoder.analog();
        let w = out.precoder.digital();
        let effective: Vec<CVector> = real.channels().iter().map(|h| f.adjoint() * h).collect();
        let via_effective = sinr_for_beamformers(&effective, w, config.membership(), 1.0);
        for (a, b) in via_effective.iter().zip(&out.per_user_sinr) {
            assert!((a - b).abs() <= 1e-10 * b.max(1.0));
        }
        let blocks: Vec<CMatrix> = (0..3).map(|k| outer(&w.column(k).into_owned())).collect();
        let p = covariance_power(f, &blocks);
        assert!((p - out.precoder.transmit_power()).abs() <= 1e-10 * p);
        assert!((out.min_rate - (1.0 + out.t_achieved).log2()).abs() < 1e-9);
        assert!(rel(out.diagnostics.optimizer_value, out.t_achieved) < 1e-5);
    }
}
