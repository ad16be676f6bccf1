use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Design, ScenarioConfig};
use crate::channel::{sample_channel, ArrayGeometry, ChannelRealization, GroupConfig};
use crate::error::Result;
use crate::pipeline::{design_fully_digital_with, design_hybrid_from_rf, DesignOutput, PipelineOptions};
use crate::rf::design_rf_with;
use crate::sdr::Recovery;

/// Aggregate over the successful trials of one (design, N, L, SNR) point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub design: Design,
    pub antennas: usize,
    pub paths: usize,
    pub snr_db: f64,
    pub mean_min_rate: f64,
    pub stderr: f64,
    pub trials: usize,
    pub failures: usize,
    /// `log2(1 + t_SDR)` of the digital stage, averaged like the achieved rate.
    pub mean_sdr_rate: f64,
    pub sdr_stderr: f64,
    pub mean_bisection_iterations: f64,
    pub mean_conic_solves: f64,
    /// Share of trials that needed Gaussian randomization in the digital stage.
    pub randomized_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub design: Design,
    pub antennas: usize,
    pub paths: usize,
    pub snr_db: f64,
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config: ScenarioConfig,
    pub rows: Vec<ResultRow>,
    pub failures: Vec<TrialFailure>,
}

impl ExperimentResult {
    pub fn row(&self, design: Design, antennas: usize, paths: usize, snr_db: f64) -> Option<&ResultRow> {
        self.rows.iter().find(|r| {
            r.design == design && r.antennas == antennas && r.paths == paths && (r.snr_db - snr_db).abs() < 1e-9
        })
    }
}

#[derive(Debug, Clone, Copy)]
struct Sample {
    rate: f64,
    bound_rate: f64,
    iterations: usize,
    conic_solves: usize,
    randomized: bool,
}

impl Sample {
    fn from_output(out: &DesignOutput) -> Self {
        let d = &out.diagnostics.digital;
        Self {
            rate: out.min_rate,
            bound_rate: (1.0 + out.t_sdr.max(0.0)).log2(),
            iterations: d.bisection_iterations,
            conic_solves: d.conic_solves,
            randomized: matches!(d.recovery, Recovery::Randomization { .. }),
        }
    }
}

type Outcome = std::result::Result<Sample, String>;

/// Outcomes of one channel draw, indexed `[snr][design]`.
fn run_trial(cfg: &ScenarioConfig, antennas: usize, paths: usize, seed: u64) -> Vec<Vec<Outcome>> {
    let failed = |msg: String| vec![vec![Err(msg); cfg.designs.len()]; cfg.snr_grid_db.len()];
    let geometry = match ArrayGeometry::half_wavelength(antennas) {
        Ok(g) => g,
        Err(e) => return failed(e.to_string()),
    };
    let channels = match sample_channel(seed, cfg.num_users(), paths, &geometry) {
        Ok(c) => c,
        Err(e) => return failed(e.to_string()),
    };
    let base = match GroupConfig::from_group_sizes(&cfg.group_sizes, 1.0, cfg.noise_var) {
        Ok(g) => g,
        Err(e) => return failed(e.to_string()),
    };
    let mut opts = PipelineOptions {
        rf_channel: cfg.rf_channel_mode,
        ..PipelineOptions::default()
    };
    opts.maxmin.seed = seed;

    // The RF stage ignores the power budget, so it is designed once per draw.
    let rf = if cfg.designs.contains(&Design::Hybrid) {
        Some(design_rf_with(&channels, &base, opts.rf_channel, &opts.maxmin).map_err(|e| e.to_string()))
    } else {
        None
    };

    cfg.snr_grid_db
        .iter()
        .map(|&snr| {
            let power = 10f64.powf(snr / 10.0) * cfg.noise_var;
            cfg.designs
                .iter()
                .map(|&design| design_at(&channels, &base, power, design, rf.as_ref(), &opts))
                .collect()
        })
        .collect()
}

fn design_at(
    channels: &ChannelRealization,
    base: &GroupConfig,
    power: f64,
    design: Design,
    rf: Option<&std::result::Result<crate::rf::RfDesignResult, String>>,
    opts: &PipelineOptions,
) -> Outcome {
    let config = base.with_power(power).map_err(|e| e.to_string())?;
    let out: Result<DesignOutput> = match design {
        Design::Hybrid => match rf.expect("RF design exists when hybrid is requested") {
            Ok(rf) => design_hybrid_from_rf(channels, &config, rf, opts),
            Err(msg) => return Err(format!("RF design: {msg}")),
        },
        Design::FullyDigital => design_fully_digital_with(channels, &config, opts),
    };
    out.map(|o| Sample::from_output(&o)).map_err(|e| e.to_string())
}

fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Runs every trial of the scenario. Trials run in parallel; the reduction
/// walks them in index order, so the table does not depend on scheduling.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let units: Vec<(usize, usize, usize)> = cfg
        .antennas
        .iter()
        .flat_map(|&n| {
            cfg.paths
                .iter()
                .flat_map(move |&l| (0..cfg.num_trials).map(move |trial| (n, l, trial)))
        })
        .collect();
    let outcomes: Vec<Vec<Vec<Outcome>>> = units
        .par_iter()
        .map(|&(n, l, trial)| run_trial(cfg, n, l, cfg.seed.wrapping_add(trial as u64)))
        .collect();

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (d, &design) in cfg.designs.iter().enumerate() {
        for &n in &cfg.antennas {
            for &l in &cfg.paths {
                for (s, &snr) in cfg.snr_grid_db.iter().enumerate() {
                    let mut samples = Vec::with_capacity(cfg.num_trials);
                    let mut failed = 0;
                    for (unit, outcome) in units.iter().zip(&outcomes) {
                        if unit.0 != n || unit.1 != l {
                            continue;
                        }
                        match &outcome[s][d] {
                            Ok(sample) => samples.push(*sample),
                            Err(message) => {
                                let seed = cfg.seed.wrapping_add(unit.2 as u64);
                                log::warn!(
                                    "{}: {} trial failed (seed {seed}, N={n}, L={l}, {snr} dB): {message}",
                                    cfg.name,
                                    design.as_str()
                                );
                                failed += 1;
                                failures.push(TrialFailure {
                                    design,
                                    antennas: n,
                                    paths: l,
                                    snr_db: snr,
                                    seed,
                                    message: message.clone(),
                                });
                            }
                        }
                    }
                    let rates: Vec<f64> = samples.iter().map(|s| s.rate).collect();
                    let bounds: Vec<f64> = samples.iter().map(|s| s.bound_rate).collect();
                    let (mean_min_rate, stderr) = mean_stderr(&rates);
                    let (mean_sdr_rate, sdr_stderr) = mean_stderr(&bounds);
                    let count = samples.len().max(1) as f64;
                    rows.push(ResultRow {
                        design,
                        antennas: n,
                        paths: l,
                        snr_db: snr,
                        mean_min_rate,
                        stderr,
                        trials: samples.len(),
                        failures: failed,
                        mean_sdr_rate,
                        sdr_stderr,
                        mean_bisection_iterations: samples.iter().map(|s| s.iterations as f64).sum::<f64>() / count,
                        mean_conic_solves: samples.iter().map(|s| s.conic_solves as f64).sum::<f64>() / count,
                        randomized_fraction: samples.iter().filter(|s| s.randomized).count() as f64 / count,
                    });
                }
            }
        }
    }
    Ok(ExperimentResult {
        config: cfg.clone(),
        rows,
        failures,
    })
}
