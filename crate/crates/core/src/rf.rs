//! Analog (RF) precoder design.
//!
//! Each group gets one RF chain. Its column is obtained by solving the
//! single-group max-min problem over a norm-constrained surrogate `u`
//! (`‖u‖² = N`) and keeping only the phases of `u`.

use serde::{Deserialize, Serialize};

use crate::channel::{ChannelRealization, GroupConfig};
use crate::error::{Error, Result};
use crate::linalg::{cis, CMatrix, CVector, C64, ONE};
use crate::sdr::{solve_maxmin, MaxMinDiagnostics, MaxMinInstance, MaxMinOptions};

/// Which channel the RF stage designs against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RfChannelMode {
    /// The full multipath channel `h_m`.
    #[default]
    Full,
    /// Only each user's strongest path.
    DominantPath,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupSurrogate {
    /// Surrogate with `‖u‖² = N`.
    pub u: CVector,
    /// `min_m |h_m^H u|²` over the group.
    pub value: f64,
    pub rank_ratio: f64,
    pub diagnostics: MaxMinDiagnostics,
}

/// Max-min matching of one group's channels by a vector of squared norm `n`.
pub fn design_group_surrogate(group_channels: &[CVector], n: usize, opts: &MaxMinOptions) -> Result<GroupSurrogate> {
    if group_channels.is_empty() {
        return Err(Error::Config("cannot design an RF column for an empty group".into()));
    }
    if let Some(h) = group_channels.iter().find(|h| h.len() != n) {
        return Err(Error::Config(format!("channel of length {} for {n} antennas", h.len())));
    }
    let budget = n as f64;
    let membership = vec![0; group_channels.len()];
    let instance = MaxMinInstance::from_channels(group_channels, &membership, budget, 1.0, CMatrix::identity(n, n))?;
    let solution = solve_maxmin(&instance, opts)?;
    let w = &solution.beamformers[0];
    let norm2 = w.norm_squared();
    let u = if norm2 > 0.0 {
        w * C64::from((budget / norm2).sqrt())
    } else {
        // nothing to match: any unit-modulus column will do
        CVector::from_element(n, ONE)
    };
    let value = group_channels
        .iter()
        .map(|h| h.dotc(&u).norm_sqr())
        .fold(f64::INFINITY, f64::min);
    Ok(GroupSurrogate {
        u,
        value,
        rank_ratio: solution.rank_ratios[0],
        diagnostics: solution.diagnostics,
    })
}

/// Unit-modulus matrix with the phases of `surrogate`; zero entries map to 1.
pub fn phase_extract(surrogate: &CMatrix) -> CMatrix {
    surrogate.map(|z| if z.norm() > 0.0 { cis(z.arg()) } else { ONE })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RfDesignResult {
    /// Columns `u_k`.
    pub surrogate: CMatrix,
    /// `F`, unit-modulus, one column per group.
    pub analog: CMatrix,
    pub per_group_value: Vec<f64>,
    pub rank_ratios: Vec<f64>,
    pub diagnostics: Vec<MaxMinDiagnostics>,
}

/// RF precoder from the users' full channels, default options.
pub fn design_rf(channels: &ChannelRealization, config: &GroupConfig) -> Result<RfDesignResult> {
    design_rf_with(channels, config, RfChannelMode::Full, &MaxMinOptions::default())
}

pub fn design_rf_with(
    channels: &ChannelRealization,
    config: &GroupConfig,
    mode: RfChannelMode,
    opts: &MaxMinOptions,
) -> Result<RfDesignResult> {
    if channels.num_users() != config.num_users() {
        return Err(Error::Config(format!(
            "{} channels for {} users",
            channels.num_users(),
            config.num_users()
        )));
    }
    let n = channels.num_antennas();
    let g = config.num_rf_chains();
    let seen = match mode {
        RfChannelMode::Full => channels.channels().to_vec(),
        RfChannelMode::DominantPath => channels.dominant_path_channels(),
    };
    let mut surrogate = CMatrix::zeros(n, g);
    let mut per_group_value = Vec::with_capacity(g);
    let mut rank_ratios = Vec::with_capacity(g);
    let mut diagnostics = Vec::with_capacity(g);
    for k in 0..g {
        let members: Vec<CVector> = config.members(k).into_iter().map(|m| seen[m].clone()).collect();
        let design = design_group_surrogate(&members, n, opts)?;
        surrogate.set_column(k, &design.u);
        per_group_value.push(design.value);
        rank_ratios.push(design.rank_ratio);
        diagnostics.push(design.diagnostics);
    }
    Ok(RfDesignResult {
        analog: phase_extract(&surrogate),
        surrogate,
        per_group_value,
        rank_ratios,
        diagnostics,
    })
}
