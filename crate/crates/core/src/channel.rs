//! Geometric finite-scattering channels for a uniform linear array, plus SINR
//! and rate evaluation for arbitrary precoders.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{cis, CMatrix, CVector, C64};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrayGeometry {
    num_antennas: usize,
    spacing_ratio: f64,
}

impl ArrayGeometry {
    pub const DEFAULT_SPACING: f64 = 0.5;

    pub fn new(num_antennas: usize, spacing_ratio: f64) -> Result<Self> {
        if num_antennas == 0 {
            return Err(Error::Config("array needs at least one antenna".into()));
        }
        if !(spacing_ratio > 0.0 && spacing_ratio.is_finite()) {
            return Err(Error::Config(format!("antenna spacing ratio must be positive, got {spacing_ratio}")));
        }
        Ok(Self {
            num_antennas,
            spacing_ratio,
        })
    }

    /// Half-wavelength ULA.
    pub fn half_wavelength(num_antennas: usize) -> Result<Self> {
        Self::new(num_antennas, Self::DEFAULT_SPACING)
    }

    pub fn num_antennas(&self) -> usize {
        self.num_antennas
    }

    pub fn spacing_ratio(&self) -> f64 {
        self.spacing_ratio
    }
}

/// One propagation path: complex gain and angle of departure (radians, in `[0, 2π)`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathParams {
    pub gain: C64,
    pub aod: f64,
}

impl PathParams {
    pub fn new(gain: C64, aod: f64) -> Self {
        Self {
            gain,
            aod: aod.rem_euclid(2.0 * PI),
        }
    }
}

/// Unit-norm ULA response toward `aod`: entry `n` is `exp(j n 2π (d/λ) sin aod) / √N`.
pub fn ula_response(aod: f64, geometry: &ArrayGeometry) -> CVector {
    let n = geometry.num_antennas;
    let step = 2.0 * PI * geometry.spacing_ratio * aod.sin();
    let amp = 1.0 / (n as f64).sqrt();
    CVector::from_fn(n, |i, _| cis(i as f64 * step) * amp)
}

/// `√(N/L) Σ_l β_l a(φ_l)` for one user's path list.
pub fn assemble_channel(paths: &[PathParams], geometry: &ArrayGeometry) -> CVector {
    let n = geometry.num_antennas;
    let mut h = CVector::zeros(n);
    if paths.is_empty() {
        return h;
    }
    for p in paths {
        h += ula_response(p.aod, geometry) * p.gain;
    }
    h * C64::from((n as f64 / paths.len() as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    channels: Vec<CVector>,
    paths: Vec<Vec<PathParams>>,
    geometry: ArrayGeometry,
}

impl ChannelRealization {
    pub fn from_paths(paths: Vec<Vec<PathParams>>, geometry: ArrayGeometry) -> Result<Self> {
        if paths.is_empty() {
            return Err(Error::Config("channel realization needs at least one user".into()));
        }
        if let Some(m) = paths.iter().position(|p| p.is_empty()) {
            return Err(Error::Config(format!("user {m} has no propagation paths")));
        }
        let channels = paths.iter().map(|p| assemble_channel(p, &geometry)).collect();
        Ok(Self {
            channels,
            paths,
            geometry,
        })
    }

    /// Wraps explicit channel vectors that did not come from a path model
    /// (hand-built test fixtures, externally measured channels).
    pub fn from_vectors(channels: Vec<CVector>) -> Result<Self> {
        let n = channels.first().map(|h| h.len()).unwrap_or(0);
        if n == 0 || channels.iter().any(|h| h.len() != n) {
            return Err(Error::Config("channel vectors must be non-empty and share one length".into()));
        }
        Ok(Self {
            channels,
            paths: Vec::new(),
            geometry: ArrayGeometry::half_wavelength(n)?,
        })
    }

    pub fn channels(&self) -> &[CVector] {
        &self.channels
    }

    /// Per-user path lists; empty when built with [`ChannelRealization::from_vectors`].
    pub fn paths(&self) -> &[Vec<PathParams>] {
        &self.paths
    }

    pub fn geometry(&self) -> &ArrayGeometry {
        &self.geometry
    }

    pub fn num_users(&self) -> usize {
        self.channels.len()
    }

    pub fn num_antennas(&self) -> usize {
        self.geometry.num_antennas
    }

    /// Each user's strongest path alone, with the same `√(N/L)` weight it carries in the full channel.
    pub fn dominant_path_channels(&self) -> Vec<CVector> {
        if self.paths.is_empty() {
            return self.channels.clone();
        }
        let n = self.geometry.num_antennas as f64;
        self.paths
            .iter()
            .map(|paths| {
                let best = paths
                    .iter()
                    .max_by(|a, b| a.gain.norm_sqr().total_cmp(&b.gain.norm_sqr()))
                    .expect("non-empty path list");
                ula_response(best.aod, &self.geometry) * (best.gain * (n / paths.len() as f64).sqrt())
            })
            .collect()
    }
}

fn complex_gaussian(rng: &mut impl Rng) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Draws `num_paths` i.i.d. paths per user: AoD ~ U(0, 2π), gain ~ CN(0, 1).
pub fn sample_channel(
    rng_seed: u64,
    num_users: usize,
    num_paths: usize,
    geometry: &ArrayGeometry,
) -> Result<ChannelRealization> {
    if num_users == 0 || num_paths == 0 {
        return Err(Error::Config("need at least one user and one path".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let paths = (0..num_users)
        .map(|_| {
            (0..num_paths)
                .map(|_| {
                    let aod = rng.random_range(0.0..2.0 * PI);
                    let gain = complex_gaussian(&mut rng);
                    PathParams::new(gain, aod)
                })
                .collect()
        })
        .collect();
    ChannelRealization::from_paths(paths, *geometry)
}

/// Partition of users into multicast groups plus the link budget.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupConfig {
    num_groups: usize,
    /// `membership[m]` is the 0-based group of user `m`.
    membership: Vec<usize>,
    power: f64,
    noise_var: f64,
    num_rf_chains: usize,
}

impl GroupConfig {
    pub fn new(membership: Vec<usize>, power: f64, noise_var: f64) -> Result<Self> {
        let num_groups = membership.iter().max().map(|g| g + 1).unwrap_or(0);
        if num_groups == 0 {
            return Err(Error::Config("at least one user is required".into()));
        }
        for k in 0..num_groups {
            if !membership.contains(&k) {
                return Err(Error::Config(format!("group {k} has no members")));
            }
        }
        if !(power >= 0.0 && power.is_finite()) {
            return Err(Error::Config(format!("power must be finite and nonnegative, got {power}")));
        }
        if !(noise_var > 0.0 && noise_var.is_finite()) {
            return Err(Error::Config(format!("noise variance must be positive, got {noise_var}")));
        }
        Ok(Self {
            num_groups,
            membership,
            power,
            noise_var,
            num_rf_chains: num_groups,
        })
    }

    /// Consecutive users fill groups in order: sizes `[3, 2, 1]` give users 0–2 to group 0, and so on.
    pub fn from_group_sizes(sizes: &[usize], power: f64, noise_var: f64) -> Result<Self> {
        if sizes.iter().any(|&s| s == 0) {
            return Err(Error::Config("every group needs at least one user".into()));
        }
        let membership = sizes
            .iter()
            .enumerate()
            .flat_map(|(k, &s)| std::iter::repeat_n(k, s))
            .collect();
        Self::new(membership, power, noise_var)
    }

    pub fn with_power(&self, power: f64) -> Result<Self> {
        Self::new(self.membership.clone(), power, self.noise_var)
    }

    pub fn num_groups(&self) -> usize {
        self.num_groups
    }

    pub fn num_users(&self) -> usize {
        self.membership.len()
    }

    pub fn membership(&self) -> &[usize] {
        &self.membership
    }

    pub fn members(&self, group: usize) -> Vec<usize> {
        (0..self.membership.len()).filter(|&m| self.membership[m] == group).collect()
    }

    pub fn power(&self) -> f64 {
        self.power
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn num_rf_chains(&self) -> usize {
        self.num_rf_chains
    }
}

/// Analog precoder `F` (N × N_RF, unit-modulus) cascaded with digital `W` (N_RF × G).
///
/// The fully-digital baseline is represented with `analog = I_N` and the
/// `fully_digital` flag set; the unit-modulus invariant applies only to hybrid precoders.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridPrecoder {
    analog: CMatrix,
    digital: CMatrix,
    fully_digital: bool,
}

impl HybridPrecoder {
    pub const MODULUS_TOL: f64 = 1e-9;

    pub fn new(analog: CMatrix, digital: CMatrix) -> Result<Self> {
        if analog.ncols() != digital.nrows() {
            return Err(Error::Config(format!(
                "analog precoder has {} columns but digital precoder has {} rows",
                analog.ncols(),
                digital.nrows()
            )));
        }
        if let Some(z) = analog.iter().find(|z| (z.norm() - 1.0).abs() > Self::MODULUS_TOL) {
            return Err(Error::Config(format!("analog entry {z} is not unit-modulus")));
        }
        Ok(Self {
            analog,
            digital,
            fully_digital: false,
        })
    }

    /// `N × G` beamforming matrix with no analog stage.
    pub fn fully_digital(beamformers: CMatrix) -> Self {
        let n = beamformers.nrows();
        Self {
            analog: CMatrix::identity(n, n),
            digital: beamformers,
            fully_digital: true,
        }
    }

    pub fn analog(&self) -> &CMatrix {
        &self.analog
    }

    pub fn digital(&self) -> &CMatrix {
        &self.digital
    }

    pub fn is_fully_digital(&self) -> bool {
        self.fully_digital
    }

    /// The cascaded `F W`.
    pub fn transmit_matrix(&self) -> CMatrix {
        if self.fully_digital {
            self.digital.clone()
        } else {
            &self.analog * &self.digital
        }
    }

    /// `‖F W‖_F²`.
    pub fn transmit_power(&self) -> f64 {
        self.transmit_matrix().norm_squared()
    }

    pub(crate) fn scale_digital(&mut self, factor: f64) {
        self.digital *= C64::from(factor);
    }
}

/// SINR of every user for the beamforming matrix `v` (N × G, column `k` serves group `k`).
pub fn sinr_for_beamformers(channels: &[CVector], v: &CMatrix, membership: &[usize], noise_var: f64) -> Vec<f64> {
    channels
        .iter()
        .zip(membership)
        .map(|(h, &k)| {
            let mut signal = 0.0;
            let mut interference = 0.0;
            for i in 0..v.ncols() {
                let g = h.dotc(&v.column(i)).norm_sqr();
                if i == k {
                    signal = g;
                } else {
                    interference += g;
                }
            }
            signal / (interference + noise_var)
        })
        .collect()
}

/// `|h_m^H F w_k|² / (Σ_{i≠k} |h_m^H F w_i|² + σ²)` for every user `m` in group `k`.
pub fn sinr_per_user(
    channels: &ChannelRealization,
    precoder: &HybridPrecoder,
    config: &GroupConfig,
) -> Result<Vec<f64>> {
    let v = precoder.transmit_matrix();
    if v.nrows() != channels.num_antennas() {
        return Err(Error::Config(format!(
            "precoder drives {} antennas but channels have {}",
            v.nrows(),
            channels.num_antennas()
        )));
    }
    if v.ncols() != config.num_groups() {
        return Err(Error::Config(format!(
            "precoder has {} streams for {} groups",
            v.ncols(),
            config.num_groups()
        )));
    }
    if channels.num_users() != config.num_users() {
        return Err(Error::Config(format!(
            "{} channels for {} users",
            channels.num_users(),
            config.num_users()
        )));
    }
    Ok(sinr_for_beamformers(channels.channels(), &v, config.membership(), config.noise_var()))
}

/// `log2(1 + SINR)` in bits/s/Hz.
pub fn rate_per_user(sinr: &[f64]) -> Result<Vec<f64>> {
    sinr.iter()
        .map(|&s| {
            if s >= 0.0 {
                Ok((1.0 + s).log2())
            } else {
                Err(Error::Domain(format!("SINR must be nonnegative, got {s}")))
            }
        })
        .collect()
}
