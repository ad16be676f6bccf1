use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rf::RfChannelMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Design {
    Hybrid,
    #[serde(alias = "digital")]
    FullyDigital,
}

impl Design {
    pub fn as_str(self) -> &'static str {
        match self {
            Design::Hybrid => "hybrid",
            Design::FullyDigital => "fully_digital",
        }
    }
}

impl std::str::FromStr for Design {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "hybrid" => Ok(Design::Hybrid),
            "digital" | "fully_digital" | "fully-digital" => Ok(Design::FullyDigital),
            other => Err(Error::Config(format!(
                "unknown design `{other}` (expected hybrid or digital)"
            ))),
        }
    }
}

/// One Monte-Carlo scenario. Every combination of `antennas` and `paths` is
/// run over the whole SNR grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub antennas: Vec<usize>,
    /// Users per multicast group; consecutive users fill the groups in order.
    pub group_sizes: Vec<usize>,
    #[serde(default = "default_paths")]
    pub paths: Vec<usize>,
    #[serde(default = "default_snr_grid")]
    pub snr_grid_db: Vec<f64>,
    #[serde(default = "default_trials")]
    pub num_trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_designs")]
    pub designs: Vec<Design>,
    #[serde(default)]
    pub rf_channel_mode: RfChannelMode,
    #[serde(default = "default_noise_var")]
    pub noise_var: f64,
}

fn default_paths() -> Vec<usize> {
    vec![1]
}

/// −10 dB to 50 dB in 5 dB steps.
pub fn default_snr_grid() -> Vec<f64> {
    (0..13).map(|i| -10.0 + 5.0 * i as f64).collect()
}

fn default_trials() -> usize {
    200
}

fn default_designs() -> Vec<Design> {
    vec![Design::Hybrid, Design::FullyDigital]
}

fn default_noise_var() -> f64 {
    1.0
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("scenario `{}`: {msg}", self.name)));
        if self.antennas.is_empty() || self.antennas.contains(&0) {
            return bad("antennas must be a nonempty list of positive counts");
        }
        if self.group_sizes.is_empty() || self.group_sizes.contains(&0) {
            return bad("group_sizes must be a nonempty list of positive sizes");
        }
        if self.paths.is_empty() || self.paths.contains(&0) {
            return bad("paths must be a nonempty list of positive counts");
        }
        if self.snr_grid_db.is_empty() || self.snr_grid_db.iter().any(|s| !s.is_finite()) {
            return bad("snr_grid_db must be a nonempty list of finite values");
        }
        if self.num_trials == 0 {
            return bad("num_trials must be at least 1");
        }
        if self.designs.is_empty() {
            return bad("at least one design is required");
        }
        if !(self.noise_var > 0.0 && self.noise_var.is_finite()) {
            return bad("noise_var must be positive");
        }
        if let Some(&n) = self.antennas.iter().find(|&&n| n < self.group_sizes.len()) {
            return bad(&format!("{n} antennas cannot serve {} groups", self.group_sizes.len()));
        }
        Ok(())
    }

    pub fn num_users(&self) -> usize {
        self.group_sizes.iter().sum()
    }

    fn base(name: &str, antennas: Vec<usize>, group_sizes: Vec<usize>, paths: Vec<usize>) -> Self {
        Self {
            name: name.to_string(),
            antennas,
            group_sizes,
            paths,
            snr_grid_db: default_snr_grid(),
            num_trials: default_trials(),
            seed: 0,
            designs: default_designs(),
            rf_channel_mode: RfChannelMode::default(),
            noise_var: default_noise_var(),
        }
    }
}

/// Preset names with a one-line description each.
pub const PRESETS: [(&str, &str); 5] = [
    ("fig1", "single group, 4 users, N in {8,16,32,64}, L=1"),
    ("fig2", "N=64, 3 single-user groups, L=1"),
    ("fig3", "3 groups of 2 users, N in {8,16,32,64}, L=1"),
    ("fig4", "N=8, groups of 3/2/1 users, L=1"),
    ("fig5", "N=8, 3 groups of 2 users, L in {1,15}, RF stage sees the dominant path"),
];

/// The antenna sweep for fig1 and fig3 is our choice; the figures only say N is varied.
pub fn preset(name: &str) -> Result<ScenarioConfig> {
    let sweep = vec![8, 16, 32, 64];
    let cfg = match name {
        "fig1" => ScenarioConfig::base(name, sweep, vec![4], vec![1]),
        "fig2" => ScenarioConfig::base(name, vec![64], vec![1, 1, 1], vec![1]),
        "fig3" => ScenarioConfig::base(name, sweep, vec![2, 2, 2], vec![1]),
        "fig4" => ScenarioConfig::base(name, vec![8], vec![3, 2, 1], vec![1]),
        "fig5" => ScenarioConfig {
            rf_channel_mode: RfChannelMode::DominantPath,
            ..ScenarioConfig::base(name, vec![8], vec![2, 2, 2], vec![1, 15])
        },
        _ => {
            return Err(Error::UnknownPreset {
                name: name.to_string(),
                valid: PRESETS.iter().map(|(n, _)| *n).collect::<Vec<_>>().join(", "),
            })
        }
    };
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snr_grid_has_thirteen_points() {
        let grid = default_snr_grid();
        assert_eq!(grid.len(), 13);
        assert_eq!(grid[0], -10.0);
        assert_eq!(grid[12], 50.0);
    }

    #[test]
    fn presets_match_captions() {
        let fig2 = preset("fig2").unwrap();
        assert_eq!((fig2.antennas.clone(), fig2.group_sizes.clone(), fig2.paths.clone()), (vec![64], vec![1, 1, 1], vec![1]));
        let fig4 = preset("fig4").unwrap();
        assert_eq!(fig4.antennas, vec![8]);
        assert_eq!(fig4.group_sizes, vec![3, 2, 1]);
        let fig5 = preset("fig5").unwrap();
        assert_eq!(fig5.paths, vec![1, 15]);
        assert_eq!(fig5.group_sizes, vec![2, 2, 2]);
        assert_eq!(fig5.rf_channel_mode, RfChannelMode::DominantPath);
        let fig1 = preset("fig1").unwrap();
        assert_eq!(fig1.group_sizes, vec![4]);
        for (name, _) in PRESETS {
            preset(name).unwrap().validate().unwrap();
        }
    }

    #[test]
    fn unknown_preset_lists_valid_names() {
        let err = preset("fig9").unwrap_err();
        assert_eq!(err.kind(), "unknown_preset");
        assert!(err.to_string().contains("fig1, fig2, fig3, fig4, fig5"));
    }

    #[test]
    fn json_defaults_fill_in() {
        let cfg: ScenarioConfig =
            serde_json::from_str(r#"{"name":"x","antennas":[8],"group_sizes":[2,1]}"#).unwrap();
        assert_eq!(cfg.num_trials, 200);
        assert_eq!(cfg.paths, vec![1]);
        assert_eq!(cfg.snr_grid_db.len(), 13);
        assert_eq!(cfg.designs, vec![Design::Hybrid, Design::FullyDigital]);
        assert_eq!(cfg.rf_channel_mode, RfChannelMode::Full);
        assert!(serde_json::from_str::<ScenarioConfig>(r#"{"name":"x","antennas":[8],"group_sizes":[1],"bogus":1}"#).is_err());
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let mut cfg = preset("fig4").unwrap();
        cfg.num_trials = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = preset("fig4").unwrap();
        cfg.antennas = vec![2];
        assert!(cfg.validate().is_err());
        let mut cfg = preset("fig4").unwrap();
        cfg.group_sizes = vec![1, 0];
        assert!(cfg.validate().is_err());
    }
}
