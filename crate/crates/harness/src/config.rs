//! Experiment configuration: one algorithm variant, optionally warm-started
//! from a pre-trained checkpoint, over a list of seeds.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use demolab::a3c::{RewardMode, TrainConfig};
use demolab::env::{EnvId, EnvSpec};
use demolab::net::{ConvSpec, NetConfig, PolicyValueNet};
use demolab::pretrain::{PretrainConfig, PretrainMode, TransferPolicy};
use demolab::sil::SilConfig;
use ndgrad::OptimizerKind;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// RMSProp ε used on pong in place of the shared default.
pub const PONG_RMSPROP_EPSILON: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "A3C")]
    A3c,
    #[serde(rename = "A3CTB")]
    A3cTb,
    #[serde(rename = "A3C+SIL")]
    A3cSil,
    #[serde(rename = "A3CTB+SIL")]
    A3cTbSil,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::A3c, Variant::A3cTb, Variant::A3cSil, Variant::A3cTbSil];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::A3c => "A3C",
            Variant::A3cTb => "A3CTB",
            Variant::A3cSil => "A3C+SIL",
            Variant::A3cTbSil => "A3CTB+SIL",
        }
    }

    pub fn uses_sil(self) -> bool {
        matches!(self, Variant::A3cSil | Variant::A3cTbSil)
    }

    pub fn reward_mode(self) -> RewardMode {
        match self {
            Variant::A3c | Variant::A3cSil => RewardMode::Clipped,
            Variant::A3cTb | Variant::A3cTbSil => RewardMode::RawTb,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}` (expected one of A3C, A3CTB, A3C+SIL, A3CTB+SIL)")))
    }
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainSection {
    pub mode: PretrainMode,
    pub transfer: TransferPolicy,
    /// Demonstration archive used for pre-training and for seeding the SIL buffer.
    pub archive: PathBuf,
    /// Reuse this checkpoint instead of pre-training each seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[serde(default = "yes")]
    pub seed_sil_buffer: bool,
    #[serde(default)]
    pub settings: PretrainConfig,
}

/// Overrides on top of the standard network; the resolved config spells it out.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub convs: Option<[ConvSpec; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fc_width: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub env: EnvId,
    pub variant: Variant,
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pretrain: Option<PretrainSection>,
    #[serde(default)]
    pub net: NetSection,
    /// Training hyperparameters; `reward_mode` and `sil` follow the variant.
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub sil: SilConfig,
    #[serde(default = "pong_epsilon")]
    pub pong_rmsprop_epsilon: f64,
    /// Run seeds concurrently; each seed already uses `actors (+1)` threads.
    #[serde(default)]
    pub parallel_seeds: bool,
}

fn pong_epsilon() -> f64 {
    PONG_RMSPROP_EPSILON
}

impl ExperimentConfig {
    pub fn new(name: impl Into<String>, env: EnvId, variant: Variant, seeds: Vec<u64>) -> Self {
        Self {
            name: name.into(),
            env,
            variant,
            seeds,
            pretrain: None,
            net: NetSection::default(),
            train: TrainConfig::default(),
            sil: SilConfig::default(),
            pong_rmsprop_epsilon: PONG_RMSPROP_EPSILON,
            parallel_seeds: false,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse {
            path: "<config>".into(),
            reason: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let fail = |reason: String| Error::Parse {
            path: path.display().to_string(),
            reason,
        };
        let text = std::fs::read_to_string(path).map_err(|e| fail(e.to_string()))?;
        toml::from_str(&text).map_err(|e| fail(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn spec(&self) -> EnvSpec {
        EnvSpec::new(self.env)
    }

    /// Label used in curves and reports, e.g. `A3CTB+SIL [SL_V_AE] full`.
    pub fn label(&self) -> String {
        match &self.pretrain {
            None => self.variant.to_string(),
            Some(p) => {
                let policy = match p.transfer {
                    TransferPolicy::Full => "full",
                    TransferPolicy::NoFc => "no_fc",
                };
                format!("{} [{}] {policy}", self.variant, p.mode.as_str())
            }
        }
    }

    pub fn net_config(&self) -> NetConfig {
        let mut net = NetConfig::standard(self.spec().num_actions());
        if let Some(convs) = self.net.convs {
            net.convs = convs;
        }
        if let Some(w) = self.net.fc_width {
            net.fc_width = w;
        }
        net
    }

    /// Checks the config and materialises every derived setting, so that the
    /// result can be written out as the run's provenance record.
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let bad = |m: String| Err(Error::Config(m));
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return bad(format!("name `{}` must be a non-empty single path component", self.name));
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return bad("seeds must be distinct".into());
        }

        let mut out = self.clone();
        let net = self.net_config();
        PolicyValueNet::new(net.clone())?;
        out.net = NetSection {
            convs: Some(net.convs),
            fc_width: Some(net.fc_width),
        };
        out.train.reward_mode = self.variant.reward_mode();
        out.train.sil = self.variant.uses_sil().then(|| self.sil.clone());
        if self.env == EnvId::MiniPong && matches!(out.train.optimizer.kind, OptimizerKind::Rmsprop { .. }) {
            out.train.optimizer.epsilon = self.pong_rmsprop_epsilon;
        }
        out.train.validate()?;

        if let Some(p) = &mut out.pretrain {
            // pre-trained value heads must live in the trainer's value space
            if self.variant != Variant::A3cTbSil {
                return bad(format!("pre-trained runs use A3CTB+SIL, not {}", self.variant));
            }
            if p.mode == PretrainMode::Ae && p.transfer == TransferPolicy::Full {
                return bad("[AE] checkpoints transfer no_fc only".into());
            }
            p.settings.mode = p.mode;
            p.settings.gamma = out.train.gamma;
            p.settings.tb_epsilon = out.train.tb_epsilon;
            p.settings.validate()?;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_toml_resolves_with_defaults() {
        let cfg = ExperimentConfig::from_toml(
            r#"
            name = "pong-a3c"
            env = "minipong"
            variant = "A3C"
            seeds = [1, 2, 3]
            "#,
        )
        .unwrap();
        let r = cfg.resolve().unwrap();
        assert_eq!(r.train.reward_mode, RewardMode::Clipped);
        assert!(r.train.sil.is_none());
        assert_eq!(r.train.optimizer.epsilon, PONG_RMSPROP_EPSILON);
        assert_eq!(r.net.fc_width, Some(256));
        // resolving twice changes nothing
        assert_eq!(r.resolve().unwrap(), r);
        let back = ExperimentConfig::from_toml(&r.to_toml().unwrap()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn pacman_keeps_the_shared_epsilon() {
        let r = ExperimentConfig::new("p", EnvId::MiniPacman, Variant::A3cTbSil, vec![0]).resolve().unwrap();
        assert_eq!(r.train.optimizer.epsilon, TrainConfig::default().optimizer.epsilon);
        assert_eq!(r.train.sil.as_ref().unwrap().updates_per_iteration, 4);
        assert_eq!(r.train.reward_mode, RewardMode::RawTb);
    }

    #[test]
    fn combinations_outside_the_matrix_are_rejected() {
        let mut cfg = ExperimentConfig::new("x", EnvId::MiniPacman, Variant::A3c, vec![0]);
        cfg.pretrain = Some(PretrainSection {
            mode: PretrainMode::Sl,
            transfer: TransferPolicy::Full,
            archive: "demo.bin".into(),
            checkpoint: None,
            seed_sil_buffer: true,
            settings: PretrainConfig::default(),
        });
        assert!(cfg.resolve().is_err());
        cfg.variant = Variant::A3cTbSil;
        assert!(cfg.resolve().is_ok());
        cfg.pretrain.as_mut().unwrap().mode = PretrainMode::Ae;
        assert!(cfg.resolve().is_err());
        cfg.pretrain.as_mut().unwrap().transfer = TransferPolicy::NoFc;
        assert!(cfg.resolve().is_ok());

        let dup = ExperimentConfig::new("x", EnvId::MiniPacman, Variant::A3c, vec![1, 1]);
        assert!(dup.resolve().is_err());
        let none = ExperimentConfig::new("x", EnvId::MiniPacman, Variant::A3c, vec![]);
        assert!(none.resolve().is_err());
    }

    #[test]
    fn variant_names_roundtrip() {
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
        }
        assert!("SIL".parse::<Variant>().is_err());
    }
}
