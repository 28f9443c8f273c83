//! Persisted calibration results. A document holds one calibrated policy per
//! weight `eta` together with enough provenance to reproduce it.

use std::path::Path;

use anyhow::{bail, Context};
use bdrelay::fixed::FixedCalibration;
use bdrelay::joint::JointCalibration;
use bdrelay::sim::{Policy, ProtocolHandle};
use serde::{Deserialize, Serialize};

use crate::config::{short_hash, ConfigError, PowerKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsDocument {
    pub tool_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub kind: PowerKind,
    pub sample_size: usize,
    #[serde(rename = "entry")]
    pub entries: Vec<WeightsEntry>,
}

/// One calibrated operating point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsEntry {
    pub eta: f64,
    /// Region label, plus the case row for fixed powers.
    pub region: String,
    pub residual_c1: f64,
    pub residual_c2: f64,
    pub residual_power: Option<f64>,
    pub calibration_hash: String,
    pub policy: Policy,
}

impl WeightsEntry {
    pub fn from_joint(cal: &JointCalibration) -> Self {
        Self::new(
            cal.eta,
            cal.weights.region.name().to_string(),
            (cal.residuals.c1, cal.residuals.c2, cal.residuals.power),
            Policy::Joint {
                eta: cal.eta,
                weights: cal.weights,
            },
        )
    }

    pub fn from_fixed(cal: &FixedCalibration) -> Self {
        Self::new(
            cal.eta,
            format!("{} {}", cal.weights.region, cal.weights.case_tag),
            (cal.residuals.c1, cal.residuals.c2, None),
            Policy::Fixed {
                eta: cal.eta,
                weights: cal.weights,
                powers: cal.powers,
            },
        )
    }

    fn new(eta: f64, region: String, residuals: (f64, f64, Option<f64>), policy: Policy) -> Self {
        WeightsEntry {
            eta,
            region,
            residual_c1: residuals.0,
            residual_c2: residuals.1,
            residual_power: residuals.2,
            calibration_hash: policy_hash(&policy),
            policy,
        }
    }
}

/// Hash of a policy's parameters. Equal parameters give equal hashes, so a
/// reloaded document reproduces the hashes of the run that wrote it.
pub fn policy_hash(policy: &Policy) -> String {
    let text = toml::to_string(&Wrapper { policy }).expect("policies serialize");
    short_hash(text.as_bytes())
}

#[derive(Serialize)]
struct Wrapper<'a> {
    policy: &'a Policy,
}

impl WeightsDocument {
    pub fn to_toml(&self) -> anyhow::Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Reads a document and re-runs the validity checks of every policy.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read {}", path.display()))?;
        let doc: WeightsDocument = toml::from_str(&text)
            .map_err(|e| ConfigError(format!("weights document {}: {e}", path.display())))?;
        doc.validate()
            .map_err(|e| ConfigError(format!("weights document {}: {e}", path.display())))?;
        Ok(doc)
    }

    fn validate(&self) -> anyhow::Result<()> {
        if self.entries.is_empty() {
            bail!("no entries");
        }
        for e in &self.entries {
            let kind = match e.policy {
                Policy::Joint { .. } => PowerKind::Joint,
                Policy::Fixed { .. } => PowerKind::Fixed,
                _ => bail!("entry eta={} holds a conventional policy", e.eta),
            };
            if kind != self.kind {
                bail!("entry eta={} does not match kind {:?}", e.eta, self.kind);
            }
            if e.policy.eta() != e.eta {
                bail!(
                    "entry eta={} wraps a policy for eta={}",
                    e.eta,
                    e.policy.eta()
                );
            }
            ProtocolHandle::unbounded(e.policy.clone()).validate()?;
            if policy_hash(&e.policy) != e.calibration_hash {
                bail!(
                    "entry eta={}: calibration hash does not match its parameters",
                    e.eta
                );
            }
        }
        Ok(())
    }
}
