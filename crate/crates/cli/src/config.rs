//! Run configuration: a TOML document with flat sections, validated and
//! converted to linear units once at load time.

use std::fmt;
use std::path::{Path, PathBuf};

use bdrelay::benchmarks::ModeSubset;
use bdrelay::channel::FadingConfig;
use bdrelay::fixed::NodePowers;
use bdrelay::region::{chebyshev_eta_grid, DEFAULT_GRID_POINTS};
use bdrelay::{check_eta, db_to_linear};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// A problem with the configuration or the command-line overrides. The
/// binary maps it to exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "configuration error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn bad(field: &str, reason: impl fmt::Display) -> ConfigError {
    ConfigError(format!("`{field}`: {reason}"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PowerKind {
    Joint,
    Fixed,
}

/// Either one weight or a Chebyshev grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EtaSpec {
    Value(f64),
    Keyword(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChannelSection {
    #[serde(default = "one")]
    omega1: f64,
    #[serde(default = "one")]
    omega2: f64,
    #[serde(default)]
    seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PowerSection {
    kind: PowerKind,
    /// Long-term budget of the joint constraint, in dB.
    total_db: Option<f64>,
    /// Common node power of the fixed constraint, in dB.
    p_db: Option<f64>,
    p1_db: Option<f64>,
    p2_db: Option<f64>,
    pr_db: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunSection {
    #[serde(default = "default_eta")]
    eta: EtaSpec,
    #[serde(default = "default_grid_points")]
    grid_points: usize,
    #[serde(default = "default_slots")]
    slots: u64,
    #[serde(default = "default_sample")]
    sample_size: usize,
    #[serde(default = "default_benchmark_slots")]
    benchmark_slots: usize,
    delay: Option<f64>,
    #[serde(default = "default_delays")]
    delays: Vec<f64>,
    subset: Option<String>,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            eta: default_eta(),
            grid_points: default_grid_points(),
            slots: default_slots(),
            sample_size: default_sample(),
            benchmark_slots: default_benchmark_slots(),
            delay: None,
            delays: default_delays(),
            subset: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OutputSection {
    path: Option<PathBuf>,
    weights: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    channel: ChannelSection,
    power: PowerSection,
    #[serde(default)]
    run: RunSection,
    #[serde(default)]
    output: OutputSection,
}

fn one() -> f64 {
    1.0
}
fn default_eta() -> EtaSpec {
    EtaSpec::Value(0.5)
}
fn default_grid_points() -> usize {
    DEFAULT_GRID_POINTS
}
fn default_slots() -> u64 {
    1_000_000
}
fn default_sample() -> usize {
    bdrelay::joint::DEFAULT_SAMPLE_SIZE
}
fn default_benchmark_slots() -> usize {
    20_000
}
fn default_delays() -> Vec<f64> {
    vec![2.0, 3.0, 5.0, 10.0, 20.0]
}

/// The power constraint in linear units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PowerConstraint {
    Joint { total: f64 },
    Fixed(NodePowers),
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub slots: Option<u64>,
    pub eta: Option<String>,
    pub subset: Option<String>,
    pub delay: Option<f64>,
    pub out: Option<PathBuf>,
}

/// A validated configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub fading: FadingConfig,
    pub power: PowerConstraint,
    pub etas: Vec<f64>,
    pub slots: u64,
    pub sample_size: usize,
    pub benchmark_slots: usize,
    pub delay: Option<f64>,
    pub delays: Vec<f64>,
    pub subsets: Vec<ModeSubset>,
    pub out: Option<PathBuf>,
    pub weights_path: Option<PathBuf>,
    /// First 16 hex digits of the SHA-256 of the effective configuration.
    pub hash: String,
}

impl RunConfig {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, overrides)
    }

    pub fn parse(text: &str, overrides: &Overrides) -> Result<Self, ConfigError> {
        let mut raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError(e.to_string()))?;
        apply_overrides(&mut raw, overrides)?;
        // Hash the effective settings, so that an override yields a new hash.
        // Output paths do not change any result and stay out of it.
        let settings = RawConfig {
            output: OutputSection::default(),
            ..raw.clone()
        };
        let canonical = toml::to_string(&settings).map_err(|e| ConfigError(e.to_string()))?;
        let hash = short_hash(canonical.as_bytes());

        let ch = &raw.channel;
        let fading =
            FadingConfig::new(ch.omega1, ch.omega2, ch.seed).map_err(|e| bad("channel", e))?;
        let power = power_constraint(&raw.power)?;
        let run = &raw.run;
        let etas = match &run.eta {
            EtaSpec::Value(v) => {
                check_eta(*v).map_err(|e| bad("run.eta", e))?;
                vec![*v]
            }
            EtaSpec::Keyword(k) if k.eq_ignore_ascii_case("grid") => {
                if run.grid_points == 0 {
                    return Err(bad("run.grid_points", "must be at least one"));
                }
                chebyshev_eta_grid(run.grid_points)
            }
            EtaSpec::Keyword(k) => {
                return Err(bad(
                    "run.eta",
                    format!("expected a number in (0, 1) or \"grid\", got {k:?}"),
                ))
            }
        };
        if run.slots == 0 {
            return Err(bad("run.slots", "must be at least one"));
        }
        if run.sample_size == 0 {
            return Err(bad("run.sample_size", "must be at least one"));
        }
        if run.benchmark_slots == 0 {
            return Err(bad("run.benchmark_slots", "must be at least one"));
        }
        if let Some(d) = run.delay {
            check_delay("run.delay", d)?;
        }
        for &d in &run.delays {
            check_delay("run.delays", d)?;
        }
        let subsets = match &run.subset {
            Some(s) => parse_subsets(s).map_err(|e| bad("run.subset", e))?,
            None => Vec::new(),
        };
        Ok(RunConfig {
            fading,
            power,
            etas,
            slots: run.slots,
            sample_size: run.sample_size,
            benchmark_slots: run.benchmark_slots,
            delay: run.delay,
            delays: run.delays.clone(),
            subsets,
            out: raw.output.path.clone(),
            weights_path: raw.output.weights.clone(),
            hash,
        })
    }

    pub fn seed(&self) -> u64 {
        self.fading.seed
    }

    pub fn kind(&self) -> PowerKind {
        match self.power {
            PowerConstraint::Joint { .. } => PowerKind::Joint,
            PowerConstraint::Fixed(_) => PowerKind::Fixed,
        }
    }
}

fn check_delay(field: &str, d: f64) -> Result<(), ConfigError> {
    if d > 1.0 && d.is_finite() {
        Ok(())
    } else {
        Err(bad(field, format!("delay target {d} must exceed one slot")))
    }
}

fn apply_overrides(raw: &mut RawConfig, o: &Overrides) -> Result<(), ConfigError> {
    if let Some(seed) = o.seed {
        raw.channel.seed = seed;
    }
    if let Some(slots) = o.slots {
        raw.run.slots = slots;
        raw.run.benchmark_slots =
            usize::try_from(slots).map_err(|_| bad("--slots", "too large"))?;
    }
    if let Some(eta) = &o.eta {
        raw.run.eta = if eta.eq_ignore_ascii_case("grid") {
            EtaSpec::Keyword("grid".into())
        } else {
            EtaSpec::Value(eta.parse().map_err(|_| {
                bad(
                    "--eta",
                    format!("expected a number or \"grid\", got {eta:?}"),
                )
            })?)
        };
    }
    if let Some(s) = &o.subset {
        raw.run.subset = Some(s.clone());
    }
    if let Some(d) = o.delay {
        raw.run.delay = Some(d);
    }
    if let Some(out) = &o.out {
        raw.output.path = Some(out.clone());
    }
    Ok(())
}

fn power_constraint(p: &PowerSection) -> Result<PowerConstraint, ConfigError> {
    let finite = |field: &str, v: f64| {
        if v.is_finite() {
            Ok(v)
        } else {
            Err(bad(field, "must be finite"))
        }
    };
    match p.kind {
        PowerKind::Joint => {
            if p.p_db.or(p.p1_db).or(p.p2_db).or(p.pr_db).is_some() {
                return Err(bad(
                    "power",
                    "node powers belong to kind = \"fixed\"; use total_db",
                ));
            }
            let db = p
                .total_db
                .ok_or_else(|| bad("power.total_db", "required for kind = \"joint\""))?;
            Ok(PowerConstraint::Joint {
                total: db_to_linear(finite("power.total_db", db)?),
            })
        }
        PowerKind::Fixed => {
            if p.total_db.is_some() {
                return Err(bad("power.total_db", "only valid for kind = \"joint\""));
            }
            let node = |field: &'static str, v: Option<f64>| -> Result<f64, ConfigError> {
                let db = v.or(p.p_db).ok_or_else(|| {
                    bad(field, "required for kind = \"fixed\" unless p_db is set")
                })?;
                Ok(db_to_linear(finite(field, db)?))
            };
            let powers = NodePowers::new(
                node("power.p1_db", p.p1_db)?,
                node("power.p2_db", p.p2_db)?,
                node("power.pr_db", p.pr_db)?,
            )
            .map_err(|e| bad("power", e))?;
            Ok(PowerConstraint::Fixed(powers))
        }
    }
}

/// Parses a `;`-separated list of presets or mode lists, e.g.
/// `"tdbc;mabc"` or `"1,2,6"`. The keyword `conventional` expands to every
/// conventional preset.
pub fn parse_subsets(s: &str) -> Result<Vec<ModeSubset>, String> {
    let mut out = Vec::new();
    for part in s.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        if part.eq_ignore_ascii_case("conventional") {
            out.extend(ModeSubset::CONVENTIONAL);
        } else {
            out.push(ModeSubset::parse(part).map_err(|e| e.to_string())?);
        }
    }
    if out.is_empty() {
        return Err("no mode subset given".into());
    }
    Ok(out)
}

/// First 16 hex digits of the SHA-256 digest of `bytes`.
pub fn short_hash(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const JOINT: &str = "[channel]\nseed = 3\n[power]\nkind = \"joint\"\ntotal_db = 10.0\n";

    #[test]
    fn decibels_convert_once() {
        let c = RunConfig::parse(JOINT, &Overrides::default()).unwrap();
        assert_eq!(c.power, PowerConstraint::Joint { total: 10.0 });
        let fixed = "[channel]\n[power]\nkind = \"fixed\"\np_db = 0.0\npr_db = 10.0\n";
        let c = RunConfig::parse(fixed, &Overrides::default()).unwrap();
        assert_eq!(
            c.power,
            PowerConstraint::Fixed(NodePowers::new(1.0, 1.0, 10.0).unwrap())
        );
    }

    #[test]
    fn errors_name_the_field() {
        let e = RunConfig::parse(
            "[channel]\n[power]\nkind = \"joint\"\n",
            &Overrides::default(),
        )
        .unwrap_err();
        assert!(e.to_string().contains("power.total_db"), "{e}");
        let e = RunConfig::parse(&format!("{JOINT}[run]\neta = 1.5\n"), &Overrides::default())
            .unwrap_err();
        assert!(e.to_string().contains("run.eta"), "{e}");
        let e = RunConfig::parse(&format!("{JOINT}[run]\nslot = 5\n"), &Overrides::default())
            .unwrap_err();
        assert!(e.to_string().contains("slot"), "{e}");
    }

    #[test]
    fn overrides_change_the_hash() {
        let a = RunConfig::parse(JOINT, &Overrides::default()).unwrap();
        let b = RunConfig::parse(
            JOINT,
            &Overrides {
                seed: Some(4),
                eta: Some("grid".into()),
                ..Overrides::default()
            },
        )
        .unwrap();
        assert_eq!(b.seed(), 4);
        assert_eq!(b.etas.len(), DEFAULT_GRID_POINTS);
        assert_ne!(a.hash, b.hash);
        assert_eq!(
            a.hash,
            RunConfig::parse(JOINT, &Overrides::default()).unwrap().hash
        );
    }

    #[test]
    fn subset_lists() {
        assert_eq!(parse_subsets("conventional").unwrap().len(), 4);
        assert_eq!(
            parse_subsets("tdbc; 1,2,4,5").unwrap(),
            vec![ModeSubset::TDBC, ModeSubset::TRADITIONAL]
        );
        assert!(parse_subsets("7").is_err());
    }
}
