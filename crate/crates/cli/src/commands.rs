//! The subcommands. Each builds its rows in grid order and writes one table.

use std::path::Path;

use anyhow::{bail, Context};
use bdrelay::benchmarks::{conv_averages, equal_power_for_budget, ModeSubset, Schedule};
use bdrelay::buffers::{size_buffers_for_delay, BufferSizing};
use bdrelay::channel::{Sample, STREAM_SIMULATION};
use bdrelay::fixed::{calibrate_fixed, NodePowers};
use bdrelay::joint::calibrate_joint;
use bdrelay::region::{map_etas, upper_hull, RatePoint};
use bdrelay::sim::{run_sim, Policy, ProtocolHandle, SimStats};

use crate::config::{PowerConstraint, RunConfig};
use crate::table::{Cell, Table};
use crate::weights::{policy_hash, WeightsDocument, WeightsEntry};

/// Raised after the output is written when at least one weight could not be
/// calibrated. The binary maps it to exit code 3.
#[derive(Debug)]
pub struct CalibrationFailed(pub Vec<String>);

impl std::fmt::Display for CalibrationFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "calibration failed:")?;
        for line in &self.0 {
            write!(f, "\n  {line}")?;
        }
        Ok(())
    }
}

impl std::error::Error for CalibrationFailed {}

/// Smallest run inside the buffer sizing search.
const MIN_SIZING_SLOTS: u64 = 10_000;

const RATE_COLUMNS: [&str; 20] = [
    "protocol",
    "subset",
    "eta",
    "r12",
    "r21",
    "mode_freq_1",
    "mode_freq_2",
    "mode_freq_3",
    "mode_freq_4",
    "mode_freq_5",
    "mode_freq_6",
    "pbar_total",
    "delay1",
    "delay2",
    "residual_c1",
    "residual_c2",
    "interior",
    "seed",
    "calibration_hash",
    "status",
];

fn calibrate_one(cfg: &RunConfig, eta: f64) -> bdrelay::Result<WeightsEntry> {
    match &cfg.power {
        PowerConstraint::Joint { total } => {
            calibrate_joint(&cfg.fading, eta, *total, cfg.sample_size)
                .map(|c| WeightsEntry::from_joint(&c))
        }
        PowerConstraint::Fixed(p) => calibrate_fixed(&cfg.fading, p, eta, cfg.sample_size)
            .map(|c| WeightsEntry::from_fixed(&c)),
    }
}

/// Calibrated entries for every weight of the configuration, or the entries
/// of a saved document. Failed weights come back as `Err` with the reason.
fn entries(
    cfg: &RunConfig,
    weights: Option<&Path>,
) -> anyhow::Result<Vec<(f64, Result<WeightsEntry, String>)>> {
    if let Some(path) = weights {
        let doc = WeightsDocument::load(path)?;
        if doc.kind != cfg.kind() {
            return Err(crate::config::ConfigError(format!(
                "weights document {} holds {:?} weights but the configuration asks for {:?}",
                path.display(),
                doc.kind,
                cfg.kind()
            ))
            .into());
        }
        return Ok(doc.entries.into_iter().map(|e| (e.eta, Ok(e))).collect());
    }
    let results = map_etas(&cfg.etas, |eta| {
        calibrate_one(cfg, eta).map_err(|e| e.to_string())
    });
    Ok(cfg.etas.iter().copied().zip(results).collect())
}

pub fn calibrate(cfg: &RunConfig) -> anyhow::Result<()> {
    let mut doc = WeightsDocument {
        tool_version: env!("CARGO_PKG_VERSION").into(),
        config_hash: cfg.hash.clone(),
        seed: cfg.seed(),
        kind: cfg.kind(),
        sample_size: cfg.sample_size,
        entries: Vec::new(),
    };
    let mut failures = Vec::new();
    for (eta, r) in entries(cfg, None)? {
        match r {
            Ok(e) => {
                eprintln!(
                    "eta={eta}: {} residuals c1={:.2e} c2={:.2e}{} hash {}",
                    e.region,
                    e.residual_c1,
                    e.residual_c2,
                    e.residual_power
                        .map(|p| format!(" power={p:.2e}"))
                        .unwrap_or_default(),
                    e.calibration_hash
                );
                doc.entries.push(e);
            }
            Err(msg) => failures.push(msg),
        }
    }
    if !failures.is_empty() {
        return Err(CalibrationFailed(failures).into());
    }
    let text = doc.to_toml()?;
    crate::table::write_text(&text, cfg.out.as_deref().or(cfg.weights_path.as_deref()))
}

/// Buffer sizes for the delay target, scaled by the mean inflow of an
/// unconstrained pilot run.
fn sized_buffers(cfg: &RunConfig, policy: &Policy, target: f64) -> anyhow::Result<BufferSizing> {
    let sizing_slots = (cfg.slots / 5).max(MIN_SIZING_SLOTS).min(cfg.slots);
    let pilot = run_sim(
        &ProtocolHandle::unbounded(policy.clone()),
        &cfg.fading,
        sizing_slots,
        cfg.seed(),
    )?;
    let scale = (pilot.r1r.max(1e-6), pilot.r2r.max(1e-6));
    let seed = cfg.seed().wrapping_add(1);
    let mut failure = None;
    let sizing = size_buffers_for_delay(target, scale, |q1, q2| {
        let h = ProtocolHandle::with_buffers(policy.clone(), q1, q2);
        match run_sim(&h, &cfg.fading, sizing_slots, seed) {
            Ok(s) => (s.delay1.unwrap_or(0.0), s.delay2.unwrap_or(0.0)),
            Err(e) => {
                failure = Some(e);
                (f64::INFINITY, f64::INFINITY)
            }
        }
    });
    if let Some(e) = failure {
        return Err(e.into());
    }
    Ok(sizing?)
}

/// Runs an adaptive policy, with sized buffers when a delay target is set.
fn run_entry(cfg: &RunConfig, entry: &WeightsEntry) -> anyhow::Result<(SimStats, ProtocolHandle)> {
    let handle = match cfg.delay {
        Some(target) => {
            let s = sized_buffers(cfg, &entry.policy, target)?;
            ProtocolHandle::with_buffers(entry.policy.clone(), s.q1max, s.q2max)
        }
        None => ProtocolHandle::unbounded(entry.policy.clone()),
    };
    let stats = run_sim(&handle, &cfg.fading, cfg.slots, cfg.seed()).context("simulation")?;
    Ok((stats, handle))
}

struct Point {
    protocol: String,
    subset: String,
    eta: f64,
    outcome: Result<PointStats, String>,
    hash: String,
}

struct PointStats {
    r12: f64,
    r21: f64,
    mode_freq: [f64; 6],
    pbar_total: f64,
    delays: (Option<f64>, Option<f64>),
    residuals: (f64, f64),
}

impl PointStats {
    fn from_sim(s: &SimStats) -> Self {
        PointStats {
            r12: s.r12,
            r21: s.r21,
            mode_freq: s.mode_freq,
            pbar_total: s.pbar_total(),
            delays: (s.delay1, s.delay2),
            residuals: (s.residual_c1(), s.residual_c2()),
        }
    }
}

fn adaptive_points(
    cfg: &RunConfig,
    weights: Option<&Path>,
) -> anyhow::Result<(Vec<Point>, Vec<String>)> {
    let list = entries(cfg, weights)?;
    let kind = match cfg.kind() {
        crate::config::PowerKind::Joint => "joint-ams",
        crate::config::PowerKind::Fixed => "fixed-ams",
    };
    let protocol = if cfg.delay.is_some() {
        format!("{kind}-delay")
    } else {
        kind.to_string()
    };
    let etas: Vec<f64> = list.iter().map(|(eta, _)| *eta).collect();
    let runs = map_etas(&etas, |eta| {
        let (_, entry) = list
            .iter()
            .find(|(e, _)| *e == eta)
            .expect("eta from the list");
        match entry {
            Ok(e) => (
                run_entry(cfg, e)
                    .map(|(s, _)| PointStats::from_sim(&s))
                    .map_err(|x| format!("{x:#}")),
                e.calibration_hash.clone(),
            ),
            Err(msg) => (Err(msg.clone()), String::new()),
        }
    });
    let mut failures = Vec::new();
    let points = etas
        .iter()
        .zip(runs)
        .map(|(&eta, (outcome, hash))| {
            if let Err(m) = &outcome {
                failures.push(format!("eta={eta}: {m}"));
            }
            Point {
                protocol: protocol.clone(),
                subset: "all".into(),
                eta,
                outcome,
                hash,
            }
        })
        .collect();
    Ok((points, failures))
}

fn subset_label(s: &ModeSubset) -> String {
    for (name, preset) in [
        ("tdbc", ModeSubset::TDBC),
        ("mabc", ModeSubset::MABC),
        ("hbc", ModeSubset::HBC),
        ("traditional", ModeSubset::TRADITIONAL),
        ("all", ModeSubset::ALL),
    ] {
        if *s == preset {
            return name.into();
        }
    }
    s.to_string()
}

fn conventional_points(cfg: &RunConfig, subsets: &[ModeSubset]) -> Vec<Point> {
    let sample = Sample::draw(
        &cfg.fading.with_seed(cfg.seed()),
        STREAM_SIMULATION,
        cfg.benchmark_slots,
    );
    let mut points = Vec::new();
    for subset in subsets {
        for (schedule, protocol) in [
            (Schedule::PerSlot, "conv-slot"),
            (Schedule::LongTerm, "conv-longterm"),
        ] {
            let results = map_etas(&cfg.etas, |eta| -> bdrelay::Result<(PointStats, String)> {
                let powers = match &cfg.power {
                    PowerConstraint::Fixed(p) => *p,
                    PowerConstraint::Joint { total } => NodePowers::equal(equal_power_for_budget(
                        *total, &sample, subset, eta, schedule,
                    )?),
                };
                let avg = conv_averages(&sample, eta, subset, &powers, schedule)?;
                let policy = match schedule {
                    Schedule::PerSlot => Policy::ConvSlot {
                        eta,
                        subset: *subset,
                        powers,
                    },
                    Schedule::LongTerm => Policy::ConvLongTerm {
                        eta,
                        subset: *subset,
                        powers,
                    },
                };
                // Both hops of a direction carry the same rate by construction.
                let stats = PointStats {
                    r12: avg.r12,
                    r21: avg.r21,
                    mode_freq: avg.delta,
                    pbar_total: avg.power.total(),
                    delays: (None, None),
                    residuals: (0.0, 0.0),
                };
                Ok((stats, policy_hash(&policy)))
            });
            for (&eta, r) in cfg.etas.iter().zip(results) {
                let (outcome, hash) = match r {
                    Ok((s, h)) => (Ok(s), h),
                    Err(e) => (Err(e.to_string()), String::new()),
                };
                points.push(Point {
                    protocol: protocol.into(),
                    subset: subset_label(subset),
                    eta,
                    outcome,
                    hash,
                });
            }
        }
    }
    points
}

/// Interior flags from the upper hull of each protocol's own points.
fn interior_flags(points: &[Point]) -> Vec<Option<bool>> {
    let mut flags = vec![None; points.len()];
    let mut groups: Vec<(String, String)> = points
        .iter()
        .map(|p| (p.protocol.clone(), p.subset.clone()))
        .collect();
    groups.dedup();
    for (protocol, subset) in groups {
        let idx: Vec<usize> = (0..points.len())
            .filter(|&i| {
                points[i].protocol == protocol
                    && points[i].subset == subset
                    && points[i].outcome.is_ok()
            })
            .collect();
        let mut rp: Vec<RatePoint> = idx
            .iter()
            .map(|&i| {
                let s = points[i].outcome.as_ref().expect("filtered");
                RatePoint::new(points[i].eta, s.r12, s.r21, protocol.as_str())
            })
            .collect();
        upper_hull(&mut rp);
        for (k, &i) in idx.iter().enumerate() {
            flags[i] = Some(rp[k].interior);
        }
    }
    flags
}

fn rate_table(command: &str, cfg: &RunConfig, points: &[Point]) -> Table {
    let mut t = Table::new(command, &cfg.hash, RATE_COLUMNS.to_vec());
    t.meta("seed", cfg.seed());
    let flags = interior_flags(points);
    for (p, flag) in points.iter().zip(flags) {
        let mut row = vec![
            Cell::Text(p.protocol.clone()),
            Cell::Text(p.subset.clone()),
            Cell::Num(p.eta),
        ];
        match &p.outcome {
            Ok(s) => {
                row.extend([Cell::Num(s.r12), Cell::Num(s.r21)]);
                row.extend(s.mode_freq.iter().map(|&f| Cell::Num(f)));
                row.extend([
                    Cell::Num(s.pbar_total),
                    Cell::Opt(s.delays.0),
                    Cell::Opt(s.delays.1),
                    Cell::Num(s.residuals.0),
                    Cell::Num(s.residuals.1),
                    Cell::Flag(flag.unwrap_or(false)),
                ]);
            }
            Err(_) => row.extend((0..14).map(|_| Cell::Opt(None))),
        }
        row.push(Cell::Int(cfg.seed()));
        row.push(Cell::Text(p.hash.clone()));
        row.push(Cell::Text(match &p.outcome {
            Ok(_) => "ok".into(),
            Err(m) => format!("failed: {m}"),
        }));
        t.push(row);
    }
    t
}

fn finish(table: &Table, cfg: &RunConfig, failures: Vec<String>) -> anyhow::Result<()> {
    table.write(cfg.out.as_deref())?;
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CalibrationFailed(failures).into())
    }
}

pub fn simulate(cfg: &RunConfig, weights: Option<&Path>) -> anyhow::Result<()> {
    let (points, failures) = adaptive_points(cfg, weights)?;
    finish(&rate_table("simulate", cfg, &points), cfg, failures)
}

pub fn region(cfg: &RunConfig, weights: Option<&Path>) -> anyhow::Result<()> {
    let (mut points, failures) = adaptive_points(cfg, weights)?;
    points.extend(conventional_points(cfg, &cfg.subsets));
    finish(&rate_table("region", cfg, &points), cfg, failures)
}

pub fn benchmark(cfg: &RunConfig) -> anyhow::Result<()> {
    let subsets = if cfg.subsets.is_empty() {
        ModeSubset::CONVENTIONAL.to_vec()
    } else {
        cfg.subsets.clone()
    };
    let points = conventional_points(cfg, &subsets);
    let failures: Vec<String> = points
        .iter()
        .filter_map(|p| {
            p.outcome
                .as_ref()
                .err()
                .map(|m| format!("{} {} eta={}: {m}", p.protocol, p.subset, p.eta))
        })
        .collect();
    let table = rate_table("benchmark", cfg, &points);
    table.write(cfg.out.as_deref())?;
    if failures.is_empty() {
        Ok(())
    } else {
        bail!("benchmark failed:\n  {}", failures.join("\n  "))
    }
}

const DELAY_COLUMNS: [&str; 17] = [
    "protocol",
    "eta",
    "target_delay",
    "kappa",
    "q1max",
    "q2max",
    "r12",
    "r21",
    "rate_ratio",
    "delay1",
    "delay2",
    "fifo_delay1",
    "fifo_delay2",
    "pbar_total",
    "seed",
    "calibration_hash",
    "status",
];

pub fn delay_sweep(cfg: &RunConfig, weights: Option<&Path>) -> anyhow::Result<()> {
    let targets = match cfg.delay {
        Some(d) => vec![d],
        None => cfg.delays.clone(),
    };
    let mut table = Table::new("delay-sweep", &cfg.hash, DELAY_COLUMNS.to_vec());
    table.meta("seed", cfg.seed());
    let mut failures = Vec::new();
    for (eta, entry) in entries(cfg, weights)? {
        let entry = match entry {
            Ok(e) => e,
            Err(msg) => {
                failures.push(format!("eta={eta}: {msg}"));
                continue;
            }
        };
        let free = run_sim(
            &ProtocolHandle::unbounded(entry.policy.clone()),
            &cfg.fading,
            cfg.slots,
            cfg.seed(),
        )?;
        let reference = free.weighted_sum(eta);
        let rows = map_etas(
            &targets,
            |target| -> anyhow::Result<(BufferSizing, SimStats, ProtocolHandle)> {
                let s = sized_buffers(cfg, &entry.policy, target)?;
                let h = ProtocolHandle::with_buffers(entry.policy.clone(), s.q1max, s.q2max);
                let stats = run_sim(&h, &cfg.fading, cfg.slots, cfg.seed())?;
                Ok((s, stats, h))
            },
        );
        for (&target, r) in targets.iter().zip(rows) {
            let mut row = vec![Cell::Text(String::new()), Cell::Num(eta), Cell::Num(target)];
            match r {
                Ok((s, st, h)) => {
                    row[0] = Cell::Text(h.kind().name().into());
                    row.extend([
                        Cell::Num(s.kappa),
                        Cell::Num(s.q1max),
                        Cell::Num(s.q2max),
                        Cell::Num(st.r12),
                        Cell::Num(st.r21),
                        Cell::Num(st.weighted_sum(eta) / reference),
                        Cell::Opt(st.delay1),
                        Cell::Opt(st.delay2),
                        Cell::Opt(st.fifo_delay1),
                        Cell::Opt(st.fifo_delay2),
                        Cell::Num(st.pbar_total()),
                        Cell::Int(cfg.seed()),
                        Cell::Text(entry.calibration_hash.clone()),
                        Cell::Text("ok".into()),
                    ]);
                }
                Err(e) => {
                    row.extend((0..11).map(|_| Cell::Opt(None)));
                    row.extend([
                        Cell::Int(cfg.seed()),
                        Cell::Text(entry.calibration_hash.clone()),
                        Cell::Text(format!("failed: {e:#}")),
                    ]);
                }
            }
            table.push(row);
        }
    }
    finish(&table, cfg, failures)
}
