//! Command-line front end: scenario configuration, synthetic data, training,
//! evaluation and agent-versus-oracle comparison.
//!
//! Every command writes into one run directory with fixed file names and a
//! `manifest.txt` that is itself a loadable configuration.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::agent::{evaluate, train_with, write_curve_csv, CurvePoint, EpisodeSource, TrainingConfig};
use crate::appliances::{EvParams, HvacParams, ModeWindows, PreferenceMode, ShiftableApplianceParams};
use crate::env::{EpisodeTrace, Environment, ModeSelection, PenaltyFactors, Roster, Scenario};
use crate::error::{Error, Result};
use crate::neural::Checkpoint;
use crate::oracle::{oracle_total_cost_with, write_oracle_csv, HvacDpConfig, OracleSchedule};
use crate::timeseries::{
    load_events_csv, load_price_csv, load_weather_csv, write_events_csv, write_price_csv, write_weather_csv,
    ApplianceEvent, ApplianceEventLog, PriceSeries, TimeGrid, WeatherSeries,
};

pub const OUT_ENV: &str = "HEMSLAB_OUT";
pub const CURVE_FILE: &str = "curve.csv";
pub const TRACE_FILE: &str = "trace.csv";
pub const COSTS_FILE: &str = "costs.csv";
pub const COMPARE_FILE: &str = "compare.csv";
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const ORACLE_FILE: &str = "oracle.csv";

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub prices: PathBuf,
    pub weather: PathBuf,
    pub events: PathBuf,
    /// Day range `[first, last)` used for training episodes.
    #[serde(default = "default_train_days")]
    pub train_days: [usize; 2],
    /// Day range `[first, last)` of held-out evaluation episodes.
    #[serde(default = "default_eval_days")]
    pub eval_days: [usize; 2],
    /// Hour of day at which evaluation episodes begin.
    #[serde(default = "default_eval_start_hour")]
    pub eval_start_hour: f64,
    /// Spacing of candidate training starts.
    #[serde(default = "default_train_stride_hours")]
    pub train_stride_hours: f64,
}

fn default_train_days() -> [usize; 2] {
    [0, 60]
}
fn default_eval_days() -> [usize; 2] {
    [60, 70]
}
fn default_eval_start_hour() -> f64 {
    12.0
}
fn default_train_stride_hours() -> f64 {
    12.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ModePolicy {
    #[default]
    Sample,
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModesConfig {
    /// How training episodes assign modes.
    pub policy: ModePolicy,
    /// Per-appliance modes for `policy = "fixed"`.
    pub fixed: Vec<usize>,
    /// Per-appliance modes used by `--modes mixed`.
    pub mixed: Vec<usize>,
    pub windows: ModeWindows,
}

impl Default for ModesConfig {
    fn default() -> Self {
        Self {
            policy: ModePolicy::Sample,
            fixed: vec![2, 2, 2, 2],
            mixed: vec![1, 2, 1, 2],
            windows: ModeWindows::default(),
        }
    }
}

/// Daily activation pattern for one appliance in generated data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthActivation {
    pub appliance: String,
    pub hour: f64,
    pub spread_hours: f64,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub days: usize,
    /// Mean price level ($/MWh).
    pub price_base: f64,
    pub price_daily_sd: f64,
    pub price_diurnal_amplitude: f64,
    pub price_evening_peak: f64,
    pub price_evening_peak_hour: f64,
    pub price_evening_peak_width_hours: f64,
    pub price_noise_sd: f64,
    pub price_floor: f64,
    pub temp_mean_c: f64,
    pub temp_daily_sd: f64,
    pub temp_amplitude_c: f64,
    pub temp_peak_hour: f64,
    pub temp_noise_sd: f64,
    pub activations: Vec<SynthActivation>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let act = |appliance: &str, hour, spread_hours, probability| SynthActivation {
            appliance: appliance.into(),
            hour,
            spread_hours,
            probability,
        };
        Self {
            days: 75,
            price_base: 55.0,
            price_daily_sd: 6.0,
            price_diurnal_amplitude: 15.0,
            price_evening_peak: 45.0,
            price_evening_peak_hour: 18.5,
            price_evening_peak_width_hours: 1.5,
            price_noise_sd: 4.0,
            price_floor: 5.0,
            temp_mean_c: 27.0,
            temp_daily_sd: 1.5,
            temp_amplitude_c: 5.0,
            temp_peak_hour: 15.0,
            temp_noise_sd: 0.3,
            activations: vec![
                act("DW", 20.0, 1.5, 0.9),
                act("WM", 9.0, 1.5, 0.7),
                act("EV", 18.0, 1.0, 1.0),
            ],
        }
    }
}

fn default_shiftable() -> Vec<ShiftableApplianceParams> {
    Roster::default().shiftable
}

fn default_ev() -> Option<EvParams> {
    Some(EvParams::default())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub data: DataConfig,
    #[serde(default)]
    pub grid: TimeGrid,
    #[serde(default)]
    pub modes: ModesConfig,
    #[serde(default)]
    pub penalties: PenaltyFactors,
    #[serde(default)]
    pub hvac: HvacParams,
    #[serde(default = "default_ev", skip_serializing_if = "Option::is_none")]
    pub ev: Option<EvParams>,
    #[serde(default = "default_shiftable")]
    pub shiftable: Vec<ShiftableApplianceParams>,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub oracle: HvacDpConfig,
    #[serde(default)]
    pub synth: SynthConfig,
}

impl ScenarioConfig {
    pub fn roster(&self) -> Roster {
        Roster {
            shiftable: self.shiftable.clone(),
            hvac: self.hvac.clone(),
            ev: self.ev.clone(),
        }
    }

    /// Field-level problems that do not involve the filesystem.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut check = |field: &str, r: Result<()>| {
            if let Err(e) = r {
                out.push(format!("{field}: {e}"));
            }
        };
        check("grid", self.grid.validate());
        check("hvac", self.hvac.validate());
        if let Some(ev) = &self.ev {
            check("ev", ev.validate());
        }
        for (i, s) in self.shiftable.iter().enumerate() {
            check(&format!("shiftable[{i}]"), s.validate());
        }
        check("modes.windows", self.modes.windows.validate());
        check("penalties", self.penalties.validate());
        check("oracle.bin_width_c", self.oracle_check());
        let roster = self.roster();
        check("roster", roster.validate());
        out.extend(self.training.problems());

        let n = roster.len();
        for (name, list) in [("modes.fixed", &self.modes.fixed), ("modes.mixed", &self.modes.mixed)] {
            if list.len() != n {
                out.push(format!("{name}: expected {n} entries (one per appliance), got {}", list.len()));
            }
            if let Some(bad) = list.iter().find(|&&m| m > 2) {
                out.push(format!("{name}: mode {bad} not in 0..=2"));
            }
        }
        let d = &self.data;
        if d.train_days[0] >= d.train_days[1] {
            out.push(format!("data.train_days: empty range {:?}", d.train_days));
        }
        if d.eval_days[0] >= d.eval_days[1] {
            out.push(format!("data.eval_days: empty range {:?}", d.eval_days));
        }
        if !(0.0..24.0).contains(&d.eval_start_hour) {
            out.push(format!("data.eval_start_hour: {} not in [0, 24)", d.eval_start_hour));
        }
        if !(d.train_stride_hours > 0.0) {
            out.push("data.train_stride_hours: must be > 0".into());
        }
        let s = &self.synth;
        if s.days == 0 {
            out.push("synth.days: must be >= 1".into());
        }
        let ids = roster.appliance_ids();
        for (i, a) in s.activations.iter().enumerate() {
            if !ids.contains(&a.appliance) || a.appliance == crate::env::HVAC_ID {
                out.push(format!(
                    "synth.activations[{i}].appliance: {:?} is not an event-driven appliance",
                    a.appliance
                ));
            }
            if !(0.0..=1.0).contains(&a.probability) {
                out.push(format!("synth.activations[{i}].probability: {} not in [0, 1]", a.probability));
            }
            if !(a.spread_hours >= 0.0) {
                out.push(format!("synth.activations[{i}].spread_hours: must be >= 0"));
            }
        }
        if !(s.price_noise_sd >= 0.0 && s.price_daily_sd >= 0.0 && s.temp_noise_sd >= 0.0 && s.temp_daily_sd >= 0.0) {
            out.push("synth: standard deviations must be >= 0".into());
        }
        out
    }

    fn oracle_check(&self) -> Result<()> {
        if self.oracle.bin_width_c > 0.0 {
            Ok(())
        } else {
            Err(Error::Parameter(format!("must be > 0, got {}", self.oracle.bin_width_c)))
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p))
        }
    }

    /// Makes data paths absolute relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data.prices);
        fix(&mut self.data.weather);
        fix(&mut self.data.events);
        if let Some(o) = &mut self.out_dir {
            fix(o);
        }
    }

    pub fn training_modes(&self) -> ModeSelection {
        match self.modes.policy {
            ModePolicy::Sample => ModeSelection::Sample,
            ModePolicy::Fixed => ModeSelection::Fixed(to_modes(&self.modes.fixed)),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serialises")
    }
}

fn to_modes(list: &[usize]) -> Vec<PreferenceMode> {
    list.iter()
        .map(|&m| PreferenceMode::from_index(m).expect("validated mode index"))
        .collect()
}

pub fn parse_config(text: &str, origin: &Path) -> Result<ScenarioConfig> {
    let cfg: ScenarioConfig =
        toml::from_str(text).map_err(|e| Error::Config(vec![format!("{}: {}", origin.display(), e.message())]))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Reads, validates and path-resolves a configuration file.
pub fn load_config(path: impl AsRef<Path>) -> Result<ScenarioConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cfg = parse_config(&text, path)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let base = std::path::absolute(&base).unwrap_or(base);
    cfg.resolve_paths(&base);
    Ok(cfg)
}

/// Loads the three data files and assembles the scenario.
pub fn build_scenario(cfg: &ScenarioConfig) -> Result<Scenario> {
    let missing: Vec<String> = [
        ("data.prices", &cfg.data.prices),
        ("data.weather", &cfg.data.weather),
        ("data.events", &cfg.data.events),
    ]
    .iter()
    .filter(|(_, p)| !p.is_file())
    .map(|(f, p)| format!("{f}: file not found: {}", p.display()))
    .collect();
    if !missing.is_empty() {
        return Err(Error::Config(missing));
    }
    let prices = load_price_csv(&cfg.data.prices, &cfg.grid)?;
    let weather = load_weather_csv(&cfg.data.weather, &cfg.grid)?;
    let roster = cfg.roster();
    let rules = roster.event_rules(&cfg.modes.windows, &cfg.grid, Some(prices.len()));
    let events = load_events_csv(&cfg.data.events, &cfg.grid, &rules)?;
    let spd = cfg.grid.steps_per_day();
    let train = &prices.values()[(cfg.data.train_days[0] * spd).min(prices.len())..(cfg.data.train_days[1] * spd).min(prices.len())];
    let train_max = train.iter().cloned().fold(0.0, f64::max);
    let mut scenario = Scenario::new(
        cfg.grid.clone(),
        prices,
        weather,
        events,
        roster,
        cfg.modes.windows.clone(),
        cfg.penalties.clone(),
    )?;
    if train_max > 0.0 {
        scenario.price_scale = train_max;
    }
    Ok(scenario)
}

/// Candidate training starts: inside the training days, strided, and ending
/// before the evaluation days begin.
pub fn training_starts(cfg: &ScenarioConfig, series_len: usize) -> Vec<usize> {
    let spd = cfg.grid.steps_per_day();
    let h = cfg.grid.steps_per_episode;
    let stride = cfg.grid.hours_to_steps(cfg.data.train_stride_hours).max(1);
    let end = (cfg.data.train_days[1] * spd).min(series_len);
    (cfg.data.train_days[0] * spd..)
        .step_by(stride)
        .take_while(|s| s + h <= end)
        .collect()
}

/// Held-out episode starts at `eval_start_hour` of each evaluation day that fits.
pub fn evaluation_starts(cfg: &ScenarioConfig, series_len: usize) -> Vec<usize> {
    let spd = cfg.grid.steps_per_day();
    let offset = cfg.grid.hours_to_steps(cfg.data.eval_start_hour);
    (cfg.data.eval_days[0]..cfg.data.eval_days[1])
        .map(|d| d * spd + offset)
        .filter(|s| s + cfg.grid.steps_per_episode <= series_len)
        .collect()
}

// ---------------------------------------------------------------------------
// Mode arguments
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeArg {
    Uniform(PreferenceMode),
    Mixed,
}

impl ModeArg {
    pub fn label(&self) -> String {
        match self {
            ModeArg::Uniform(m) => m.label().to_string(),
            ModeArg::Mixed => "Mixed".into(),
        }
    }

    pub fn assignment(&self, cfg: &ScenarioConfig) -> Vec<PreferenceMode> {
        match self {
            ModeArg::Uniform(m) => vec![*m; cfg.roster().len()],
            ModeArg::Mixed => to_modes(&cfg.modes.mixed),
        }
    }
}

impl std::str::FromStr for ModeArg {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "m0" | "0" => Ok(ModeArg::Uniform(PreferenceMode::Mode0)),
            "m1" | "1" => Ok(ModeArg::Uniform(PreferenceMode::Mode1)),
            "m2" | "2" => Ok(ModeArg::Uniform(PreferenceMode::Mode2)),
            "mixed" => Ok(ModeArg::Mixed),
            other => Err(format!("unknown mode {other:?} (expected m0, m1, m2 or mixed)")),
        }
    }
}

pub fn parse_mode_list(s: &str) -> std::result::Result<Vec<ModeArg>, String> {
    s.split(',').map(str::parse).collect()
}

// ---------------------------------------------------------------------------
// Output helpers
// ---------------------------------------------------------------------------

/// `--out` beats the config's `out_dir`, which beats `$HEMSLAB_OUT`, then `runs`.
pub fn resolve_out_dir(flag: Option<&Path>, cfg: &ScenarioConfig) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(p) = &cfg.out_dir {
        return p.clone();
    }
    match std::env::var_os(OUT_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => PathBuf::from("runs"),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_manifest(dir: &Path, command: &str, extra: &[(&str, String)], cfg: &ScenarioConfig) -> Result<()> {
    let mut text = String::new();
    let _ = writeln!(text, "# hemslab {} run manifest", command);
    let _ = writeln!(text, "# version = {}", env!("CARGO_PKG_VERSION"));
    for (k, v) in extra {
        let _ = writeln!(text, "# {k} = {v}");
    }
    text.push_str(&cfg.to_toml());
    write_text(&dir.join(MANIFEST_FILE), &text)
}

/// Long format, one row per appliance per step:
/// `step,timestamp,price,appliance_id,action,k,power_kw,reward,T_in,soc,mode`.
pub fn write_trace_csv(path: &Path, grid: &TimeGrid, runs: &[(String, &EpisodeTrace)]) -> Result<()> {
    let mut out = String::from("step,timestamp,price,appliance_id,action,k,power_kw,reward,T_in,soc,mode\n");
    for (label, trace) in runs {
        for r in &trace.records {
            let soc = r.soc.map(|s| s.to_string()).unwrap_or_default();
            let stamp = grid.format_timestamp(r.abs_step);
            let n_sa = r.reward.shiftable.len();
            for (i, id) in trace.appliance_ids.iter().enumerate() {
                let reward = match i.cmp(&n_sa) {
                    std::cmp::Ordering::Less => r.reward.shiftable[i],
                    std::cmp::Ordering::Equal => r.reward.hvac,
                    std::cmp::Ordering::Greater => r.reward.ev,
                };
                let _ = writeln!(
                    out,
                    "{},{stamp},{},{id},{},{},{},{reward},{},{soc},{label}",
                    r.step,
                    r.price,
                    u8::from(r.action[i]),
                    u8::from(r.k[i]),
                    r.power_kw[i],
                    r.t_in_c,
                );
            }
        }
    }
    write_text(path, &out)
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub curve: Vec<CurvePoint>,
    pub checkpoint: PathBuf,
    pub out_dir: PathBuf,
}

pub fn cmd_train(cfg: &ScenarioConfig, out: &Path, quiet: bool) -> Result<TrainReport> {
    let scenario = build_scenario(cfg)?;
    let starts = training_starts(cfg, scenario.len());
    if starts.is_empty() {
        return Err(Error::Config(vec![format!(
            "data.train_days: no {}-step episode fits in days {:?}",
            cfg.grid.steps_per_episode, cfg.data.train_days
        )]));
    }
    ensure_dir(out)?;
    let source = EpisodeSource {
        starts,
        modes: cfg.training_modes(),
    };
    let mut env = Environment::new(&scenario, cfg.seed);
    let total = cfg.training.episodes;
    let every = (total / 20).max(1);
    let outcome = train_with(&mut env, &cfg.training, &source, cfg.seed, |p, _| {
        if !quiet && ((p.episode + 1) % every == 0 || p.episode + 1 == total) {
            eprintln!(
                "episode {:>5}/{total}  epsilon {:.3}  reward {:>10.3}",
                p.episode + 1,
                p.epsilon,
                p.cum_reward
            );
        }
    })?;
    write_curve_csv(out.join(CURVE_FILE), &outcome.curve)?;
    let checkpoint = out.join(CHECKPOINT_FILE);
    outcome.agent.checkpoint().save(&checkpoint)?;
    write_manifest(out, "train", &[("checkpoint", checkpoint.display().to_string())], cfg)?;
    Ok(TrainReport {
        curve: outcome.curve,
        checkpoint,
        out_dir: out.to_path_buf(),
    })
}

fn load_agent_checkpoint(path: &Path, scenario: &Scenario, cfg: &ScenarioConfig) -> Result<Checkpoint> {
    let arch = cfg
        .training
        .architecture(scenario.roster.observation_len(), scenario.roster.action_count());
    Checkpoint::load_for(path, arch)
}

fn check_start(start: usize, scenario: &Scenario) -> Result<()> {
    let end = start + scenario.grid.steps_per_episode;
    if end > scenario.len() {
        return Err(Error::Bounds {
            start,
            end,
            len: scenario.len(),
        });
    }
    Ok(())
}

/// One column pair of the cost table.
#[derive(Debug, Clone)]
pub struct ModeCosts {
    pub label: String,
    pub agent: crate::env::CostBreakdown,
    pub oracle: OracleSchedule,
}

#[derive(Debug, Clone)]
pub struct EvaluateReport {
    pub start: usize,
    pub columns: Vec<ModeCosts>,
}

pub fn cmd_evaluate(
    cfg: &ScenarioConfig,
    checkpoint: &Path,
    modes: &[ModeArg],
    start: Option<usize>,
    out: &Path,
) -> Result<EvaluateReport> {
    let scenario = build_scenario(cfg)?;
    let ck = load_agent_checkpoint(checkpoint, &scenario, cfg)?;
    let start = match start {
        Some(s) => s,
        None => *evaluation_starts(cfg, scenario.len())
            .first()
            .ok_or_else(|| Error::Config(vec!["data.eval_days: no evaluation episode fits the data".into()]))?,
    };
    check_start(start, &scenario)?;
    ensure_dir(out)?;
    let mut env = Environment::new(&scenario, cfg.seed);
    let mut columns = Vec::new();
    let mut traces = Vec::new();
    for m in modes {
        let assignment = m.assignment(cfg);
        let eval = evaluate(&ck.network, &mut env, start, &ModeSelection::Fixed(assignment.clone()))?;
        let plan = scenario.plan(start, &assignment)?;
        let oracle = oracle_total_cost_with(&scenario, &plan, &cfg.oracle)?;
        columns.push(ModeCosts {
            label: m.label(),
            agent: eval.costs,
            oracle,
        });
        traces.push((m.label(), eval.trace));
    }
    let named: Vec<(String, &EpisodeTrace)> = traces.iter().map(|(l, t)| (l.clone(), t)).collect();
    write_trace_csv(&out.join(TRACE_FILE), &scenario.grid, &named)?;
    write_text(&out.join(COSTS_FILE), &cost_table(&columns))?;
    if let Some(last) = columns.last() {
        write_oracle_csv(out.join(ORACLE_FILE), &last.oracle)?;
    }
    write_manifest(
        out,
        "evaluate",
        &[
            ("checkpoint", checkpoint.display().to_string()),
            ("start", start.to_string()),
            ("modes", modes.iter().map(ModeArg::label).collect::<Vec<_>>().join(",")),
        ],
        cfg,
    )?;
    Ok(EvaluateReport { start, columns })
}

/// Per-appliance table with one agent and one oracle column per mode.
pub fn cost_table(columns: &[ModeCosts]) -> String {
    let mut out = String::from("appliance");
    for c in columns {
        let _ = write!(out, ",{0},{0} (oracle)", c.label);
    }
    out.push('\n');
    let Some(first) = columns.first() else {
        return out;
    };
    for (i, (id, _)) in first.agent.per_appliance.iter().enumerate() {
        out.push_str(id);
        for c in columns {
            let _ = write!(out, ",{},{}", c.agent.per_appliance[i].1, c.oracle.costs.per_appliance[i].1);
        }
        out.push('\n');
    }
    out.push_str("Total");
    for c in columns {
        let _ = write!(out, ",{},{}", c.agent.total, c.oracle.costs.total);
    }
    out.push('\n');
    out
}

#[derive(Debug, Clone)]
pub struct CompareReport {
    pub starts: Vec<usize>,
    pub agent_costs: Vec<f64>,
    pub oracle_costs: Vec<f64>,
    pub agent_cost: f64,
    pub oracle_cost: f64,
    pub agent_time_s: f64,
    pub oracle_time_s: f64,
    pub relative_gap: f64,
}

pub fn relative_gap(agent: f64, oracle: f64) -> f64 {
    if agent == oracle {
        0.0
    } else {
        (agent - oracle) / oracle
    }
}

pub fn cmd_compare(
    cfg: &ScenarioConfig,
    checkpoint: &Path,
    mode: ModeArg,
    start: Option<usize>,
    out: &Path,
) -> Result<CompareReport> {
    let scenario = build_scenario(cfg)?;
    let ck = load_agent_checkpoint(checkpoint, &scenario, cfg)?;
    let starts = match start {
        Some(s) => vec![s],
        None => evaluation_starts(cfg, scenario.len()),
    };
    if starts.is_empty() {
        return Err(Error::Config(vec!["data.eval_days: no evaluation episode fits the data".into()]));
    }
    for &s in &starts {
        check_start(s, &scenario)?;
    }
    ensure_dir(out)?;
    let assignment = mode.assignment(cfg);
    let modes = ModeSelection::Fixed(assignment.clone());
    let mut env = Environment::new(&scenario, cfg.seed);
    let mut report = CompareReport {
        starts: starts.clone(),
        agent_costs: Vec::new(),
        oracle_costs: Vec::new(),
        agent_cost: 0.0,
        oracle_cost: 0.0,
        agent_time_s: 0.0,
        oracle_time_s: 0.0,
        relative_gap: 0.0,
    };
    let mut first_oracle = None;
    for &s in &starts {
        let t0 = Instant::now();
        let eval = evaluate(&ck.network, &mut env, s, &modes)?;
        report.agent_time_s += t0.elapsed().as_secs_f64();
        let t0 = Instant::now();
        let plan = scenario.plan(s, &assignment)?;
        let oracle = oracle_total_cost_with(&scenario, &plan, &cfg.oracle)?;
        report.oracle_time_s += t0.elapsed().as_secs_f64();
        report.agent_costs.push(eval.costs.total);
        report.oracle_costs.push(oracle.costs.total);
        first_oracle.get_or_insert(oracle);
    }
    report.agent_cost = report.agent_costs.iter().sum();
    report.oracle_cost = report.oracle_costs.iter().sum();
    report.relative_gap = relative_gap(report.agent_cost, report.oracle_cost);
    let csv = format!(
        "algorithm,cost,decision_time_s,relative_gap\nagent,{},{},{}\noracle,{},{},0\n",
        report.agent_cost, report.agent_time_s, report.relative_gap, report.oracle_cost, report.oracle_time_s
    );
    write_text(&out.join(COMPARE_FILE), &csv)?;
    if let Some(o) = &first_oracle {
        write_oracle_csv(out.join(ORACLE_FILE), o)?;
    }
    write_manifest(
        out,
        "compare",
        &[
            ("checkpoint", checkpoint.display().to_string()),
            ("modes", mode.label()),
            ("starts", format!("{starts:?}")),
        ],
        cfg,
    )?;
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub prices: PriceSeries,
    pub weather: WeatherSeries,
    pub events: ApplianceEventLog,
}

fn gaussian(x: f64, width: f64) -> f64 {
    (-0.5 * (x / width).powi(2)).exp()
}

/// Seeded synthetic prices ($/kWh, quantised to $0.01/MWh), outdoor
/// temperatures and activation events.
pub fn generate_synthetic(cfg: &ScenarioConfig) -> Result<SynthData> {
    let s = &cfg.synth;
    let grid = &cfg.grid;
    let spd = grid.steps_per_day();
    let sph = grid.steps_per_hour() as f64;
    let n = s.days * spd;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = |sd: f64| Normal::new(0.0, sd).map_err(|e| Error::Parameter(e.to_string()));
    let (p_day, p_noise) = (normal(s.price_daily_sd)?, normal(s.price_noise_sd)?);
    let (t_day, t_noise) = (normal(s.temp_daily_sd)?, normal(s.temp_noise_sd)?);
    let tau = std::f64::consts::TAU;

    let mut prices = Vec::with_capacity(n);
    let mut temps = Vec::with_capacity(n);
    for _day in 0..s.days {
        let level = s.price_base + p_day.sample(&mut rng);
        let warm = s.temp_mean_c + t_day.sample(&mut rng);
        for k in 0..spd {
            let hour = k as f64 / sph;
            let diurnal = (tau * (hour - 9.0) / 24.0).sin();
            let evening = gaussian(hour - s.price_evening_peak_hour, s.price_evening_peak_width_hours);
            let mwh = (level + s.price_diurnal_amplitude * diurnal + s.price_evening_peak * evening
                + p_noise.sample(&mut rng))
            .max(s.price_floor);
            prices.push((mwh * 100.0).round() / 100.0 * 1e-3);
            let t = warm + s.temp_amplitude_c * (tau * (hour - s.temp_peak_hour + 6.0) / 24.0).sin()
                + t_noise.sample(&mut rng);
            temps.push((t * 100.0).round() / 100.0);
        }
    }

    let roster = cfg.roster();
    let rules = roster.event_rules(&cfg.modes.windows, grid, Some(n));
    let mut events = Vec::new();
    for act in &s.activations {
        let occupancy = rules.occupancy_steps.get(&act.appliance).copied().unwrap_or(1);
        let mut last: Option<usize> = None;
        for day in 0..s.days {
            let fire = rng.random::<f64>() < act.probability;
            let jitter = if act.spread_hours > 0.0 {
                rng.random_range(-act.spread_hours..=act.spread_hours)
            } else {
                0.0
            };
            if !fire {
                continue;
            }
            let step = (day * spd) as f64 + ((act.hour + jitter) * sph).round();
            if step < 0.0 || step as usize >= n {
                continue;
            }
            let step = step as usize;
            if last.is_some_and(|l| step < l + occupancy) {
                continue;
            }
            events.push(ApplianceEvent {
                appliance_id: act.appliance.clone(),
                step,
            });
            last = Some(step);
        }
    }
    Ok(SynthData {
        prices: PriceSeries::new(prices)?,
        weather: WeatherSeries::new(temps)?,
        events: ApplianceEventLog::new(events),
    })
}

#[derive(Debug, Clone)]
pub struct SynthReport {
    pub prices: PathBuf,
    pub weather: PathBuf,
    pub events: PathBuf,
    pub rows: usize,
}

/// Writes generated series as `prices.csv`, `weather.csv` and `events.csv`
/// under `out`, then reloads them through the ingestion path.
pub fn cmd_synth(cfg: &ScenarioConfig, out: &Path) -> Result<SynthReport> {
    let data = generate_synthetic(cfg)?;
    ensure_dir(out)?;
    let report = SynthReport {
        prices: out.join("prices.csv"),
        weather: out.join("weather.csv"),
        events: out.join("events.csv"),
        rows: data.prices.len(),
    };
    write_price_csv(&report.prices, &cfg.grid, &data.prices)?;
    write_weather_csv(&report.weather, &cfg.grid, &data.weather)?;
    write_events_csv(&report.events, &data.events)?;

    let mut written = cfg.clone();
    written.data.prices = report.prices.clone();
    written.data.weather = report.weather.clone();
    written.data.events = report.events.clone();
    build_scenario(&written)?;
    write_manifest(out, "synth", &[], &written)?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// Argument parsing
// ---------------------------------------------------------------------------

#[derive(Debug, Parser)]
#[command(name = "hemslab", version, about = "Multi-mode home energy management with dueling double DQN")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Scenario configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Override the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run directory (default: config out_dir, then $HEMSLAB_OUT, then ./runs).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train an agent and write curve.csv, checkpoint.bin and manifest.txt.
    Train {
        #[command(flatten)]
        common: Common,
        /// Override the number of training episodes.
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long, short)]
        quiet: bool,
    },
    /// Greedy rollout and the per-appliance cost table.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to load (default: <run dir>/checkpoint.bin).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Comma-separated mode assignments: m0, m1, m2, mixed.
        #[arg(long, default_value = "m0,m1,m2", value_delimiter = ',')]
        modes: Vec<ModeArg>,
        /// Absolute start step (default: first evaluation day).
        #[arg(long)]
        start: Option<usize>,
    },
    /// Agent versus oracle cost, gap and decision time.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "m2")]
        modes: ModeArg,
        /// Single absolute start step (default: every evaluation day).
        #[arg(long)]
        start: Option<usize>,
    },
    /// Generate a synthetic scenario into the run directory.
    Synth {
        #[command(flatten)]
        common: Common,
    },
}

fn prepare(common: &Common) -> Result<(ScenarioConfig, PathBuf)> {
    let mut cfg = load_config(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let out = resolve_out_dir(common.out.as_deref(), &cfg);
    Ok((cfg, out))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            common,
            episodes,
            quiet,
        } => {
            let (mut cfg, out) = prepare(&common)?;
            if let Some(e) = episodes {
                cfg.training.episodes = e;
                cfg.validate()?;
            }
            let r = cmd_train(&cfg, &out, quiet)?;
            let tail = &r.curve[r.curve.len().saturating_sub(50)..];
            let mean = tail.iter().map(|p| p.cum_reward).sum::<f64>() / tail.len() as f64;
            println!("trained {} episodes; mean reward of last {}: {mean:.3}", r.curve.len(), tail.len());
            println!("wrote {}", out.display());
        }
        Command::Evaluate {
            common,
            checkpoint,
            modes,
            start,
        } => {
            let (cfg, out) = prepare(&common)?;
            let ck = checkpoint.unwrap_or_else(|| out.join(CHECKPOINT_FILE));
            let r = cmd_evaluate(&cfg, &ck, &modes, start, &out)?;
            print!("{}", cost_table(&r.columns));
        }
        Command::Compare {
            common,
            checkpoint,
            modes,
            start,
        } => {
            let (cfg, out) = prepare(&common)?;
            let ck = checkpoint.unwrap_or_else(|| out.join(CHECKPOINT_FILE));
            let r = cmd_compare(&cfg, &ck, modes, start, &out)?;
            println!(
                "agent  {:.4} ({:.4} s)\noracle {:.4} ({:.4} s)\ngap    {:.2}% over {} episode(s)",
                r.agent_cost,
                r.agent_time_s,
                r.oracle_cost,
                r.oracle_time_s,
                100.0 * r.relative_gap,
                r.starts.len()
            );
        }
        Command::Synth { common } => {
            let (cfg, out) = prepare(&common)?;
            let r = cmd_synth(&cfg, &out)?;
            println!("wrote {} rows per series to {}", r.rows, out.display());
        }
    }
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
