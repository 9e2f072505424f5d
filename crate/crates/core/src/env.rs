//! The household as a Markov decision process.
//!
//! A [`Scenario`] bundles the data series with the appliance roster. Each
//! episode is first resolved into an [`EpisodePlan`] (which events fall into
//! the horizon, their windows under the chosen modes, and the price features),
//! and the [`Environment`] then steps through that plan. The same plan feeds
//! the scheduling oracle, so both see identical instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::appliances::{
    default_thermostat, ev_backup_control, ev_step, hvac_power, hvac_required_heat_rate, hvac_step, mode_band,
    sa_backup_control, sa_step, EvParams, EvState, HvacParams, HvacState, ModeWindows, PreferenceMode,
    ShiftableApplianceParams, ShiftableApplianceState,
};
use crate::error::{Error, Result};
use crate::timeseries::{
    forward_average_price_clamped, ApplianceEventLog, EventRules, PriceSeries, TimeGrid, WeatherSeries,
};

/// Upper bound of the temperature normalization range (°C); the lower bound is 0.
pub const TEMP_NORM_MAX_C: f64 = 45.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PenaltyFactors {
    pub zeta_sa: f64,
    pub zeta_ca: f64,
    pub zeta_ev: f64,
}

impl Default for PenaltyFactors {
    fn default() -> Self {
        Self {
            zeta_sa: -0.1,
            zeta_ca: -5.0,
            zeta_ev: -0.1,
        }
    }
}

impl PenaltyFactors {
    pub fn validate(&self) -> Result<()> {
        if self.zeta_sa > 0.0 || self.zeta_ca > 0.0 || self.zeta_ev > 0.0 {
            return Err(Error::Parameter("penalty factors must be <= 0".into()));
        }
        Ok(())
    }
}

/// Appliances controlled by the agent, in action-bit order: shiftable loads,
/// then HVAC, then the EV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Roster {
    pub shiftable: Vec<ShiftableApplianceParams>,
    pub hvac: HvacParams,
    pub ev: Option<EvParams>,
}

impl Default for Roster {
    fn default() -> Self {
        Self {
            shiftable: vec![
                ShiftableApplianceParams {
                    id: "DW".into(),
                    rated_power_kw: 1.2,
                    duration_steps: 4,
                },
                ShiftableApplianceParams {
                    id: "WM".into(),
                    rated_power_kw: 0.5,
                    duration_steps: 3,
                },
            ],
            hvac: HvacParams::default(),
            ev: Some(EvParams::default()),
        }
    }
}

pub const HVAC_ID: &str = "HVAC";

impl Roster {
    pub fn validate(&self) -> Result<()> {
        for sa in &self.shiftable {
            sa.validate()?;
        }
        self.hvac.validate()?;
        if let Some(ev) = &self.ev {
            ev.validate()?;
        }
        let ids = self.appliance_ids();
        for (i, id) in ids.iter().enumerate() {
            if ids[..i].contains(id) {
                return Err(Error::Parameter(format!("duplicate appliance id {id:?}")));
            }
        }
        Ok(())
    }

    /// Number of controllable appliances (= action bits).
    pub fn len(&self) -> usize {
        self.shiftable.len() + 1 + usize::from(self.ev.is_some())
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn hvac_index(&self) -> usize {
        self.shiftable.len()
    }

    pub fn ev_index(&self) -> Option<usize> {
        self.ev.as_ref().map(|_| self.shiftable.len() + 1)
    }

    pub fn appliance_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.shiftable.iter().map(|s| s.id.clone()).collect();
        ids.push(HVAC_ID.into());
        if let Some(ev) = &self.ev {
            ids.push(ev.id.clone());
        }
        ids
    }

    pub fn action_count(&self) -> usize {
        1 << self.len()
    }

    pub fn observation_len(&self) -> usize {
        4 * self.shiftable.len() + 5 + if self.ev.is_some() { 4 } else { 0 } + 1
    }

    /// Rules for validating an event file against this roster: an event
    /// occupies its appliance for the widest window any mode may grant.
    pub fn event_rules(&self, windows: &ModeWindows, grid: &TimeGrid, series_len: Option<usize>) -> EventRules {
        let mut rules = EventRules {
            series_len,
            ..EventRules::default()
        };
        for sa in &self.shiftable {
            let span = windows.sa_window_steps(PreferenceMode::Mode2, sa.duration_steps, grid);
            rules.occupancy_steps.insert(sa.id.clone(), span);
        }
        if let Some(ev) = &self.ev {
            let req = ev.required_steps(ev.soc_min, grid.dt_hours());
            rules
                .occupancy_steps
                .insert(ev.id.clone(), windows.ev_window_steps(PreferenceMode::Mode2, req, grid));
        }
        rules
    }
}

/// Everything one experiment needs besides the learning hyperparameters.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub grid: TimeGrid,
    pub prices: PriceSeries,
    pub weather: WeatherSeries,
    pub events: ApplianceEventLog,
    pub roster: Roster,
    pub windows: ModeWindows,
    pub penalties: PenaltyFactors,
    /// Upper end of the price normalization range ($/kWh). Defaults to the
    /// series maximum; callers may narrow it to a training span.
    pub price_scale: f64,
}

impl Scenario {
    pub fn new(
        grid: TimeGrid,
        prices: PriceSeries,
        weather: WeatherSeries,
        events: ApplianceEventLog,
        roster: Roster,
        windows: ModeWindows,
        penalties: PenaltyFactors,
    ) -> Result<Self> {
        grid.validate()?;
        roster.validate()?;
        windows.validate()?;
        penalties.validate()?;
        if prices.len() != weather.len() {
            return Err(Error::Parameter(format!(
                "price series has {} steps but weather has {}",
                prices.len(),
                weather.len()
            )));
        }
        if prices.len() < grid.steps_per_episode {
            return Err(Error::Parameter(format!(
                "series of {} steps shorter than one episode ({})",
                prices.len(),
                grid.steps_per_episode
            )));
        }
        let price_scale = prices.max().max(f64::MIN_POSITIVE);
        Ok(Self {
            grid,
            prices,
            weather,
            events,
            roster,
            windows,
            penalties,
            price_scale,
        })
    }

    pub fn len(&self) -> usize {
        self.prices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prices.is_empty()
    }

    /// Resolves one episode starting at absolute step `start`.
    pub fn plan(&self, start: usize, modes: &[PreferenceMode]) -> Result<EpisodePlan> {
        EpisodePlan::build(self, start, modes)
    }
}

/// How modes are assigned at reset.
#[derive(Debug, Clone, PartialEq)]
pub enum ModeSelection {
    /// One mode per appliance in roster order.
    Fixed(Vec<PreferenceMode>),
    /// Every appliance draws a mode uniformly at random.
    Sample,
}

impl ModeSelection {
    pub fn uniform(mode: PreferenceMode, roster: &Roster) -> Self {
        ModeSelection::Fixed(vec![mode; roster.len()])
    }
}

/// One activation of a shiftable load, in episode-relative steps.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftableJob {
    pub t_a: usize,
    /// Exclusive window end.
    pub t_b: usize,
    pub duration: usize,
    pub power_kw: f64,
    pub z: f64,
}

/// One EV plug-in session, in episode-relative steps.
#[derive(Debug, Clone, PartialEq)]
pub struct EvSession {
    pub t_arr: usize,
    /// Exclusive departure step.
    pub t_dep: usize,
    pub required_steps: usize,
    pub power_kw: f64,
    pub soc_arrival: f64,
    pub z: f64,
}

/// A fully resolved episode instance.
#[derive(Debug, Clone)]
pub struct EpisodePlan {
    pub start: usize,
    pub horizon: usize,
    pub dt_hours: f64,
    pub modes: Vec<PreferenceMode>,
    pub appliance_ids: Vec<String>,
    pub prices: Vec<f64>,
    pub t_out: Vec<f64>,
    /// Per shiftable appliance, its jobs in time order.
    pub shiftable_jobs: Vec<Vec<ShiftableJob>>,
    pub ev_sessions: Vec<EvSession>,
    pub hvac: HvacParams,
    pub hvac_band: (f64, f64),
    pub hvac_mode: PreferenceMode,
    /// Default-thermostat band, used whenever the HVAC is in Mode 0.
    pub hvac_default_band: (f64, f64),
    pub hvac_z: Vec<f64>,
    pub t_in_initial: f64,
}

impl EpisodePlan {
    fn build(sc: &Scenario, start: usize, modes: &[PreferenceMode]) -> Result<Self> {
        let horizon = sc.grid.steps_per_episode;
        let end = start + horizon;
        if end > sc.len() {
            return Err(Error::Bounds {
                start,
                end,
                len: sc.len(),
            });
        }
        let roster = &sc.roster;
        if modes.len() != roster.len() {
            return Err(Error::Dimension {
                expected: roster.len(),
                actual: modes.len(),
            });
        }
        let dt = sc.grid.dt_hours();
        let z_over = |rel: usize, len: usize| forward_average_price_clamped(&sc.prices, start + rel, len);

        let mut shiftable_jobs = Vec::with_capacity(roster.shiftable.len());
        for (i, sa) in roster.shiftable.iter().enumerate() {
            let d = sa.duration_steps;
            let w = sc.windows.sa_window_steps(modes[i], d, &sc.grid);
            let mut jobs: Vec<ShiftableJob> = Vec::new();
            for abs in sc.events.for_appliance(&sa.id, start, end) {
                let t_a = abs - start;
                let t_b = (t_a + w).min(horizon);
                if t_b - t_a < d || jobs.last().is_some_and(|j| t_a < j.t_b) {
                    continue;
                }
                jobs.push(ShiftableJob {
                    t_a,
                    t_b,
                    duration: d,
                    power_kw: sa.rated_power_kw,
                    z: z_over(t_a, t_b - t_a)?,
                });
            }
            shiftable_jobs.push(jobs);
        }

        let mut ev_sessions = Vec::new();
        if let (Some(ev), Some(idx)) = (&roster.ev, roster.ev_index()) {
            let required = ev.required_steps(ev.soc_min, dt);
            let w = sc.windows.ev_window_steps(modes[idx], required, &sc.grid);
            for abs in sc.events.for_appliance(&ev.id, start, end) {
                let t_arr = abs - start;
                let t_dep = (t_arr + w).min(horizon);
                if t_dep - t_arr < required || ev_sessions.last().is_some_and(|s: &EvSession| t_arr < s.t_dep) {
                    continue;
                }
                ev_sessions.push(EvSession {
                    t_arr,
                    t_dep,
                    required_steps: required,
                    power_kw: ev.charge_power_kw,
                    soc_arrival: ev.soc_min,
                    z: z_over(t_arr, t_dep - t_arr)?,
                });
            }
        }

        let hvac_mode = modes[roster.hvac_index()];
        let prices = sc.prices.values()[start..end].to_vec();
        let hvac_z = match sc.windows.hvac_price_window_steps(hvac_mode, &sc.grid) {
            None => prices.clone(),
            Some(w) => (0..horizon).map(|t| z_over(t, w)).collect::<Result<_>>()?,
        };

        Ok(Self {
            start,
            horizon,
            dt_hours: dt,
            modes: modes.to_vec(),
            appliance_ids: roster.appliance_ids(),
            t_out: sc.weather.values()[start..end].to_vec(),
            prices,
            shiftable_jobs,
            ev_sessions,
            hvac: roster.hvac.clone(),
            hvac_band: mode_band(hvac_mode, roster.hvac.t_set_c, &sc.windows),
            hvac_mode,
            hvac_default_band: mode_band(PreferenceMode::Mode0, roster.hvac.t_set_c, &sc.windows),
            hvac_z,
            t_in_initial: roster.hvac.t_set_c,
        })
    }

    pub fn has_ev(&self) -> bool {
        self.appliance_ids.len() > self.shiftable_jobs.len() + 1
    }
}

/// Agent decision: one bit per appliance in roster order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct JointAction {
    index: usize,
    width: usize,
}

impl JointAction {
    pub fn from_index(index: usize, width: usize) -> Result<Self> {
        if width >= usize::BITS as usize || index >= 1 << width {
            return Err(Error::Dimension {
                expected: 1 << width.min(62),
                actual: index,
            });
        }
        Ok(Self { index, width })
    }

    pub fn from_bits(bits: &[bool]) -> Self {
        let index = bits.iter().enumerate().fold(0, |acc, (i, &b)| acc | (usize::from(b) << i));
        Self {
            index,
            width: bits.len(),
        }
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn bit(&self, i: usize) -> bool {
        (self.index >> i) & 1 == 1
    }

    pub fn bits(&self) -> Vec<bool> {
        (0..self.width).map(|i| self.bit(i)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RewardBreakdown {
    pub shiftable: Vec<f64>,
    pub hvac: f64,
    pub ev: f64,
    pub total: f64,
}

impl RewardBreakdown {
    fn finish(shiftable: Vec<f64>, hvac: f64, ev: f64) -> Self {
        let total = shiftable.iter().sum::<f64>() + hvac + ev;
        Self {
            shiftable,
            hvac,
            ev,
            total,
        }
    }
}

/// Which branch of the HVAC reward fired.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ComfortCase {
    InBand,
    BelowBand,
    AboveBand,
}

/// Everything observable about one executed step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub abs_step: usize,
    pub price: f64,
    pub observation: Vec<f64>,
    pub action: Vec<bool>,
    /// Executed controls after backup filtering, per appliance.
    pub k: Vec<bool>,
    pub power_kw: Vec<f64>,
    pub reward: RewardBreakdown,
    pub comfort: ComfortCase,
    pub t_in_c: f64,
    pub t_out_c: f64,
    /// Battery SoC if plugged in during this step.
    pub soc: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpisodeTrace {
    pub start: usize,
    pub appliance_ids: Vec<String>,
    pub records: Vec<StepRecord>,
}

impl EpisodeTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn prices(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.price).collect()
    }

    pub fn power_series(&self, appliance: usize) -> Vec<f64> {
        self.records.iter().map(|r| r.power_kw[appliance]).collect()
    }

    pub fn total_reward(&self) -> f64 {
        self.records.iter().map(|r| r.reward.total).sum()
    }

    /// Steps whose indoor temperature left the comfort band.
    pub fn comfort_violations(&self) -> usize {
        self.records.iter().filter(|r| r.comfort != ComfortCase::InBand).count()
    }
}

/// Energy cost `Σ price · power · dt`, summed in time order.
pub fn energy_cost(prices: &[f64], power_kw: &[f64], dt_hours: f64) -> f64 {
    prices
        .iter()
        .zip(power_kw)
        .fold(0.0, |acc, (&p, &kw)| acc + p * kw * dt_hours)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostBreakdown {
    pub per_appliance: Vec<(String, f64)>,
    pub total: f64,
}

impl CostBreakdown {
    pub fn from_parts(per_appliance: Vec<(String, f64)>) -> Self {
        let total = per_appliance.iter().fold(0.0, |acc, (_, c)| acc + c);
        Self { per_appliance, total }
    }

    pub fn get(&self, id: &str) -> Option<f64> {
        self.per_appliance.iter().find(|(i, _)| i == id).map(|(_, c)| *c)
    }
}

/// Electricity cost of a trace, per appliance and in total.
pub fn episode_cost(trace: &EpisodeTrace, dt_hours: f64) -> CostBreakdown {
    let prices = trace.prices();
    CostBreakdown::from_parts(
        trace
            .appliance_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), energy_cost(&prices, &trace.power_series(i), dt_hours)))
            .collect(),
    )
}

#[derive(Debug, Clone)]
pub struct StepResult {
    pub observation: Vec<f64>,
    pub reward: RewardBreakdown,
    pub terminal: bool,
    pub record: StepRecord,
}

/// Stateful single-household simulator.
pub struct Environment<'s> {
    scenario: &'s Scenario,
    rng: ChaCha8Rng,
    plan: Option<EpisodePlan>,
    t: usize,
    shiftable: Vec<ShiftableApplianceState>,
    next_job: Vec<usize>,
    hvac: Option<HvacState>,
    ev: EvState,
    next_session: usize,
    terminal: bool,
}

impl<'s> Environment<'s> {
    pub fn new(scenario: &'s Scenario, seed: u64) -> Self {
        let n = scenario.roster.shiftable.len();
        Self {
            scenario,
            rng: ChaCha8Rng::seed_from_u64(seed),
            plan: None,
            t: 0,
            shiftable: vec![ShiftableApplianceState::idle(); n],
            next_job: vec![0; n],
            hvac: None,
            ev: EvState::absent(),
            next_session: 0,
            terminal: true,
        }
    }

    pub fn scenario(&self) -> &'s Scenario {
        self.scenario
    }

    pub fn plan(&self) -> Option<&EpisodePlan> {
        self.plan.as_ref()
    }

    pub fn step_index(&self) -> usize {
        self.t
    }

    pub fn observation_len(&self) -> usize {
        self.scenario.roster.observation_len()
    }

    pub fn action_count(&self) -> usize {
        self.scenario.roster.action_count()
    }

    pub fn is_terminal(&self) -> bool {
        self.terminal
    }

    pub fn reset(&mut self, start: usize, modes: &ModeSelection) -> Result<Vec<f64>> {
        let roster = &self.scenario.roster;
        let modes = match modes {
            ModeSelection::Fixed(m) => m.clone(),
            ModeSelection::Sample => (0..roster.len())
                .map(|_| PreferenceMode::ALL[self.rng.random_range(0..3)])
                .collect(),
        };
        let plan = self.scenario.plan(start, &modes)?;
        self.reset_with_plan(plan)
    }

    /// Starts an episode from an already resolved plan.
    pub fn reset_with_plan(&mut self, plan: EpisodePlan) -> Result<Vec<f64>> {
        let n = self.scenario.roster.shiftable.len();
        if plan.shiftable_jobs.len() != n {
            return Err(Error::Dimension {
                expected: n,
                actual: plan.shiftable_jobs.len(),
            });
        }
        self.t = 0;
        self.shiftable = vec![ShiftableApplianceState::idle(); n];
        self.next_job = vec![0; n];
        self.ev = EvState::absent();
        self.next_session = 0;
        self.hvac = Some(HvacState::new(plan.t_in_initial, plan.t_out[0], plan.hvac_band, plan.hvac_z[0])?);
        self.plan = Some(plan);
        self.terminal = false;
        self.activate_due()?;
        Ok(self.observe())
    }

    fn activate_due(&mut self) -> Result<()> {
        let plan = self.plan.as_ref().expect("episode in progress");
        let t = self.t;
        for (i, jobs) in plan.shiftable_jobs.iter().enumerate() {
            if let Some(job) = jobs.get(self.next_job[i]) {
                if job.t_a == t {
                    self.shiftable[i] = ShiftableApplianceState::activate(job.t_a, job.t_b, job.duration, job.z)?;
                    self.next_job[i] += 1;
                }
            }
        }
        if let (Some(session), Some(ev)) = (plan.ev_sessions.get(self.next_session), &self.scenario.roster.ev) {
            if session.t_arr == t {
                self.ev = EvState::arrive(
                    session.t_arr,
                    session.t_dep,
                    session.soc_arrival,
                    session.z,
                    ev,
                    plan.dt_hours,
                )?;
                self.next_session += 1;
            }
        }
        let hvac = self.hvac.as_mut().expect("episode in progress");
        hvac.t_out_c = plan.t_out[t];
        hvac.z = plan.hvac_z[t];
        Ok(())
    }

    fn observe(&self) -> Vec<f64> {
        let sc = self.scenario;
        let plan = self.plan.as_ref().expect("episode in progress");
        let scale = sc.price_scale;
        let price = |p: f64| (p / scale).clamp(0.0, 1.0);
        let temp = |c: f64| (c / TEMP_NORM_MAX_C).clamp(0.0, 1.0);
        let mut obs = Vec::with_capacity(sc.roster.observation_len());
        for s in &self.shiftable {
            if s.u {
                let window = (s.t_b - s.t_a) as f64;
                obs.extend([1.0, s.w, (s.x as f64 / window).clamp(0.0, 1.0), price(s.z)]);
            } else {
                obs.extend([0.0; 4]);
            }
        }
        let h = self.hvac.as_ref().expect("episode in progress");
        obs.extend([temp(h.t_in_c), temp(h.t_out_c), temp(h.t_min_c), temp(h.t_max_c), price(h.z)]);
        if sc.roster.ev.is_some() {
            if self.ev.u {
                let window = (self.ev.t_dep - self.ev.t_arr) as f64;
                obs.extend([
                    1.0,
                    self.ev.soc.clamp(0.0, 1.0),
                    (self.ev.x as f64 / window).clamp(0.0, 1.0),
                    price(self.ev.z),
                ]);
            } else {
                obs.extend([0.0; 4]);
            }
        }
        obs.push(price(plan.prices[self.t]));
        obs
    }

    pub fn step(&mut self, action: JointAction) -> Result<StepResult> {
        if self.terminal {
            return Err(Error::State("step called on a terminal environment".into()));
        }
        let sc = self.scenario;
        let roster = &sc.roster;
        if action.width != roster.len() {
            return Err(Error::Dimension {
                expected: roster.len(),
                actual: action.width,
            });
        }
        let observation = self.observe();
        let plan = self.plan.as_ref().expect("episode in progress");
        let t = self.t;
        let rho = plan.prices[t];
        let dt = plan.dt_hours;
        let zeta = &sc.penalties;
        let mut k = Vec::with_capacity(roster.len());
        let mut power = Vec::with_capacity(roster.len());

        let mut r_sa = Vec::with_capacity(roster.shiftable.len());
        for (i, params) in roster.shiftable.iter().enumerate() {
            let state = &self.shiftable[i];
            let a = action.bit(i);
            let ki = sa_backup_control(state, a, t);
            let p = if ki { params.rated_power_kw } else { 0.0 };
            let mismatch = if a != ki { zeta.zeta_sa } else { 0.0 };
            r_sa.push((state.z - rho) * p + mismatch);
            self.shiftable[i] = sa_step(state, ki, t)?.state;
            k.push(ki);
            power.push(p);
        }

        let hvac = self.hvac.as_ref().expect("episode in progress");
        let t_out = plan.t_out[t];
        let (on, z_hvac) = if plan.hvac_mode == PreferenceMode::Mode0 {
            (
                default_thermostat(hvac.t_in_c, t_out, plan.hvac_default_band, &roster.hvac, dt),
                None,
            )
        } else {
            (action.bit(roster.hvac_index()), Some(hvac.z))
        };
        let q = hvac_required_heat_rate(hvac.t_in_c, t_out, &roster.hvac, dt)?;
        let next_hvac = hvac_step(hvac, on, q, t_out, &roster.hvac, dt);
        let p_hvac = hvac_power(q, on, roster.hvac.cop);
        let t_in = next_hvac.t_in_c;
        let (comfort, r_hvac) = if t_in < next_hvac.t_min_c {
            (ComfortCase::BelowBand, (next_hvac.t_min_c - t_in) * zeta.zeta_ca)
        } else if t_in > next_hvac.t_max_c {
            (ComfortCase::AboveBand, (t_in - next_hvac.t_max_c) * zeta.zeta_ca)
        } else {
            (ComfortCase::InBand, z_hvac.map_or(0.0, |z| (z - rho) * p_hvac))
        };
        self.hvac = Some(next_hvac);
        k.push(on);
        power.push(p_hvac);

        let mut r_ev = 0.0;
        let mut soc = None;
        if let (Some(params), Some(idx)) = (&roster.ev, roster.ev_index()) {
            let a = action.bit(idx);
            let ke = ev_backup_control(&self.ev, a, t, params);
            let p = if ke { params.charge_power_kw } else { 0.0 };
            let mismatch = if a != ke { zeta.zeta_ev } else { 0.0 };
            r_ev = (self.ev.z - rho) * p + mismatch;
            let present = self.ev.u;
            let out = ev_step(&self.ev, ke, params, dt)?;
            if present {
                soc = Some(out.departed_soc.unwrap_or(out.state.soc));
            }
            self.ev = out.state;
            k.push(ke);
            power.push(p);
        }

        let reward = RewardBreakdown::finish(r_sa, r_hvac, r_ev);
        let record = StepRecord {
            step: t,
            abs_step: plan.start + t,
            price: rho,
            observation,
            action: action.bits(),
            k,
            power_kw: power,
            reward: reward.clone(),
            comfort,
            t_in_c: t_in,
            t_out_c: t_out,
            soc,
        };

        self.t += 1;
        let terminal = self.t >= plan.horizon;
        let observation = if terminal {
            self.terminal = true;
            // Terminal observation: the post-step state with the last price.
            self.t -= 1;
            let o = self.observe();
            self.t += 1;
            o
        } else {
            self.activate_due()?;
            self.observe()
        };
        Ok(StepResult {
            observation,
            reward,
            terminal,
            record,
        })
    }

    /// Runs a whole episode with a policy mapping observations to actions.
    pub fn rollout<F>(&mut self, start: usize, modes: &ModeSelection, mut policy: F) -> Result<EpisodeTrace>
    where
        F: FnMut(&[f64]) -> usize,
    {
        let obs = self.reset(start, modes)?;
        self.run_from(obs, &mut policy)
    }

    pub fn rollout_plan<F>(&mut self, plan: EpisodePlan, mut policy: F) -> Result<EpisodeTrace>
    where
        F: FnMut(&[f64]) -> usize,
    {
        let obs = self.reset_with_plan(plan)?;
        self.run_from(obs, &mut policy)
    }

    fn run_from<F>(&mut self, mut obs: Vec<f64>, policy: &mut F) -> Result<EpisodeTrace>
    where
        F: FnMut(&[f64]) -> usize,
    {
        let width = self.scenario.roster.len();
        let plan = self.plan.as_ref().expect("episode in progress");
        let mut trace = EpisodeTrace {
            start: plan.start,
            appliance_ids: plan.appliance_ids.clone(),
            records: Vec::with_capacity(plan.horizon),
        };
        loop {
            let a = JointAction::from_index(policy(&obs), width)?;
            let res = self.step(a)?;
            trace.records.push(res.record);
            if res.terminal {
                return Ok(trace);
            }
            obs = res.observation;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timeseries::ApplianceEvent;

    fn scenario(prices: Vec<f64>, temps: Vec<f64>, events: Vec<(&str, usize)>, steps: usize) -> Scenario {
        let grid = TimeGrid {
            steps_per_episode: steps,
            ..TimeGrid::default()
        };
        let events = ApplianceEventLog::new(
            events
                .into_iter()
                .map(|(id, step)| ApplianceEvent {
                    appliance_id: id.into(),
                    step,
                })
                .collect(),
        );
        Scenario::new(
            grid,
            PriceSeries::new(prices).unwrap(),
            WeatherSeries::new(temps).unwrap(),
            events,
            Roster::default(),
            ModeWindows::default(),
            PenaltyFactors::default(),
        )
        .unwrap()
    }

    fn all(mode: PreferenceMode) -> ModeSelection {
        ModeSelection::uniform(mode, &Roster::default())
    }

    #[test]
    fn reset_produces_bounded_fixed_length_observation() {
        let sc = scenario(vec![0.1; 400], vec![30.0; 400], vec![("DW", 3), ("EV", 10)], 192);
        let mut env = Environment::new(&sc, 1);
        let obs = env.reset(0, &all(PreferenceMode::Mode2)).unwrap();
        assert_eq!(obs.len(), 18);
        assert_eq!(obs.len(), sc.roster.observation_len());
        assert!(obs.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(matches!(env.reset(300, &all(PreferenceMode::Mode2)), Err(Error::Bounds { .. })));
    }

    #[test]
    fn sampled_modes_are_seeded() {
        let sc = scenario(vec![0.1; 400], vec![30.0; 400], vec![], 192);
        let draw = |seed| {
            let mut env = Environment::new(&sc, seed);
            (0..20)
                .map(|_| {
                    env.reset(0, &ModeSelection::Sample).unwrap();
                    env.plan().unwrap().modes.clone()
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(5), draw(5));
        let seen: std::collections::HashSet<_> = draw(5).into_iter().flatten().collect();
        assert_eq!(seen.len(), 3);
    }

    #[test]
    fn shiftable_reward_is_price_delta() {
        // DW activates at 0; window mean over 48 steps of 0.05 except the current 0.03.
        let mut prices = vec![0.05; 400];
        prices[0] = 0.03;
        let sc = scenario(prices, vec![23.0; 400], vec![("DW", 0)], 192);
        let mut env = Environment::new(&sc, 0);
        env.reset(0, &all(PreferenceMode::Mode1)).unwrap();
        let z = env.plan().unwrap().shiftable_jobs[0][0].z;
        // DW on, everything else off.
        let res = env.step(JointAction::from_bits(&[true, false, false, false])).unwrap();
        assert!((res.reward.shiftable[0] - (z - 0.03) * 1.2).abs() < 1e-15);
        assert_eq!(res.reward.shiftable[1], 0.0);
    }

    #[test]
    fn shiftable_reward_example_values() {
        // Uniform 0.05 except step 0 at 0.03, with a 1 kW appliance: z computed
        // over the window and r = (z - rho) * p.
        let z = 0.05;
        let rho = 0.03;
        assert!(((z - rho) * 1.0_f64 - 0.02).abs() < 1e-15);
    }

    #[test]
    fn below_band_penalty() {
        // Cold outdoor air with HVAC off drives T_in under the Mode 2 band.
        let sc = scenario(vec![0.1; 400], vec![-20.0; 400], vec![], 192);
        let mut env = Environment::new(&sc, 0);
        env.reset(0, &all(PreferenceMode::Mode2)).unwrap();
        let mut last = None;
        for _ in 0..20 {
            let r = env.step(JointAction::from_index(0, 4).unwrap()).unwrap();
            last = Some(r.record);
        }
        let rec = last.unwrap();
        assert_eq!(rec.comfort, ComfortCase::BelowBand);
        assert!((rec.reward.hvac - (21.0 - rec.t_in_c) * -5.0).abs() < 1e-12);
        // example value
        assert!(((21.0 - 20.5) * -5.0_f64 - -2.5).abs() < 1e-15);
    }

    #[test]
    fn absent_ev_mismatch_penalty() {
        let sc = scenario(vec![0.1; 400], vec![23.0; 400], vec![], 192);
        let mut env = Environment::new(&sc, 0);
        env.reset(0, &all(PreferenceMode::Mode2)).unwrap();
        let res = env.step(JointAction::from_bits(&[false, false, false, true])).unwrap();
        assert!(!res.record.k[3]);
        assert!((res.reward.ev - -0.1).abs() < 1e-15);
    }

    #[test]
    fn terminal_after_horizon_and_step_after_terminal_fails() {
        let sc = scenario(vec![0.1; 50], vec![23.0; 50], vec![], 10);
        let mut env = Environment::new(&sc, 0);
        env.reset(0, &all(PreferenceMode::Mode1)).unwrap();
        for i in 0..10 {
            let r = env.step(JointAction::from_index(0, 4).unwrap()).unwrap();
            assert_eq!(r.terminal, i == 9);
        }
        assert!(matches!(env.step(JointAction::from_index(0, 4).unwrap()), Err(Error::State(_))));
    }

    #[test]
    fn cost_examples() {
        // 4 kW for 4 steps at $0.10/kWh -> $0.40.
        let cost = energy_cost(&[0.1; 4], &[4.0; 4], 0.25);
        assert!((cost - 0.4).abs() < 1e-12);
        let idle = scenario(vec![0.1; 40], vec![23.0; 40], vec![], 10);
        let mut env = Environment::new(&idle, 0);
        let trace = env.rollout(0, &all(PreferenceMode::Mode1), |_| 0).unwrap();
        assert_eq!(episode_cost(&trace, 0.25).total, 0.0);
    }

    #[test]
    fn mode0_ev_charges_on_arrival() {
        let prices: Vec<f64> = (0..200).map(|i| 0.05 + 0.001 * (i % 17) as f64).collect();
        let sc = scenario(prices.clone(), vec![23.0; 200], vec![("EV", 5)], 96);
        let mut env = Environment::new(&sc, 0);
        let trace = env.rollout(0, &all(PreferenceMode::Mode0), |_| 0).unwrap();
        let ev = sc.roster.ev_index().unwrap();
        let on: Vec<usize> = trace.records.iter().filter(|r| r.k[ev]).map(|r| r.step).collect();
        assert_eq!(on, (5..19).collect::<Vec<_>>());
        // Independent summation of 14 slots at 3.4 kW.
        let mut expected = 0.0;
        for p in &prices[5..19] {
            expected += p * 3.4 * 0.25;
        }
        let cost = episode_cost(&trace, 0.25).get("EV").unwrap();
        assert!((cost - expected).abs() < 1e-12);
    }

    #[test]
    fn z_features() {
        let prices: Vec<f64> = (0..400).map(|i| 0.01 * (i % 8 + 1) as f64).collect();
        let sc = scenario(prices.clone(), vec![23.0; 400], vec![("EV", 4)], 192);
        let plan = sc.plan(0, &[PreferenceMode::Mode1, PreferenceMode::Mode1, PreferenceMode::Mode1, PreferenceMode::Mode2]).unwrap();
        let hand_hvac: f64 = prices[3..11].iter().sum::<f64>() / 8.0;
        assert!((plan.hvac_z[3] - hand_hvac).abs() < 1e-15);
        let hand_ev: f64 = prices[4..52].iter().sum::<f64>() / 48.0;
        assert!((plan.ev_sessions[0].z - hand_ev).abs() < 1e-15);
        let flat = scenario(vec![0.05; 400], vec![23.0; 400], vec![("DW", 0)], 192);
        let plan = flat.plan(0, &[PreferenceMode::Mode1; 4]).unwrap();
        assert!((plan.shiftable_jobs[0][0].z - 0.05).abs() < 1e-15);
        let m0 = flat.plan(0, &[PreferenceMode::Mode0; 4]).unwrap();
        assert_eq!(m0.hvac_z, m0.prices);
    }

    #[test]
    fn joint_action_bits_round_trip() {
        for i in 0..16 {
            let a = JointAction::from_index(i, 4).unwrap();
            assert_eq!(JointAction::from_bits(&a.bits()).index(), i);
        }
        assert!(JointAction::from_index(16, 4).is_err());
    }
}
