//! Perfect-foresight scheduling oracle.
//!
//! The cost objective is a sum of independent per-appliance terms, so the
//! joint optimum is composed from per-appliance optima: best contiguous block
//! for shiftable loads, cheapest slots for the EV and a dynamic program over
//! indoor temperature for the HVAC. Brute-force references for small horizons
//! live here too and drive the same appliance dynamics as the environment.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::appliances::{
    default_thermostat, ev_backup_control, ev_step, etp_next_temperature, hvac_power, hvac_required_heat_rate,
    mode_band, sa_backup_control, sa_step, EvState, HvacParams, PreferenceMode, ShiftableApplianceState,
};
use crate::env::{energy_cost, CostBreakdown, EpisodePlan, Scenario};
use crate::error::{Error, Result};

/// Brute force refuses horizons longer than this.
pub const BRUTE_FORCE_MAX_HORIZON: usize = 16;

fn block_cost(prices: &[f64], start: usize, d: usize, power_kw: f64, dt: f64) -> f64 {
    prices[start..start + d].iter().fold(0.0, |acc, &p| acc + p * power_kw * dt)
}

/// Cheapest contiguous run of `d` steps inside `[t_a, t_b)`. Earliest start wins ties.
pub fn optimal_shiftable_start(
    prices: &[f64],
    t_a: usize,
    t_b: usize,
    d: usize,
    power_kw: f64,
    dt: f64,
) -> Result<(usize, f64)> {
    if d == 0 || t_b > prices.len() || t_b < t_a + d {
        return Err(Error::Infeasible {
            appliance: "shiftable".into(),
            reason: format!("window [{t_a}, {t_b}) cannot hold {d} steps"),
        });
    }
    let mut best = (t_a, block_cost(prices, t_a, d, power_kw, dt));
    for s in t_a + 1..=t_b - d {
        let c = block_cost(prices, s, d, power_kw, dt);
        if c < best.1 {
            best = (s, c);
        }
    }
    Ok(best)
}

/// The `required` cheapest slots in `[t_arr, t_dep)`, earlier slots winning ties.
pub fn optimal_ev_slots(
    prices: &[f64],
    t_arr: usize,
    t_dep: usize,
    required: usize,
    power_kw: f64,
    dt: f64,
) -> Result<(Vec<usize>, f64)> {
    if t_dep > prices.len() || t_dep < t_arr + required {
        return Err(Error::Infeasible {
            appliance: "EV".into(),
            reason: format!("window [{t_arr}, {t_dep}) cannot hold {required} charging slots"),
        });
    }
    let mut slots: Vec<usize> = (t_arr..t_dep).collect();
    slots.sort_by(|&a, &b| prices[a].total_cmp(&prices[b]).then(a.cmp(&b)));
    slots.truncate(required);
    slots.sort_unstable();
    let cost = slots.iter().fold(0.0, |acc, &t| acc + prices[t] * power_kw * dt);
    Ok((slots, cost))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HvacDpConfig {
    pub bin_width_c: f64,
}

impl Default for HvacDpConfig {
    fn default() -> Self {
        Self { bin_width_c: 0.05 }
    }
}

/// One HVAC scheduling instance.
#[derive(Debug, Clone, Copy)]
pub struct HvacProblem<'a> {
    pub prices: &'a [f64],
    pub t_out: &'a [f64],
    pub params: &'a HvacParams,
    pub band: (f64, f64),
    pub t_in_initial: f64,
    pub dt_hours: f64,
}

impl HvacProblem<'_> {
    fn horizon(&self) -> usize {
        self.prices.len()
    }

    fn transition(&self, t: usize, t_in: f64, on: bool) -> Result<(f64, f64)> {
        let q = hvac_required_heat_rate(t_in, self.t_out[t], self.params, self.dt_hours)?;
        Ok((
            etp_next_temperature(t_in, self.t_out[t], q, on, self.params, self.dt_hours),
            hvac_power(q, on, self.params.cop),
        ))
    }

    fn in_band(&self, t: f64) -> bool {
        t >= self.band.0 && t <= self.band.1
    }

    /// Worst-case cost change per step from moving the starting temperature
    /// of a step by one bin width.
    pub fn bin_cost_increment(&self, bin_width_c: f64) -> f64 {
        let e = self.params.decay(self.dt_hours);
        let rho_max = self.prices.iter().cloned().fold(0.0, f64::max);
        rho_max * self.dt_hours * e / (self.params.r * (1.0 - e)) / self.params.cop * bin_width_c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HvacSolution {
    pub on: Vec<bool>,
    pub power_kw: Vec<f64>,
    /// Indoor temperature after each step.
    pub temps: Vec<f64>,
    pub cost: f64,
    pub feasible: bool,
}

/// Replays an on/off sequence through the thermal model.
pub fn hvac_simulate(problem: &HvacProblem, on: &[bool]) -> Result<HvacSolution> {
    if on.len() != problem.horizon() || problem.t_out.len() != problem.horizon() {
        return Err(Error::Dimension {
            expected: problem.horizon(),
            actual: on.len(),
        });
    }
    let mut t_in = problem.t_in_initial;
    let mut temps = Vec::with_capacity(on.len());
    let mut power = Vec::with_capacity(on.len());
    let mut feasible = true;
    for (t, &a) in on.iter().enumerate() {
        let (next, p) = problem.transition(t, t_in, a)?;
        feasible &= problem.in_band(next);
        temps.push(next);
        power.push(p);
        t_in = next;
    }
    Ok(HvacSolution {
        cost: energy_cost(problem.prices, &power, problem.dt_hours),
        on: on.to_vec(),
        power_kw: power,
        temps,
        feasible,
    })
}

/// The default thermostat's schedule, judged against `problem.band`.
pub fn hvac_thermostat(problem: &HvacProblem, thermostat_band: (f64, f64)) -> Result<HvacSolution> {
    let mut t_in = problem.t_in_initial;
    let mut on = Vec::with_capacity(problem.horizon());
    for t in 0..problem.horizon() {
        let a = default_thermostat(t_in, problem.t_out[t], thermostat_band, problem.params, problem.dt_hours);
        t_in = problem.transition(t, t_in, a)?.0;
        on.push(a);
    }
    hvac_simulate(problem, &on)
}

#[derive(Debug, Clone, Copy)]
struct DpNode {
    temp: f64,
    cost: f64,
    parent: usize,
    on: bool,
}

/// Minimum-cost on/off sequence keeping the indoor temperature in the band.
///
/// States are keyed by temperature bin; each bin keeps the exact temperature
/// of its cheapest path, so the returned schedule is genuinely feasible and
/// its cost exact. Merging paths within a bin is the only approximation.
pub fn hvac_optimal(problem: &HvacProblem, config: &HvacDpConfig) -> Result<HvacSolution> {
    let h = config.bin_width_c;
    if !(h > 0.0) {
        return Err(Error::Parameter(format!("bin width must be > 0, got {h}")));
    }
    if !(problem.band.0 < problem.band.1) {
        return Err(Error::Parameter("empty comfort band".into()));
    }
    if !problem.in_band(problem.t_in_initial) {
        return Err(Error::Infeasible {
            appliance: crate::env::HVAC_ID.into(),
            reason: format!("initial temperature {} outside band", problem.t_in_initial),
        });
    }
    let key = |t: f64| (t / h).round() as i64;
    let mut layers: Vec<Vec<DpNode>> = vec![vec![DpNode {
        temp: problem.t_in_initial,
        cost: 0.0,
        parent: usize::MAX,
        on: false,
    }]];
    for t in 0..problem.horizon() {
        let mut next: BTreeMap<i64, DpNode> = BTreeMap::new();
        for (i, node) in layers[t].iter().enumerate() {
            for on in [false, true] {
                let (temp, p) = problem.transition(t, node.temp, on)?;
                if !problem.in_band(temp) {
                    continue;
                }
                let cost = node.cost + problem.prices[t] * p * problem.dt_hours;
                let cand = DpNode {
                    temp,
                    cost,
                    parent: i,
                    on,
                };
                next.entry(key(temp))
                    .and_modify(|n| {
                        if cost < n.cost {
                            *n = cand;
                        }
                    })
                    .or_insert(cand);
            }
        }
        if next.is_empty() {
            return Err(Error::Infeasible {
                appliance: crate::env::HVAC_ID.into(),
                reason: format!("no in-band temperature reachable at step {t}"),
            });
        }
        layers.push(next.into_values().collect());
    }
    let last = layers.last().expect("at least one layer");
    let mut best = 0;
    for (i, n) in last.iter().enumerate() {
        if n.cost < last[best].cost {
            best = i;
        }
    }
    let mut on = vec![false; problem.horizon()];
    let mut idx = best;
    for t in (0..problem.horizon()).rev() {
        let n = layers[t + 1][idx];
        on[t] = n.on;
        idx = n.parent;
    }
    let sol = hvac_simulate(problem, &on)?;
    if !sol.feasible {
        return Err(Error::Invariant("dynamic program returned an out-of-band schedule".into()));
    }
    Ok(sol)
}

/// Per-appliance optimum for one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSchedule {
    pub appliance_ids: Vec<String>,
    pub modes: Vec<PreferenceMode>,
    pub schedules: Vec<Vec<bool>>,
    pub power_kw: Vec<Vec<f64>>,
    pub hvac_temps: Vec<f64>,
    pub costs: CostBreakdown,
    /// Upper bound on how far the HVAC part may sit above its true optimum.
    pub hvac_error_bound: f64,
}

impl OracleSchedule {
    pub fn total(&self) -> f64 {
        self.costs.total
    }
}

fn hvac_problem<'a>(sc: &'a Scenario, plan: &'a EpisodePlan, band: (f64, f64)) -> HvacProblem<'a> {
    HvacProblem {
        prices: &plan.prices,
        t_out: &plan.t_out,
        params: &sc.roster.hvac,
        band,
        t_in_initial: plan.t_in_initial,
        dt_hours: plan.dt_hours,
    }
}

/// HVAC oracle for one mode. Mode 0 is the default thermostat. Wider modes
/// take the cheapest of their own dynamic program and every narrower mode's
/// result; the default schedule is always admissible.
fn hvac_oracle(sc: &Scenario, plan: &EpisodePlan, mode: PreferenceMode, dp: &HvacDpConfig) -> Result<(HvacSolution, f64)> {
    let band = mode_band(mode, sc.roster.hvac.t_set_c, &sc.windows);
    let problem = hvac_problem(sc, plan, band);
    let default = hvac_thermostat(&problem, plan.hvac_default_band)?;
    if mode == PreferenceMode::Mode0 {
        return Ok((default, 0.0));
    }
    let bound = problem.bin_cost_increment(dp.bin_width_c) * problem.horizon() as f64;
    let narrower = PreferenceMode::from_index(mode.index() - 1).expect("mode above 0");
    let (inc, _) = hvac_oracle(sc, plan, narrower, dp)?;
    let mut best = default;
    let mut consider = |cand: HvacSolution| {
        if cand.feasible && cand.cost < best.cost {
            best = cand;
        }
    };
    let inc = hvac_simulate(&problem, &inc.on)?;
    consider(inc);
    match hvac_optimal(&problem, dp) {
        Ok(sol) => consider(sol),
        Err(Error::Infeasible { .. }) => {}
        Err(e) => return Err(e),
    }
    Ok((best, bound))
}

/// Optimal cost of every appliance for a resolved episode.
pub fn oracle_total_cost(sc: &Scenario, plan: &EpisodePlan) -> Result<OracleSchedule> {
    oracle_total_cost_with(sc, plan, &HvacDpConfig::default())
}

pub fn oracle_total_cost_with(sc: &Scenario, plan: &EpisodePlan, dp: &HvacDpConfig) -> Result<OracleSchedule> {
    let h = plan.horizon;
    let dt = plan.dt_hours;
    let mut schedules = Vec::new();
    let mut powers = Vec::new();
    for (i, jobs) in plan.shiftable_jobs.iter().enumerate() {
        let id = &plan.appliance_ids[i];
        let mut bits = vec![false; h];
        for job in jobs {
            let (s, _) = optimal_shiftable_start(&plan.prices, job.t_a, job.t_b, job.duration, job.power_kw, dt)
                .map_err(|e| rename(e, id))?;
            bits[s..s + job.duration].iter_mut().for_each(|b| *b = true);
        }
        let p = sc.roster.shiftable[i].rated_power_kw;
        powers.push(bits.iter().map(|&b| if b { p } else { 0.0 }).collect::<Vec<_>>());
        schedules.push(bits);
    }

    let (hvac, bound) = hvac_oracle(sc, plan, plan.hvac_mode, dp)?;
    schedules.push(hvac.on.clone());
    powers.push(hvac.power_kw.clone());

    if let Some(ev) = &sc.roster.ev {
        let mut bits = vec![false; h];
        for s in &plan.ev_sessions {
            let (slots, _) = optimal_ev_slots(&plan.prices, s.t_arr, s.t_dep, s.required_steps, s.power_kw, dt)
                .map_err(|e| rename(e, &ev.id))?;
            slots.into_iter().for_each(|t| bits[t] = true);
        }
        powers.push(
            bits.iter()
                .map(|&b| if b { ev.charge_power_kw } else { 0.0 })
                .collect(),
        );
        schedules.push(bits);
    }

    let costs = CostBreakdown::from_parts(
        plan.appliance_ids
            .iter()
            .zip(&powers)
            .map(|(id, p)| (id.clone(), energy_cost(&plan.prices, p, dt)))
            .collect(),
    );
    Ok(OracleSchedule {
        appliance_ids: plan.appliance_ids.clone(),
        modes: plan.modes.clone(),
        schedules,
        power_kw: powers,
        hvac_temps: hvac.temps,
        costs,
        hvac_error_bound: bound,
    })
}

fn rename(e: Error, id: &str) -> Error {
    match e {
        Error::Infeasible { reason, .. } => Error::Infeasible {
            appliance: id.into(),
            reason,
        },
        other => other,
    }
}

/// Exhaustive minimum over all 2^H control sequences per appliance, driven
/// through the appliances' own backup rules and dynamics.
pub fn brute_force_reference(sc: &Scenario, plan: &EpisodePlan) -> Result<CostBreakdown> {
    let h = plan.horizon;
    if h > BRUTE_FORCE_MAX_HORIZON {
        return Err(Error::Parameter(format!(
            "brute force limited to {BRUTE_FORCE_MAX_HORIZON} steps, got {h}"
        )));
    }
    let dt = plan.dt_hours;
    let mut parts = Vec::new();
    for (i, jobs) in plan.shiftable_jobs.iter().enumerate() {
        let p = sc.roster.shiftable[i].rated_power_kw;
        let best = enumerate_min(h, |bits| {
            let mut state = ShiftableApplianceState::idle();
            let mut next = 0;
            let mut power = vec![0.0; h];
            for t in 0..h {
                if let Some(job) = jobs.get(next).filter(|j| j.t_a == t) {
                    state = ShiftableApplianceState::activate(job.t_a, job.t_b, job.duration, job.z)?;
                    next += 1;
                }
                let k = sa_backup_control(&state, bits >> t & 1 == 1, t);
                if k {
                    power[t] = p;
                }
                state = sa_step(&state, k, t)?.state;
            }
            Ok(Some(energy_cost(&plan.prices, &power, dt)))
        })?;
        parts.push((plan.appliance_ids[i].clone(), best));
    }

    let band = mode_band(plan.hvac_mode, sc.roster.hvac.t_set_c, &sc.windows);
    let problem = hvac_problem(sc, plan, band);
    let hvac = if plan.hvac_mode == PreferenceMode::Mode0 {
        hvac_thermostat(&problem, plan.hvac_default_band)?.cost
    } else {
        enumerate_min(h, |bits| {
            let on: Vec<bool> = (0..h).map(|t| bits >> t & 1 == 1).collect();
            let sol = hvac_simulate(&problem, &on)?;
            Ok(sol.feasible.then_some(sol.cost))
        })?
    };
    parts.push((crate::env::HVAC_ID.into(), hvac));

    if let Some(ev) = &sc.roster.ev {
        let best = enumerate_min(h, |bits| {
            let mut state = EvState::absent();
            let mut next = 0;
            let mut power = vec![0.0; h];
            for t in 0..h {
                if let Some(s) = plan.ev_sessions.get(next).filter(|s| s.t_arr == t) {
                    state = EvState::arrive(s.t_arr, s.t_dep, s.soc_arrival, s.z, ev, dt)?;
                    next += 1;
                }
                let k = ev_backup_control(&state, bits >> t & 1 == 1, t, ev);
                if k {
                    power[t] = ev.charge_power_kw;
                }
                state = ev_step(&state, k, ev, dt)?.state;
            }
            Ok(Some(energy_cost(&plan.prices, &power, dt)))
        })?;
        parts.push((ev.id.clone(), best));
    }
    Ok(CostBreakdown::from_parts(parts))
}

fn enumerate_min<F>(h: usize, mut cost_of: F) -> Result<f64>
where
    F: FnMut(u32) -> Result<Option<f64>>,
{
    let mut best: Option<f64> = None;
    for bits in 0..(1u32 << h) {
        if let Some(c) = cost_of(bits)? {
            if best.is_none_or(|b| c < b) {
                best = Some(c);
            }
        }
    }
    best.ok_or_else(|| Error::Infeasible {
        appliance: crate::env::HVAC_ID.into(),
        reason: "no feasible sequence".into(),
    })
}

/// `appliance_id,mode,cost,schedule_bits`
pub fn write_oracle_csv(path: impl AsRef<Path>, schedule: &OracleSchedule) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("appliance_id,mode,cost,schedule_bits\n");
    for (i, id) in schedule.appliance_ids.iter().enumerate() {
        let bits: String = schedule.schedules[i].iter().map(|&b| if b { '1' } else { '0' }).collect();
        out.push_str(&format!(
            "{},{},{},{}\n",
            id,
            schedule.modes[i].index(),
            schedule.costs.per_appliance[i].1,
            bits
        ));
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}
