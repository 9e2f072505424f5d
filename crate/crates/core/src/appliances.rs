//! Household appliance models and their rule-based backup controllers.
//!
//! Three appliance classes share one time grid:
//!
//! * shiftable loads (dishwasher, washing machine): a fixed-length,
//!   uninterruptible cycle that must run inside a scheduling window;
//! * HVAC: a first-order equivalent-thermal-parameter (ETP) building model,
//!   switched on/off, where "on" applies the heat rate that would bring the
//!   indoor temperature back to the setpoint within one step;
//! * EV: a battery that must be full by departure, charged slot-wise at a
//!   fixed rate.
//!
//! Each backup controller maps the agent's proposed binary action to the
//! executed control `k`, overriding it whenever a hard constraint demands.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timeseries::TimeGrid;

/// Tolerance for state-of-charge comparisons.
pub const SOC_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PreferenceMode {
    Mode0,
    Mode1,
    Mode2,
}

impl PreferenceMode {
    pub const ALL: [PreferenceMode; 3] = [PreferenceMode::Mode0, PreferenceMode::Mode1, PreferenceMode::Mode2];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn label(self) -> &'static str {
        match self {
            PreferenceMode::Mode0 => "Mode 0",
            PreferenceMode::Mode1 => "Mode 1",
            PreferenceMode::Mode2 => "Mode 2",
        }
    }
}

impl std::fmt::Display for PreferenceMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.index())
    }
}

/// Flexibility granted by each preference mode.
///
/// Two-element arrays hold the Mode 1 and Mode 2 values. Mode 0 has no
/// flexibility: shiftable loads start at activation, the EV charges on
/// arrival, and the HVAC holds the narrow default deadband.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModeWindows {
    pub sa_window_hours: [f64; 2],
    pub ev_window_hours: [f64; 2],
    /// Half-band around the setpoint for Mode 0, 1, 2.
    pub hvac_deadband_c: [f64; 3],
    pub hvac_price_window_hours: [f64; 2],
}

impl Default for ModeWindows {
    fn default() -> Self {
        Self {
            sa_window_hours: [12.0, 24.0],
            ev_window_hours: [6.0, 12.0],
            hvac_deadband_c: [0.5, 1.0, 2.0],
            hvac_price_window_hours: [2.0, 4.0],
        }
    }
}

impl ModeWindows {
    pub fn validate(&self) -> Result<()> {
        let pairs = [
            ("sa_window_hours", self.sa_window_hours),
            ("ev_window_hours", self.ev_window_hours),
            ("hvac_price_window_hours", self.hvac_price_window_hours),
        ];
        for (name, [m1, m2]) in pairs {
            if !(m1 > 0.0 && m1 <= m2) {
                return Err(Error::Parameter(format!("{name}: need 0 < mode1 <= mode2, got [{m1}, {m2}]")));
            }
        }
        let [d0, d1, d2] = self.hvac_deadband_c;
        if !(d0 > 0.0 && d0 < d1 && d1 < d2) {
            return Err(Error::Parameter(format!(
                "hvac_deadband_c must be strictly increasing and positive, got [{d0}, {d1}, {d2}]"
            )));
        }
        Ok(())
    }

    /// Scheduling-window length in steps for a shiftable load of `duration` steps.
    pub fn sa_window_steps(&self, mode: PreferenceMode, duration: usize, grid: &TimeGrid) -> usize {
        match mode {
            PreferenceMode::Mode0 => duration,
            PreferenceMode::Mode1 => grid.hours_to_steps(self.sa_window_hours[0]).max(duration),
            PreferenceMode::Mode2 => grid.hours_to_steps(self.sa_window_hours[1]).max(duration),
        }
    }

    /// Charging-window length in steps for an EV needing `required` slots.
    pub fn ev_window_steps(&self, mode: PreferenceMode, required: usize, grid: &TimeGrid) -> usize {
        match mode {
            PreferenceMode::Mode0 => required,
            PreferenceMode::Mode1 => grid.hours_to_steps(self.ev_window_hours[0]).max(required),
            PreferenceMode::Mode2 => grid.hours_to_steps(self.ev_window_hours[1]).max(required),
        }
    }

    /// Rolling window for the HVAC price feature; `None` means the current price.
    pub fn hvac_price_window_steps(&self, mode: PreferenceMode, grid: &TimeGrid) -> Option<usize> {
        match mode {
            PreferenceMode::Mode0 => None,
            PreferenceMode::Mode1 => Some(grid.hours_to_steps(self.hvac_price_window_hours[0]).max(1)),
            PreferenceMode::Mode2 => Some(grid.hours_to_steps(self.hvac_price_window_hours[1]).max(1)),
        }
    }

    pub fn deadband(&self, mode: PreferenceMode) -> f64 {
        self.hvac_deadband_c[mode.index()]
    }
}

/// Comfort band `(t_min, t_max)` for a mode around `t_set`.
pub fn mode_band(mode: PreferenceMode, t_set: f64, windows: &ModeWindows) -> (f64, f64) {
    let db = windows.deadband(mode);
    (t_set - db, t_set + db)
}

// ---------------------------------------------------------------------------
// Shiftable appliances
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftableApplianceParams {
    pub id: String,
    pub rated_power_kw: f64,
    pub duration_steps: usize,
}

impl ShiftableApplianceParams {
    pub fn validate(&self) -> Result<()> {
        if self.duration_steps == 0 {
            return Err(Error::Parameter(format!("{}: duration_steps must be >= 1", self.id)));
        }
        if !(self.rated_power_kw > 0.0) {
            return Err(Error::Parameter(format!("{}: rated_power_kw must be positive", self.id)));
        }
        Ok(())
    }
}

/// Operational state of one shiftable appliance.
///
/// The window is half-open: the cycle may occupy steps `t_a .. t_b`, so the
/// latest admissible start is `t_b - d`. Outside an active event every field
/// is zero.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ShiftableApplianceState {
    /// Activated by the user and not yet finished.
    pub u: bool,
    /// Fraction of the cycle completed.
    pub w: f64,
    /// Steps left before the start is forced.
    pub x: usize,
    /// Mean forecast price over the window.
    pub z: f64,
    pub k_prev: bool,
    pub t_a: usize,
    pub t_b: usize,
    pub started: bool,
    pub t_start: Option<usize>,
    done_steps: usize,
    duration: usize,
}

impl ShiftableApplianceState {
    pub fn idle() -> Self {
        Self::default()
    }

    /// Opens an event activated at `t_a` with window end `t_b` (exclusive).
    pub fn activate(t_a: usize, t_b: usize, duration: usize, z: f64) -> Result<Self> {
        if duration == 0 || t_b < t_a + duration {
            return Err(Error::Parameter(format!(
                "window [{t_a}, {t_b}) cannot hold a cycle of {duration} steps"
            )));
        }
        Ok(Self {
            u: true,
            w: 0.0,
            x: t_b - t_a - duration,
            z,
            k_prev: false,
            t_a,
            t_b,
            started: false,
            t_start: None,
            done_steps: 0,
            duration,
        })
    }

    pub fn in_window(&self, t: usize) -> bool {
        self.u && t >= self.t_a && t < self.t_b
    }

    pub fn mid_cycle(&self) -> bool {
        self.k_prev && self.w > 0.0 && self.w < 1.0
    }
}

/// Maps the agent's action to the executed control for a shiftable load.
pub fn sa_backup_control(state: &ShiftableApplianceState, agent_action: bool, t: usize) -> bool {
    if state.mid_cycle() {
        return true;
    }
    if state.u && state.x == 0 && state.in_window(t) {
        return true;
    }
    if !state.in_window(t) {
        return false;
    }
    agent_action
}

/// Result of advancing a shiftable appliance one step.
#[derive(Debug, Clone, PartialEq)]
pub struct SaStepOutcome {
    pub state: ShiftableApplianceState,
    /// The cycle finished on this step.
    pub completed: bool,
}

/// Advances a shiftable appliance through step `t` with executed control `k`.
pub fn sa_step(state: &ShiftableApplianceState, k: bool, t: usize) -> Result<SaStepOutcome> {
    if !state.u {
        if k {
            return Err(Error::Invariant("shiftable appliance run while inactive".into()));
        }
        return Ok(SaStepOutcome {
            state: state.clone(),
            completed: false,
        });
    }
    let mut next = state.clone();
    if k {
        if !next.started {
            next.started = true;
            next.t_start = Some(t);
        }
        next.done_steps += 1;
    } else if next.started && next.done_steps < next.duration {
        return Err(Error::Invariant(format!("shiftable cycle interrupted at step {t}")));
    }
    if next.done_steps > next.duration {
        return Err(Error::Invariant(format!(
            "progress {} exceeds 1",
            next.done_steps as f64 / next.duration as f64
        )));
    }
    next.w = next.done_steps as f64 / next.duration as f64;
    next.k_prev = k;
    if next.done_steps == next.duration {
        return Ok(SaStepOutcome {
            state: ShiftableApplianceState::idle(),
            completed: true,
        });
    }
    next.x = next.x.saturating_sub(1);
    if t + 1 >= next.t_b {
        return Err(Error::Invariant(format!(
            "window closed at step {} before the cycle completed",
            next.t_b
        )));
    }
    Ok(SaStepOutcome {
        state: next,
        completed: false,
    })
}

// ---------------------------------------------------------------------------
// HVAC
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HvacParams {
    /// Heat-rate bound Q_max (kW).
    pub q_max_kw: f64,
    /// Thermal resistance (°C/kW).
    pub r: f64,
    /// Thermal capacitance (kWh/°C).
    pub c: f64,
    pub cop: f64,
    pub t_set_c: f64,
}

impl Default for HvacParams {
    fn default() -> Self {
        Self {
            q_max_kw: 14.0,
            r: 2.0,
            c: 2.0,
            cop: 3.5,
            t_set_c: 23.0,
        }
    }
}

impl HvacParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.r > 0.0 && self.c > 0.0) {
            return Err(Error::Parameter(format!(
                "thermal R and C must be positive, got R={} C={}",
                self.r, self.c
            )));
        }
        if !(self.cop > 0.0) {
            return Err(Error::Parameter("cop must be positive".into()));
        }
        if !(self.q_max_kw > 0.0) {
            return Err(Error::Parameter("q_max_kw must be positive".into()));
        }
        Ok(())
    }

    /// Per-step decay factor `exp(-dt / RC)`.
    pub fn decay(&self, dt_hours: f64) -> f64 {
        (-dt_hours / (self.r * self.c)).exp()
    }
}

/// Heat rate that brings the indoor temperature exactly to the setpoint in
/// one step, before clamping. Positive heats, negative cools.
pub fn hvac_required_heat_rate_unclamped(t_in_prev: f64, t_out: f64, params: &HvacParams, dt_hours: f64) -> Result<f64> {
    if !(params.r * params.c > 0.0) || !params.r.is_finite() || !params.c.is_finite() {
        return Err(Error::Parameter(format!(
            "R*C must be positive, got R={} C={}",
            params.r, params.c
        )));
    }
    let e = params.decay(dt_hours);
    Ok((params.t_set_c - t_out + (t_out - t_in_prev) * e) / (params.r * (1.0 - e)))
}

/// As [`hvac_required_heat_rate_unclamped`], clamped to `[-Q_max, Q_max]`.
pub fn hvac_required_heat_rate(t_in_prev: f64, t_out: f64, params: &HvacParams, dt_hours: f64) -> Result<f64> {
    let q = hvac_required_heat_rate_unclamped(t_in_prev, t_out, params, dt_hours)?;
    Ok(q.clamp(-params.q_max_kw, params.q_max_kw))
}

/// Electrical draw (kW). Heating and cooling both consume power.
pub fn hvac_power(q_kw: f64, on: bool, cop: f64) -> f64 {
    if on {
        q_kw.abs() / cop
    } else {
        0.0
    }
}

/// ETP indoor-temperature update with heat rate `q_kw` applied when `on`.
pub fn etp_next_temperature(t_in_prev: f64, t_out: f64, q_kw: f64, on: bool, params: &HvacParams, dt_hours: f64) -> f64 {
    let q = if on { q_kw } else { 0.0 };
    let steady = t_out + q * params.r;
    steady - (steady - t_in_prev) * params.decay(dt_hours)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HvacState {
    pub t_in_c: f64,
    pub t_out_c: f64,
    pub t_min_c: f64,
    pub t_max_c: f64,
    /// Rolling forecast price feature; maintained by the environment.
    pub z: f64,
}

impl HvacState {
    pub fn new(t_in_c: f64, t_out_c: f64, band: (f64, f64), z: f64) -> Result<Self> {
        if !(band.0 < band.1) {
            return Err(Error::Parameter(format!("empty comfort band [{}, {}]", band.0, band.1)));
        }
        Ok(Self {
            t_in_c,
            t_out_c,
            t_min_c: band.0,
            t_max_c: band.1,
            z,
        })
    }

    pub fn in_band(&self) -> bool {
        self.t_in_c >= self.t_min_c && self.t_in_c <= self.t_max_c
    }
}

/// Advances the indoor temperature one step under outdoor temperature
/// `t_out`. The price feature `z` is left for the caller to refresh.
pub fn hvac_step(state: &HvacState, on: bool, q_kw: f64, t_out: f64, params: &HvacParams, dt_hours: f64) -> HvacState {
    HvacState {
        t_in_c: etp_next_temperature(state.t_in_c, t_out, q_kw, on, params, dt_hours),
        t_out_c: t_out,
        ..state.clone()
    }
}

/// Default (no demand response) thermostat: stay off unless the free
/// response would leave the band this step.
pub fn default_thermostat(t_in_prev: f64, t_out: f64, band: (f64, f64), params: &HvacParams, dt_hours: f64) -> bool {
    let free = etp_next_temperature(t_in_prev, t_out, 0.0, false, params, dt_hours);
    free < band.0 || free > band.1
}

// ---------------------------------------------------------------------------
// Electric vehicle
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvParams {
    pub id: String,
    pub charge_power_kw: f64,
    pub battery_kwh: f64,
    pub soc_min: f64,
    pub soc_max: f64,
    pub efficiency: f64,
}

impl Default for EvParams {
    fn default() -> Self {
        Self {
            id: "EV".into(),
            charge_power_kw: 3.4,
            battery_kwh: 17.0,
            soc_min: 0.20,
            soc_max: 0.90,
            efficiency: 1.0,
        }
    }
}

impl EvParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.soc_min && self.soc_min < self.soc_max && self.soc_max <= 1.0) {
            return Err(Error::Parameter(format!(
                "need 0 <= soc_min < soc_max <= 1, got [{}, {}]",
                self.soc_min, self.soc_max
            )));
        }
        if !(self.charge_power_kw > 0.0) || !(self.battery_kwh > 0.0) {
            return Err(Error::Parameter("charge_power_kw and battery_kwh must be positive".into()));
        }
        if !(self.efficiency > 0.0 && self.efficiency <= 1.0) {
            return Err(Error::Parameter(format!("efficiency must be in (0, 1], got {}", self.efficiency)));
        }
        Ok(())
    }

    /// SoC gained by one charging step.
    pub fn soc_per_step(&self, dt_hours: f64) -> f64 {
        self.charge_power_kw * self.efficiency * dt_hours / self.battery_kwh
    }

    /// Charging steps needed to reach `soc_max` from `soc`.
    pub fn required_steps(&self, soc: f64, dt_hours: f64) -> usize {
        let gap = self.soc_max - soc;
        if gap <= SOC_EPS {
            return 0;
        }
        (gap / self.soc_per_step(dt_hours) - SOC_EPS).ceil().max(0.0) as usize
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvState {
    /// Vehicle plugged in.
    pub u: bool,
    pub soc: f64,
    /// Steps left until departure, counting the current one.
    pub x: usize,
    pub z: f64,
    pub t_arr: usize,
    pub t_dep: usize,
    /// Charging steps still required.
    pub d_ev: usize,
}

impl EvState {
    pub fn absent() -> Self {
        Self::default()
    }

    pub fn arrive(t_arr: usize, t_dep: usize, soc: f64, z: f64, params: &EvParams, dt_hours: f64) -> Result<Self> {
        let d_ev = params.required_steps(soc, dt_hours);
        if t_dep < t_arr + d_ev {
            return Err(Error::Parameter(format!(
                "charging window [{t_arr}, {t_dep}) shorter than the {d_ev} steps required"
            )));
        }
        Ok(Self {
            u: true,
            soc,
            x: t_dep - t_arr,
            z,
            t_arr,
            t_dep,
            d_ev,
        })
    }

    pub fn present_at(&self, t: usize) -> bool {
        self.u && t >= self.t_arr && t < self.t_dep
    }
}

pub fn ev_backup_control(state: &EvState, agent_action: bool, t: usize, params: &EvParams) -> bool {
    if !state.present_at(t) {
        return false;
    }
    if state.soc >= params.soc_max - SOC_EPS {
        return false;
    }
    if state.x <= state.d_ev {
        return true;
    }
    agent_action
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvStepOutcome {
    pub state: EvState,
    /// The vehicle left after this step; carries its final SoC.
    pub departed_soc: Option<f64>,
}

pub fn ev_step(state: &EvState, k: bool, params: &EvParams, dt_hours: f64) -> Result<EvStepOutcome> {
    if !state.u {
        if k {
            return Err(Error::Invariant("EV charged while absent".into()));
        }
        return Ok(EvStepOutcome {
            state: state.clone(),
            departed_soc: None,
        });
    }
    let mut next = state.clone();
    if k {
        next.soc += params.soc_per_step(dt_hours);
    }
    if next.soc >= params.soc_max - SOC_EPS {
        next.soc = params.soc_max;
    }
    if next.soc < params.soc_min - SOC_EPS {
        return Err(Error::Invariant(format!("SoC {} below minimum", next.soc)));
    }
    next.d_ev = params.required_steps(next.soc, dt_hours);
    next.x -= 1;
    if next.d_ev > next.x {
        return Err(Error::Invariant(format!(
            "EV needs {} more steps with {} left",
            next.d_ev, next.x
        )));
    }
    if next.x == 0 {
        return Ok(EvStepOutcome {
            state: EvState::absent(),
            departed_soc: Some(next.soc),
        });
    }
    Ok(EvStepOutcome {
        state: next,
        departed_soc: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const DT: f64 = 0.25;

    #[test]
    fn mid_cycle_cannot_be_interrupted() {
        let mut s = ShiftableApplianceState::activate(0, 48, 4, 0.05).unwrap();
        s.k_prev = true;
        s.w = 0.5;
        s.started = true;
        assert!(sa_backup_control(&s, false, 5));
    }

    #[test]
    fn deadline_forces_start() {
        let mut s = ShiftableApplianceState::activate(0, 48, 4, 0.05).unwrap();
        s.x = 0;
        assert!(sa_backup_control(&s, false, 44));
    }

    #[test]
    fn out_of_window_is_zeroed() {
        let s = ShiftableApplianceState::activate(10, 58, 4, 0.05).unwrap();
        assert!(!sa_backup_control(&s, true, 9));
        assert!(!sa_backup_control(&s, true, 58));
        assert!(!sa_backup_control(&ShiftableApplianceState::idle(), true, 3));
        assert!(sa_backup_control(&s, true, 10));
        assert!(!sa_backup_control(&s, false, 10));
    }

    #[test]
    fn progress_and_countdown() {
        let s = ShiftableApplianceState::activate(0, 48, 4, 0.05).unwrap();
        assert_eq!(s.x, 44);
        let s1 = sa_step(&s, true, 0).unwrap().state;
        assert_eq!(s1.w, 0.25);
        assert_eq!(s1.t_start, Some(0));
        let s2 = sa_step(&s1, true, 1).unwrap().state;
        assert_eq!(s2.w, 0.5);
        assert_eq!(s2.x, 42);
    }

    #[test]
    fn completion_zeroes_state() {
        let mut s = ShiftableApplianceState::activate(0, 48, 4, 0.05).unwrap();
        for t in 0..3 {
            s = sa_step(&s, true, t).unwrap().state;
        }
        let out = sa_step(&s, true, 3).unwrap();
        assert!(out.completed);
        assert!(!out.state.u);
        assert_eq!((out.state.w, out.state.x, out.state.z), (0.0, 0, 0.0));
    }

    #[test]
    fn interrupting_a_cycle_is_an_invariant_violation() {
        let s = ShiftableApplianceState::activate(0, 48, 4, 0.05).unwrap();
        let s = sa_step(&s, true, 0).unwrap().state;
        assert!(matches!(sa_step(&s, false, 1), Err(Error::Invariant(_))));
    }

    #[test]
    fn heat_rate_equilibrium_and_clamp() {
        let p = HvacParams::default();
        assert_eq!(hvac_required_heat_rate(23.0, 23.0, &p, DT).unwrap(), 0.0);
        let raw = hvac_required_heat_rate_unclamped(25.0, 30.0, &p, DT).unwrap();
        assert!(raw < -14.0);
        assert_eq!(hvac_required_heat_rate(25.0, 30.0, &p, DT).unwrap(), -14.0);
        let bad = HvacParams { r: 0.0, ..p };
        assert!(matches!(hvac_required_heat_rate(23.0, 30.0, &bad, DT), Err(Error::Parameter(_))));
    }

    #[test]
    fn heat_rate_closed_form() {
        // R=2, C=2, dt=0.25: e = exp(-1/16).
        let p = HvacParams::default();
        let e = (-0.0625f64).exp();
        let expected = (23.0 - 30.0 + (30.0 - 23.0) * e) / (2.0 * (1.0 - e));
        let q = hvac_required_heat_rate(23.0, 30.0, &p, DT).unwrap();
        assert!((q - expected).abs() < 1e-12);
        assert!((q - -3.5).abs() < 1e-12, "steady-state cooling load is (T_out - T_set)/R");
    }

    #[test]
    fn power_draw() {
        assert!((hvac_power(14.0, true, 3.5) - 4.0).abs() < 1e-15);
        assert_eq!(hvac_power(14.0, false, 3.5), 0.0);
        assert!((hvac_power(-7.0, true, 3.5) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn free_response_value() {
        let p = HvacParams::default();
        let s = HvacState::new(23.0, 30.0, (21.0, 25.0), 0.0).unwrap();
        let next = hvac_step(&s, false, 0.0, 30.0, &p, DT);
        assert!((next.t_in_c - (30.0 - 7.0 * (-0.0625f64).exp())).abs() < 1e-12);
        assert!((next.t_in_c - 23.424).abs() < 1e-3);
    }

    #[test]
    fn inversion_hits_setpoint() {
        let p = HvacParams::default();
        let s = HvacState::new(24.1, 31.0, (21.0, 25.0), 0.0).unwrap();
        let q = hvac_required_heat_rate_unclamped(s.t_in_c, 31.0, &p, DT).unwrap();
        let next = hvac_step(&s, true, q, 31.0, &p, DT);
        assert!((next.t_in_c - 23.0).abs() < 1e-12);
        let fixed = HvacState::new(30.0, 30.0, (21.0, 25.0), 0.0).unwrap();
        assert_eq!(hvac_step(&fixed, true, 0.0, 30.0, &p, DT).t_in_c, 30.0);
    }

    #[test]
    fn bands_per_mode() {
        let w = ModeWindows::default();
        assert_eq!(mode_band(PreferenceMode::Mode0, 23.0, &w), (22.5, 23.5));
        assert_eq!(mode_band(PreferenceMode::Mode1, 23.0, &w), (22.0, 24.0));
        assert_eq!(mode_band(PreferenceMode::Mode2, 23.0, &w), (21.0, 25.0));
    }

    #[test]
    fn mode_windows_nest() {
        let w = ModeWindows::default();
        w.validate().unwrap();
        let g = TimeGrid::default();
        for d in 1..10 {
            assert!(w.sa_window_steps(PreferenceMode::Mode0, d, &g) <= w.sa_window_steps(PreferenceMode::Mode1, d, &g));
            assert!(w.sa_window_steps(PreferenceMode::Mode1, d, &g) <= w.sa_window_steps(PreferenceMode::Mode2, d, &g));
        }
        assert_eq!(w.sa_window_steps(PreferenceMode::Mode1, 4, &g), 48);
        assert_eq!(w.ev_window_steps(PreferenceMode::Mode2, 14, &g), 48);
        let bad = ModeWindows {
            hvac_deadband_c: [0.5, 2.0, 1.0],
            ..w
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn ev_full_charge_takes_fourteen_steps() {
        let p = EvParams::default();
        assert_eq!(p.required_steps(0.20, DT), 14);
        let s = EvState::arrive(0, 48, 0.20, 0.1, &p, DT).unwrap();
        let s1 = ev_step(&s, true, &p, DT).unwrap().state;
        assert!((s1.soc - 0.25).abs() < 1e-12);
        assert_eq!(s1.d_ev, 13);
        let s2 = ev_step(&s1, false, &p, DT).unwrap().state;
        assert_eq!(s2.soc, s1.soc);
        assert_eq!(s2.x, 46);
    }

    #[test]
    fn ev_backup_rules() {
        let p = EvParams::default();
        let mut s = EvState::arrive(0, 48, 0.20, 0.1, &p, DT).unwrap();
        s.x = s.d_ev;
        assert!(ev_backup_control(&s, false, 34, &p));
        assert!(!ev_backup_control(&EvState::absent(), true, 5, &p));
        let mut full = EvState::arrive(0, 48, 0.20, 0.1, &p, DT).unwrap();
        full.soc = p.soc_max;
        full.d_ev = 0;
        assert!(!ev_backup_control(&full, true, 3, &p));
    }

    proptest! {
        #[test]
        fn shiftable_runs_once_contiguously(
            actions in proptest::collection::vec(any::<bool>(), 60),
            d in 1usize..8,
            window in 8usize..50,
        ) {
            let mut s = ShiftableApplianceState::activate(0, window, d, 0.0).unwrap();
            let mut ks = Vec::new();
            let mut completed_at = None;
            for (t, &a) in actions.iter().enumerate().take(window) {
                let k = sa_backup_control(&s, a, t);
                ks.push(k);
                let out = sa_step(&s, k, t).unwrap();
                prop_assert!(out.state.w <= 1.0);
                if out.completed {
                    completed_at = Some(t);
                }
                s = out.state;
            }
            let on: Vec<usize> = ks.iter().enumerate().filter(|(_, &k)| k).map(|(t, _)| t).collect();
            prop_assert_eq!(on.len(), d);
            prop_assert_eq!(on[d - 1] - on[0], d - 1);
            prop_assert!(completed_at.unwrap() < window);
        }

        #[test]
        fn ev_reaches_full_by_departure(
            actions in proptest::collection::vec(any::<bool>(), 48),
            window in 14usize..48,
        ) {
            let p = EvParams::default();
            let mut s = EvState::arrive(0, window, p.soc_min, 0.0, &p, DT).unwrap();
            for (t, &a) in actions.iter().enumerate().take(window) {
                let k = ev_backup_control(&s, a, t, &p);
                let out = ev_step(&s, k, &p, DT).unwrap();
                if let Some(soc) = out.departed_soc {
                    prop_assert_eq!(soc, p.soc_max);
                    prop_assert_eq!(t + 1, window);
                } else {
                    prop_assert!(out.state.soc >= p.soc_min && out.state.soc <= p.soc_max);
                }
                s = out.state;
            }
            prop_assert!(!s.u);
        }

        #[test]
        fn clamp_holds(t_in in -10.0f64..50.0, t_out in -20.0f64..50.0) {
            let p = HvacParams::default();
            let q = hvac_required_heat_rate(t_in, t_out, &p, DT).unwrap();
            prop_assert!(q.abs() <= p.q_max_kw);
        }
    }
}
