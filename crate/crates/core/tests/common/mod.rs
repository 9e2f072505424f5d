#![allow(dead_code)]

use std::path::PathBuf;

use hemslab::cli::{generate_synthetic, load_config, ScenarioConfig};
use hemslab::env::{EpisodePlan, EpisodeTrace, Scenario};

pub fn scenarios_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}

pub fn default_config() -> ScenarioConfig {
    load_config(scenarios_dir().join("default.toml")).expect("bundled config loads")
}

/// In-memory synthetic scenario with the bundled parameters and the given
/// seed, episode length and number of days.
pub fn synthetic_scenario(seed: u64, horizon: usize, days: usize) -> (ScenarioConfig, Scenario) {
    let mut cfg = default_config();
    cfg.seed = seed;
    cfg.grid.steps_per_episode = horizon;
    cfg.synth.days = days;
    let data = generate_synthetic(&cfg).expect("synthetic data");
    let sc = Scenario::new(
        cfg.grid.clone(),
        data.prices,
        data.weather,
        data.events,
        cfg.roster(),
        cfg.modes.windows.clone(),
        cfg.penalties.clone(),
    )
    .expect("scenario");
    (cfg, sc)
}

/// Hard-constraint violations of one rollout: shiftable jobs that do not run
/// exactly once as a contiguous block inside their window, EV sessions that
/// do not receive their required charge before departure, and any operation
/// outside a window.
pub fn constraint_violations(sc: &Scenario, plan: &EpisodePlan, trace: &EpisodeTrace) -> Vec<String> {
    let mut out = Vec::new();
    let h = plan.horizon;
    for (i, jobs) in plan.shiftable_jobs.iter().enumerate() {
        let k: Vec<bool> = trace.records.iter().map(|r| r.k[i]).collect();
        let mut allowed = vec![false; h];
        for job in jobs {
            let on: Vec<usize> = (job.t_a..job.t_b).filter(|&t| k[t]).collect();
            let contiguous = on.windows(2).all(|w| w[1] == w[0] + 1);
            if on.len() != job.duration || !contiguous {
                out.push(format!(
                    "{} job [{}, {}) ran at {:?}, needs {} contiguous steps",
                    plan.appliance_ids[i], job.t_a, job.t_b, on, job.duration
                ));
            }
            allowed[job.t_a..job.t_b].iter_mut().for_each(|a| *a = true);
        }
        for t in 0..h {
            if k[t] && !allowed[t] {
                out.push(format!("{} on outside its window at step {t}", plan.appliance_ids[i]));
            }
        }
    }
    if let Some(idx) = sc.roster.ev_index() {
        let k: Vec<bool> = trace.records.iter().map(|r| r.k[idx]).collect();
        let mut allowed = vec![false; h];
        for s in &plan.ev_sessions {
            let charged = (s.t_arr..s.t_dep).filter(|&t| k[t]).count();
            if charged != s.required_steps {
                out.push(format!(
                    "EV session [{}, {}) charged {charged} steps, needs {}",
                    s.t_arr, s.t_dep, s.required_steps
                ));
            }
            allowed[s.t_arr..s.t_dep].iter_mut().for_each(|a| *a = true);
        }
        for t in 0..h {
            if k[t] && !allowed[t] {
                out.push(format!("EV charging while absent at step {t}"));
            }
        }
    }
    out
}
