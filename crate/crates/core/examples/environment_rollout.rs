//! One episode of the household environment under a uniformly random policy,
//! with the reward split by appliance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hemslab::cli::{build_scenario, evaluation_starts, load_config};
use hemslab::env::{episode_cost, Environment, ModeSelection};

fn main() -> hemslab::Result<()> {
    let cfg = load_config(concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/default.toml"))?;
    let sc = build_scenario(&cfg)?;
    let start = evaluation_starts(&cfg, sc.len())[0];
    let mut env = Environment::new(&sc, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = env.action_count();
    let trace = env.rollout(start, &ModeSelection::Sample, |_| rng.random_range(0..n))?;
    let plan = env.plan().expect("episode ran");

    println!("start step {start}, modes {:?}", plan.modes);
    println!("observation length {}, {} joint actions", env.observation_len(), n);
    let ids = &trace.appliance_ids;
    let mut per = vec![0.0; ids.len()];
    for r in &trace.records {
        for (i, v) in r.reward.shiftable.iter().enumerate() {
            per[i] += v;
        }
        per[ids.len() - 2] += r.reward.hvac;
        per[ids.len() - 1] += r.reward.ev;
    }
    let costs = episode_cost(&trace, sc.grid.dt_hours());
    for (i, id) in ids.iter().enumerate() {
        println!("{id:>5}  reward {:>9.3}  cost ${:.3}", per[i], costs.per_appliance[i].1);
    }
    println!("total  reward {:>9.3}  cost ${:.3}", trace.total_reward(), costs.total);
    println!("steps outside the comfort band: {}", trace.comfort_violations());
    Ok(())
}
