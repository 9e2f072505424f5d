//! Cost-optimal schedules for one held-out day under each preference mode.

use hemslab::appliances::PreferenceMode;
use hemslab::cli::{build_scenario, evaluation_starts, load_config};
use hemslab::oracle::oracle_total_cost_with;

fn main() -> hemslab::Result<()> {
    let cfg = load_config(concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/default.toml"))?;
    let sc = build_scenario(&cfg)?;
    let start = evaluation_starts(&cfg, sc.len())[0];
    for mode in [PreferenceMode::Mode0, PreferenceMode::Mode1, PreferenceMode::Mode2] {
        let plan = sc.plan(start, &vec![mode; sc.roster.len()])?;
        let o = oracle_total_cost_with(&sc, &plan, &cfg.oracle)?;
        println!("{}: total ${:.4} (HVAC within ${:.4} of optimal)", mode.label(), o.total(), o.hvac_error_bound);
        for (i, id) in o.appliance_ids.iter().enumerate() {
            // First 24 hours, one character per 15 minutes.
            let bits: String = o.schedules[i][..96].iter().map(|&b| if b { '#' } else { '.' }).collect();
            println!("  {id:>4} ${:>7.4} {bits}", o.costs.per_appliance[i].1);
        }
    }
    Ok(())
}
