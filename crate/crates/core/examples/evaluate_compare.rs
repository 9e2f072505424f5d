//! Greedy agent versus oracle on the held-out days, per mode.
//!
//!     cargo run --release --example evaluate_compare -- [checkpoint]
//!
//! Without a checkpoint a short training run is done first.

use std::path::PathBuf;

use hemslab::appliances::PreferenceMode;
use hemslab::cli::{cmd_compare, cmd_train, load_config, ModeArg};

fn main() -> hemslab::Result<()> {
    let mut cfg = load_config(concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/default.toml"))?;
    let out = PathBuf::from("runs/evaluate_compare");
    let checkpoint = match std::env::args().nth(1) {
        Some(p) => PathBuf::from(p),
        None => {
            cfg.training.episodes = 60;
            cmd_train(&cfg, &out, true)?.checkpoint
        }
    };
    println!("mode     agent ($)  oracle ($)   gap");
    for mode in [PreferenceMode::Mode0, PreferenceMode::Mode1, PreferenceMode::Mode2] {
        let r = cmd_compare(&cfg, &checkpoint, ModeArg::Uniform(mode), None, &out)?;
        println!(
            "{:<7} {:>10.3} {:>11.3} {:>6.1}%",
            mode.label(),
            r.agent_cost,
            r.oracle_cost,
            100.0 * r.relative_gap
        );
    }
    Ok(())
}
