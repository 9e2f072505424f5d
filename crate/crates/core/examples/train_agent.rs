//! Train the dueling double DQN on the bundled scenario and write the
//! learning curve and checkpoint.
//!
//!     cargo run --release --example train_agent -- [episodes] [out_dir]

use std::path::PathBuf;

use hemslab::cli::{cmd_train, load_config};

fn main() -> hemslab::Result<()> {
    let mut args = std::env::args().skip(1);
    let mut cfg = load_config(concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/default.toml"))?;
    cfg.training.episodes = args.next().map_or(100, |e| e.parse().expect("episodes must be an integer"));
    let out = args.next().map_or_else(|| PathBuf::from("runs/train_agent"), PathBuf::from);
    let report = cmd_train(&cfg, &out, false)?;
    let window = (report.curve.len() / 10).max(1);
    for chunk in report.curve.chunks(window) {
        let mean = chunk.iter().map(|p| p.cum_reward).sum::<f64>() / chunk.len() as f64;
        println!("episodes {:>5}..{:<5} mean reward {mean:>9.3}", chunk[0].episode, chunk[chunk.len() - 1].episode);
    }
    println!("checkpoint: {}", report.checkpoint.display());
    Ok(())
}
