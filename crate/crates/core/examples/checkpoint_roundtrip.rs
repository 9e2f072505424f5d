//! Save a network with its optimiser state, reload it, and check that the
//! reloaded copy answers bit for bit and that a mismatched shape is refused.

use hemslab::agent::DqnAgent;
use hemslab::neural::{AdamConfig, Architecture, Checkpoint};

fn main() -> hemslab::Result<()> {
    let arch = Architecture::new(18, 16);
    let mut agent = DqnAgent::new(arch, AdamConfig::default(), 3)?;
    let x = vec![0.5; 18];
    agent.main.train_batch(&[&x], &[4], &[1.0], &mut agent.optimizer)?;
    agent.gradient_steps = 1;

    let dir = std::env::temp_dir().join("hemslab_checkpoint_example");
    std::fs::create_dir_all(&dir).expect("temp dir");
    let path = dir.join("agent.bin");
    agent.checkpoint().save(&path)?;
    let bytes = std::fs::metadata(&path).expect("written").len();
    let back = Checkpoint::load_for(&path, arch)?;
    let same = agent.main.forward(&x)? == back.network.forward(&x)?;
    println!("{} parameters, {bytes} bytes, identical outputs: {same}", arch.param_count());
    println!("optimiser steps restored: {}", back.optimizer.steps());

    match Checkpoint::load_for(&path, Architecture::new(18, 8)) {
        Err(e) => println!("loading into an 8-action network: {e}"),
        Ok(_) => println!("unexpectedly accepted a mismatched network"),
    }
    Ok(())
}
