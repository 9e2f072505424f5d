//! Generate the bundled synthetic household in memory and summarise it.
//!
//!     cargo run --example synthesize_scenario -- [days]

use hemslab::cli::{generate_synthetic, load_config};

fn main() -> hemslab::Result<()> {
    let mut cfg = load_config(concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/default.toml"))?;
    if let Some(days) = std::env::args().nth(1) {
        cfg.synth.days = days.parse().expect("days must be an integer");
    }
    let data = generate_synthetic(&cfg)?;
    let spd = cfg.grid.steps_per_day();

    println!("{} days, {} steps of {} min", cfg.synth.days, data.prices.len(), cfg.grid.step_minutes);
    println!("hour  mean price ($/MWh)  mean outdoor (C)");
    for hour in (0..24).step_by(2) {
        let idx: Vec<usize> = (0..cfg.synth.days)
            .flat_map(|d| (0..cfg.grid.steps_per_hour()).map(move |k| d * spd + hour * 4 + k))
            .collect();
        let p = idx.iter().map(|&i| data.prices.values()[i]).sum::<f64>() / idx.len() as f64;
        let t = idx.iter().map(|&i| data.weather.values()[i]).sum::<f64>() / idx.len() as f64;
        println!("{hour:>4}  {:>19.2}  {t:>16.2}", p * 1e3);
    }
    for id in ["DW", "WM", "EV"] {
        let n = data.events.events().iter().filter(|e| e.appliance_id == id).count();
        println!("{id}: {n} activations");
    }
    Ok(())
}
