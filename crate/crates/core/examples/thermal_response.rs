//! Indoor temperature under the RC thermal model: a free-running house, then
//! the thermostat pulling it back to the setpoint with a bounded heat rate.

use hemslab::appliances::{
    etp_next_temperature, hvac_power, hvac_required_heat_rate, hvac_required_heat_rate_unclamped, HvacParams,
};

fn main() -> hemslab::Result<()> {
    let params = HvacParams::default();
    let dt = 0.25;
    let t_out = 33.0;

    println!("free response, T_out = {t_out} C");
    let mut t = params.t_set_c;
    for step in 0..=16 {
        if step % 4 == 0 {
            println!("  {:>4.1} h  T_in {t:.3}", step as f64 * dt);
        }
        t = etp_next_temperature(t, t_out, 0.0, false, &params, dt);
    }

    println!("recovery, one step per line");
    for _ in 0..4 {
        let wanted = hvac_required_heat_rate_unclamped(t, t_out, &params, dt)?;
        let q = hvac_required_heat_rate(t, t_out, &params, dt)?;
        let next = etp_next_temperature(t, t_out, q, true, &params, dt);
        println!(
            "  T_in {t:.3} -> {next:.3}  Q wanted {wanted:>7.2} kW, applied {q:>7.2} kW, electric {:.2} kW",
            hvac_power(q, true, params.cop)
        );
        t = next;
    }
    Ok(())
}
