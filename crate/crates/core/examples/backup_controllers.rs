//! Backup controllers overriding an agent that never wants to run anything:
//! the dishwasher still starts in time to meet its deadline and the EV still
//! leaves charged.

use hemslab::appliances::{
    ev_backup_control, ev_step, sa_backup_control, sa_step, EvParams, EvState, ShiftableApplianceState,
};

fn main() -> hemslab::Result<()> {
    let dt = 0.25;
    let mut dw = ShiftableApplianceState::activate(2, 12, 4, 0.0)?;
    print!("dishwasher window [2, 12), 4 steps:  ");
    for t in 0..14 {
        let k = sa_backup_control(&dw, false, t);
        print!("{}", if k { '#' } else { '.' });
        dw = sa_step(&dw, k, t)?.state;
    }
    println!();

    let params = EvParams::default();
    let mut ev = EvState::arrive(0, 24, 0.3, 0.0, &params, dt)?;
    print!("EV present [0, 24), arrives at 30%:  ");
    let mut departed = None;
    for t in 0..24 {
        let k = ev_backup_control(&ev, false, t, &params);
        print!("{}", if k { '#' } else { '.' });
        let out = ev_step(&ev, k, &params, dt)?;
        departed = departed.or(out.departed_soc);
        ev = out.state;
    }
    println!();
    if let Some(soc) = departed {
        println!("EV departed at {:.1}% state of charge", soc * 100.0);
    }
    Ok(())
}
