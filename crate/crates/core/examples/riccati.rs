//! Closed-form Riccati coefficients against a fine RK4 integration.

use mfg_equilibrium::eqg::{riccati_closed_form, riccati_ode};
use mfg_equilibrium::model::TimeGrid;
use mfg_equilibrium::scenario::default_factor;

fn main() -> mfg_equilibrium::Result<()> {
    let spec = default_factor();
    let grid = TimeGrid::new(1.0, 50)?;
    let closed = riccati_closed_form(&spec, &grid)?;
    let ode = riccati_ode(&spec, &grid, 10_000)?;
    println!("roots rho+ = {:.6}, rho- = {:.6}", closed.rho_plus, closed.rho_minus);
    println!("{:>6} {:>12} {:>12} {:>12}", "t", "A", "B", "C");
    for k in (0..=grid.steps).step_by(10) {
        println!("{:>6.2} {:>12.8} {:>12.8} {:>12.8}", grid.t(k), closed.a[k], closed.b[k], closed.c[k]);
    }
    println!("sup |closed - rk4| = {:.2e}", closed.max_abs_diff(&ode));
    println!("y0(0, x0) = {:.8}", closed.value(0, spec.x0));
    Ok(())
}
