//! Splitting an integrand into its tradeable and untradeable parts, and the
//! maps between excess returns, market price of risk and portfolios.

use mfg_equilibrium::model::{project, risk_premium_from_mu, Market};
use mfg_equilibrium::scenario::default_market;

fn main() -> mfg_equilibrium::Result<()> {
    let spec = default_market();
    let sigma = vec![vec![0.4, 0.1, 0.0], vec![0.1, 0.3, 0.2]];
    let z = [0.3, -0.2, 0.5];
    let (par, perp) = project(&z, &sigma)?;
    println!("z        = {z:?}");
    println!("z_par    = {par:.6?}");
    println!("z_perp   = {perp:.6?}");

    let mu = [0.05, 0.03];
    let theta = risk_premium_from_mu(&mu, &sigma)?;
    println!("theta    = {theta:.6?}");

    let market = Market::new(spec)?;
    let proj = market.at_time(0.0);
    println!("sigma theta = {:.6?}", proj.mu_from_theta(&theta));
    let pi = proj.pi_from_p(&par);
    println!("pi from z_par = {pi:.6?}, back to p = {:.6?}", proj.p_from_pi(&pi));
    println!("|(sigma sigma^T)^-1| = {:.4}", market.inverse_gram_bound());
    Ok(())
}
