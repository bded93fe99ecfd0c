//! Exponential-quadratic-Gaussian equilibrium: Riccati coefficients,
//! closed-form market price of risk and pathwise checks.

pub mod equilibrium;
pub mod quadrature;
pub mod riccati;

pub use equilibrium::{
    cole_hopf_idio, cole_hopf_martingale, equilibrium_path, fubini_malliavin_check, EquilibriumPath, FubiniReport,
    IdioBranch, MartingaleCheck,
};
pub use riccati::{riccati_closed_form, riccati_ode, riccati_roots, RiccatiSolution};
