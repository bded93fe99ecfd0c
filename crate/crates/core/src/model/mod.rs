//! Time grid, market, agents, factor dynamics and simulated paths.

pub mod agents;
pub mod factor;
pub mod grid;
pub mod market;
pub mod paths;
pub mod rng;

pub use agents::{gamma_hat, AgentParams, GammaDistribution};
pub use factor::FactorSpec;
pub use grid::TimeGrid;
pub use market::{project, risk_premium_from_mu, validate_market, Market, MarketSpec, Projector, SigmaSpec, ValidationReport};
pub use paths::{simulate_paths, PathBundle};
