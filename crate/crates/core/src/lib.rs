//! Discrete-time versus right-point Riemann-sum returns for reinforcement
//! learning on discretized continuous-time tasks.
//!
//! * [`signals`]: random continuous-time reward signals.
//! * [`quadrature`]: the mixed (discrete-time return) sum, the right-point
//!   sum, and a fine mid-point reference.
//! * [`servo_env`]: a DC-motor reacher simulated at 0.1 ms resolution and
//!   sampled at stochastic action-cycle times.
//! * [`reinforce`]: online REINFORCE with eligibility traces.
//! * [`harness`]: experiment sweeps producing CSV tables.

pub mod rng;
pub mod signals;
pub mod quadrature;
pub mod servo_env;
pub mod reinforce;
pub mod harness;
