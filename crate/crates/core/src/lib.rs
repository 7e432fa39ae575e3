//! Simulation core for safe strategic bidding of a virtual power plant (VPP)
//! in a uniform-price day-ahead auction.
//!
//! The crate is `no_std` (it needs `alloc`) and performs no IO. The pieces:
//!
//! * [`grid`]: radial network model, DistFlow backward/forward sweep, limit checks.
//! * [`ders`]: capability sets of conventional units, renewables, storage and loads.
//! * [`market`]: merit-order clearing, rival bid generation, settlement.
//! * [`dispatch`]: internal optimal power flow and the feasible PCC export interval.
//! * [`shield`]: projection of a bid quantity onto the feasible interval.
//! * [`agent`]: DDPG from scratch (MLP, Adam, replay memory, target networks).
//! * [`env`]: the bidding MDP wiring shield, market and dispatch together.
//!
//! Enable the `std` feature to get runtime SIMD detection in the matrix kernels.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod agent;
pub mod ders;
pub mod dispatch;
pub mod env;
pub mod grid;
pub mod market;
pub mod shield;

mod lp;
mod math;
