//! Locational pricing of EV charging stations.
//!
//! A distribution operator sets station prices; a traffic operator answers
//! with a least-cost assignment of vehicles to routes and charging stations.
//! The traffic response is computed offline as an explicit piecewise-affine
//! demand function of the prices, which turns the pricing problem into one
//! convex QP per critical region.

pub mod bilevel;
pub mod error;
pub mod grid;
pub mod mpqp;
pub mod qp;
pub mod scenario;
pub mod synthetic;
pub mod traffic;

pub use error::{Error, Result};
