//! Demonstration-free learning of muscle-driven walking on a planar biped.
//!
//! The crate bundles a musculoskeletal simulator ([`biomech`], [`muscle`],
//! [`contact`], [`terrain`]), the three-term walking reward with an
//! adaptively weighted effort cost ([`reward`], [`adapt`]), a relabeling
//! replay buffer ([`replay`]), a reference off-policy learner ([`agent`]) and
//! offline gait analysis ([`gaitlab`]).

// `!(x > 0.0)` validation is meant to reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adapt;
pub mod agent;
pub mod biomech;
pub mod cli;
pub mod config;
pub mod contact;
pub mod env;
pub mod error;
pub mod gaitlab;
pub mod muscle;
pub mod replay;
pub mod reward;
pub mod rollout;
pub mod terrain;
pub mod train;

pub use error::{Error, Result};
