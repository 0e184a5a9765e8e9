#![cfg_attr(not(test), no_std)]
//! Core model of the miniorc platform: template handling, site catalog,
//! brokering, agreements, data management, the two-level cluster scheduler,
//! elasticity, deployment orchestration and identity.
//!
//! Nothing here reads a clock or touches the filesystem; time is always an
//! explicit argument.

extern crate alloc;

pub mod autoscaler;
pub mod broker;
pub mod catalog;
pub mod datamgr;
pub mod iam;
pub mod ids;
pub mod msa;
pub mod orchestrator;
pub mod platform;
pub mod resources;
pub mod slam;
pub mod tosca;
