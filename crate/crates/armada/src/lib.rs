pub use armada_core as core;

pub mod cli;
pub mod config;
pub mod error;
pub mod events;
pub mod formats;
pub mod journal;
pub mod service;
pub mod sim;
pub mod store;
