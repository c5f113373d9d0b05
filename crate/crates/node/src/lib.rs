pub mod api;
pub mod cli;
pub mod client;
pub mod config;
pub mod network;
pub mod node;
pub mod scenario;
pub mod sink;
pub mod store;
pub mod testkit;
pub mod views;
