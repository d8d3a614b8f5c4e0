pub mod auth;
pub mod dns_engine;
pub mod fabric;
pub mod netsim;
pub mod packets;
pub mod portal;
pub mod scenario;
pub mod trace;
