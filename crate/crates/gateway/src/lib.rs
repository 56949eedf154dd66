//! Network front door for the navigation agent: wire schema, client
//! registry, the deterministic message engine and the live servers.

pub mod engine;
pub mod registry;
pub mod server;
pub mod wire;

pub use engine::{Delivery, Engine, EngineConfig, GatewayEvent};
pub use registry::{ClientRegistry, ConnId};
pub use server::{start, RunningGateway, ServerConfig, ServerError};
pub use wire::{Body, DisplayOp, ErrorCode, WireMessage};
