//! A mock MLaaS endpoint in front of an [`Oracle`](crate::oracle::Oracle)
//! and the matching client.

mod client;
pub mod protocol;
mod server;

pub use client::{GatewayClient, RemoteReply};
pub use server::{serve, AccountConfig, ServerHandle};
