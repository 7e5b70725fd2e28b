//! Line-delimited JSON session service.

mod handler;
mod protocol;
mod server;

pub use handler::{default_seed, reconstruct_stream, Handler};
pub use protocol::{ConfigPatch, Envelope, JointInfo, Message, PoseFrame, RootPayload, PROTOCOL_VERSION};
pub use server::{serve_connection, serve_session, Server};
