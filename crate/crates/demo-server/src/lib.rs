//! Records human demonstrations: a websocket session steps a game at a fixed
//! tick rate under the player's latest action and appends finished episodes
//! to a demonstration archive.

mod error;
pub mod protocol;
pub mod replay;
pub mod server;
pub mod session;

pub use error::{Error, Result};
pub use protocol::{ClientMessage, FrameMessage, ServerMessage, FRAME_MESSAGE_BYTES};
pub use replay::{replay_archive, Replay};
pub use server::{default_assets_dir, DemoServer, ServerConfig, SessionSummary, DEFAULT_TICK_HZ};
pub use session::{Phase, Session};
