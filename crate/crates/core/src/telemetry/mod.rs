//! Device-side AT-command session emulation and the cloud-side gateway that
//! receives, decodes and stores transparent-mode sensor frames.
//!
//! Wire protocol:
//! * before transparent mode, CRLF-terminated AT commands, answered with
//!   `OK\r\n`, `ERROR\r\n`, `OK\r\nready\r\n` (reset) or `>` (send)
//! * in transparent mode, newline-terminated ASCII frames
//!   `device_id,tick,channel,value\n`
//! * a chunk of exactly `+++` leaves transparent mode

pub mod at;
pub mod frame;
pub mod gateway;
pub mod store;

pub use at::{at_handle, AtSession, AtState};
pub use frame::{decode_frame, encode_frame, FrameError, SensorFrame};
pub use gateway::{spawn_gateway, GatewayHandle, IngestCore, LineSplitter, QualityMonitor};
pub use store::{Reject, Store, StoredRecord};

/// Table I's port.
pub const DEFAULT_PORT: u16 = 8000;
