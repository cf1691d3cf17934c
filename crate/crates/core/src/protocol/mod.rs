//! Identifiers, wire messages and the contract every broadcast variant
//! implements so the simulator can drive it.

mod ids;
mod message;
mod process;
mod received;

pub use ids::{IdGenerator, MessageId, ProcessId};
pub use message::{
    DecodeError, Payload, PhaseTag, ProtocolMessage, VectorClock, CLOCK_ENTRY_BYTES, MESSAGE_ID_BYTES, PHASE_TAG_BYTES,
    TAG_BYTES,
};
pub use process::{ControlEvent, DeliveryCounters, Effect, JoinState, Outbox, Protocol, ProtocolKind};
pub use received::{OriginLog, ReceivedLog};
