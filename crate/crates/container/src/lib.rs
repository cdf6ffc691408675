//! The Ozy container: routes Tell and Ask messages to long-running
//! processes of many tenants, keeps them durable across restarts and
//! connects them to external services.

pub mod address;
pub mod clock;
pub mod config;
pub mod connectors;
pub mod correlation;
pub mod deadletter;
pub mod envelope;
pub mod hub;
pub mod reply;
pub mod runtime;
pub mod server;

pub use address::Address;
pub use clock::Clock;
pub use config::ContainerConfig;
pub use envelope::{Action, Args, Envelope, Mode};
pub use reply::{AskOutcome, ReplySlot};
pub use runtime::{Container, Delivery, ProcessInfo, RouteError};
