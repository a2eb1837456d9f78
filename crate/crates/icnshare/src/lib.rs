//! Secure content sharing through semi-trusted storage nodes.
//!
//! A content owner seals each item once with a fresh symmetric key and
//! hands the sealed item — plus the content key encrypted to an identity
//! only the owner controls — to a storage node. The node can hand that
//! key record to an authorized subscriber by *re-encrypting* it with a
//! key the owner delegated for exactly that subscriber (or policy
//! member), without ever being able to read the content itself.
//! Subscribers authenticate to nodes with a short handshake built from
//! the same identity-encryption primitive, so no certificates or prior
//! shared secrets are needed, and access is granted or revoked by editing
//! a table row rather than re-keying content.
//!
//! The pieces:
//!
//! - [`content`]: hybrid sealing of item bodies and their key records.
//! - [`node`]: the storage node's tables, control operations,
//!   authorization, rotation, and persistence.
//! - [`handshake`]: session establishment and the sealed channel.
//! - [`proto`]: wire frames, the client, and the node service loop.
//! - [`server`]: the threaded TCP front end.
//! - [`directory`]: identity-to-parameters resolution.
//! - [`keyfile`]: principal key material and the owner-side toolkit.
//! - [`overhead`]: the analytical storage/revocation cost model and
//!   micro-benchmarks.

pub mod content;
pub mod directory;
pub mod handshake;
pub mod keyfile;
pub mod node;
pub mod overhead;
pub mod proto;
pub mod server;
pub mod util;

pub use content::{
    open_item_as_delegatee, open_item_as_owner, seal_item, ContentError, SealedBody, SealedItem,
};
pub use directory::{Directory, DirectoryError, DirectoryRecord, FileDirectory, MemoryDirectory};
pub use handshake::{
    respond_open, HandshakeError, HandshakeSession, Msg1, Msg2, Msg3, PendingRespond, Plane, Role,
};
pub use keyfile::{build_rotation_bundle, KeyFile, KeyFileError, OwnerError};
pub use node::{
    body_ref_for, policy_identity, scope_covers, AuditCode, BodyStore, Construction, Denied,
    FileBodyStore, ItemRecord, ItemSummary, MemoryBodyStore, NodeError, NodeTables, PolicyRecord,
    RotationBundle, StateSummary, SubscriberRecord, CONTROL_SCOPE, RESERVED_PREFIX,
};
pub use overhead::{
    bench_crypto, revocation_cost, storage_overhead, sweep, sweep_csv, BenchReport, OverheadScenario,
    RevocationCost, SchemeKind, SizeConstants, SweepRow, SweepVariable,
};
pub use proto::{
    ContentReply, ContentRequest, ControlReply, ControlRequest, Frame, FrameTransport,
    InProcTransport, NodeClient, NodeService, ProtoError, TcpTransport, DENY_MESSAGE,
};
pub use server::NodeServer;
