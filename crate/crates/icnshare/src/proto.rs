//! Wire protocol: length-prefixed frames for the handshake and the sealed
//! channel, the request/reply messages that ride inside it, transports,
//! the subscriber-side client, and the node-side service loop.
//!
//! A connection carries exactly one session. The three handshake messages
//! travel as their own frame types; after that every payload is sealed
//! under the session key and framed as either a content frame (fetch
//! requests and replies) or a control frame (owner management
//! operations). Refusals of any kind are a bare deny frame with a fixed,
//! uninformative message.

use std::io::{Read, Write};
use std::net::TcpStream;
use std::path::PathBuf;
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, Mutex, RwLock};

use rand::{CryptoRng, RngCore};

use ibpre::codec::{Reader, Writer};
use ibpre::{
    CodecError, DomainParams, Identity, LeveledCiphertext, ReencryptionKey, UserSecretKey,
};

use crate::content::SealedBody;
use crate::handshake::{
    respond_open, HandshakeError, HandshakeSession, Msg1, Msg2, Msg3, Plane,
};
use crate::node::{
    BodyStore, NodeError, NodeTables, RotationBundle, StateSummary, CONTROL_SCOPE,
};
use crate::util::write_atomic;

/// Hard cap on a frame's payload, to bound allocation on hostile input.
pub const MAX_FRAME_LEN: u64 = 64 * 1024 * 1024;

/// The only thing a refused peer ever learns.
pub const DENY_MESSAGE: &str = "not found or not authorized";

const FT_MSG1: u8 = 0x01;
const FT_MSG2: u8 = 0x02;
const FT_MSG3: u8 = 0x03;
// The sealed-frame type bytes double as the channel AEAD's plane binding,
// so they must equal Plane::{Content,Control}.byte().
const FT_CONTENT: u8 = 0x04;
const FT_CONTROL: u8 = 0x05;
const FT_DENY: u8 = 0x06;

/// Protocol-level failures.
#[derive(Debug, thiserror::Error)]
pub enum ProtoError {
    /// Transport I/O failed.
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),

    /// A frame or message failed to decode.
    #[error("malformed frame: {0}")]
    Codec(#[from] CodecError),

    /// The peer closed the connection.
    #[error("connection closed by peer")]
    Closed,

    /// Declared frame length exceeds [`MAX_FRAME_LEN`].
    #[error("frame of {0} bytes exceeds the size limit")]
    Oversize(u64),

    /// Unknown frame type byte.
    #[error("unknown frame type {0:#04x}")]
    UnknownFrameType(u8),

    /// The peer refused the handshake or the request.
    #[error("peer refused: {0}")]
    Denied(String),

    /// Session establishment or channel sealing failed.
    #[error("session failure: {0}")]
    Handshake(#[from] HandshakeError),

    /// A frame arrived that does not fit the protocol state.
    #[error("unexpected frame for the current protocol state")]
    UnexpectedFrame,

    /// The node reported that a control operation failed.
    #[error("control operation failed: {0}")]
    Control(String),
}

/// One wire frame.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Frame {
    /// Handshake step 1.
    Msg1(Msg1),
    /// Handshake step 2.
    Msg2(Msg2),
    /// Handshake step 3.
    Msg3(Msg3),
    /// Sealed content-plane payload.
    Content(Vec<u8>),
    /// Sealed control-plane payload.
    Control(Vec<u8>),
    /// Refusal; carries only the fixed deny message.
    Deny(String),
}

impl Frame {
    /// The frame's wire type byte.
    pub fn type_byte(&self) -> u8 {
        match self {
            Frame::Msg1(_) => FT_MSG1,
            Frame::Msg2(_) => FT_MSG2,
            Frame::Msg3(_) => FT_MSG3,
            Frame::Content(_) => FT_CONTENT,
            Frame::Control(_) => FT_CONTROL,
            Frame::Deny(_) => FT_DENY,
        }
    }
}

/// Encode a frame body (type byte plus payload, without the length
/// prefix).
pub fn encode_frame(frame: &Frame) -> Vec<u8> {
    let mut out = vec![frame.type_byte()];
    match frame {
        Frame::Msg1(m) => out.extend_from_slice(&m.to_bytes()),
        Frame::Msg2(m) => out.extend_from_slice(&m.to_bytes()),
        Frame::Msg3(m) => out.extend_from_slice(&m.to_bytes()),
        Frame::Content(p) | Frame::Control(p) => out.extend_from_slice(p),
        Frame::Deny(message) => out.extend_from_slice(message.as_bytes()),
    }
    out
}

/// Inverse of [`encode_frame`]. Never panics on hostile input.
pub fn decode_frame(body: &[u8]) -> Result<Frame, ProtoError> {
    let (&type_byte, payload) = body.split_first().ok_or(ProtoError::Closed)?;
    match type_byte {
        FT_MSG1 => Ok(Frame::Msg1(Msg1::from_bytes(payload)?)),
        FT_MSG2 => Ok(Frame::Msg2(Msg2::from_bytes(payload)?)),
        FT_MSG3 => Ok(Frame::Msg3(Msg3::from_bytes(payload)?)),
        FT_CONTENT => Ok(Frame::Content(payload.to_vec())),
        FT_CONTROL => Ok(Frame::Control(payload.to_vec())),
        FT_DENY => Ok(Frame::Deny(
            String::from_utf8(payload.to_vec())
                .map_err(|_| CodecError::InvalidUtf8("deny_message"))?,
        )),
        other => Err(ProtoError::UnknownFrameType(other)),
    }
}

/// Write one length-prefixed frame.
pub fn write_frame(w: &mut impl Write, frame: &Frame) -> Result<(), ProtoError> {
    let body = encode_frame(frame);
    if body.len() as u64 > MAX_FRAME_LEN {
        return Err(ProtoError::Oversize(body.len() as u64));
    }
    w.write_all(&(body.len() as u32).to_be_bytes())?;
    w.write_all(&body)?;
    w.flush()?;
    Ok(())
}

/// Read one length-prefixed frame. A clean close before the length
/// prefix reads as [`ProtoError::Closed`].
pub fn read_frame(r: &mut impl Read) -> Result<Frame, ProtoError> {
    let mut len_bytes = [0u8; 4];
    if let Err(e) = r.read_exact(&mut len_bytes) {
        return Err(if e.kind() == std::io::ErrorKind::UnexpectedEof {
            ProtoError::Closed
        } else {
            ProtoError::Io(e)
        });
    }
    let len = u32::from_be_bytes(len_bytes) as u64;
    if len == 0 {
        return Err(ProtoError::Closed);
    }
    if len > MAX_FRAME_LEN {
        return Err(ProtoError::Oversize(len));
    }
    let mut body = vec![0u8; len as usize];
    r.read_exact(&mut body)?;
    decode_frame(&body)
}

/// A content-plane request.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ContentRequest {
    /// Fetch one item's key record and sealed body.
    Get {
        /// The item to fetch.
        item: Identity,
    },
}

impl ContentRequest {
    /// Serialize.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::bare();
        match self {
            ContentRequest::Get { item } => {
                w.u8(1);
                w.bytes(&item.to_bytes());
            }
        }
        w.finish()
    }

    /// Inverse of [`to_bytes`](Self::to_bytes).
    pub fn from_bytes(buf: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader::bare(buf);
        let request = match r.u8("request")? {
            1 => ContentRequest::Get { item: Identity::from_bytes(r.bytes("item")?)? },
            _ => return Err(CodecError::InvalidValue("request")),
        };
        r.finish()?;
        Ok(request)
    }
}

/// A content-plane reply.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ContentReply {
    /// The requested item: a key record the requester can decrypt (level
    /// 1 for the owner, level 2 otherwise) and the sealed body.
    Item {
        /// Key record addressed to the requester.
        key_record: LeveledCiphertext,
        /// The sealed body.
        body: SealedBody,
    },
}

impl ContentReply {
    /// Serialize.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::bare();
        match self {
            ContentReply::Item { key_record, body } => {
                w.u8(1);
                w.bytes(&key_record.to_bytes());
                w.bytes(&body.to_bytes());
            }
        }
        w.finish()
    }

    /// Inverse of [`to_bytes`](Self::to_bytes).
    pub fn from_bytes(buf: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader::bare(buf);
        let reply = match r.u8("reply")? {
            1 => ContentReply::Item {
                key_record: LeveledCiphertext::from_bytes(r.bytes("key_record")?)?,
                body: SealedBody::from_bytes(r.bytes("body")?)?,
            },
            _ => return Err(CodecError::InvalidValue("reply")),
        };
        r.finish()?;
        Ok(reply)
    }
}

/// An owner management operation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ControlRequest {
    /// Report the node's tables.
    GetState,
    /// Add a subscriber row.
    Register {
        /// Subscriber identity.
        id: Identity,
        /// Their published parameters.
        params: DomainParams,
        /// Owner-to-subscriber key (per-subscriber layout only).
        rk: Option<ReencryptionKey>,
    },
    /// Create a policy.
    DefinePolicy {
        /// Policy name.
        name: String,
        /// Initial members, with keys in the per-policy-member layout.
        members: Vec<(Identity, Option<ReencryptionKey>)>,
    },
    /// Edit a policy's membership.
    UpdatePolicy {
        /// Policy name.
        name: String,
        /// Members to add.
        add: Vec<(Identity, Option<ReencryptionKey>)>,
        /// Members to remove (revocation).
        remove: Vec<Identity>,
    },
    /// Publish an item.
    PublishItem {
        /// Item name.
        item: Identity,
        /// Policy granting access (`None` = owner-only).
        policy: Option<String>,
        /// Level-1 key record.
        key_record: LeveledCiphertext,
        /// Sealed body.
        body: SealedBody,
        /// Secret key for the item's own scope identity.
        scope_key: UserSecretKey,
    },
    /// Publish an item sealed by someone else, recording its author.
    PublishForeign {
        /// Item name.
        item: Identity,
        /// Policy granting access (`None` = owner-only).
        policy: Option<String>,
        /// Level-1 key record (sealed by the author to this node's
        /// owner or policy identity).
        key_record: LeveledCiphertext,
        /// Sealed body.
        body: SealedBody,
        /// Secret key for the item's own scope identity.
        scope_key: UserSecretKey,
        /// The author the item came from.
        from: Identity,
    },
    /// Delegate a name prefix so one session can fetch everything under
    /// it.
    InstallScopeKey {
        /// The scope (a name or name prefix).
        scope: String,
        /// Its secret key.
        key: UserSecretKey,
    },
    /// Replace all owner key material after a parameter rotation.
    Rotate {
        /// The replacement key material.
        bundle: RotationBundle,
    },
}

impl ControlRequest {
    /// Serialize.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::bare();
        match self {
            ControlRequest::GetState => w.u8(1),
            ControlRequest::Register { id, params, rk } => {
                w.u8(2);
                w.bytes(&id.to_bytes());
                w.bytes(&params.to_bytes());
                write_opt(&mut w, rk.as_ref().map(|rk| rk.to_bytes()));
            }
            ControlRequest::DefinePolicy { name, members } => {
                w.u8(3);
                w.bytes(name.as_bytes());
                write_members(&mut w, members);
            }
            ControlRequest::UpdatePolicy { name, add, remove } => {
                w.u8(4);
                w.bytes(name.as_bytes());
                write_members(&mut w, add);
                w.u32(remove.len() as u32);
                for id in remove {
                    w.bytes(&id.to_bytes());
                }
            }
            ControlRequest::PublishItem { item, policy, key_record, body, scope_key } => {
                w.u8(5);
                write_publish(&mut w, item, policy, key_record, body, scope_key);
            }
            ControlRequest::PublishForeign {
                item,
                policy,
                key_record,
                body,
                scope_key,
                from,
            } => {
                w.u8(6);
                write_publish(&mut w, item, policy, key_record, body, scope_key);
                w.bytes(&from.to_bytes());
            }
            ControlRequest::InstallScopeKey { scope, key } => {
                w.u8(7);
                w.bytes(scope.as_bytes());
                w.bytes(&key.to_bytes());
            }
            ControlRequest::Rotate { bundle } => {
                w.u8(8);
                w.bytes(&bundle.to_bytes());
            }
        }
        w.finish()
    }

    /// Inverse of [`to_bytes`](Self::to_bytes).
    pub fn from_bytes(buf: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader::bare(buf);
        let request = match r.u8("operation")? {
            1 => ControlRequest::GetState,
            2 => ControlRequest::Register {
                id: Identity::from_bytes(r.bytes("id")?)?,
                params: DomainParams::from_bytes(r.bytes("params")?)?,
                rk: read_opt(&mut r, "rk")?.map(ReencryptionKey::from_bytes).transpose()?,
            },
            3 => ControlRequest::DefinePolicy {
                name: r.string("name")?,
                members: read_members(&mut r)?,
            },
            4 => {
                let name = r.string("name")?;
                let add = read_members(&mut r)?;
                let mut remove = Vec::new();
                for _ in 0..r.u32("remove_count")? {
                    remove.push(Identity::from_bytes(r.bytes("remove_id")?)?);
                }
                ControlRequest::UpdatePolicy { name, add, remove }
            }
            5 => {
                let (item, policy, key_record, body, scope_key) = read_publish(&mut r)?;
                ControlRequest::PublishItem { item, policy, key_record, body, scope_key }
            }
            6 => {
                let (item, policy, key_record, body, scope_key) = read_publish(&mut r)?;
                let from = Identity::from_bytes(r.bytes("from")?)?;
                ControlRequest::PublishForeign { item, policy, key_record, body, scope_key, from }
            }
            7 => ControlRequest::InstallScopeKey {
                scope: r.string("scope")?,
                key: UserSecretKey::from_bytes(r.bytes("key")?)?,
            },
            8 => ControlRequest::Rotate {
                bundle: RotationBundle::from_bytes(r.bytes("bundle")?)?,
            },
            _ => return Err(CodecError::InvalidValue("operation")),
        };
        r.finish()?;
        Ok(request)
    }
}

/// The node's answer to a control operation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ControlReply {
    /// Operation applied.
    Ok,
    /// State report.
    State(StateSummary),
    /// Operation refused, with the validation error.
    Err(String),
}

impl ControlReply {
    /// Serialize.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::bare();
        match self {
            ControlReply::Ok => w.u8(1),
            ControlReply::State(state) => {
                w.u8(2);
                w.bytes(&state.to_bytes());
            }
            ControlReply::Err(message) => {
                w.u8(3);
                w.bytes(message.as_bytes());
            }
        }
        w.finish()
    }

    /// Inverse of [`to_bytes`](Self::to_bytes).
    pub fn from_bytes(buf: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader::bare(buf);
        let reply = match r.u8("reply")? {
            1 => ControlReply::Ok,
            2 => ControlReply::State(StateSummary::from_bytes(r.bytes("state")?)?),
            3 => ControlReply::Err(r.string("message")?),
            _ => return Err(CodecError::InvalidValue("reply")),
        };
        r.finish()?;
        Ok(reply)
    }
}

fn write_opt(w: &mut Writer, value: Option<Vec<u8>>) {
    match value {
        Some(bytes) => {
            w.u8(1);
            w.bytes(&bytes);
        }
        None => w.u8(0),
    }
}

fn read_opt<'a>(r: &mut Reader<'a>, field: &'static str) -> Result<Option<&'a [u8]>, CodecError> {
    match r.u8(field)? {
        0 => Ok(None),
        1 => Ok(Some(r.bytes(field)?)),
        _ => Err(CodecError::InvalidValue(field)),
    }
}

fn write_members(w: &mut Writer, members: &[(Identity, Option<ReencryptionKey>)]) {
    w.u32(members.len() as u32);
    for (id, rk) in members {
        w.bytes(&id.to_bytes());
        write_opt(w, rk.as_ref().map(|rk| rk.to_bytes()));
    }
}

fn read_members(
    r: &mut Reader<'_>,
) -> Result<Vec<(Identity, Option<ReencryptionKey>)>, CodecError> {
    let mut members = Vec::new();
    for _ in 0..r.u32("member_count")? {
        let id = Identity::from_bytes(r.bytes("member_id")?)?;
        let rk = read_opt(r, "member_rk")?.map(ReencryptionKey::from_bytes).transpose()?;
        members.push((id, rk));
    }
    Ok(members)
}

fn write_publish(
    w: &mut Writer,
    item: &Identity,
    policy: &Option<String>,
    key_record: &LeveledCiphertext,
    body: &SealedBody,
    scope_key: &UserSecretKey,
) {
    w.bytes(&item.to_bytes());
    write_opt(w, policy.as_ref().map(|p| p.as_bytes().to_vec()));
    w.bytes(&key_record.to_bytes());
    w.bytes(&body.to_bytes());
    w.bytes(&scope_key.to_bytes());
}

type PublishFields =
    (Identity, Option<String>, LeveledCiphertext, SealedBody, UserSecretKey);

fn read_publish(r: &mut Reader<'_>) -> Result<PublishFields, CodecError> {
    let item = Identity::from_bytes(r.bytes("item")?)?;
    let policy = read_opt(r, "policy")?
        .map(|b| String::from_utf8(b.to_vec()).map_err(|_| CodecError::InvalidUtf8("policy")))
        .transpose()?;
    let key_record = LeveledCiphertext::from_bytes(r.bytes("key_record")?)?;
    let body = SealedBody::from_bytes(r.bytes("body")?)?;
    let scope_key = UserSecretKey::from_bytes(r.bytes("scope_key")?)?;
    Ok((item, policy, key_record, body, scope_key))
}

/// A bidirectional, frame-oriented connection.
pub trait FrameTransport {
    /// Send one frame.
    fn send(&mut self, frame: &Frame) -> Result<(), ProtoError>;

    /// Receive the next frame, blocking until one arrives or the peer
    /// closes.
    fn recv(&mut self) -> Result<Frame, ProtoError>;
}

/// Frames over a TCP stream.
pub struct TcpTransport {
    stream: TcpStream,
}

impl TcpTransport {
    /// Wrap a connected stream.
    pub fn new(stream: TcpStream) -> Self {
        let _ = stream.set_nodelay(true);
        TcpTransport { stream }
    }
}

impl FrameTransport for TcpTransport {
    fn send(&mut self, frame: &Frame) -> Result<(), ProtoError> {
        write_frame(&mut self.stream, frame)
    }

    fn recv(&mut self) -> Result<Frame, ProtoError> {
        read_frame(&mut self.stream)
    }
}

/// In-process transport for tests: a pair of connected endpoints that also
/// record the type byte of every frame they send, so tests can count
/// exactly what crossed the wire.
pub struct InProcTransport {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
    sent_log: Arc<Mutex<Vec<u8>>>,
}

impl InProcTransport {
    /// A connected pair (a, b): what a sends, b receives, and vice versa.
    pub fn pair() -> (Self, Self) {
        let (tx_ab, rx_ab) = channel();
        let (tx_ba, rx_ba) = channel();
        let a = InProcTransport { tx: tx_ab, rx: rx_ba, sent_log: Arc::default() };
        let b = InProcTransport { tx: tx_ba, rx: rx_ab, sent_log: Arc::default() };
        (a, b)
    }

    /// Type bytes of every frame sent through this endpoint, in order.
    pub fn sent_frame_types(&self) -> Vec<u8> {
        self.sent_log.lock().expect("transport log lock poisoned").clone()
    }

    /// A handle to the sent-frame log that stays readable after the
    /// transport is handed to a client or service.
    pub fn sent_log_handle(&self) -> Arc<Mutex<Vec<u8>>> {
        Arc::clone(&self.sent_log)
    }
}

impl FrameTransport for InProcTransport {
    fn send(&mut self, frame: &Frame) -> Result<(), ProtoError> {
        let body = encode_frame(frame);
        if body.len() as u64 > MAX_FRAME_LEN {
            return Err(ProtoError::Oversize(body.len() as u64));
        }
        self.sent_log.lock().expect("transport log lock poisoned").push(frame.type_byte());
        self.tx.send(body).map_err(|_| ProtoError::Closed)
    }

    fn recv(&mut self) -> Result<Frame, ProtoError> {
        let body = self.rx.recv().map_err(|_| ProtoError::Closed)?;
        decode_frame(&body)
    }
}

/// Subscriber-side connection to a node: establishes the session on
/// construction, then fetches content and (for the owner) runs control
/// operations.
pub struct NodeClient<T: FrameTransport> {
    transport: T,
    session: HandshakeSession,
}

impl<T: FrameTransport> NodeClient<T> {
    /// Run the handshake for `scope` over `transport`.
    ///
    /// `self_sk` must be the secret key for `self_id` under `self_params`;
    /// the node's second message can only be opened with it, which is how
    /// this end proves who it is.
    pub fn establish(
        mut transport: T,
        scope: &str,
        host_params: &DomainParams,
        self_id: &Identity,
        self_sk: &UserSecretKey,
        self_params: &DomainParams,
        rng: &mut (impl CryptoRng + RngCore),
    ) -> Result<Self, ProtoError> {
        let (mut session, msg1) = HandshakeSession::initiate(scope, host_params, self_id, rng)?;
        transport.send(&Frame::Msg1(msg1))?;
        let msg2 = match transport.recv()? {
            Frame::Msg2(msg2) => msg2,
            Frame::Deny(message) => return Err(ProtoError::Denied(message)),
            _ => return Err(ProtoError::UnexpectedFrame),
        };
        let msg3 = session.finalize(&msg2, self_sk, self_params)?;
        transport.send(&Frame::Msg3(msg3))?;
        Ok(NodeClient { transport, session })
    }

    fn round_trip(&mut self, plane: Plane, payload: &[u8]) -> Result<Vec<u8>, ProtoError> {
        let sealed = self.session.seal_payload(plane, payload)?;
        let frame = match plane {
            Plane::Content => Frame::Content(sealed),
            Plane::Control => Frame::Control(sealed),
        };
        self.transport.send(&frame)?;
        let (reply_plane, sealed_reply) = match self.transport.recv()? {
            Frame::Content(p) => (Plane::Content, p),
            Frame::Control(p) => (Plane::Control, p),
            Frame::Deny(message) => return Err(ProtoError::Denied(message)),
            _ => return Err(ProtoError::UnexpectedFrame),
        };
        if reply_plane != plane {
            return Err(ProtoError::UnexpectedFrame);
        }
        Ok(self.session.open_payload(plane, &sealed_reply)?)
    }

    /// Fetch an item: its key record (re-encrypted to this subscriber
    /// unless this subscriber is the owner) and its sealed body.
    pub fn fetch(
        &mut self,
        item: &Identity,
    ) -> Result<(LeveledCiphertext, SealedBody), ProtoError> {
        let request = ContentRequest::Get { item: item.clone() };
        let reply = self.round_trip(Plane::Content, &request.to_bytes())?;
        match ContentReply::from_bytes(&reply)? {
            ContentReply::Item { key_record, body } => Ok((key_record, body)),
        }
    }

    /// Run a control operation. Node-side validation failures come back
    /// as [`ProtoError::Control`].
    pub fn control(&mut self, request: &ControlRequest) -> Result<ControlReply, ProtoError> {
        let reply = self.round_trip(Plane::Control, &request.to_bytes())?;
        match ControlReply::from_bytes(&reply)? {
            ControlReply::Err(message) => Err(ProtoError::Control(message)),
            reply => Ok(reply),
        }
    }

    /// The underlying session (for inspecting the key or scope in tests).
    pub fn session(&self) -> &HandshakeSession {
        &self.session
    }
}

/// Node-side engine: the tables behind a lock, the body store, and an
/// optional snapshot path persisted after every successful mutation.
pub struct NodeService {
    tables: RwLock<NodeTables>,
    store: Arc<dyn BodyStore>,
    snapshot_path: Option<PathBuf>,
}

impl NodeService {
    /// Serve `tables` with bodies in `store`, without persistence.
    pub fn new(tables: NodeTables, store: Arc<dyn BodyStore>) -> Self {
        NodeService { tables: RwLock::new(tables), store, snapshot_path: None }
    }

    /// Serve `tables`, persisting a snapshot to `path` after every
    /// mutation (and once immediately).
    pub fn with_snapshot(
        tables: NodeTables,
        store: Arc<dyn BodyStore>,
        path: PathBuf,
    ) -> std::io::Result<Self> {
        write_atomic(&path, &tables.to_snapshot_bytes())?;
        Ok(NodeService { tables: RwLock::new(tables), store, snapshot_path: Some(path) })
    }

    /// Resume from a snapshot file.
    pub fn load(path: PathBuf, store: Arc<dyn BodyStore>) -> Result<Self, NodeError> {
        let bytes = std::fs::read(&path)
            .map_err(|e| NodeError::CorruptSnapshot(format!("unreadable snapshot: {e}")))?;
        let tables = NodeTables::from_snapshot_bytes(&bytes)?;
        Ok(NodeService { tables: RwLock::new(tables), store, snapshot_path: Some(path) })
    }

    fn read_tables(&self) -> std::sync::RwLockReadGuard<'_, NodeTables> {
        self.tables.read().expect("node tables lock poisoned")
    }

    /// Run one snapshot of the tables through `inspect` (test hook).
    pub fn with_tables<R>(&self, inspect: impl FnOnce(&NodeTables) -> R) -> R {
        inspect(&self.read_tables())
    }

    /// Serve one connection to completion. Each connection carries one
    /// session; any handshake failure or unacceptable frame is answered
    /// with a deny frame and the connection is dropped.
    pub fn handle_connection(&self, transport: &mut dyn FrameTransport) -> Result<(), ProtoError> {
        let mut rng = rand::thread_rng();

        let msg1 = match transport.recv() {
            Ok(Frame::Msg1(msg1)) => msg1,
            Ok(_) => {
                transport.send(&Frame::Deny(DENY_MESSAGE.to_string()))?;
                return Ok(());
            }
            Err(ProtoError::Closed) => return Ok(()),
            Err(e) => return Err(e),
        };

        // Look up the scope row and open message 1. Every failure mode —
        // unknown scope, wrong key, tampering — answers with the same
        // deny frame.
        let opened = {
            let tables = self.read_tables();
            tables.scope_keys.get(&msg1.scope).cloned().map(|scope_key| {
                let host_params = tables.owner_params.clone();
                (scope_key, host_params)
            })
        };
        let Some((scope_key, host_params)) = opened else {
            transport.send(&Frame::Deny(DENY_MESSAGE.to_string()))?;
            return Ok(());
        };
        let pending = match respond_open(&msg1, &scope_key, &host_params) {
            Ok(pending) => pending,
            Err(_) => {
                transport.send(&Frame::Deny(DENY_MESSAGE.to_string()))?;
                return Ok(());
            }
        };
        let peer_params = {
            let tables = self.read_tables();
            tables.subscribers.get(pending.peer()).map(|row| row.params.clone())
        };
        let Some(peer_params) = peer_params else {
            transport.send(&Frame::Deny(DENY_MESSAGE.to_string()))?;
            return Ok(());
        };
        let (mut session, msg2) = pending.finish(&peer_params, &mut rng);
        transport.send(&Frame::Msg2(msg2))?;
        match transport.recv() {
            Ok(Frame::Msg3(msg3)) => {
                if session.confirm(&msg3).is_err() {
                    transport.send(&Frame::Deny(DENY_MESSAGE.to_string()))?;
                    return Ok(());
                }
            }
            Ok(_) | Err(ProtoError::Closed) => return Ok(()),
            Err(e) => return Err(e),
        }

        let peer = session
            .peer_identity()
            .expect("responder sessions always know their peer")
            .clone();
        let scope = session.scope().to_string();

        loop {
            match transport.recv() {
                Ok(Frame::Content(sealed)) => {
                    let payload = match session.open_payload(Plane::Content, &sealed) {
                        Ok(payload) => payload,
                        Err(_) => {
                            transport.send(&Frame::Deny(DENY_MESSAGE.to_string()))?;
                            return Ok(());
                        }
                    };
                    let Ok(request) = ContentRequest::from_bytes(&payload) else {
                        transport.send(&Frame::Deny(DENY_MESSAGE.to_string()))?;
                        return Ok(());
                    };
                    let ContentRequest::Get { item } = request;
                    let served = self.read_tables().serve(&peer, &scope, &item);
                    match served {
                        Ok((key_record, body_ref)) => {
                            let Ok(Some(body)) = self.store.get(&body_ref) else {
                                transport.send(&Frame::Deny(DENY_MESSAGE.to_string()))?;
                                continue;
                            };
                            let reply = ContentReply::Item { key_record, body };
                            let sealed =
                                session.seal_payload(Plane::Content, &reply.to_bytes())?;
                            transport.send(&Frame::Content(sealed))?;
                        }
                        Err(_denied) => {
                            transport.send(&Frame::Deny(DENY_MESSAGE.to_string()))?;
                        }
                    }
                }
                Ok(Frame::Control(sealed)) => {
                    let authorized = {
                        let tables = self.read_tables();
                        peer == tables.owner_id && scope == CONTROL_SCOPE
                    };
                    if !authorized {
                        transport.send(&Frame::Deny(DENY_MESSAGE.to_string()))?;
                        return Ok(());
                    }
                    let payload = match session.open_payload(Plane::Control, &sealed) {
                        Ok(payload) => payload,
                        Err(_) => {
                            transport.send(&Frame::Deny(DENY_MESSAGE.to_string()))?;
                            return Ok(());
                        }
                    };
                    let Ok(request) = ControlRequest::from_bytes(&payload) else {
                        transport.send(&Frame::Deny(DENY_MESSAGE.to_string()))?;
                        return Ok(());
                    };
                    let reply = self.apply_control(request);
                    let sealed = session.seal_payload(Plane::Control, &reply.to_bytes())?;
                    transport.send(&Frame::Control(sealed))?;
                }
                Ok(_) => {
                    transport.send(&Frame::Deny(DENY_MESSAGE.to_string()))?;
                    return Ok(());
                }
                Err(ProtoError::Closed) => return Ok(()),
                Err(e) => return Err(e),
            }
        }
    }

    fn apply_control(&self, request: ControlRequest) -> ControlReply {
        let mut tables = self.tables.write().expect("node tables lock poisoned");
        let outcome: Result<ControlReply, String> = match request {
            ControlRequest::GetState => return ControlReply::State(tables.state_summary()),
            ControlRequest::Register { id, params, rk } => tables
                .register_subscriber(id, params, rk)
                .map(|()| ControlReply::Ok)
                .map_err(|e| e.to_string()),
            ControlRequest::DefinePolicy { name, members } => tables
                .define_policy(&name, members)
                .map(|()| ControlReply::Ok)
                .map_err(|e| e.to_string()),
            ControlRequest::UpdatePolicy { name, add, remove } => tables
                .update_policy(&name, add, &remove)
                .map(|()| ControlReply::Ok)
                .map_err(|e| e.to_string()),
            ControlRequest::PublishItem { item, policy, key_record, body, scope_key } => self
                .publish_body(&mut tables, item, policy, key_record, body, scope_key, None),
            ControlRequest::PublishForeign {
                item,
                policy,
                key_record,
                body,
                scope_key,
                from,
            } => self.publish_body(
                &mut tables,
                item,
                policy,
                key_record,
                body,
                scope_key,
                Some(from),
            ),
            ControlRequest::InstallScopeKey { scope, key } => tables
                .install_scope_key(&scope, key)
                .map(|()| ControlReply::Ok)
                .map_err(|e| e.to_string()),
            ControlRequest::Rotate { bundle } => {
                tables.rotate(bundle).map(|()| ControlReply::Ok).map_err(|e| e.to_string())
            }
        };
        match outcome {
            Ok(reply) => {
                if let Some(path) = &self.snapshot_path {
                    if let Err(e) = write_atomic(path, &tables.to_snapshot_bytes()) {
                        return ControlReply::Err(format!(
                            "operation applied but snapshot write failed: {e}"
                        ));
                    }
                }
                reply
            }
            Err(message) => ControlReply::Err(message),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn publish_body(
        &self,
        tables: &mut NodeTables,
        item: Identity,
        policy: Option<String>,
        key_record: LeveledCiphertext,
        body: SealedBody,
        scope_key: UserSecretKey,
        published_by: Option<Identity>,
    ) -> Result<ControlReply, String> {
        let body_ref = self.store.put(&body).map_err(|e| format!("body store: {e}"))?;
        tables
            .publish(item, policy, key_record, body_ref, scope_key, published_by)
            .map(|()| ControlReply::Ok)
            .map_err(|e| e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sealed_frame_types_match_plane_bytes() {
        assert_eq!(FT_CONTENT, Plane::Content.byte());
        assert_eq!(FT_CONTROL, Plane::Control.byte());
    }

    #[test]
    fn frames_round_trip() {
        let frames = [
            Frame::Content(vec![1, 2, 3]),
            Frame::Control(vec![]),
            Frame::Deny(DENY_MESSAGE.to_string()),
        ];
        for frame in frames {
            let mut wire = Vec::new();
            write_frame(&mut wire, &frame).unwrap();
            let back = read_frame(&mut wire.as_slice()).unwrap();
            assert_eq!(back, frame);
        }
    }

    #[test]
    fn read_frame_reports_clean_close_and_oversize() {
        let empty: &[u8] = &[];
        assert!(matches!(read_frame(&mut { empty }), Err(ProtoError::Closed)));

        let huge = (MAX_FRAME_LEN as u32 + 1).to_be_bytes();
        assert!(matches!(read_frame(&mut huge.as_slice()), Err(ProtoError::Oversize(_))));
    }

    #[test]
    fn decode_frame_never_panics_on_junk() {
        use rand::{Rng, RngCore, SeedableRng};
        let mut rng = rand::rngs::StdRng::seed_from_u64(0xF0_22);

        // Arbitrary bytes: decode may refuse but must return.
        for _ in 0..1000 {
            let mut body = vec![0u8; rng.gen_range(0..256)];
            rng.fill_bytes(&mut body);
            let _ = decode_frame(&body);
        }

        // Every truncation of a genuine structured frame is rejected
        // cleanly rather than read out of bounds.
        let (params, _msk) = ibpre::setup(128, "fuzz-host", &mut rng).unwrap();
        let initiator = Identity::new("fuzz-reader").unwrap();
        let (_session, msg1) =
            HandshakeSession::initiate("fuzz/scope", &params, &initiator, &mut rng).unwrap();
        let genuine = encode_frame(&Frame::Msg1(msg1));
        for len in 0..genuine.len() {
            assert!(decode_frame(&genuine[..len]).is_err(), "truncation at {len} accepted");
        }
        assert!(decode_frame(&genuine).is_ok());
    }

    #[test]
    fn inproc_pair_delivers_and_logs() {
        let (mut a, mut b) = InProcTransport::pair();
        a.send(&Frame::Deny("x".into())).unwrap();
        assert_eq!(b.recv().unwrap(), Frame::Deny("x".into()));
        assert_eq!(a.sent_frame_types(), vec![0x06]);
        assert!(b.sent_frame_types().is_empty());
    }
}
