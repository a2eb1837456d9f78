//! Storage-node state: the subscriber, policy, content, and scope-key
//! tables, the owner's control operations over them, and the
//! authorization logic for serving re-encrypted key records.
//!
//! A node acts on behalf of exactly one owner. It holds the owner's
//! *published* parameters, never the master secret, and the key records it
//! stores are encrypted to identities whose secret keys it does not have
//! (the owner or a policy identifier). The only secret keys a node holds
//! are scope keys — per-item or per-prefix identities delegated to it so
//! it can complete session handshakes — and, where re-encryption keys are
//! stored, those keys, which by construction reveal neither the delegator's
//! secret key nor any content key.
//!
//! Two table layouts are supported: keeping one re-encryption key per
//! subscriber (key records are addressed to the owner), or keeping one per
//! policy member (key records are addressed to the policy identifier, so a
//! member's key is cryptographically useless outside its policy).

use std::collections::BTreeMap;
use std::fmt;
use std::io;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::RwLock;

use sha2::{Digest, Sha256};

use ibpre::codec::{Reader, Writer};
use ibpre::{
    reencrypt, CodecError, DomainParams, Identity, LeveledCiphertext, ReencryptionKey,
    UserSecretKey,
};

use crate::content::SealedBody;
use crate::util::{hex, write_atomic};

/// Namespace prefix reserved for protocol-internal identities; content
/// items and installed scopes may not use it.
pub const RESERVED_PREFIX: &str = "icnshare:";

/// The scope identity of the owner's control channel. A session
/// established under this scope by the owner carries management
/// operations instead of content requests.
pub const CONTROL_SCOPE: &str = "icnshare:control";

const TAG_SNAPSHOT: u8 = 0x20;
const TAG_STATE: u8 = 0x23;
const TAG_ROTATION: u8 = 0x24;

/// The identity that key records for a policy's items are encrypted to.
///
/// Policy identities live in a reserved namespace so they can never
/// collide with an installed scope identity or a content name, which
/// would otherwise hand the node a secret key that decrypts key records.
pub fn policy_identity(name: &str) -> Identity {
    Identity::new(format!("{RESERVED_PREFIX}policy:{name}"))
        .expect("prefixed policy identity is never empty")
}

/// True if a session bound to `scope` may request `item`: the scope is
/// the item's full name or a prefix of it.
pub fn scope_covers(scope: &str, item: &str) -> bool {
    !scope.is_empty() && (item == scope || item.starts_with(scope))
}

/// Where the node keeps re-encryption keys.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Construction {
    /// One key per registered subscriber; key records are addressed to
    /// the owner.
    PerSubscriber,
    /// One key per policy member; key records are addressed to the
    /// policy identifier.
    PerPolicyMember,
}

impl Construction {
    /// Stable single-byte encoding.
    pub fn code(self) -> u8 {
        match self {
            Construction::PerSubscriber => 1,
            Construction::PerPolicyMember => 2,
        }
    }

    /// Inverse of [`code`](Self::code).
    pub fn from_code(code: u8) -> Result<Self, CodecError> {
        match code {
            1 => Ok(Construction::PerSubscriber),
            2 => Ok(Construction::PerPolicyMember),
            _ => Err(CodecError::InvalidValue("construction")),
        }
    }

    /// Stable name used in configuration and command-line flags.
    pub fn name(self) -> &'static str {
        match self {
            Construction::PerSubscriber => "per-subscriber",
            Construction::PerPolicyMember => "per-policy-member",
        }
    }
}

impl fmt::Display for Construction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Construction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "per-subscriber" | "1" => Ok(Construction::PerSubscriber),
            "per-policy-member" | "2" => Ok(Construction::PerPolicyMember),
            other => Err(format!(
                "unknown construction {other:?} (expected per-subscriber/1 or per-policy-member/2)"
            )),
        }
    }
}

/// Errors from control operations on the node tables.
#[derive(Debug, thiserror::Error)]
pub enum NodeError {
    /// The identity already has a subscriber row.
    #[error("identity is already registered: {0}")]
    AlreadyRegistered(Identity),

    /// The identity has no subscriber row.
    #[error("identity is not a registered subscriber: {0}")]
    NotRegistered(Identity),

    /// No policy with that name exists.
    #[error("no such policy: {0}")]
    UnknownPolicy(String),

    /// A policy with that name already exists.
    #[error("policy already exists: {0}")]
    PolicyExists(String),

    /// The identity is not a member of the named policy.
    #[error("{member} is not a member of policy {policy}")]
    NotMember {
        /// Policy that was edited.
        policy: String,
        /// Identity that was not found in it.
        member: Identity,
    },

    /// An item with that name is already published.
    #[error("item already published: {0}")]
    ItemExists(Identity),

    /// A scope key for that scope is already installed.
    #[error("scope key already installed: {0}")]
    ScopeExists(String),

    /// The name uses the reserved protocol namespace.
    #[error("name uses a reserved prefix: {0}")]
    ReservedName(String),

    /// A supplied record fails a structural or cryptographic check.
    #[error("invalid record: {0}")]
    InvalidRecord(&'static str),

    /// A rotation bundle does not cover the node's state exactly.
    #[error("rotation bundle incomplete: {0}")]
    IncompleteRotation(String),

    /// A snapshot failed to decode or violates the table invariants.
    #[error("snapshot is corrupt: {0}")]
    CorruptSnapshot(String),

    /// Low-level decoding failure.
    #[error(transparent)]
    Codec(#[from] CodecError),
}

/// Why a request was denied. Codes are for the node's own records; the
/// requester only ever sees the uniform [`Denied`] message.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AuditCode {
    /// No such item is published.
    UnknownItem,
    /// The item exists but the session's scope does not cover it.
    OutOfScope,
    /// The requester is not authorized for the item's policy.
    NotMember,
    /// Authorization passed but no re-encryption key is on file.
    RkMissing,
    /// Re-encryption itself failed (inconsistent stored state).
    ReencryptFailed,
}

/// A refused content request. Displays identically for every cause so a
/// requester cannot probe which check failed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Denied {
    /// The internal reason, kept for auditing.
    pub audit: AuditCode,
}

impl fmt::Display for Denied {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("not found or not authorized")
    }
}

impl std::error::Error for Denied {}

fn denied(audit: AuditCode) -> Denied {
    Denied { audit }
}

/// One registered subscriber.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubscriberRecord {
    /// The subscriber's published parameters, used to address session
    /// keys and (per-subscriber layout) re-encrypted key records to them.
    pub params: DomainParams,
    /// Owner-to-subscriber re-encryption key; present exactly when the
    /// node uses the per-subscriber layout.
    pub rk: Option<ReencryptionKey>,
}

/// One access-control policy: its members, and in the per-policy-member
/// layout each member's re-encryption key from the policy identity.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PolicyRecord {
    /// Member identities, each with a re-encryption key exactly when the
    /// node uses the per-policy-member layout.
    pub members: BTreeMap<Identity, Option<ReencryptionKey>>,
}

/// One published content item.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ItemRecord {
    /// Level-1 key record: the item's content key, encrypted to the
    /// owner or to the item's policy identity.
    pub key_record: LeveledCiphertext,
    /// Reference into the body store.
    pub body_ref: String,
    /// Policy whose members may fetch the item; `None` means owner-only.
    pub policy: Option<String>,
    /// Original author when the item was published into this node on
    /// someone else's behalf.
    pub published_by: Option<Identity>,
}

/// Everything a node persists.
#[derive(Debug, PartialEq, Eq)]
pub struct NodeTables {
    /// Identity the node serves content for.
    pub owner_id: Identity,
    /// The owner's currently published parameters.
    pub owner_params: DomainParams,
    /// Where re-encryption keys are kept.
    pub construction: Construction,
    /// Registered subscribers.
    pub subscribers: BTreeMap<Identity, SubscriberRecord>,
    /// Access-control policies.
    pub policies: BTreeMap<String, PolicyRecord>,
    /// Published items.
    pub items: BTreeMap<Identity, ItemRecord>,
    /// Scope identities the owner has delegated to this node, with their
    /// secret keys, so the node can complete session handshakes.
    pub scope_keys: BTreeMap<String, UserSecretKey>,
}

/// Summary of node state returned over the control channel; carries
/// everything the owner needs to audit the node or build a rotation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StateSummary {
    /// Owner identity.
    pub owner_id: Identity,
    /// Parameters currently in force.
    pub owner_params: DomainParams,
    /// Table layout.
    pub construction: Construction,
    /// Registered subscribers and their parameters.
    pub subscribers: Vec<(Identity, DomainParams)>,
    /// Policies and their member lists.
    pub policies: Vec<(String, Vec<Identity>)>,
    /// Published items.
    pub items: Vec<ItemSummary>,
    /// Installed scopes (including the control scope).
    pub scopes: Vec<String>,
}

/// One item as reported by [`NodeTables::state_summary`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ItemSummary {
    /// Item name.
    pub item: Identity,
    /// Policy granting access, if any.
    pub policy: Option<String>,
    /// Original author for items published on someone else's behalf.
    pub published_by: Option<Identity>,
    /// The stored level-1 key record.
    pub key_record: LeveledCiphertext,
}

/// Replacement key material for a parameter rotation. Must cover the
/// node's state exactly: one key record per item, one re-encryption key
/// per subscriber or per policy member (depending on layout), and one
/// secret key per installed scope.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RotationBundle {
    /// The owner's new parameters (same domain identifier, new master
    /// secret).
    pub new_params: DomainParams,
    /// New level-1 key record per published item.
    pub key_records: Vec<(Identity, LeveledCiphertext)>,
    /// New owner-to-subscriber keys (per-subscriber layout only).
    pub subscriber_rks: Vec<(Identity, ReencryptionKey)>,
    /// New policy-to-member keys (per-policy-member layout only).
    pub policy_rks: Vec<(String, Identity, ReencryptionKey)>,
    /// New secret key per installed scope.
    pub scope_keys: Vec<(String, UserSecretKey)>,
}

impl NodeTables {
    /// Set up a node for `owner_id`: installs the control-scope key and
    /// registers the owner as the first subscriber so control sessions
    /// can be established. Per-subscriber nodes need the owner's
    /// self-delegation in `owner_rk`; per-policy-member nodes must pass
    /// `None`.
    pub fn bootstrap(
        owner_id: Identity,
        owner_params: DomainParams,
        construction: Construction,
        control_scope_key: UserSecretKey,
        owner_rk: Option<ReencryptionKey>,
    ) -> Result<Self, NodeError> {
        if control_scope_key.id.as_str() != CONTROL_SCOPE {
            return Err(NodeError::InvalidRecord("control key is not for the control scope"));
        }
        if control_scope_key.domain_id != owner_params.domain_id {
            return Err(NodeError::InvalidRecord("control key is from a different domain"));
        }
        if !control_scope_key.is_consistent_with(&owner_params) {
            return Err(NodeError::InvalidRecord("control key does not verify against parameters"));
        }
        let mut tables = NodeTables {
            owner_id: owner_id.clone(),
            owner_params: owner_params.clone(),
            construction,
            subscribers: BTreeMap::new(),
            policies: BTreeMap::new(),
            items: BTreeMap::new(),
            scope_keys: BTreeMap::new(),
        };
        tables.scope_keys.insert(CONTROL_SCOPE.to_string(), control_scope_key);
        tables.register_subscriber(owner_id, owner_params, owner_rk)?;
        Ok(tables)
    }

    /// The identity an item's key record must be encrypted to, given the
    /// item's policy and the node's layout.
    pub fn required_target(&self, policy: Option<&str>) -> Identity {
        match (self.construction, policy) {
            (_, None) | (Construction::PerSubscriber, Some(_)) => self.owner_id.clone(),
            (Construction::PerPolicyMember, Some(name)) => policy_identity(name),
        }
    }

    fn check_rk(
        &self,
        rk: &ReencryptionKey,
        expected_src: &Identity,
        expected_dst: &Identity,
        dst_domain: &str,
    ) -> Result<(), NodeError> {
        if rk.src_id != *expected_src {
            return Err(NodeError::InvalidRecord("re-encryption key has the wrong source"));
        }
        if rk.dst_id != *expected_dst {
            return Err(NodeError::InvalidRecord("re-encryption key has the wrong target"));
        }
        if rk.dst_domain != dst_domain {
            return Err(NodeError::InvalidRecord("re-encryption key targets the wrong domain"));
        }
        if rk.wrapped_x.target_id != *expected_dst || rk.wrapped_x.target_domain != dst_domain {
            return Err(NodeError::InvalidRecord(
                "re-encryption key's wrapped secret is not addressed to its target",
            ));
        }
        Ok(())
    }

    /// Add a subscriber row.
    pub fn register_subscriber(
        &mut self,
        id: Identity,
        params: DomainParams,
        rk: Option<ReencryptionKey>,
    ) -> Result<(), NodeError> {
        if self.subscribers.contains_key(&id) {
            return Err(NodeError::AlreadyRegistered(id));
        }
        match (self.construction, &rk) {
            (Construction::PerSubscriber, Some(rk)) => {
                self.check_rk(rk, &self.owner_id, &id, &params.domain_id)?
            }
            (Construction::PerSubscriber, None) => {
                return Err(NodeError::InvalidRecord(
                    "per-subscriber registration needs a re-encryption key",
                ))
            }
            (Construction::PerPolicyMember, Some(_)) => {
                return Err(NodeError::InvalidRecord(
                    "per-policy-member nodes keep re-encryption keys in policy rows",
                ))
            }
            (Construction::PerPolicyMember, None) => {}
        }
        self.subscribers.insert(id, SubscriberRecord { params, rk });
        Ok(())
    }

    fn check_member_entry(
        &self,
        policy: &str,
        member: &Identity,
        rk: &Option<ReencryptionKey>,
    ) -> Result<(), NodeError> {
        let row = self
            .subscribers
            .get(member)
            .ok_or_else(|| NodeError::NotRegistered(member.clone()))?;
        match (self.construction, rk) {
            (Construction::PerPolicyMember, Some(rk)) => {
                self.check_rk(rk, &policy_identity(policy), member, &row.params.domain_id)
            }
            (Construction::PerPolicyMember, None) => Err(NodeError::InvalidRecord(
                "per-policy-member membership needs a re-encryption key",
            )),
            (Construction::PerSubscriber, Some(_)) => Err(NodeError::InvalidRecord(
                "per-subscriber nodes keep re-encryption keys in subscriber rows",
            )),
            (Construction::PerSubscriber, None) => Ok(()),
        }
    }

    /// Create a policy with an initial member list.
    pub fn define_policy(
        &mut self,
        name: &str,
        members: Vec<(Identity, Option<ReencryptionKey>)>,
    ) -> Result<(), NodeError> {
        if name.is_empty() {
            return Err(NodeError::InvalidRecord("policy name must be non-empty"));
        }
        if self.policies.contains_key(name) {
            return Err(NodeError::PolicyExists(name.to_string()));
        }
        let mut record = PolicyRecord::default();
        for (member, rk) in members {
            self.check_member_entry(name, &member, &rk)?;
            if record.members.insert(member, rk).is_some() {
                return Err(NodeError::InvalidRecord("duplicate policy member"));
            }
        }
        self.policies.insert(name.to_string(), record);
        Ok(())
    }

    /// Edit a policy's member list. Removals revoke access immediately;
    /// no stored key record changes, because none of them are addressed
    /// to members.
    pub fn update_policy(
        &mut self,
        name: &str,
        add: Vec<(Identity, Option<ReencryptionKey>)>,
        remove: &[Identity],
    ) -> Result<(), NodeError> {
        let current = self
            .policies
            .get(name)
            .ok_or_else(|| NodeError::UnknownPolicy(name.to_string()))?;

        // Validate everything against a working copy so a failed edit
        // leaves the policy untouched.
        let mut members = current.members.clone();
        for member in remove {
            if members.remove(member).is_none() {
                return Err(NodeError::NotMember {
                    policy: name.to_string(),
                    member: member.clone(),
                });
            }
        }
        for (member, rk) in add {
            self.check_member_entry(name, &member, &rk)?;
            if members.insert(member, rk).is_some() {
                return Err(NodeError::InvalidRecord("identity is already a policy member"));
            }
        }
        self.policies.insert(name.to_string(), PolicyRecord { members });
        Ok(())
    }

    fn check_scope_key(&self, scope: &str, key: &UserSecretKey, params: &DomainParams) -> Result<(), NodeError> {
        if key.id.as_str() != scope {
            return Err(NodeError::InvalidRecord("scope key is for a different identity"));
        }
        if key.domain_id != params.domain_id {
            return Err(NodeError::InvalidRecord("scope key is from a different domain"));
        }
        if !key.is_consistent_with(params) {
            return Err(NodeError::InvalidRecord("scope key does not verify against parameters"));
        }
        Ok(())
    }

    /// Install a secret key for a scope identity (a content name or a
    /// name prefix) so sessions can be established under it.
    pub fn install_scope_key(&mut self, scope: &str, key: UserSecretKey) -> Result<(), NodeError> {
        if scope.is_empty() {
            return Err(NodeError::InvalidRecord("scope must be non-empty"));
        }
        if scope.starts_with(RESERVED_PREFIX) {
            return Err(NodeError::ReservedName(scope.to_string()));
        }
        if scope == self.owner_id.as_str() {
            // The owner's own key would decrypt every owner-addressed key
            // record; the node must never hold it.
            return Err(NodeError::ReservedName(scope.to_string()));
        }
        if self.scope_keys.contains_key(scope) {
            return Err(NodeError::ScopeExists(scope.to_string()));
        }
        self.check_scope_key(scope, &key, &self.owner_params)?;
        self.scope_keys.insert(scope.to_string(), key);
        Ok(())
    }

    /// Store an item: its key record, a reference to its sealed body, the
    /// policy granting access (or none for owner-only), and the item's
    /// own scope key so it can be fetched by name. `published_by` records
    /// the original author when the owner publishes on someone's behalf.
    #[allow(clippy::too_many_arguments)]
    pub fn publish(
        &mut self,
        item: Identity,
        policy: Option<String>,
        key_record: LeveledCiphertext,
        body_ref: String,
        scope_key: UserSecretKey,
        published_by: Option<Identity>,
    ) -> Result<(), NodeError> {
        if item.as_str().starts_with(RESERVED_PREFIX) {
            return Err(NodeError::ReservedName(item.as_str().to_string()));
        }
        if self.items.contains_key(&item) {
            return Err(NodeError::ItemExists(item));
        }
        if let Some(name) = &policy {
            if !self.policies.contains_key(name) {
                return Err(NodeError::UnknownPolicy(name.clone()));
            }
        }
        if key_record.level != 1 {
            return Err(NodeError::InvalidRecord("key record must be a level-1 ciphertext"));
        }
        if key_record.target_domain != self.owner_params.domain_id {
            return Err(NodeError::InvalidRecord("key record is addressed to a foreign domain"));
        }
        let required = self.required_target(policy.as_deref());
        if key_record.target_id != required {
            return Err(NodeError::InvalidRecord(
                "key record is not addressed to the identity this layout re-encrypts from",
            ));
        }
        if self.scope_keys.contains_key(item.as_str()) {
            return Err(NodeError::ScopeExists(item.as_str().to_string()));
        }
        self.check_scope_key(item.as_str(), &scope_key, &self.owner_params)?;
        if body_ref.is_empty() {
            return Err(NodeError::InvalidRecord("body reference must be non-empty"));
        }
        self.scope_keys.insert(item.as_str().to_string(), scope_key);
        self.items.insert(item, ItemRecord { key_record, body_ref, policy, published_by });
        Ok(())
    }

    /// Authorize and answer a content request from an established session.
    ///
    /// Grants the stored level-1 record to the owner; for anyone else,
    /// requires membership in the item's policy and re-encrypts the key
    /// record to them. Returns the key record and the body reference.
    pub fn serve(
        &self,
        requester: &Identity,
        session_scope: &str,
        item: &Identity,
    ) -> Result<(LeveledCiphertext, String), Denied> {
        let record = self.items.get(item).ok_or(denied(AuditCode::UnknownItem))?;
        if !scope_covers(session_scope, item.as_str()) {
            return Err(denied(AuditCode::OutOfScope));
        }
        if *requester == self.owner_id {
            return Ok((record.key_record.clone(), record.body_ref.clone()));
        }
        let policy_name = record.policy.as_ref().ok_or(denied(AuditCode::NotMember))?;
        let policy = self.policies.get(policy_name).ok_or(denied(AuditCode::NotMember))?;
        if !policy.members.contains_key(requester) {
            return Err(denied(AuditCode::NotMember));
        }
        let rk = match self.construction {
            Construction::PerSubscriber => {
                self.subscribers.get(requester).and_then(|row| row.rk.as_ref())
            }
            Construction::PerPolicyMember => {
                policy.members.get(requester).and_then(|rk| rk.as_ref())
            }
        }
        .ok_or(denied(AuditCode::RkMissing))?;
        let reencrypted =
            reencrypt(rk, &record.key_record).map_err(|_| denied(AuditCode::ReencryptFailed))?;
        Ok((reencrypted, record.body_ref.clone()))
    }

    /// Replace every piece of owner key material at once. Validates that
    /// the bundle covers the node's state exactly before touching
    /// anything, so a bad bundle changes nothing.
    pub fn rotate(&mut self, bundle: RotationBundle) -> Result<(), NodeError> {
        let RotationBundle { new_params, key_records, subscriber_rks, policy_rks, scope_keys } =
            bundle;
        if new_params.domain_id != self.owner_params.domain_id {
            return Err(NodeError::InvalidRecord("rotation cannot change the domain identifier"));
        }
        if new_params.g_s == self.owner_params.g_s {
            return Err(NodeError::InvalidRecord("rotation must introduce a new master secret"));
        }

        let mut new_records = BTreeMap::new();
        for (item, record) in key_records {
            if new_records.insert(item, record).is_some() {
                return Err(NodeError::IncompleteRotation("duplicate key record".into()));
            }
        }
        if new_records.len() != self.items.len()
            || !self.items.keys().all(|item| new_records.contains_key(item))
        {
            return Err(NodeError::IncompleteRotation(format!(
                "bundle has key records for {} items, node stores {}",
                new_records.len(),
                self.items.len()
            )));
        }
        for (item, record) in &new_records {
            let stored = &self.items[item];
            if record.level != 1
                || record.target_domain != new_params.domain_id
                || record.target_id != self.required_target(stored.policy.as_deref())
            {
                return Err(NodeError::InvalidRecord("rotated key record is mis-addressed"));
            }
        }

        let mut new_sub_rks = BTreeMap::new();
        match self.construction {
            Construction::PerSubscriber => {
                for (id, rk) in subscriber_rks {
                    if new_sub_rks.insert(id, rk).is_some() {
                        return Err(NodeError::IncompleteRotation(
                            "duplicate subscriber key".into(),
                        ));
                    }
                }
                if new_sub_rks.len() != self.subscribers.len()
                    || !self.subscribers.keys().all(|id| new_sub_rks.contains_key(id))
                {
                    return Err(NodeError::IncompleteRotation(format!(
                        "bundle has keys for {} subscribers, node has {}",
                        new_sub_rks.len(),
                        self.subscribers.len()
                    )));
                }
                for (id, rk) in &new_sub_rks {
                    self.check_rk(rk, &self.owner_id, id, &self.subscribers[id].params.domain_id)?;
                }
                if !policy_rks.is_empty() {
                    return Err(NodeError::IncompleteRotation(
                        "per-subscriber nodes take no policy keys".into(),
                    ));
                }
            }
            Construction::PerPolicyMember => {
                if !subscriber_rks.is_empty() {
                    return Err(NodeError::IncompleteRotation(
                        "per-policy-member nodes take no subscriber keys".into(),
                    ));
                }
            }
        }

        let mut new_policy_rks: BTreeMap<(String, Identity), ReencryptionKey> = BTreeMap::new();
        if self.construction == Construction::PerPolicyMember {
            for (policy, member, rk) in policy_rks {
                if new_policy_rks.insert((policy, member), rk).is_some() {
                    return Err(NodeError::IncompleteRotation("duplicate policy key".into()));
                }
            }
            let expected: Vec<(String, Identity)> = self
                .policies
                .iter()
                .flat_map(|(name, p)| {
                    p.members.keys().map(move |m| (name.clone(), m.clone()))
                })
                .collect();
            if new_policy_rks.len() != expected.len()
                || !expected.iter().all(|pair| new_policy_rks.contains_key(pair))
            {
                return Err(NodeError::IncompleteRotation(format!(
                    "bundle has {} policy keys, node needs {}",
                    new_policy_rks.len(),
                    expected.len()
                )));
            }
            for ((policy, member), rk) in &new_policy_rks {
                let domain = self.subscribers[member].params.domain_id.clone();
                self.check_rk(rk, &policy_identity(policy), member, &domain)?;
            }
        }

        let mut new_scope_keys = BTreeMap::new();
        for (scope, key) in scope_keys {
            if new_scope_keys.insert(scope, key).is_some() {
                return Err(NodeError::IncompleteRotation("duplicate scope key".into()));
            }
        }
        if new_scope_keys.len() != self.scope_keys.len()
            || !self.scope_keys.keys().all(|scope| new_scope_keys.contains_key(scope))
        {
            return Err(NodeError::IncompleteRotation(format!(
                "bundle has {} scope keys, node has {}",
                new_scope_keys.len(),
                self.scope_keys.len()
            )));
        }
        for (scope, key) in &new_scope_keys {
            self.check_scope_key(scope, key, &new_params)?;
        }

        // Everything verified — commit atomically.
        for (item, stored) in &mut self.items {
            stored.key_record = new_records.remove(item).expect("coverage checked above");
        }
        for (id, row) in &mut self.subscribers {
            if self.construction == Construction::PerSubscriber {
                row.rk = Some(new_sub_rks.remove(id).expect("coverage checked above"));
            }
            if *id == self.owner_id {
                row.params = new_params.clone();
            }
        }
        if self.construction == Construction::PerPolicyMember {
            for (name, policy) in &mut self.policies {
                for (member, slot) in &mut policy.members {
                    let key = (name.clone(), member.clone());
                    *slot = Some(new_policy_rks.remove(&key).expect("coverage checked above"));
                }
            }
        }
        self.scope_keys = new_scope_keys;
        self.owner_params = new_params;
        Ok(())
    }

    /// The owner-facing state report.
    pub fn state_summary(&self) -> StateSummary {
        StateSummary {
            owner_id: self.owner_id.clone(),
            owner_params: self.owner_params.clone(),
            construction: self.construction,
            subscribers: self
                .subscribers
                .iter()
                .map(|(id, row)| (id.clone(), row.params.clone()))
                .collect(),
            policies: self
                .policies
                .iter()
                .map(|(name, p)| (name.clone(), p.members.keys().cloned().collect()))
                .collect(),
            items: self
                .items
                .iter()
                .map(|(item, row)| ItemSummary {
                    item: item.clone(),
                    policy: row.policy.clone(),
                    published_by: row.published_by.clone(),
                    key_record: row.key_record.clone(),
                })
                .collect(),
            scopes: self.scope_keys.keys().cloned().collect(),
        }
    }

    /// Check every cross-table invariant; returns a description of each
    /// violation found (empty means the tables are sound).
    pub fn check_integrity(&self) -> Vec<String> {
        let mut violations = Vec::new();
        let domain = &self.owner_params.domain_id;

        match self.subscribers.get(&self.owner_id) {
            None => violations.push("owner is not registered as a subscriber".to_string()),
            Some(row) => {
                if row.params != self.owner_params {
                    violations
                        .push("owner's subscriber row has stale parameters".to_string());
                }
            }
        }
        match self.scope_keys.get(CONTROL_SCOPE) {
            None => violations.push("control scope key is missing".to_string()),
            Some(key) => {
                if self.check_scope_key(CONTROL_SCOPE, key, &self.owner_params).is_err() {
                    violations.push("control scope key is invalid".to_string());
                }
            }
        }

        for (id, row) in &self.subscribers {
            match (self.construction, &row.rk) {
                (Construction::PerSubscriber, Some(rk)) => {
                    if self.check_rk(rk, &self.owner_id, id, &row.params.domain_id).is_err() {
                        violations.push(format!("subscriber {id} has an invalid key"));
                    }
                }
                (Construction::PerSubscriber, None) => {
                    violations.push(format!("subscriber {id} is missing a key"));
                }
                (Construction::PerPolicyMember, Some(_)) => {
                    violations.push(format!("subscriber {id} has a misplaced key"));
                }
                (Construction::PerPolicyMember, None) => {}
            }
        }

        for (name, policy) in &self.policies {
            for (member, rk) in &policy.members {
                let Some(row) = self.subscribers.get(member) else {
                    violations.push(format!("policy {name} lists unregistered member {member}"));
                    continue;
                };
                match (self.construction, rk) {
                    (Construction::PerPolicyMember, Some(rk)) => {
                        if self
                            .check_rk(rk, &policy_identity(name), member, &row.params.domain_id)
                            .is_err()
                        {
                            violations
                                .push(format!("policy {name} member {member} has an invalid key"));
                        }
                    }
                    (Construction::PerPolicyMember, None) => {
                        violations.push(format!("policy {name} member {member} is missing a key"));
                    }
                    (Construction::PerSubscriber, Some(_)) => {
                        violations.push(format!("policy {name} member {member} has a misplaced key"));
                    }
                    (Construction::PerSubscriber, None) => {}
                }
            }
        }

        for (item, row) in &self.items {
            if item.as_str().starts_with(RESERVED_PREFIX) {
                violations.push(format!("item {item} uses the reserved namespace"));
            }
            if let Some(policy) = &row.policy {
                if !self.policies.contains_key(policy) {
                    violations.push(format!("item {item} references missing policy {policy}"));
                }
            }
            if row.key_record.level != 1
                || row.key_record.target_domain != *domain
                || row.key_record.target_id != self.required_target(row.policy.as_deref())
            {
                violations.push(format!("item {item} has a mis-addressed key record"));
            }
            if row.body_ref.is_empty() {
                violations.push(format!("item {item} has no body reference"));
            }
            if !self.scope_keys.contains_key(item.as_str()) {
                violations.push(format!("item {item} has no scope key"));
            }
        }

        for (scope, key) in &self.scope_keys {
            if scope != CONTROL_SCOPE
                && scope.starts_with(RESERVED_PREFIX)
            {
                violations.push(format!("scope {scope} uses the reserved namespace"));
            }
            if scope == self.owner_id.as_str() {
                violations.push("a scope key aliases the owner identity".to_string());
            }
            if self.check_scope_key(scope, key, &self.owner_params).is_err() {
                violations.push(format!("scope {scope} has an invalid key"));
            }
        }

        violations
    }

    /// Serialize the full table state.
    pub fn to_snapshot_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(TAG_SNAPSHOT);
        w.bytes(&self.owner_id.to_bytes());
        w.bytes(&self.owner_params.to_bytes());
        w.u8(self.construction.code());

        w.u32(self.subscribers.len() as u32);
        for (id, row) in &self.subscribers {
            w.bytes(&id.to_bytes());
            w.bytes(&row.params.to_bytes());
            write_opt(&mut w, row.rk.as_ref().map(|rk| rk.to_bytes()));
        }

        w.u32(self.policies.len() as u32);
        for (name, policy) in &self.policies {
            w.bytes(name.as_bytes());
            w.u32(policy.members.len() as u32);
            for (member, rk) in &policy.members {
                w.bytes(&member.to_bytes());
                write_opt(&mut w, rk.as_ref().map(|rk| rk.to_bytes()));
            }
        }

        w.u32(self.items.len() as u32);
        for (item, row) in &self.items {
            w.bytes(&item.to_bytes());
            write_opt(&mut w, row.policy.as_ref().map(|p| p.as_bytes().to_vec()));
            write_opt(&mut w, row.published_by.as_ref().map(|id| id.to_bytes()));
            w.bytes(&row.key_record.to_bytes());
            w.bytes(row.body_ref.as_bytes());
        }

        w.u32(self.scope_keys.len() as u32);
        for (scope, key) in &self.scope_keys {
            w.bytes(scope.as_bytes());
            w.bytes(&key.to_bytes());
        }
        w.finish()
    }

    /// Load a snapshot and re-verify every table invariant, refusing
    /// state that could not have been produced by the operations above.
    pub fn from_snapshot_bytes(buf: &[u8]) -> Result<Self, NodeError> {
        let mut r = Reader::new(buf, TAG_SNAPSHOT)?;
        let owner_id = Identity::from_bytes(r.bytes("owner_id")?)?;
        let owner_params = DomainParams::from_bytes(r.bytes("owner_params")?)?;
        let construction = Construction::from_code(r.u8("construction")?)?;

        let mut subscribers = BTreeMap::new();
        for _ in 0..r.u32("subscriber_count")? {
            let id = Identity::from_bytes(r.bytes("subscriber_id")?)?;
            let params = DomainParams::from_bytes(r.bytes("subscriber_params")?)?;
            let rk = read_opt(&mut r, "subscriber_rk")?
                .map(ReencryptionKey::from_bytes)
                .transpose()?;
            if subscribers.insert(id, SubscriberRecord { params, rk }).is_some() {
                return Err(NodeError::CorruptSnapshot("duplicate subscriber row".into()));
            }
        }

        let mut policies = BTreeMap::new();
        for _ in 0..r.u32("policy_count")? {
            let name = String::from_utf8(r.bytes("policy_name")?.to_vec())
                .map_err(|_| CodecError::InvalidUtf8("policy_name"))?;
            let mut members = BTreeMap::new();
            for _ in 0..r.u32("member_count")? {
                let member = Identity::from_bytes(r.bytes("member_id")?)?;
                let rk = read_opt(&mut r, "member_rk")?
                    .map(ReencryptionKey::from_bytes)
                    .transpose()?;
                if members.insert(member, rk).is_some() {
                    return Err(NodeError::CorruptSnapshot("duplicate policy member".into()));
                }
            }
            if policies.insert(name, PolicyRecord { members }).is_some() {
                return Err(NodeError::CorruptSnapshot("duplicate policy row".into()));
            }
        }

        let mut items = BTreeMap::new();
        for _ in 0..r.u32("item_count")? {
            let item = Identity::from_bytes(r.bytes("item_id")?)?;
            let policy = read_opt(&mut r, "item_policy")?
                .map(|b| {
                    String::from_utf8(b.to_vec()).map_err(|_| CodecError::InvalidUtf8("item_policy"))
                })
                .transpose()?;
            let published_by =
                read_opt(&mut r, "published_by")?.map(Identity::from_bytes).transpose()?;
            let key_record = LeveledCiphertext::from_bytes(r.bytes("key_record")?)?;
            let body_ref = r.string("body_ref")?;
            if items
                .insert(item, ItemRecord { key_record, body_ref, policy, published_by })
                .is_some()
            {
                return Err(NodeError::CorruptSnapshot("duplicate item row".into()));
            }
        }

        let mut scope_keys = BTreeMap::new();
        for _ in 0..r.u32("scope_count")? {
            let scope = r.string("scope")?;
            let key = UserSecretKey::from_bytes(r.bytes("scope_key")?)?;
            if scope_keys.insert(scope, key).is_some() {
                return Err(NodeError::CorruptSnapshot("duplicate scope row".into()));
            }
        }
        r.finish()?;

        let tables = NodeTables {
            owner_id,
            owner_params,
            construction,
            subscribers,
            policies,
            items,
            scope_keys,
        };
        let violations = tables.check_integrity();
        if !violations.is_empty() {
            return Err(NodeError::CorruptSnapshot(violations.join("; ")));
        }
        Ok(tables)
    }
}

impl StateSummary {
    /// Serialize for the control channel.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(TAG_STATE);
        w.bytes(&self.owner_id.to_bytes());
        w.bytes(&self.owner_params.to_bytes());
        w.u8(self.construction.code());
        w.u32(self.subscribers.len() as u32);
        for (id, params) in &self.subscribers {
            w.bytes(&id.to_bytes());
            w.bytes(&params.to_bytes());
        }
        w.u32(self.policies.len() as u32);
        for (name, members) in &self.policies {
            w.bytes(name.as_bytes());
            w.u32(members.len() as u32);
            for member in members {
                w.bytes(&member.to_bytes());
            }
        }
        w.u32(self.items.len() as u32);
        for item in &self.items {
            w.bytes(&item.item.to_bytes());
            write_opt(&mut w, item.policy.as_ref().map(|p| p.as_bytes().to_vec()));
            write_opt(&mut w, item.published_by.as_ref().map(|id| id.to_bytes()));
            w.bytes(&item.key_record.to_bytes());
        }
        w.u32(self.scopes.len() as u32);
        for scope in &self.scopes {
            w.bytes(scope.as_bytes());
        }
        w.finish()
    }

    /// Inverse of [`to_bytes`](Self::to_bytes).
    pub fn from_bytes(buf: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader::new(buf, TAG_STATE)?;
        let owner_id = Identity::from_bytes(r.bytes("owner_id")?)?;
        let owner_params = DomainParams::from_bytes(r.bytes("owner_params")?)?;
        let construction = Construction::from_code(r.u8("construction")?)?;
        let mut subscribers = Vec::new();
        for _ in 0..r.u32("subscriber_count")? {
            let id = Identity::from_bytes(r.bytes("subscriber_id")?)?;
            let params = DomainParams::from_bytes(r.bytes("subscriber_params")?)?;
            subscribers.push((id, params));
        }
        let mut policies = Vec::new();
        for _ in 0..r.u32("policy_count")? {
            let name = r.string("policy_name")?;
            let mut members = Vec::new();
            for _ in 0..r.u32("member_count")? {
                members.push(Identity::from_bytes(r.bytes("member_id")?)?);
            }
            policies.push((name, members));
        }
        let mut items = Vec::new();
        for _ in 0..r.u32("item_count")? {
            let item = Identity::from_bytes(r.bytes("item_id")?)?;
            let policy = read_opt(&mut r, "item_policy")?
                .map(|b| {
                    String::from_utf8(b.to_vec()).map_err(|_| CodecError::InvalidUtf8("item_policy"))
                })
                .transpose()?;
            let published_by =
                read_opt(&mut r, "published_by")?.map(Identity::from_bytes).transpose()?;
            let key_record = LeveledCiphertext::from_bytes(r.bytes("key_record")?)?;
            items.push(ItemSummary { item, policy, published_by, key_record });
        }
        let mut scopes = Vec::new();
        for _ in 0..r.u32("scope_count")? {
            scopes.push(r.string("scope")?);
        }
        r.finish()?;
        Ok(StateSummary { owner_id, owner_params, construction, subscribers, policies, items, scopes })
    }
}

impl RotationBundle {
    /// Serialize for the control channel.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(TAG_ROTATION);
        w.bytes(&self.new_params.to_bytes());
        w.u32(self.key_records.len() as u32);
        for (item, record) in &self.key_records {
            w.bytes(&item.to_bytes());
            w.bytes(&record.to_bytes());
        }
        w.u32(self.subscriber_rks.len() as u32);
        for (id, rk) in &self.subscriber_rks {
            w.bytes(&id.to_bytes());
            w.bytes(&rk.to_bytes());
        }
        w.u32(self.policy_rks.len() as u32);
        for (policy, member, rk) in &self.policy_rks {
            w.bytes(policy.as_bytes());
            w.bytes(&member.to_bytes());
            w.bytes(&rk.to_bytes());
        }
        w.u32(self.scope_keys.len() as u32);
        for (scope, key) in &self.scope_keys {
            w.bytes(scope.as_bytes());
            w.bytes(&key.to_bytes());
        }
        w.finish()
    }

    /// Inverse of [`to_bytes`](Self::to_bytes).
    pub fn from_bytes(buf: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader::new(buf, TAG_ROTATION)?;
        let new_params = DomainParams::from_bytes(r.bytes("new_params")?)?;
        let mut key_records = Vec::new();
        for _ in 0..r.u32("record_count")? {
            let item = Identity::from_bytes(r.bytes("item_id")?)?;
            let record = LeveledCiphertext::from_bytes(r.bytes("key_record")?)?;
            key_records.push((item, record));
        }
        let mut subscriber_rks = Vec::new();
        for _ in 0..r.u32("subscriber_rk_count")? {
            let id = Identity::from_bytes(r.bytes("subscriber_id")?)?;
            let rk = ReencryptionKey::from_bytes(r.bytes("subscriber_rk")?)?;
            subscriber_rks.push((id, rk));
        }
        let mut policy_rks = Vec::new();
        for _ in 0..r.u32("policy_rk_count")? {
            let policy = r.string("policy_name")?;
            let member = Identity::from_bytes(r.bytes("member_id")?)?;
            let rk = ReencryptionKey::from_bytes(r.bytes("member_rk")?)?;
            policy_rks.push((policy, member, rk));
        }
        let mut scope_keys = Vec::new();
        for _ in 0..r.u32("scope_count")? {
            let scope = r.string("scope")?;
            let key = UserSecretKey::from_bytes(r.bytes("scope_key")?)?;
            scope_keys.push((scope, key));
        }
        r.finish()?;
        Ok(RotationBundle { new_params, key_records, subscriber_rks, policy_rks, scope_keys })
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

/// Content-addressed reference for a sealed body: the hash of its
/// canonical encoding.
pub fn body_ref_for(body: &SealedBody) -> String {
    hex(&Sha256::digest(body.to_bytes()))
}

/// Where sealed item bodies live. Bodies are ciphertext, so the store
/// needs no access control of its own.
pub trait BodyStore: Send + Sync {
    /// Store a body, returning its reference.
    fn put(&self, body: &SealedBody) -> io::Result<String>;

    /// Fetch a body by reference.
    fn get(&self, body_ref: &str) -> io::Result<Option<SealedBody>>;
}

/// In-process body store for tests and embedded use.
#[derive(Default)]
pub struct MemoryBodyStore {
    bodies: RwLock<BTreeMap<String, SealedBody>>,
}

impl MemoryBodyStore {
    /// Empty store.
    pub fn new() -> Self {
        Self::default()
    }
}

impl BodyStore for MemoryBodyStore {
    fn put(&self, body: &SealedBody) -> io::Result<String> {
        let body_ref = body_ref_for(body);
        self.bodies.write().expect("body store lock poisoned").insert(body_ref.clone(), body.clone());
        Ok(body_ref)
    }

    fn get(&self, body_ref: &str) -> io::Result<Option<SealedBody>> {
        Ok(self.bodies.read().expect("body store lock poisoned").get(body_ref).cloned())
    }
}

/// One file per body under a directory, named by reference.
pub struct FileBodyStore {
    dir: PathBuf,
}

impl FileBodyStore {
    /// Use `dir` (created if missing) as the store.
    pub fn open(dir: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(FileBodyStore { dir })
    }

    fn path_for(&self, body_ref: &str) -> io::Result<PathBuf> {
        // References are hex digests; anything else is refused so a
        // crafted reference can never escape the store directory.
        if body_ref.len() != 64 || !body_ref.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(io::Error::new(io::ErrorKind::InvalidInput, "malformed body reference"));
        }
        Ok(self.dir.join(body_ref))
    }
}

impl BodyStore for FileBodyStore {
    fn put(&self, body: &SealedBody) -> io::Result<String> {
        let body_ref = body_ref_for(body);
        write_atomic(&self.path_for(&body_ref)?, &body.to_bytes())?;
        Ok(body_ref)
    }

    fn get(&self, body_ref: &str) -> io::Result<Option<SealedBody>> {
        let path = self.path_for(body_ref)?;
        let bytes = match std::fs::read(&path) {
            Ok(bytes) => bytes,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e),
        };
        let body = SealedBody::from_bytes(&bytes)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))?;
        Ok(Some(body))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::content::seal_item;
    use ibpre::{extract, rkgen, setup, MasterSecret};
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    struct Owner {
        id: Identity,
        params: DomainParams,
        msk: MasterSecret,
    }

    fn owner(rng: &mut StdRng, name: &str) -> Owner {
        let id = Identity::new(name).unwrap();
        let (params, msk) = setup(128, name, rng).unwrap();
        Owner { id, params, msk }
    }

    fn tables_for(rng: &mut StdRng, o: &Owner, construction: Construction) -> NodeTables {
        let control = extract(&o.params, &o.msk, &Identity::new(CONTROL_SCOPE).unwrap()).unwrap();
        let owner_rk = match construction {
            Construction::PerSubscriber => {
                let sk = extract(&o.params, &o.msk, &o.id).unwrap();
                Some(rkgen(&o.params, &sk, &o.id, &o.params, rng).unwrap())
            }
            Construction::PerPolicyMember => None,
        };
        NodeTables::bootstrap(o.id.clone(), o.params.clone(), construction, control, owner_rk)
            .unwrap()
    }

    fn publish_one(
        rng: &mut StdRng,
        tables: &mut NodeTables,
        o: &Owner,
        name: &str,
        policy: Option<&str>,
    ) -> SealedBody {
        let item = Identity::new(name).unwrap();
        let target = tables.required_target(policy);
        let sealed = seal_item(b"payload", &item, &target, &o.params, rng);
        let (body, key_record) = sealed.into_parts();
        let scope_key = extract(&o.params, &o.msk, &item).unwrap();
        tables
            .publish(
                item,
                policy.map(String::from),
                key_record,
                body_ref_for(&body),
                scope_key,
                None,
            )
            .unwrap();
        body
    }

    #[test]
    fn membership_gates_access_in_both_layouts() {
        let mut rng = StdRng::seed_from_u64(71);
        for construction in [Construction::PerSubscriber, Construction::PerPolicyMember] {
            let o = owner(&mut rng, "alice");
            let mut tables = tables_for(&mut rng, &o, construction);

            let bob = Identity::new("bob").unwrap();
            let (bob_params, bob_msk) = setup(128, "bob", &mut rng).unwrap();
            let reg_rk = match construction {
                Construction::PerSubscriber => {
                    let sk = extract(&o.params, &o.msk, &o.id).unwrap();
                    Some(rkgen(&o.params, &sk, &bob, &bob_params, &mut rng).unwrap())
                }
                Construction::PerPolicyMember => None,
            };
            tables.register_subscriber(bob.clone(), bob_params.clone(), reg_rk).unwrap();

            let member_rk = match construction {
                Construction::PerPolicyMember => {
                    let sk_p = extract(&o.params, &o.msk, &policy_identity("friends")).unwrap();
                    Some(rkgen(&o.params, &sk_p, &bob, &bob_params, &mut rng).unwrap())
                }
                Construction::PerSubscriber => None,
            };
            tables.define_policy("friends", vec![(bob.clone(), member_rk)]).unwrap();

            publish_one(&mut rng, &mut tables, &o, "news/today", Some("friends"));
            publish_one(&mut rng, &mut tables, &o, "private/diary", None);

            let item = Identity::new("news/today").unwrap();
            let (record, _) = tables.serve(&bob, "news/today", &item).unwrap();
            assert_eq!(record.level, 2);
            assert_eq!(record.target_id, bob);
            let sk_bob = extract(&bob_params, &bob_msk, &bob).unwrap();
            assert!(sk_bob.is_consistent_with(&bob_params));

            // Owner gets the stored level-1 record.
            let (owner_record, _) = tables.serve(&o.id, "news/today", &item).unwrap();
            assert_eq!(owner_record.level, 1);

            // Owner-only item, wrong scope, unknown item.
            let diary = Identity::new("private/diary").unwrap();
            assert_eq!(
                tables.serve(&bob, "private/diary", &diary).unwrap_err().audit,
                AuditCode::NotMember
            );
            let missing = Identity::new("news/missing").unwrap();
            assert_eq!(
                tables.serve(&bob, "news/", &missing).unwrap_err().audit,
                AuditCode::UnknownItem
            );
            assert_eq!(
                tables.serve(&bob, "private/", &item).unwrap_err().audit,
                AuditCode::OutOfScope
            );

            // Revocation: one table edit, immediately enforced.
            tables.update_policy("friends", vec![], &[bob.clone()]).unwrap();
            assert_eq!(
                tables.serve(&bob, "news/today", &item).unwrap_err().audit,
                AuditCode::NotMember
            );
            assert!(tables.check_integrity().is_empty());
        }
    }

    #[test]
    fn publish_rejects_mis_addressed_and_reserved_records() {
        let mut rng = StdRng::seed_from_u64(72);
        let o = owner(&mut rng, "alice");
        let mut tables = tables_for(&mut rng, &o, Construction::PerSubscriber);

        let item = Identity::new("movies/one").unwrap();
        let wrong_target = Identity::new("not-the-owner").unwrap();
        let sealed = seal_item(b"x", &item, &wrong_target, &o.params, &mut rng);
        let (body, record) = sealed.into_parts();
        let scope_key = extract(&o.params, &o.msk, &item).unwrap();
        let err = tables
            .publish(item.clone(), None, record, body_ref_for(&body), scope_key.clone(), None)
            .unwrap_err();
        assert!(matches!(err, NodeError::InvalidRecord(_)));

        let reserved = Identity::new("icnshare:evil").unwrap();
        let sealed = seal_item(b"x", &reserved, &o.id, &o.params, &mut rng);
        let (body, record) = sealed.into_parts();
        let err = tables
            .publish(reserved, None, record, body_ref_for(&body), scope_key, None)
            .unwrap_err();
        assert!(matches!(err, NodeError::ReservedName(_)));

        // The owner's own identity may never be installed as a scope.
        let owner_key = extract(&o.params, &o.msk, &o.id).unwrap();
        let err = tables.install_scope_key("alice", owner_key).unwrap_err();
        assert!(matches!(err, NodeError::ReservedName(_)));
    }

    #[test]
    fn snapshot_round_trips_and_rejects_tampering() {
        let mut rng = StdRng::seed_from_u64(73);
        let o = owner(&mut rng, "alice");
        let mut tables = tables_for(&mut rng, &o, Construction::PerSubscriber);
        publish_one(&mut rng, &mut tables, &o, "a/b", None);

        let bytes = tables.to_snapshot_bytes();
        let back = NodeTables::from_snapshot_bytes(&bytes).unwrap();
        assert_eq!(back, tables);
        assert_eq!(back.to_snapshot_bytes(), bytes);

        // Snip the control scope row out by rebuilding with a bogus count:
        // simplest tamper is flipping a byte somewhere in the middle.
        let mut evil = bytes.clone();
        let mid = evil.len() / 2;
        evil[mid] ^= 0x01;
        assert!(NodeTables::from_snapshot_bytes(&evil).is_err());
    }

    #[test]
    fn body_stores_round_trip() {
        let mut rng = StdRng::seed_from_u64(74);
        let o = owner(&mut rng, "alice");
        let item = Identity::new("x/y").unwrap();
        let sealed = seal_item(b"hello", &item, &o.id, &o.params, &mut rng);
        let body = sealed.body_part();

        let mem = MemoryBodyStore::new();
        let r1 = mem.put(&body).unwrap();
        assert_eq!(mem.get(&r1).unwrap().unwrap(), body);

        let dir = tempfile::tempdir().unwrap();
        let files = FileBodyStore::open(dir.path().join("bodies")).unwrap();
        let r2 = files.put(&body).unwrap();
        assert_eq!(r2, r1);
        assert_eq!(files.get(&r2).unwrap().unwrap(), body);
        assert!(files.get("0".repeat(64).as_str()).unwrap().is_none());
        assert!(files.get("../escape").is_err());
    }
}
