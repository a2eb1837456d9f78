//! A principal's key material on disk, and the owner-side routines that
//! derive everything a node needs from it: scope keys, registration and
//! policy delegations, and full rotation bundles.
//!
//! Every principal — content owners and subscribers alike — runs its own
//! key generator: a key file holds an identity, the published parameters
//! for that principal's domain, and the master secret behind them. Secret
//! keys are deterministic in the master secret, so they are re-derived on
//! demand rather than stored.

use std::io;
use std::path::Path;

use rand::{CryptoRng, RngCore};

use ibpre::codec::{Reader, Writer};
use ibpre::{
    decrypt, encrypt, extract, rkgen, setup, CodecError, DomainParams, Identity, MasterSecret,
    ReencryptionKey, UserSecretKey,
};

use crate::node::{
    policy_identity, Construction, NodeError, NodeTables, RotationBundle, StateSummary,
    CONTROL_SCOPE,
};
use crate::util::write_atomic;

const TAG_KEYFILE: u8 = 0x22;

/// Problems loading or using a key file.
#[derive(Debug, thiserror::Error)]
pub enum KeyFileError {
    /// File could not be read or written.
    #[error("key file i/o: {0}")]
    Io(#[from] io::Error),

    /// File bytes did not decode.
    #[error("malformed key file: {0}")]
    Codec(#[from] CodecError),

    /// The master secret does not belong to the stored parameters.
    #[error("key file is inconsistent: master secret does not match parameters")]
    Mismatch,
}

/// Owner-side failures when building node inputs.
#[derive(Debug, thiserror::Error)]
pub enum OwnerError {
    /// The underlying cryptographic operation refused.
    #[error(transparent)]
    Ibpre(#[from] ibpre::Error),

    /// Table bootstrap failed.
    #[error(transparent)]
    Node(#[from] NodeError),

    /// A reported state is internally inconsistent.
    #[error("node state lists policy member {0} that is not a registered subscriber")]
    UnknownMember(Identity),

    /// A reported key record is not addressed within this owner's domain.
    #[error("key record for {0} is addressed outside this domain")]
    ForeignRecord(Identity),

    /// The state belongs to a different owner or domain.
    #[error("state does not match this key file: {0}")]
    WrongOwner(&'static str),
}

/// One principal's identity, parameters, and master secret.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeyFile {
    /// Who this is.
    pub identity: Identity,
    /// The principal's published parameters.
    pub params: DomainParams,
    /// The master secret behind them. Never leaves the key file.
    pub msk: MasterSecret,
}

impl KeyFile {
    /// Create a fresh principal: a new domain named after the identity.
    pub fn generate(identity: Identity, rng: &mut (impl CryptoRng + RngCore)) -> Self {
        let (params, msk) =
            setup(128, identity.as_str(), rng).expect("the 128-bit security level is supported");
        KeyFile { identity, params, msk }
    }

    /// Serialize.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(TAG_KEYFILE);
        w.bytes(&self.identity.to_bytes());
        w.bytes(&self.params.to_bytes());
        w.bytes(&self.msk.to_bytes());
        w.finish()
    }

    /// Decode and verify that the master secret matches the parameters,
    /// so a mixed-up or tampered file is rejected up front.
    pub fn from_bytes(buf: &[u8]) -> Result<Self, KeyFileError> {
        let mut r = Reader::new(buf, TAG_KEYFILE)?;
        let identity = Identity::from_bytes(r.bytes("identity")?)?;
        let params = DomainParams::from_bytes(r.bytes("params")?)?;
        let msk = MasterSecret::from_bytes(r.bytes("msk")?)?;
        r.finish()?;
        if extract(&params, &msk, &identity).is_err() {
            return Err(KeyFileError::Mismatch);
        }
        Ok(KeyFile { identity, params, msk })
    }

    /// Write to `path` (atomically).
    pub fn save(&self, path: &Path) -> io::Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    /// Read from `path`.
    pub fn load(path: &Path) -> Result<Self, KeyFileError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Secret key for an identity in this principal's own domain.
    /// Key files are validated on load, so this cannot fail.
    pub fn extract_for(&self, id: &Identity) -> UserSecretKey {
        extract(&self.params, &self.msk, id)
            .expect("key file consistency is verified on construction")
    }

    /// This principal's own secret key.
    pub fn secret_key(&self) -> UserSecretKey {
        self.extract_for(&self.identity)
    }

    /// Secret key for a scope (a content name or name prefix).
    pub fn scope_key(&self, scope: &str) -> Result<UserSecretKey, ibpre::Error> {
        Ok(self.extract_for(&Identity::new(scope)?))
    }

    /// Secret key for the control scope.
    pub fn control_scope_key(&self) -> UserSecretKey {
        self.extract_for(&Identity::new(CONTROL_SCOPE).expect("control scope is non-empty"))
    }

    /// The re-encryption key a registration needs: owner-to-subscriber
    /// under the per-subscriber layout, nothing under per-policy-member.
    pub fn registration_rk(
        &self,
        construction: Construction,
        subscriber: &Identity,
        subscriber_params: &DomainParams,
        rng: &mut (impl CryptoRng + RngCore),
    ) -> Result<Option<ReencryptionKey>, ibpre::Error> {
        match construction {
            Construction::PerSubscriber => Ok(Some(rkgen(
                &self.params,
                &self.secret_key(),
                subscriber,
                subscriber_params,
                rng,
            )?)),
            Construction::PerPolicyMember => Ok(None),
        }
    }

    /// The re-encryption key a policy membership needs: policy-to-member
    /// under the per-policy-member layout, nothing under per-subscriber.
    pub fn policy_member_rk(
        &self,
        construction: Construction,
        policy: &str,
        member: &Identity,
        member_params: &DomainParams,
        rng: &mut (impl CryptoRng + RngCore),
    ) -> Result<Option<ReencryptionKey>, ibpre::Error> {
        match construction {
            Construction::PerPolicyMember => Ok(Some(rkgen(
                &self.params,
                &self.extract_for(&policy_identity(policy)),
                member,
                member_params,
                rng,
            )?)),
            Construction::PerSubscriber => Ok(None),
        }
    }

    /// Fresh node tables for this owner: control scope key installed and
    /// the owner registered as the first subscriber (with a
    /// self-delegation under the per-subscriber layout), so the owner can
    /// immediately establish control sessions.
    pub fn bootstrap_node(
        &self,
        construction: Construction,
        rng: &mut (impl CryptoRng + RngCore),
    ) -> Result<NodeTables, OwnerError> {
        let owner_rk = self.registration_rk(construction, &self.identity, &self.params, rng)?;
        Ok(NodeTables::bootstrap(
            self.identity.clone(),
            self.params.clone(),
            construction,
            self.control_scope_key(),
            owner_rk,
        )?)
    }
}

/// Rebuild every piece of node key material under a fresh master secret.
///
/// `old` must be the key file the node's reported `state` was built with;
/// `new` is a freshly generated key file for the same identity. Each
/// item's content key is recovered with the old master secret and
/// re-encrypted under the new parameters, so stored bodies stay valid
/// byte for byte while every old key record and re-encryption key stops
/// working.
pub fn build_rotation_bundle(
    old: &KeyFile,
    new: &KeyFile,
    state: &StateSummary,
    rng: &mut (impl CryptoRng + RngCore),
) -> Result<RotationBundle, OwnerError> {
    if new.identity != old.identity || state.owner_id != old.identity {
        return Err(OwnerError::WrongOwner("identity mismatch"));
    }
    if new.params.domain_id != old.params.domain_id {
        return Err(OwnerError::WrongOwner("domain mismatch"));
    }

    let mut key_records = Vec::with_capacity(state.items.len());
    for item in &state.items {
        if item.key_record.target_domain != old.params.domain_id {
            return Err(OwnerError::ForeignRecord(item.item.clone()));
        }
        let target = item.key_record.target_id.clone();
        let content_key = decrypt(&old.extract_for(&target), &item.key_record, &old.params)?;
        key_records.push((item.item.clone(), encrypt(&new.params, &target, &content_key, rng)));
    }

    let mut subscriber_rks = Vec::new();
    if state.construction == Construction::PerSubscriber {
        for (id, params) in &state.subscribers {
            // The owner's own row must point at the *new* parameters; all
            // other subscribers keep their own domains.
            let dst_params = if *id == old.identity { &new.params } else { params };
            let rk = rkgen(&new.params, &new.secret_key(), id, dst_params, rng)?;
            subscriber_rks.push((id.clone(), rk));
        }
    }

    let mut policy_rks = Vec::new();
    if state.construction == Construction::PerPolicyMember {
        for (policy, members) in &state.policies {
            let policy_sk = new.extract_for(&policy_identity(policy));
            for member in members {
                let member_params = if *member == old.identity {
                    &new.params
                } else {
                    state
                        .subscribers
                        .iter()
                        .find(|(id, _)| id == member)
                        .map(|(_, params)| params)
                        .ok_or_else(|| OwnerError::UnknownMember(member.clone()))?
                };
                let rk = rkgen(&new.params, &policy_sk, member, member_params, rng)?;
                policy_rks.push((policy.clone(), member.clone(), rk));
            }
        }
    }

    let mut scope_keys = Vec::with_capacity(state.scopes.len());
    for scope in &state.scopes {
        scope_keys.push((scope.clone(), new.scope_key(scope)?));
    }

    Ok(RotationBundle {
        new_params: new.params.clone(),
        key_records,
        subscriber_rks,
        policy_rks,
        scope_keys,
    })
}
