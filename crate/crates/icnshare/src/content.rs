//! Hybrid sealing of content items.
//!
//! Each item is encrypted once under a fresh random target-group element
//! `K`: the body uses AES-128-GCM with a key derived from `K`, and `K`
//! itself is encrypted with the identity-based scheme under whichever
//! identity governs access — the owner's identity when the node keeps a
//! re-encryption key per subscriber, the policy identifier when keys are
//! per policy, or a hosting subscriber's identity for items published to
//! someone else's node.
//!
//! Because the body is authenticated, possession of the *right* `K` is
//! verifiable: decrypting the key record with a wrong secret key yields a
//! different group element, a different AES key, and a clean
//! authentication failure instead of garbage plaintext.

use aes_gcm::aead::{Aead, KeyInit, Payload};
use aes_gcm::{Aes128Gcm, Nonce};
use rand::{CryptoRng, RngCore};

use ibpre::codec::{Reader, Writer};
use ibpre::{
    decrypt, derive_sym_key, encrypt, CodecError, DomainParams, GtPlaintext, Identity,
    LeveledCiphertext, SymKeyLen, UserSecretKey,
};

/// Context label under which content keys are derived from `K`.
pub const CONTENT_KEY_CONTEXT: &str = "content";

/// AES-GCM nonce length in bytes.
pub const NONCE_LEN: usize = 12;

const TAG_SEALED_ITEM: u8 = 0x10;
const TAG_SEALED_BODY: u8 = 0x11;

/// Errors from sealing and opening content items.
#[derive(Debug, thiserror::Error)]
pub enum ContentError {
    /// The ciphertext layer is structurally wrong for the requested
    /// operation (owner paths need level 1, delegatee paths level 2).
    #[error("key record has level {found}, expected level {expected}")]
    KeyRecordLevel { expected: u8, found: u8 },

    /// A re-encrypted key record addressed to someone else was presented.
    #[error("key record targets {found}, not the presented key's identity {expected}")]
    KeyRecordTarget { expected: Identity, found: Identity },

    /// The body failed authenticated decryption: the key is wrong or the
    /// item was tampered with.
    #[error("content authentication failed: wrong key or modified item")]
    AuthenticationFailed,

    /// The item could not even be parsed (distinct from a clean
    /// authentication failure).
    #[error("malformed sealed item: {0}")]
    Malformed(#[from] CodecError),

    /// The identity-based layer refused the operation.
    #[error(transparent)]
    Ibpre(#[from] ibpre::Error),
}

/// The encrypted body of an item together with the public metadata needed
/// to open it, but without the key record. This is the part a storage
/// node hands over the wire next to a re-encrypted key.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SealedBody {
    /// ICN-routable item identifier; bound into the authenticated data.
    pub item_id: Identity,
    /// Per-seal random AES-GCM nonce.
    pub nonce: [u8; NONCE_LEN],
    /// AES-128-GCM ciphertext of the content, tag included.
    pub body: Vec<u8>,
}

impl SealedBody {
    /// Canonical byte encoding.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(TAG_SEALED_BODY);
        w.bytes(self.item_id.as_bytes());
        w.bytes(&self.nonce);
        w.bytes(&self.body);
        w.finish()
    }

    /// Strict decode of the canonical byte encoding.
    pub fn from_bytes(buf: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader::new(buf, TAG_SEALED_BODY)?;
        let item_id = r.string("item_id")?;
        let nonce_raw = r.bytes("nonce")?;
        let body = r.bytes("body")?.to_vec();
        r.finish()?;
        if item_id.is_empty() {
            return Err(CodecError::InvalidValue("item_id"));
        }
        let nonce: [u8; NONCE_LEN] =
            nonce_raw.try_into().map_err(|_| CodecError::InvalidLength("nonce"))?;
        Ok(SealedBody {
            item_id: Identity::new(item_id).expect("checked non-empty"),
            nonce,
            body,
        })
    }
}

/// A fully sealed item: the encrypted body plus the key record that rules
/// who can recover `K`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SealedItem {
    /// ICN-routable item identifier.
    pub item_id: Identity,
    /// Per-seal random AES-GCM nonce.
    pub nonce: [u8; NONCE_LEN],
    /// AES-128-GCM ciphertext of the content, tag included.
    pub body: Vec<u8>,
    /// `K` encrypted under the access-governing identity (level 1).
    pub key_record: LeveledCiphertext,
}

impl SealedItem {
    /// Split into the transferable body part and the key record.
    pub fn into_parts(self) -> (SealedBody, LeveledCiphertext) {
        (
            SealedBody { item_id: self.item_id, nonce: self.nonce, body: self.body },
            self.key_record,
        )
    }

    /// The body part alone (what travels beside a re-encrypted key).
    pub fn body_part(&self) -> SealedBody {
        SealedBody {
            item_id: self.item_id.clone(),
            nonce: self.nonce,
            body: self.body.clone(),
        }
    }

    /// Canonical byte encoding.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(TAG_SEALED_ITEM);
        w.bytes(self.item_id.as_bytes());
        w.bytes(&self.nonce);
        w.bytes(&self.key_record.to_bytes());
        w.bytes(&self.body);
        w.finish()
    }

    /// Strict decode of the canonical byte encoding.
    pub fn from_bytes(buf: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader::new(buf, TAG_SEALED_ITEM)?;
        let item_id = r.string("item_id")?;
        let nonce_raw = r.bytes("nonce")?;
        let key_record = LeveledCiphertext::from_bytes(r.bytes("key_record")?)?;
        let body = r.bytes("body")?.to_vec();
        r.finish()?;
        if item_id.is_empty() {
            return Err(CodecError::InvalidValue("item_id"));
        }
        let nonce: [u8; NONCE_LEN] =
            nonce_raw.try_into().map_err(|_| CodecError::InvalidLength("nonce"))?;
        Ok(SealedItem {
            item_id: Identity::new(item_id).expect("checked non-empty"),
            nonce,
            body,
            key_record,
        })
    }
}

fn cipher_for(k: &GtPlaintext) -> Aes128Gcm {
    let key = derive_sym_key(k, CONTENT_KEY_CONTEXT, SymKeyLen::Bits128);
    Aes128Gcm::new_from_slice(&key).expect("derived key has the cipher's exact length")
}

/// Seal `plaintext` as the item `item_id`, protecting the content key for
/// `target_id` under `target_params`.
///
/// The target is the owner's own identity when re-encryption keys are kept
/// per subscriber, the policy identifier when they are kept per policy, or
/// a hosting subscriber's identity (with *their* parameters) when
/// publishing to someone else's node.
pub fn seal_item(
    plaintext: &[u8],
    item_id: &Identity,
    target_id: &Identity,
    target_params: &DomainParams,
    rng: &mut (impl CryptoRng + RngCore),
) -> SealedItem {
    let k = GtPlaintext::random(rng);
    let mut nonce = [0u8; NONCE_LEN];
    rng.fill_bytes(&mut nonce);
    let body = cipher_for(&k)
        .encrypt(
            Nonce::from_slice(&nonce),
            Payload { msg: plaintext, aad: item_id.as_bytes() },
        )
        .expect("AES-GCM encryption is infallible for in-memory payloads");
    let key_record = encrypt(target_params, target_id, &k, rng);
    SealedItem { item_id: item_id.clone(), nonce, body, key_record }
}

fn open_body(body: &SealedBody, k: &GtPlaintext) -> Result<Vec<u8>, ContentError> {
    cipher_for(k)
        .decrypt(
            Nonce::from_slice(&body.nonce),
            Payload { msg: &body.body, aad: body.item_id.as_bytes() },
        )
        .map_err(|_| ContentError::AuthenticationFailed)
}

/// Open an item using the secret key the level-1 key record was sealed to
/// (the owner, the policy key holder, or a hosting subscriber).
pub fn open_item_as_owner(
    item: &SealedItem,
    sk: &UserSecretKey,
    params: &DomainParams,
) -> Result<Vec<u8>, ContentError> {
    if item.key_record.level != 1 {
        return Err(ContentError::KeyRecordLevel { expected: 1, found: item.key_record.level });
    }
    let k = decrypt(sk, &item.key_record, params)?;
    open_body(&item.body_part(), &k)
}

/// Open an item body using a re-encrypted (level-2) key record addressed
/// to `sk`'s identity — the subscriber-side final step of a fetch.
pub fn open_item_as_delegatee(
    body: &SealedBody,
    reencrypted_key: &LeveledCiphertext,
    sk: &UserSecretKey,
    params: &DomainParams,
) -> Result<Vec<u8>, ContentError> {
    if reencrypted_key.level != 2 {
        return Err(ContentError::KeyRecordLevel { expected: 2, found: reencrypted_key.level });
    }
    if reencrypted_key.target_id != sk.id {
        return Err(ContentError::KeyRecordTarget {
            expected: sk.id.clone(),
            found: reencrypted_key.target_id.clone(),
        });
    }
    let k = decrypt(sk, reencrypted_key, params)?;
    open_body(body, &k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    #[test]
    fn seal_open_round_trip() {
        let mut rng = StdRng::seed_from_u64(1);
        let (params, msk) = ibpre::setup(128, "alice", &mut rng).unwrap();
        let owner = Identity::new("alice").unwrap();
        let item_id = Identity::new("file:notes.txt").unwrap();
        let sk = ibpre::extract(&params, &msk, &owner).unwrap();

        let item = seal_item(b"hello world", &item_id, &owner, &params, &mut rng);
        assert_eq!(open_item_as_owner(&item, &sk, &params).unwrap(), b"hello world");
    }

    #[test]
    fn wrong_key_is_a_clean_authentication_failure() {
        let mut rng = StdRng::seed_from_u64(2);
        let (params, msk) = ibpre::setup(128, "alice", &mut rng).unwrap();
        let owner = Identity::new("alice").unwrap();
        let imposter = Identity::new("mallory").unwrap();
        let item_id = Identity::new("file:secret").unwrap();

        let item = seal_item(b"payload", &item_id, &owner, &params, &mut rng);
        let sk_bad = ibpre::extract(&params, &msk, &imposter).unwrap();
        assert!(matches!(
            open_item_as_owner(&item, &sk_bad, &params),
            Err(ContentError::AuthenticationFailed)
        ));
    }

    #[test]
    fn body_bit_flip_is_rejected() {
        let mut rng = StdRng::seed_from_u64(3);
        let (params, msk) = ibpre::setup(128, "alice", &mut rng).unwrap();
        let owner = Identity::new("alice").unwrap();
        let item_id = Identity::new("file:x").unwrap();
        let sk = ibpre::extract(&params, &msk, &owner).unwrap();

        let mut item = seal_item(b"payload", &item_id, &owner, &params, &mut rng);
        item.body[0] ^= 0x01;
        assert!(matches!(
            open_item_as_owner(&item, &sk, &params),
            Err(ContentError::AuthenticationFailed)
        ));
    }

    #[test]
    fn sealed_encodings_round_trip() {
        let mut rng = StdRng::seed_from_u64(4);
        let (params, _) = ibpre::setup(128, "alice", &mut rng).unwrap();
        let owner = Identity::new("alice").unwrap();
        let item_id = Identity::new("file:x").unwrap();

        let item = seal_item(b"data", &item_id, &owner, &params, &mut rng);
        let decoded = SealedItem::from_bytes(&item.to_bytes()).unwrap();
        assert_eq!(decoded, item);

        let body = item.body_part();
        let decoded = SealedBody::from_bytes(&body.to_bytes()).unwrap();
        assert_eq!(decoded, body);
    }
}
