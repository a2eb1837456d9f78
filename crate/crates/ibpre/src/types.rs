//! Value types of the scheme and their canonical byte encodings.
//!
//! Every type encodes as `version byte || type tag || fields`, with each
//! field length-prefixed (big-endian `u32`) and group elements in
//! compressed form. Decoding is strict: it re-checks the structural
//! invariants, validates group membership, and rejects trailing bytes, so
//! `from_bytes(to_bytes(v)) == v` and re-encoding is bit-exact.

use ark_ec::AffineRepr;
use ark_ff::Zero;
use ark_std::UniformRand;
use rand::{CryptoRng, RngCore};

use crate::codec::{Reader, Writer};
use crate::curve::{pairing, G1A, G2A, Gt, Scalar, HASH_SUITE_ID};
use crate::error::{CodecError, Error};

const TAG_DOMAIN_PARAMS: u8 = 0x01;
const TAG_MASTER_SECRET: u8 = 0x02;
const TAG_IDENTITY: u8 = 0x03;
const TAG_USER_SECRET_KEY: u8 = 0x04;
const TAG_GT_PLAINTEXT: u8 = 0x05;
const TAG_CIPHERTEXT: u8 = 0x06;
const TAG_REENCRYPTION_KEY: u8 = 0x07;

/// An identity: any non-empty UTF-8 string naming a user, a content item,
/// a policy, or a name prefix. Comparison is byte-exact and case-sensitive.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Identity(String);

impl Identity {
    /// Wrap a string as an identity, rejecting the empty string.
    pub fn new(s: impl Into<String>) -> Result<Self, Error> {
        let s = s.into();
        if s.is_empty() {
            return Err(Error::EmptyIdentity);
        }
        Ok(Identity(s))
    }

    /// The identity as a string slice.
    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// The identity's raw bytes (what the hash-to-group map consumes).
    pub fn as_bytes(&self) -> &[u8] {
        self.0.as_bytes()
    }

    /// Canonical byte encoding.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(TAG_IDENTITY);
        w.bytes(self.as_bytes());
        w.finish()
    }

    /// Strict decode of the canonical byte encoding.
    pub fn from_bytes(buf: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader::new(buf, TAG_IDENTITY)?;
        let s = r.string("identity")?;
        r.finish()?;
        if s.is_empty() {
            return Err(CodecError::InvalidValue("identity"));
        }
        Ok(Identity(s))
    }
}

impl std::fmt::Display for Identity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// Public parameters of one key-management domain: the generator, the
/// generator raised to the master secret, and the hash-suite identifier
/// fixing both hash-to-group maps and the key-derivation function.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DomainParams {
    /// Label of the domain that published these parameters.
    pub domain_id: String,
    /// Fixed group-1 generator.
    pub g: G1A,
    /// `g` raised to the master secret.
    pub g_s: G1A,
    /// Identifier of the hash/KDF suite these parameters are used with.
    pub hash_suite_id: String,
}

impl DomainParams {
    /// Canonical byte encoding.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(TAG_DOMAIN_PARAMS);
        w.bytes(self.domain_id.as_bytes());
        w.g1(&self.g);
        w.g1(&self.g_s);
        w.bytes(self.hash_suite_id.as_bytes());
        w.finish()
    }

    /// Strict decode of the canonical byte encoding.
    pub fn from_bytes(buf: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader::new(buf, TAG_DOMAIN_PARAMS)?;
        let domain_id = r.string("domain_id")?;
        let g = r.g1("g")?;
        let g_s = r.g1("g_s")?;
        let hash_suite_id = r.string("hash_suite_id")?;
        r.finish()?;
        if g != G1A::generator() {
            return Err(CodecError::InvalidValue("g"));
        }
        if g_s.is_zero() {
            return Err(CodecError::InvalidValue("g_s"));
        }
        if hash_suite_id != HASH_SUITE_ID {
            return Err(CodecError::InvalidValue("hash_suite_id"));
        }
        Ok(DomainParams { domain_id, g, g_s, hash_suite_id })
    }
}

/// The master secret of a domain. Whoever holds it can extract the secret
/// key of any identity in that domain.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MasterSecret {
    /// Nonzero scalar `s` with `g_s = g^s`.
    pub s: Scalar,
}

impl MasterSecret {
    /// Canonical byte encoding.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(TAG_MASTER_SECRET);
        w.fr(&self.s);
        w.finish()
    }

    /// Strict decode of the canonical byte encoding.
    pub fn from_bytes(buf: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader::new(buf, TAG_MASTER_SECRET)?;
        let s = r.fr("s")?;
        r.finish()?;
        if s.is_zero() {
            return Err(CodecError::InvalidValue("s"));
        }
        Ok(MasterSecret { s })
    }
}

/// The secret key of one identity, issued by its domain's key generator.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UserSecretKey {
    /// Identity this key belongs to.
    pub id: Identity,
    /// `H1(id)` raised to the domain's master secret.
    pub sk: G2A,
    /// Label of the issuing domain.
    pub domain_id: String,
}

impl UserSecretKey {
    /// Check the pairing consistency invariant `e(g, sk) = e(g_s, H1(id))`
    /// against a parameter set.
    pub fn is_consistent_with(&self, params: &DomainParams) -> bool {
        pairing(params.g, self.sk)
            == pairing(params.g_s, crate::curve::hash_identity_to_g2(self.id.as_bytes()))
    }

    /// Canonical byte encoding.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(TAG_USER_SECRET_KEY);
        w.bytes(self.id.as_bytes());
        w.g2(&self.sk);
        w.bytes(self.domain_id.as_bytes());
        w.finish()
    }

    /// Strict decode of the canonical byte encoding.
    pub fn from_bytes(buf: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader::new(buf, TAG_USER_SECRET_KEY)?;
        let id = r.string("id")?;
        let sk = r.g2("sk")?;
        let domain_id = r.string("domain_id")?;
        r.finish()?;
        if id.is_empty() {
            return Err(CodecError::InvalidValue("id"));
        }
        Ok(UserSecretKey { id: Identity(id), sk, domain_id })
    }
}

/// A plaintext of the scheme: an element of the pairing's target group.
/// Content keys are drawn uniformly from this group and then fed through
/// [`derive_sym_key`](crate::scheme::derive_sym_key) to obtain symmetric keys.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GtPlaintext {
    /// The target-group element.
    pub value: Gt,
}

impl GtPlaintext {
    /// Sample a uniformly random plaintext (a fresh content key).
    pub fn random(rng: &mut (impl CryptoRng + RngCore)) -> Self {
        GtPlaintext { value: Gt::rand(rng) }
    }

    /// Canonical byte encoding.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(TAG_GT_PLAINTEXT);
        w.gt(&self.value);
        w.finish()
    }

    /// Strict decode of the canonical byte encoding.
    pub fn from_bytes(buf: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader::new(buf, TAG_GT_PLAINTEXT)?;
        let value = r.gt("value")?;
        r.finish()?;
        Ok(GtPlaintext { value })
    }
}

/// A ciphertext, either freshly encrypted (level 1) or the output of one
/// re-encryption (level 2). Level-2 ciphertexts carry a nested level-1
/// ciphertext (`wrap`) that delivers the re-encryption key's random value
/// to the delegatee under the delegatee's own domain.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LeveledCiphertext {
    /// 1 for fresh encryptions, 2 after re-encryption. The scheme is
    /// single-hop, so no higher level exists.
    pub level: u8,
    /// Identity that can decrypt this ciphertext.
    pub target_id: Identity,
    /// Domain the target identity belongs to.
    pub target_domain: String,
    /// First component `g^r`.
    pub c1: G1A,
    /// Second component; the plaintext blinded by a pairing value.
    pub c2: Gt,
    /// Present exactly on level-2 ciphertexts.
    pub wrap: Option<Box<LeveledCiphertext>>,
}

impl LeveledCiphertext {
    /// Canonical byte encoding.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(TAG_CIPHERTEXT);
        w.u8(self.level);
        w.bytes(self.target_id.as_bytes());
        w.bytes(self.target_domain.as_bytes());
        w.g1(&self.c1);
        w.gt(&self.c2);
        if let Some(wrap) = &self.wrap {
            w.bytes(&wrap.to_bytes());
        }
        w.finish()
    }

    /// Strict decode of the canonical byte encoding, re-checking the
    /// level/wrap invariants and that `c1` is not the identity element.
    pub fn from_bytes(buf: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader::new(buf, TAG_CIPHERTEXT)?;
        let level = r.u8("level")?;
        if level != 1 && level != 2 {
            return Err(CodecError::InvalidValue("level"));
        }
        let target_id = r.string("target_id")?;
        if target_id.is_empty() {
            return Err(CodecError::InvalidValue("target_id"));
        }
        let target_domain = r.string("target_domain")?;
        let c1 = r.g1("c1")?;
        let c2 = r.gt("c2")?;
        let wrap = if level == 2 {
            let nested = r.bytes("wrap")?;
            let inner = LeveledCiphertext::from_bytes(nested)?;
            if inner.level != 1 {
                return Err(CodecError::InvalidValue("wrap"));
            }
            Some(Box::new(inner))
        } else {
            None
        };
        r.finish()?;
        if c1.is_zero() {
            return Err(CodecError::InvalidValue("c1"));
        }
        Ok(LeveledCiphertext { level, target_id: Identity(target_id), target_domain, c1, c2, wrap })
    }
}

/// A unidirectional, single-hop re-encryption key from `src_id` to
/// `dst_id`. It is public data: applying it transforms ciphertexts without
/// revealing anything about their plaintexts, and it cannot be inverted to
/// transform in the other direction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReencryptionKey {
    /// Identity whose ciphertexts this key re-encrypts.
    pub src_id: Identity,
    /// Identity that can decrypt the result.
    pub dst_id: Identity,
    /// Domain of the destination identity.
    pub dst_domain: String,
    /// `H3(X) / sk_src`, the component mixed into `c2` during re-encryption.
    pub r1: G2A,
    /// `X` encrypted under `(dst_id, dst_domain)`; copied verbatim into the
    /// `wrap` of every ciphertext this key produces.
    pub wrapped_x: LeveledCiphertext,
}

impl ReencryptionKey {
    /// Canonical byte encoding.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(TAG_REENCRYPTION_KEY);
        w.bytes(self.src_id.as_bytes());
        w.bytes(self.dst_id.as_bytes());
        w.bytes(self.dst_domain.as_bytes());
        w.g2(&self.r1);
        w.bytes(&self.wrapped_x.to_bytes());
        w.finish()
    }

    /// Strict decode of the canonical byte encoding.
    pub fn from_bytes(buf: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader::new(buf, TAG_REENCRYPTION_KEY)?;
        let src_id = r.string("src_id")?;
        let dst_id = r.string("dst_id")?;
        let dst_domain = r.string("dst_domain")?;
        let r1 = r.g2("r1")?;
        let nested = r.bytes("wrapped_x")?;
        let wrapped_x = LeveledCiphertext::from_bytes(nested)?;
        r.finish()?;
        if src_id.is_empty() {
            return Err(CodecError::InvalidValue("src_id"));
        }
        if dst_id.is_empty() {
            return Err(CodecError::InvalidValue("dst_id"));
        }
        if wrapped_x.level != 1 {
            return Err(CodecError::InvalidValue("wrapped_x"));
        }
        Ok(ReencryptionKey {
            src_id: Identity(src_id),
            dst_id: Identity(dst_id),
            dst_domain,
            r1,
            wrapped_x,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_rejects_empty() {
        assert!(matches!(Identity::new(""), Err(Error::EmptyIdentity)));
        assert_eq!(Identity::new("alice").unwrap().as_str(), "alice");
    }

    #[test]
    fn identity_comparison_is_case_sensitive() {
        assert_ne!(Identity::new("Alice").unwrap(), Identity::new("alice").unwrap());
    }

    #[test]
    fn identity_encoding_round_trips() {
        let id = Identity::new("user@example.com").unwrap();
        let buf = id.to_bytes();
        assert_eq!(Identity::from_bytes(&buf).unwrap(), id);
    }
}
