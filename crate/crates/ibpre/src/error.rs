//! Error types for the scheme and its canonical encoding.

use crate::types::Identity;

/// Errors returned by scheme operations.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// `setup` was asked for a parameterization this implementation does not ship.
    #[error("unsupported security level {0}; only 128-bit setup is available")]
    UnsupportedSecurityLevel(u32),

    /// Identities are non-empty byte strings; the empty string is reserved as invalid.
    #[error("identity must be a non-empty UTF-8 string")]
    EmptyIdentity,

    /// `extract` was called with a master secret that does not match the
    /// public parameters it was paired with.
    #[error("master secret does not belong to domain {0:?}")]
    ForeignMasterSecret(String),

    /// A secret key failed its pairing consistency check against the domain
    /// parameters it claims to be issued under.
    #[error("secret key for {0} fails the pairing check under its domain parameters")]
    InvalidSecretKey(Identity),

    /// A key, ciphertext, and parameter set from different domains were mixed.
    #[error("domain mismatch: expected {expected:?}, found {found:?}")]
    DomainMismatch { expected: String, found: String },

    /// Re-encryption is single-hop: only freshly encrypted (level-1)
    /// ciphertexts can be transformed.
    #[error("re-encryption requires a level-1 ciphertext; refusing to re-encrypt an already re-encrypted one")]
    NotSingleHop,

    /// The re-encryption key delegates from a different identity than the
    /// ciphertext is addressed to.
    #[error("re-encryption key delegates from {expected} but the ciphertext targets {found}")]
    DelegationMismatch { expected: Identity, found: Identity },

    /// A ciphertext violates its structural invariants (level/wrap consistency).
    #[error("malformed ciphertext: {0}")]
    MalformedCiphertext(&'static str),

    /// A value could not be decoded from its canonical byte encoding.
    #[error(transparent)]
    Codec(#[from] CodecError),
}

/// Errors produced while decoding the canonical byte encoding.
#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum CodecError {
    /// The buffer ended before the named field was fully read.
    #[error("input truncated while reading {0}")]
    Truncated(&'static str),

    /// The leading version byte is not one this implementation understands.
    #[error("unsupported encoding version {0:#04x}")]
    UnsupportedVersion(u8),

    /// The type tag does not match the type being decoded.
    #[error("unexpected type tag {found:#04x} (wanted {wanted:#04x})")]
    UnexpectedTag { wanted: u8, found: u8 },

    /// Decoding consumed the value but bytes were left over.
    #[error("{0} trailing bytes after a complete value")]
    TrailingBytes(usize),

    /// A field has a length that is impossible for its type.
    #[error("field {0} has an invalid length")]
    InvalidLength(&'static str),

    /// A group element failed deserialization or its curve/subgroup checks.
    #[error("field {0} is not a valid group element")]
    InvalidGroupElement(&'static str),

    /// A text field is not valid UTF-8.
    #[error("field {0} is not valid UTF-8")]
    InvalidUtf8(&'static str),

    /// A field decoded cleanly but holds a value that violates an invariant.
    #[error("field {0} holds an invalid value")]
    InvalidValue(&'static str),
}
