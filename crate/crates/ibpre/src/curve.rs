//! Concrete pairing instantiation and the two hash-to-group maps.
//!
//! Everything runs over BLS12-381 in asymmetric configuration: public
//! parameters and first ciphertext components live in G1 (small, fast),
//! identity hashes and secret keys live in G2, and plaintext payloads live
//! in the target group Gt. The two hash maps share the same
//! hash-to-curve machinery (SHA-256 XMD expansion into the
//! Wahby–Boneh simplified-SWU map) but use distinct domain-separation
//! tags so that an identity string and a target-group element can never
//! collide into the same G2 point by construction.

use ark_bls12_381::{g2, Bls12_381};
use ark_ec::hashing::{
    curve_maps::wb::WBMap, map_to_curve_hasher::MapToCurveBasedHasher, HashToCurve,
};
use ark_ec::pairing::{Pairing, PairingOutput};
use ark_ff::field_hashers::DefaultFieldHasher;
use ark_serialize::CanonicalSerialize;
use sha2::Sha256;

/// First pairing group (projective form).
pub type G1 = ark_bls12_381::G1Projective;
/// Second pairing group (projective form).
pub type G2 = ark_bls12_381::G2Projective;
/// First pairing group, affine form used in serialized values.
pub type G1A = ark_bls12_381::G1Affine;
/// Second pairing group, affine form used in serialized values.
pub type G2A = ark_bls12_381::G2Affine;
/// Target group of the pairing.
pub type Gt = PairingOutput<Bls12_381>;
/// Scalar field shared by all three groups.
pub type Scalar = ark_bls12_381::Fr;

/// Compressed size of a G1 element in bytes.
pub const G1_BYTES: usize = 48;
/// Compressed size of a G2 element in bytes.
pub const G2_BYTES: usize = 96;
/// Serialized size of a target-group element in bytes.
pub const GT_BYTES: usize = 576;
/// Serialized size of a scalar in bytes.
pub const FR_BYTES: usize = 32;

/// Identifier for the hash suite fixed by this implementation, recorded in
/// every parameter set so decoders can refuse encodings they cannot
/// interpret.
pub const HASH_SUITE_ID: &str = "bls12381g2_xmd:sha-256_sswu_ro/hkdf-sha256/v1";

/// Domain tag for hashing identity strings into G2.
const DST_IDENTITY: &[u8] = b"IBPRE-V1-BLS12381G2_XMD:SHA-256_SSWU_RO_IDENTITY";
/// Domain tag for hashing target-group elements into G2 (re-encryption keys).
const DST_REKEY: &[u8] = b"IBPRE-V1-BLS12381G2_XMD:SHA-256_SSWU_RO_REKEY";

type G2Hasher = MapToCurveBasedHasher<
    ark_bls12_381::G2Projective,
    DefaultFieldHasher<Sha256, 128>,
    WBMap<g2::Config>,
>;

fn hash_to_g2(msg: &[u8], dst: &[u8]) -> G2A {
    let hasher = G2Hasher::new(dst).expect("hash-to-curve parameters are fixed and valid");
    hasher.hash(msg).expect("hash-to-curve is total over byte strings")
}

/// Hash an identity string into G2 (the map `H1`).
pub fn hash_identity_to_g2(identity: &[u8]) -> G2A {
    hash_to_g2(identity, DST_IDENTITY)
}

/// Hash a target-group element into G2 (the map `H3`), via its canonical
/// serialization.
pub fn hash_gt_to_g2(value: &Gt) -> G2A {
    let mut buf = Vec::with_capacity(GT_BYTES);
    value.serialize_compressed(&mut buf).expect("serializing to a Vec cannot fail");
    hash_to_g2(&buf, DST_REKEY)
}

/// The pairing `e: G1 × G2 → Gt`.
pub fn pairing(a: impl Into<<Bls12_381 as Pairing>::G1Prepared>, b: impl Into<<Bls12_381 as Pairing>::G2Prepared>) -> Gt {
    Bls12_381::pairing(a, b)
}
