//! The seven scheme operations: domain setup, key extraction, encryption,
//! decryption, re-encryption key generation, re-encryption, and symmetric
//! key derivation.
//!
//! All operations are pure functions; the probabilistic ones take the RNG
//! explicitly. Delegation is non-interactive (the delegatee never
//! participates in `rkgen`) and works across domains: a re-encryption key
//! built from the delegator's secret key and the *delegatee's* public
//! parameters turns ciphertexts of one domain into ciphertexts decryptable
//! in the other.
//!
//! Decryption with the wrong secret key is not an error: the algebra
//! cannot detect it and simply yields a different group element. Callers
//! that need authenticity derive a symmetric key from the recovered
//! element and let an authenticated cipher reject the forgery.

use ark_ec::{AffineRepr, CurveGroup, Group};
use ark_ff::Zero;
use ark_std::UniformRand;
use hkdf::Hkdf;
use rand::{CryptoRng, RngCore};
use sha2::Sha256;

use crate::curve::{
    hash_gt_to_g2, hash_identity_to_g2, pairing, Gt, Scalar, G1, HASH_SUITE_ID,
};
use crate::error::Error;
use crate::types::{
    DomainParams, GtPlaintext, Identity, LeveledCiphertext, MasterSecret, ReencryptionKey,
    UserSecretKey,
};

/// Salt for the extract step of the key-derivation function.
const KDF_SALT: &[u8] = b"IBPRE-V1-HKDF-SHA256";

/// Output length of [`derive_sym_key`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SymKeyLen {
    /// 128-bit key (16 bytes).
    Bits128,
    /// 256-bit key (32 bytes).
    Bits256,
}

impl SymKeyLen {
    /// Length in bytes.
    pub fn byte_len(self) -> usize {
        match self {
            SymKeyLen::Bits128 => 16,
            SymKeyLen::Bits256 => 32,
        }
    }
}

/// Create a new key-management domain: fresh public parameters and the
/// master secret that backs them.
///
/// Only the 128-bit security level is available; it selects the fixed
/// BLS12-381 parameterization.
pub fn setup(
    security_level: u32,
    domain_id: &str,
    rng: &mut (impl CryptoRng + RngCore),
) -> Result<(DomainParams, MasterSecret), Error> {
    if security_level != 128 {
        return Err(Error::UnsupportedSecurityLevel(security_level));
    }
    let mut s = Scalar::rand(rng);
    while s.is_zero() {
        s = Scalar::rand(rng);
    }
    let g = G1::generator().into_affine();
    let g_s = (G1::generator() * s).into_affine();
    let params = DomainParams {
        domain_id: domain_id.to_string(),
        g,
        g_s,
        hash_suite_id: HASH_SUITE_ID.to_string(),
    };
    Ok((params, MasterSecret { s }))
}

/// Derive the secret key of `id` in the domain of `params`/`msk`.
///
/// Deterministic: extracting twice yields the same key. Fails if the master
/// secret does not match the parameter set it is presented with.
pub fn extract(
    params: &DomainParams,
    msk: &MasterSecret,
    id: &Identity,
) -> Result<UserSecretKey, Error> {
    if (G1::from(params.g) * msk.s).into_affine() != params.g_s {
        return Err(Error::ForeignMasterSecret(params.domain_id.clone()));
    }
    let sk = (hash_identity_to_g2(id.as_bytes()).into_group() * msk.s).into_affine();
    Ok(UserSecretKey { id: id.clone(), sk, domain_id: params.domain_id.clone() })
}

/// Encrypt a target-group plaintext to `id` under its domain's parameters.
///
/// Probabilistic: `c1 = g^r`, `c2 = m · e(g_s, H1(id))^r` for fresh `r`.
pub fn encrypt(
    params: &DomainParams,
    id: &Identity,
    m: &GtPlaintext,
    rng: &mut (impl CryptoRng + RngCore),
) -> LeveledCiphertext {
    // A zero exponent would make c1 the identity element and leak m in c2.
    let mut r = Scalar::rand(rng);
    while r.is_zero() {
        r = Scalar::rand(rng);
    }
    let c1 = (G1::from(params.g) * r).into_affine();
    let h_id = hash_identity_to_g2(id.as_bytes());
    let c2 = m.value + pairing(params.g_s, (h_id.into_group() * r).into_affine());
    LeveledCiphertext {
        level: 1,
        target_id: id.clone(),
        target_domain: params.domain_id.clone(),
        c1,
        c2,
        wrap: None,
    }
}

/// Decrypt a ciphertext of either level with the target identity's secret
/// key and that identity's own domain parameters.
///
/// Level 1 computes `m = c2 / e(c1, sk)`. Level 2 first recovers the
/// delegation value `X` from the nested `wrap` ciphertext, then computes
/// `m = c2 / e(c1, H3(X))`.
///
/// Structural problems (impossible level, missing wrap, mixed domains) are
/// reported as errors. A wrong-but-well-formed key is *not* detected here;
/// it yields a wrong plaintext, to be rejected by the authenticated
/// symmetric layer downstream.
pub fn decrypt(
    sk: &UserSecretKey,
    c: &LeveledCiphertext,
    own_params: &DomainParams,
) -> Result<GtPlaintext, Error> {
    if sk.domain_id != own_params.domain_id {
        return Err(Error::DomainMismatch {
            expected: own_params.domain_id.clone(),
            found: sk.domain_id.clone(),
        });
    }
    if c.target_domain != own_params.domain_id {
        return Err(Error::DomainMismatch {
            expected: own_params.domain_id.clone(),
            found: c.target_domain.clone(),
        });
    }
    match c.level {
        1 => {
            if c.wrap.is_some() {
                return Err(Error::MalformedCiphertext("level-1 ciphertext carries a wrap"));
            }
            Ok(GtPlaintext { value: c.c2 - pairing(c.c1, sk.sk) })
        }
        2 => {
            let wrap = c
                .wrap
                .as_ref()
                .ok_or(Error::MalformedCiphertext("level-2 ciphertext missing its wrap"))?;
            if wrap.level != 1 {
                return Err(Error::MalformedCiphertext("wrap must be a level-1 ciphertext"));
            }
            if wrap.target_domain != own_params.domain_id {
                return Err(Error::DomainMismatch {
                    expected: own_params.domain_id.clone(),
                    found: wrap.target_domain.clone(),
                });
            }
            let x = wrap.c2 - pairing(wrap.c1, sk.sk);
            Ok(GtPlaintext { value: c.c2 - pairing(c.c1, hash_gt_to_g2(&x)) })
        }
        other => Err(Error::MalformedCiphertext(match other {
            0 => "level 0 does not exist",
            _ => "levels above 2 do not exist (single-hop scheme)",
        })),
    }
}

/// Build a re-encryption key from `sk_src` to `dst_id`, where the
/// destination may live in a different domain (`dst_params` are the
/// *delegatee's* domain parameters).
///
/// Requires nothing from the delegatee: the key is assembled from the
/// delegator's secret key and public data only. Internally samples a
/// random target-group element `X`, sets `r1 = H3(X) / sk_src`, and ships
/// `X` to the delegatee encrypted under `(dst_id, dst_params)`.
pub fn rkgen(
    src_params: &DomainParams,
    sk_src: &UserSecretKey,
    dst_id: &Identity,
    dst_params: &DomainParams,
    rng: &mut (impl CryptoRng + RngCore),
) -> Result<ReencryptionKey, Error> {
    if sk_src.domain_id != src_params.domain_id {
        return Err(Error::DomainMismatch {
            expected: src_params.domain_id.clone(),
            found: sk_src.domain_id.clone(),
        });
    }
    if !sk_src.is_consistent_with(src_params) {
        return Err(Error::InvalidSecretKey(sk_src.id.clone()));
    }
    let x = Gt::rand(rng);
    let r1 = (hash_gt_to_g2(&x).into_group() - sk_src.sk.into_group()).into_affine();
    let wrapped_x = encrypt(dst_params, dst_id, &GtPlaintext { value: x }, rng);
    Ok(ReencryptionKey {
        src_id: sk_src.id.clone(),
        dst_id: dst_id.clone(),
        dst_domain: dst_params.domain_id.clone(),
        r1,
        wrapped_x,
    })
}

/// Re-encrypt a level-1 ciphertext addressed to `rk.src_id` into a level-2
/// ciphertext addressed to `rk.dst_id`.
///
/// The transformation is blind: it multiplies `e(c1, r1)` into `c2` and
/// attaches the key's wrapped delegation value, never touching the
/// plaintext. Level-2 inputs are rejected (the scheme is single-hop), as
/// are ciphertexts addressed to anyone other than the key's source.
pub fn reencrypt(rk: &ReencryptionKey, c: &LeveledCiphertext) -> Result<LeveledCiphertext, Error> {
    if c.level != 1 {
        return Err(Error::NotSingleHop);
    }
    if c.target_id != rk.src_id {
        return Err(Error::DelegationMismatch {
            expected: rk.src_id.clone(),
            found: c.target_id.clone(),
        });
    }
    Ok(LeveledCiphertext {
        level: 2,
        target_id: rk.dst_id.clone(),
        target_domain: rk.dst_domain.clone(),
        c1: c.c1,
        c2: c.c2 + pairing(c.c1, rk.r1),
        wrap: Some(Box::new(rk.wrapped_x.clone())),
    })
}

/// Derive a symmetric key of the given length from a target-group element.
///
/// Deterministic and domain-separated: the element's canonical
/// serialization is fed through an extract-then-expand KDF with the
/// context label as the expansion info, so the same element yields
/// independent keys for different uses.
pub fn derive_sym_key(m: &GtPlaintext, context: &str, len: SymKeyLen) -> Vec<u8> {
    use ark_serialize::CanonicalSerialize;
    let mut ikm = Vec::with_capacity(crate::curve::GT_BYTES);
    m.value.serialize_compressed(&mut ikm).expect("serializing to a Vec cannot fail");
    let hk = Hkdf::<Sha256>::new(Some(KDF_SALT), &ikm);
    let mut okm = vec![0u8; len.byte_len()];
    hk.expand(context.as_bytes(), &mut okm)
        .expect("requested lengths are far below the HKDF-SHA256 bound");
    okm
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    fn rng() -> StdRng {
        StdRng::seed_from_u64(0x5eed)
    }

    #[test]
    fn setup_rejects_unsupported_levels() {
        let mut rng = rng();
        assert!(matches!(
            setup(80, "d", &mut rng),
            Err(Error::UnsupportedSecurityLevel(80))
        ));
        assert!(matches!(
            setup(256, "d", &mut rng),
            Err(Error::UnsupportedSecurityLevel(256))
        ));
        assert!(setup(128, "d", &mut rng).is_ok());
    }

    #[test]
    fn setup_is_randomized() {
        let mut rng = rng();
        let (_, msk_a) = setup(128, "d", &mut rng).unwrap();
        let (_, msk_b) = setup(128, "d", &mut rng).unwrap();
        assert_ne!(msk_a, msk_b);
    }

    #[test]
    fn extract_is_deterministic_and_checked() {
        let mut rng = rng();
        let (params, msk) = setup(128, "d", &mut rng).unwrap();
        let (_, foreign_msk) = setup(128, "other", &mut rng).unwrap();
        let id = Identity::new("alice").unwrap();

        let k1 = extract(&params, &msk, &id).unwrap();
        let k2 = extract(&params, &msk, &id).unwrap();
        assert_eq!(k1, k2);
        assert!(k1.is_consistent_with(&params));

        assert!(matches!(
            extract(&params, &foreign_msk, &id),
            Err(Error::ForeignMasterSecret(_))
        ));
    }

    #[test]
    fn encryption_is_probabilistic() {
        let mut rng = rng();
        let (params, msk) = setup(128, "d", &mut rng).unwrap();
        let id = Identity::new("alice").unwrap();
        let m = GtPlaintext::random(&mut rng);

        let c_a = encrypt(&params, &id, &m, &mut rng);
        let c_b = encrypt(&params, &id, &m, &mut rng);
        assert_ne!(c_a, c_b);

        let sk = extract(&params, &msk, &id).unwrap();
        assert_eq!(decrypt(&sk, &c_a, &params).unwrap(), m);
        assert_eq!(decrypt(&sk, &c_b, &params).unwrap(), m);
    }

    #[test]
    fn reencrypt_rejects_level_2_input() {
        let mut rng = rng();
        let (params, msk) = setup(128, "d", &mut rng).unwrap();
        let alice = Identity::new("alice").unwrap();
        let bob = Identity::new("bob").unwrap();
        let carol = Identity::new("carol").unwrap();
        let m = GtPlaintext::random(&mut rng);

        let sk_alice = extract(&params, &msk, &alice).unwrap();
        let rk_ab = rkgen(&params, &sk_alice, &bob, &params, &mut rng).unwrap();
        let c = encrypt(&params, &alice, &m, &mut rng);
        let c2 = reencrypt(&rk_ab, &c).unwrap();

        // Second hop must be refused even with a matching key.
        let sk_bob = extract(&params, &msk, &bob).unwrap();
        let rk_bc = rkgen(&params, &sk_bob, &carol, &params, &mut rng).unwrap();
        assert!(matches!(reencrypt(&rk_bc, &c2), Err(Error::NotSingleHop)));
    }

    #[test]
    fn reencrypt_rejects_mismatched_source() {
        let mut rng = rng();
        let (params, msk) = setup(128, "d", &mut rng).unwrap();
        let alice = Identity::new("alice").unwrap();
        let bob = Identity::new("bob").unwrap();
        let carol = Identity::new("carol").unwrap();
        let m = GtPlaintext::random(&mut rng);

        let sk_alice = extract(&params, &msk, &alice).unwrap();
        let rk_ab = rkgen(&params, &sk_alice, &bob, &params, &mut rng).unwrap();
        let c_carol = encrypt(&params, &carol, &m, &mut rng);
        assert!(matches!(
            reencrypt(&rk_ab, &c_carol),
            Err(Error::DelegationMismatch { .. })
        ));
    }

    #[test]
    fn decrypt_flags_domain_mixups() {
        let mut rng = rng();
        let (params_a, msk_a) = setup(128, "a", &mut rng).unwrap();
        let (params_b, _) = setup(128, "b", &mut rng).unwrap();
        let id = Identity::new("alice").unwrap();
        let m = GtPlaintext::random(&mut rng);

        let sk = extract(&params_a, &msk_a, &id).unwrap();
        let c = encrypt(&params_a, &id, &m, &mut rng);

        // Key and params from different domains.
        assert!(matches!(
            decrypt(&sk, &c, &params_b),
            Err(Error::DomainMismatch { .. })
        ));

        // Ciphertext from a different domain than key/params.
        let c_foreign = encrypt(&params_b, &id, &m, &mut rng);
        assert!(matches!(
            decrypt(&sk, &c_foreign, &params_a),
            Err(Error::DomainMismatch { .. })
        ));
    }

    #[test]
    fn derive_sym_key_is_deterministic_and_context_separated() {
        let mut rng = rng();
        let m = GtPlaintext::random(&mut rng);

        let k1 = derive_sym_key(&m, "content", SymKeyLen::Bits128);
        let k2 = derive_sym_key(&m, "content", SymKeyLen::Bits128);
        let k3 = derive_sym_key(&m, "handshake", SymKeyLen::Bits128);
        assert_eq!(k1, k2);
        assert_ne!(k1, k3);
        assert_eq!(k1.len(), 16);
        assert_eq!(derive_sym_key(&m, "content", SymKeyLen::Bits256).len(), 32);

        let other = GtPlaintext::random(&mut rng);
        assert_ne!(derive_sym_key(&other, "content", SymKeyLen::Bits128), k1);
    }
}
