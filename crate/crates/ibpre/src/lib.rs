//! Identity-based encryption with unidirectional, single-hop,
//! non-interactive proxy re-encryption over BLS12-381.
//!
//! A *domain* is anyone who ran [`setup`]: it publishes [`DomainParams`]
//! and keeps a [`MasterSecret`] from which it extracts per-identity
//! secret keys. Any string — an e-mail address, a content name, a policy
//! label, a name prefix — is a valid [`Identity`] and therefore a valid
//! public key.
//!
//! On top of plain encrypt/decrypt, a key holder can delegate: [`rkgen`]
//! builds a public [`ReencryptionKey`] from their secret key and the
//! *delegatee's* domain parameters (no delegatee involvement, and the two
//! domains may be different). A proxy then calls [`reencrypt`] to turn a
//! ciphertext for the delegator into one for the delegatee without
//! learning the plaintext. Re-encryption is single-hop: its outputs cannot
//! be re-encrypted again.
//!
//! Plaintexts are target-group elements ([`GtPlaintext`]); to protect bulk
//! data, encrypt a random element and stretch it into a symmetric key with
//! [`derive_sym_key`].
//!
//! ```
//! use ibpre::{setup, extract, encrypt, decrypt, rkgen, reencrypt, GtPlaintext, Identity};
//!
//! let mut rng = rand::thread_rng();
//!
//! // Two independent domains.
//! let (params_a, msk_a) = setup(128, "domain-a", &mut rng)?;
//! let (params_b, msk_b) = setup(128, "domain-b", &mut rng)?;
//!
//! let alice = Identity::new("alice@a")?;
//! let bob = Identity::new("bob@b")?;
//! let sk_alice = extract(&params_a, &msk_a, &alice)?;
//! let sk_bob = extract(&params_b, &msk_b, &bob)?;
//!
//! // Encrypt to Alice, delegate to Bob across domains, decrypt as Bob.
//! let m = GtPlaintext::random(&mut rng);
//! let c = encrypt(&params_a, &alice, &m, &mut rng);
//! let rk = rkgen(&params_a, &sk_alice, &bob, &params_b, &mut rng)?;
//! let c_bob = reencrypt(&rk, &c)?;
//! assert_eq!(decrypt(&sk_bob, &c_bob, &params_b)?, m);
//!
//! // Alice can still decrypt the original.
//! assert_eq!(decrypt(&sk_alice, &c, &params_a)?, m);
//! # Ok::<(), ibpre::Error>(())
//! ```

pub mod codec;
pub mod curve;
pub mod error;
pub mod scheme;
pub mod types;

pub use error::{CodecError, Error};
pub use scheme::{
    decrypt, derive_sym_key, encrypt, extract, reencrypt, rkgen, setup, SymKeyLen,
};
pub use types::{
    DomainParams, GtPlaintext, Identity, LeveledCiphertext, MasterSecret, ReencryptionKey,
    UserSecretKey,
};
