//! Sealing-layer integration tests: hybrid encryption across independent
//! domains and policies, and the failure modes that keep mismatched key
//! material from ever opening a body.

use std::collections::HashSet;

use ibpre::{reencrypt, rkgen, Identity};
use icnshare::{
    open_item_as_delegatee, open_item_as_owner, policy_identity, seal_item, ContentError, KeyFile,
    SealedItem,
};
use rand::rngs::StdRng;
use rand::{RngCore, SeedableRng};

fn id(s: &str) -> Identity {
    Identity::new(s).unwrap()
}

#[test]
fn repeated_seals_share_no_key_material() {
    let mut rng = StdRng::seed_from_u64(11);
    let owner = KeyFile::generate(id("alice"), &mut rng);
    let plaintext = b"the same words every time";
    let item = id("docs/memo");

    let mut nonces = HashSet::new();
    let mut bodies = HashSet::new();
    let mut key_records = HashSet::new();
    for _ in 0..100 {
        let sealed = seal_item(plaintext, &item, &owner.identity, &owner.params, &mut rng);
        assert!(nonces.insert(sealed.nonce), "nonce reuse across seals");
        assert!(bodies.insert(sealed.body.clone()), "identical ciphertext across seals");
        assert!(
            key_records.insert(sealed.key_record.to_bytes()),
            "identical key record across seals"
        );
        // Every seal still opens to the same plaintext.
        let opened = open_item_as_owner(&sealed, &owner.secret_key(), &owner.params).unwrap();
        assert_eq!(opened, plaintext);
    }
}

#[test]
fn policy_scoped_key_records_do_not_cross() {
    let mut rng = StdRng::seed_from_u64(12);
    let owner = KeyFile::generate(id("alice"), &mut rng);
    let member = KeyFile::generate(id("ursula"), &mut rng);

    // `ursula` is delegated the *staff* policy only.
    let rk_staff = rkgen(
        &owner.params,
        &owner.extract_for(&policy_identity("staff")),
        &member.identity,
        &member.params,
        &mut rng,
    )
    .unwrap();

    // An item is sealed for the *finance* policy instead.
    let sealed = seal_item(
        b"quarterly numbers",
        &id("ledger/q3"),
        &policy_identity("finance"),
        &owner.params,
        &mut rng,
    );
    let (body, record) = sealed.into_parts();

    // The honest transformation refuses the mismatched addressing
    // outright...
    assert!(reencrypt(&rk_staff, &record).is_err());

    // ...and a node that forges the routing label to force the
    // transformation through still recovers nothing: the blinding factor
    // is bound to the policy identity inside the pairing, so the
    // recovered key is wrong and the authenticated body rejects it.
    let forged = ibpre::LeveledCiphertext { target_id: policy_identity("staff"), ..record.clone() };
    let crossed = reencrypt(&rk_staff, &forged).unwrap();
    let attempt = open_item_as_delegatee(&body, &crossed, &member.secret_key(), &member.params);
    assert!(matches!(attempt, Err(ContentError::AuthenticationFailed)));

    // The matching policy key still works end to end.
    let rk_finance = rkgen(
        &owner.params,
        &owner.extract_for(&policy_identity("finance")),
        &member.identity,
        &member.params,
        &mut rng,
    )
    .unwrap();
    let proper = reencrypt(&rk_finance, &record).unwrap();
    let opened =
        open_item_as_delegatee(&body, &proper, &member.secret_key(), &member.params).unwrap();
    assert_eq!(opened, b"quarterly numbers");
}

#[test]
fn foreign_author_seals_to_a_hosting_domain() {
    let mut rng = StdRng::seed_from_u64(13);
    let author = KeyFile::generate(id("zoe"), &mut rng);
    let host = KeyFile::generate(id("alice"), &mut rng);
    let reader = KeyFile::generate(id("ursula"), &mut rng);

    // The author seals directly to the host's identity under the *host's*
    // parameters, as published in a directory. The author's own domain
    // plays no part in who can read the item.
    let sealed = seal_item(
        b"guest column",
        &id("news/guest-1"),
        &host.identity,
        &host.params,
        &mut rng,
    );

    // The host can open it like any of its own items...
    let opened = open_item_as_owner(&sealed, &host.secret_key(), &host.params).unwrap();
    assert_eq!(opened, b"guest column");

    // ...and can delegate it onward into a third domain.
    let rk = rkgen(&host.params, &host.secret_key(), &reader.identity, &reader.params, &mut rng)
        .unwrap();
    let (body, record) = sealed.into_parts();
    let reenc = reencrypt(&rk, &record).unwrap();
    let opened =
        open_item_as_delegatee(&body, &reenc, &reader.secret_key(), &reader.params).unwrap();
    assert_eq!(opened, b"guest column");

    // The author keeps no trapdoor: its own secret key does not open the
    // host-addressed record.
    let rebuilt = SealedItem {
        item_id: body.item_id.clone(),
        nonce: body.nonce,
        body: body.body.clone(),
        key_record: record,
    };
    let attempt = open_item_as_owner(&rebuilt, &author.secret_key(), &author.params);
    assert!(attempt.is_err());
}

#[test]
fn mismatched_parts_are_rejected() {
    let mut rng = StdRng::seed_from_u64(14);
    let owner = KeyFile::generate(id("alice"), &mut rng);
    let reader = KeyFile::generate(id("ursula"), &mut rng);

    let mut secret = vec![0u8; 256];
    rng.fill_bytes(&mut secret);
    let first = seal_item(&secret, &id("a/one"), &owner.identity, &owner.params, &mut rng);
    let second = seal_item(&secret, &id("a/two"), &owner.identity, &owner.params, &mut rng);

    // Body of one item with the key record of another: the content keys
    // differ per seal, so authentication fails.
    let spliced = SealedItem {
        item_id: first.item_id.clone(),
        nonce: first.nonce,
        body: first.body.clone(),
        key_record: second.key_record.clone(),
    };
    assert!(matches!(
        open_item_as_owner(&spliced, &owner.secret_key(), &owner.params),
        Err(ContentError::AuthenticationFailed)
    ));

    // Renaming a sealed body breaks the authenticated binding to its name.
    let mut renamed = first.body_part();
    renamed.item_id = id("a/two");
    let k_record = first.key_record.clone();
    let rk = rkgen(&owner.params, &owner.secret_key(), &reader.identity, &reader.params, &mut rng)
        .unwrap();
    let reenc = reencrypt(&rk, &k_record).unwrap();
    assert!(matches!(
        open_item_as_delegatee(&renamed, &reenc, &reader.secret_key(), &reader.params),
        Err(ContentError::AuthenticationFailed)
    ));

    // Level and addressing confusion is caught before any decryption.
    assert!(matches!(
        open_item_as_delegatee(
            &first.body_part(),
            &first.key_record,
            &reader.secret_key(),
            &reader.params
        ),
        Err(ContentError::KeyRecordLevel { expected: 2, found: 1 })
    ));
    let wrong_target =
        open_item_as_delegatee(&first.body_part(), &reenc, &owner.secret_key(), &owner.params);
    assert!(matches!(wrong_target, Err(ContentError::KeyRecordTarget { .. })));

    // The untampered path still works, so the rejections above are not
    // artifacts of a broken fixture.
    let opened =
        open_item_as_delegatee(&first.body_part(), &reenc, &reader.secret_key(), &reader.params)
            .unwrap();
    assert_eq!(opened, secret);
}
