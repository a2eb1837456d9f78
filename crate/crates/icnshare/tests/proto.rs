//! Service-level tests: complete publish/fetch/control flows over
//! in-process connections, the uniform deny discipline, revocation frame
//! accounting, persistence across restarts, and a TCP round trip.

use std::net::TcpStream;
use std::sync::Arc;
use std::thread;

use ibpre::Identity;
use icnshare::{
    open_item_as_delegatee, open_item_as_owner, seal_item, Construction, ControlReply,
    ControlRequest, FileBodyStore, Frame, FrameTransport, HandshakeSession, InProcTransport,
    KeyFile, MemoryBodyStore, NodeClient, NodeServer, NodeService, ProtoError, SealedItem,
    TcpTransport, CONTROL_SCOPE, DENY_MESSAGE,
};
use rand::rngs::StdRng;
use rand::{RngCore, SeedableRng};

fn id(s: &str) -> Identity {
    Identity::new(s).unwrap()
}

/// Open a connection to the service: the returned transport is the client
/// half; the server half is driven to completion on its own thread.
fn connect(service: &Arc<NodeService>) -> InProcTransport {
    let (client, mut server) = InProcTransport::pair();
    let service = service.clone();
    thread::spawn(move || {
        let _ = service.handle_connection(&mut server);
    });
    client
}

fn control_session(
    service: &Arc<NodeService>,
    owner: &KeyFile,
    rng: &mut StdRng,
) -> NodeClient<InProcTransport> {
    NodeClient::establish(
        connect(service),
        CONTROL_SCOPE,
        &owner.params,
        &owner.identity,
        &owner.secret_key(),
        &owner.params,
        rng,
    )
    .unwrap()
}

fn reader_session(
    service: &Arc<NodeService>,
    reader: &KeyFile,
    scope: &str,
    host_params: &ibpre::DomainParams,
    rng: &mut StdRng,
) -> NodeClient<InProcTransport> {
    NodeClient::establish(
        connect(service),
        scope,
        host_params,
        &reader.identity,
        &reader.secret_key(),
        &reader.params,
        rng,
    )
    .unwrap()
}

/// Seal `plaintext` for `item` and push it to the node over an
/// established control session. The record is addressed to whichever
/// identity the node's layout re-encrypts from: the owner itself in the
/// per-subscriber layout, the policy identity in the per-policy-member
/// layout.
fn publish(
    owner: &KeyFile,
    client: &mut NodeClient<InProcTransport>,
    construction: Construction,
    item: &str,
    policy: Option<&str>,
    plaintext: &[u8],
    rng: &mut StdRng,
) {
    let target = match (construction, policy) {
        (Construction::PerPolicyMember, Some(name)) => icnshare::policy_identity(name),
        _ => owner.identity.clone(),
    };
    let sealed = seal_item(plaintext, &id(item), &target, &owner.params, rng);
    let (body, key_record) = sealed.into_parts();
    let reply = client
        .control(&ControlRequest::PublishItem {
            item: id(item),
            policy: policy.map(String::from),
            key_record,
            body,
            scope_key: owner.scope_key(item).unwrap(),
        })
        .unwrap();
    assert_eq!(reply, ControlReply::Ok);
}

/// Stand up a node with one policy ("staff") over the given members and
/// no content yet; returns the owner and the per-member key files.
fn fixture(
    construction: Construction,
    members: &[&str],
    rng: &mut StdRng,
) -> (KeyFile, Vec<KeyFile>, Arc<NodeService>) {
    let owner = KeyFile::generate(id("alice"), rng);
    let tables = owner.bootstrap_node(construction, rng).unwrap();
    let service = Arc::new(NodeService::new(tables, Arc::new(MemoryBodyStore::new())));

    let mut client = control_session(&service, &owner, rng);
    let mut readers = Vec::new();
    let mut entries = Vec::new();
    for name in members {
        let reader = KeyFile::generate(id(name), rng);
        let rk = owner
            .registration_rk(construction, &reader.identity, &reader.params, rng)
            .unwrap();
        let reply = client
            .control(&ControlRequest::Register {
                id: reader.identity.clone(),
                params: reader.params.clone(),
                rk,
            })
            .unwrap();
        assert_eq!(reply, ControlReply::Ok);
        let rk = owner
            .policy_member_rk(construction, "staff", &reader.identity, &reader.params, rng)
            .unwrap();
        entries.push((reader.identity.clone(), rk));
        readers.push(reader);
    }
    let reply =
        client.control(&ControlRequest::DefinePolicy { name: "staff".into(), members: entries });
    assert_eq!(reply.unwrap(), ControlReply::Ok);
    (owner, readers, service)
}

#[test]
fn full_lifecycle_in_both_layouts() {
    let mut rng = StdRng::seed_from_u64(41);
    for construction in [Construction::PerSubscriber, Construction::PerPolicyMember] {
        let (owner, readers, service) = fixture(construction, &["ursula"], &mut rng);
        let reader = &readers[0];

        let mut plaintext = vec![0u8; 256];
        rng.fill_bytes(&mut plaintext);
        let mut client = control_session(&service, &owner, &mut rng);
        publish(&owner, &mut client, construction, "news/a", Some("staff"), &plaintext, &mut rng);
        publish(&owner, &mut client, construction, "ledger/x", None, b"owner eyes only", &mut rng);

        // The state report reflects what was pushed over the wire.
        let ControlReply::State(state) = client.control(&ControlRequest::GetState).unwrap()
        else {
            panic!("state request must return a state reply")
        };
        assert_eq!(state.items.len(), 2);
        assert_eq!(state.subscribers.len(), 2); // the owner itself plus ursula
        assert_eq!(service.with_tables(|t| t.state_summary()), state);

        // A member fetches and opens the policy item.
        let mut session =
            reader_session(&service, reader, "news/a", &owner.params, &mut rng);
        let (key_record, body) = session.fetch(&id("news/a")).unwrap();
        let opened =
            open_item_as_delegatee(&body, &key_record, &reader.secret_key(), &reader.params)
                .unwrap();
        assert_eq!(opened, plaintext);

        // The same member is denied the owner-only item, with the uniform
        // deny text, and the session survives to serve the allowed item
        // again.
        let mut session =
            reader_session(&service, reader, "ledger/x", &owner.params, &mut rng);
        match session.fetch(&id("ledger/x")) {
            Err(ProtoError::Denied(message)) => assert_eq!(message, DENY_MESSAGE),
            other => panic!("expected a deny, got {other:?}"),
        }

        // The owner fetches its own item over a content session.
        let mut session = NodeClient::establish(
            connect(&service),
            "ledger/x",
            &owner.params,
            &owner.identity,
            &owner.secret_key(),
            &owner.params,
            &mut rng,
        )
        .unwrap();
        let (key_record, body) = session.fetch(&id("ledger/x")).unwrap();
        let sk = owner.extract_for(&key_record.target_id);
        let rebuilt = SealedItem {
            item_id: body.item_id.clone(),
            nonce: body.nonce,
            body: body.body.clone(),
            key_record,
        };
        assert_eq!(open_item_as_owner(&rebuilt, &sk, &owner.params).unwrap(), b"owner eyes only");
    }
}

#[test]
fn prefix_scope_delegation_serves_everything_under_it() {
    let mut rng = StdRng::seed_from_u64(42);
    let (owner, readers, service) =
        fixture(Construction::PerPolicyMember, &["ursula"], &mut rng);
    let reader = &readers[0];

    let mut client = control_session(&service, &owner, &mut rng);
    publish(&owner, &mut client, Construction::PerPolicyMember, "news/a", Some("staff"), b"first", &mut rng);
    publish(&owner, &mut client, Construction::PerPolicyMember, "news/b", Some("staff"), b"second", &mut rng);
    publish(&owner, &mut client, Construction::PerPolicyMember, "ledger/x", Some("staff"), b"off limits", &mut rng);
    let reply = client
        .control(&ControlRequest::InstallScopeKey {
            scope: "news/".into(),
            key: owner.scope_key("news/").unwrap(),
        })
        .unwrap();
    assert_eq!(reply, ControlReply::Ok);

    // One session under the prefix reaches both items beneath it.
    let mut session = reader_session(&service, reader, "news/", &owner.params, &mut rng);
    for (item, expected) in [("news/a", b"first".as_slice()), ("news/b", b"second".as_slice())] {
        let (key_record, body) = session.fetch(&id(item)).unwrap();
        let opened =
            open_item_as_delegatee(&body, &key_record, &reader.secret_key(), &reader.params)
                .unwrap();
        assert_eq!(opened, expected);
    }

    // Out-of-scope and unknown items draw byte-identical denials, and
    // neither ends the session.
    let denied_scope = match session.fetch(&id("ledger/x")) {
        Err(ProtoError::Denied(message)) => message,
        other => panic!("expected a deny, got {other:?}"),
    };
    let denied_missing = match session.fetch(&id("news/zzz")) {
        Err(ProtoError::Denied(message)) => message,
        other => panic!("expected a deny, got {other:?}"),
    };
    assert_eq!(denied_scope, denied_missing);
    assert_eq!(denied_scope, DENY_MESSAGE);
    assert!(session.fetch(&id("news/a")).is_ok(), "denials must not poison the session");
}

#[test]
fn revocation_crosses_the_wire_as_exactly_one_control_frame() {
    let mut rng = StdRng::seed_from_u64(43);
    let (owner, readers, service) =
        fixture(Construction::PerPolicyMember, &["ursula", "victor"], &mut rng);
    let (ursula, victor) = (&readers[0], &readers[1]);

    let mut client = control_session(&service, &owner, &mut rng);
    publish(&owner, &mut client, Construction::PerPolicyMember, "news/a", Some("staff"), b"the story", &mut rng);

    // Both members can fetch before the revocation.
    for reader in [ursula, victor] {
        let mut session = reader_session(&service, reader, "news/a", &owner.params, &mut rng);
        let (key_record, body) = session.fetch(&id("news/a")).unwrap();
        open_item_as_delegatee(&body, &key_record, &reader.secret_key(), &reader.params).unwrap();
    }

    // Revoke ursula over an already-established control session and count
    // what the owner actually had to send: one control frame.
    let transport = connect(&service);
    let log = transport.sent_log_handle();
    let mut client = NodeClient::establish(
        transport,
        CONTROL_SCOPE,
        &owner.params,
        &owner.identity,
        &owner.secret_key(),
        &owner.params,
        &mut rng,
    )
    .unwrap();
    let frames_before = log.lock().unwrap().len();
    let reply = client
        .control(&ControlRequest::UpdatePolicy {
            name: "staff".into(),
            add: vec![],
            remove: vec![ursula.identity.clone()],
        })
        .unwrap();
    assert_eq!(reply, ControlReply::Ok);
    let sent = log.lock().unwrap()[frames_before..].to_vec();
    assert_eq!(sent.len(), 1, "revocation must cost exactly one frame");
    assert_eq!(sent, vec![Frame::Control(vec![]).type_byte()]);

    // The revoked member is refused; the other member is untouched.
    let mut session = reader_session(&service, ursula, "news/a", &owner.params, &mut rng);
    assert!(matches!(session.fetch(&id("news/a")), Err(ProtoError::Denied(_))));
    let mut session = reader_session(&service, victor, "news/a", &owner.params, &mut rng);
    assert!(session.fetch(&id("news/a")).is_ok());
}

#[test]
fn control_operations_require_the_owner_on_the_control_scope() {
    let mut rng = StdRng::seed_from_u64(44);
    let (owner, readers, service) =
        fixture(Construction::PerPolicyMember, &["ursula"], &mut rng);
    let reader = &readers[0];
    let mut client = control_session(&service, &owner, &mut rng);
    publish(&owner, &mut client, Construction::PerPolicyMember, "news/a", Some("staff"), b"text", &mut rng);

    // A subscriber can establish a session under the control scope (the
    // node holds that key), but its control requests are refused and the
    // connection is cut.
    let mut intruder = NodeClient::establish(
        connect(&service),
        CONTROL_SCOPE,
        &owner.params,
        &reader.identity,
        &reader.secret_key(),
        &reader.params,
        &mut rng,
    )
    .unwrap();
    match intruder.control(&ControlRequest::GetState) {
        Err(ProtoError::Denied(message)) => assert_eq!(message, DENY_MESSAGE),
        other => panic!("expected a deny, got {other:?}"),
    }
    assert!(intruder.control(&ControlRequest::GetState).is_err(), "connection must be dead");

    // Content fetches under the control scope can never name an item.
    let mut intruder = NodeClient::establish(
        connect(&service),
        CONTROL_SCOPE,
        &owner.params,
        &reader.identity,
        &reader.secret_key(),
        &reader.params,
        &mut rng,
    )
    .unwrap();
    assert!(matches!(intruder.fetch(&id("news/a")), Err(ProtoError::Denied(_))));

    // The owner itself is held to the scope rule: control requests on a
    // content-scope session are refused.
    let mut misplaced = NodeClient::establish(
        connect(&service),
        "news/a",
        &owner.params,
        &owner.identity,
        &owner.secret_key(),
        &owner.params,
        &mut rng,
    )
    .unwrap();
    assert!(matches!(
        misplaced.control(&ControlRequest::GetState),
        Err(ProtoError::Denied(_))
    ));
}

#[test]
fn malformed_and_unexpected_frames_are_denied() {
    let mut rng = StdRng::seed_from_u64(45);
    let (owner, _readers, service) =
        fixture(Construction::PerPolicyMember, &["ursula"], &mut rng);
    let mut client = control_session(&service, &owner, &mut rng);
    publish(&owner, &mut client, Construction::PerPolicyMember, "news/a", Some("staff"), b"text", &mut rng);

    // Anything but an opening message as the first frame is denied.
    let mut raw = connect(&service);
    raw.send(&Frame::Content(vec![1, 2, 3])).unwrap();
    assert_eq!(raw.recv().unwrap(), Frame::Deny(DENY_MESSAGE.to_string()));
    assert!(matches!(raw.recv(), Err(ProtoError::Closed)));

    // A sealed frame that does not authenticate on an established session
    // is denied and the connection is cut.
    let mut raw = connect(&service);
    let (mut session, msg1) =
        HandshakeSession::initiate("news/a", &owner.params, &owner.identity, &mut rng).unwrap();
    raw.send(&Frame::Msg1(msg1)).unwrap();
    let Frame::Msg2(msg2) = raw.recv().unwrap() else { panic!("expected the second message") };
    let msg3 = session.finalize(&msg2, &owner.secret_key(), &owner.params).unwrap();
    raw.send(&Frame::Msg3(msg3)).unwrap();
    raw.send(&Frame::Content(vec![0xde, 0xad, 0xbe, 0xef])).unwrap();
    assert_eq!(raw.recv().unwrap(), Frame::Deny(DENY_MESSAGE.to_string()));
    assert!(matches!(raw.recv(), Err(ProtoError::Closed)));

    // A handshake frame repeated mid-session is refused.
    let mut raw = connect(&service);
    let (mut session, msg1) =
        HandshakeSession::initiate("news/a", &owner.params, &owner.identity, &mut rng).unwrap();
    raw.send(&Frame::Msg1(msg1.clone())).unwrap();
    let Frame::Msg2(msg2) = raw.recv().unwrap() else { panic!("expected the second message") };
    let msg3 = session.finalize(&msg2, &owner.secret_key(), &owner.params).unwrap();
    raw.send(&Frame::Msg3(msg3)).unwrap();
    raw.send(&Frame::Msg1(msg1)).unwrap();
    assert_eq!(raw.recv().unwrap(), Frame::Deny(DENY_MESSAGE.to_string()));
    assert!(matches!(raw.recv(), Err(ProtoError::Closed)));
}

#[test]
fn state_survives_a_restart_from_snapshot() {
    let mut rng = StdRng::seed_from_u64(46);
    let dir = tempfile::tempdir().unwrap();
    let snapshot = dir.path().join("node.snapshot");
    let bodies = Arc::new(FileBodyStore::open(dir.path().join("bodies")).unwrap());

    let owner = KeyFile::generate(id("alice"), &mut rng);
    let reader = KeyFile::generate(id("ursula"), &mut rng);
    let tables = owner.bootstrap_node(Construction::PerPolicyMember, &mut rng).unwrap();
    let service =
        Arc::new(NodeService::with_snapshot(tables, bodies.clone(), snapshot.clone()).unwrap());

    let mut client = control_session(&service, &owner, &mut rng);
    client
        .control(&ControlRequest::Register {
            id: reader.identity.clone(),
            params: reader.params.clone(),
            rk: None,
        })
        .unwrap();
    client
        .control(&ControlRequest::DefinePolicy {
            name: "staff".into(),
            members: vec![(
                reader.identity.clone(),
                owner
                    .policy_member_rk(
                        Construction::PerPolicyMember,
                        "staff",
                        &reader.identity,
                        &reader.params,
                        &mut rng,
                    )
                    .unwrap(),
            )],
        })
        .unwrap();
    publish(&owner, &mut client, Construction::PerPolicyMember, "news/a", Some("staff"), b"durable", &mut rng);
    let state_before = service.with_tables(|t| t.state_summary());
    drop(client);
    drop(service);

    // A new service resumes from the snapshot file and serves the same
    // content from the same body store.
    let resumed = Arc::new(NodeService::load(snapshot.clone(), bodies.clone()).unwrap());
    assert_eq!(resumed.with_tables(|t| t.state_summary()), state_before);
    let mut session = reader_session(&resumed, &reader, "news/a", &owner.params, &mut rng);
    let (key_record, body) = session.fetch(&id("news/a")).unwrap();
    let opened =
        open_item_as_delegatee(&body, &key_record, &reader.secret_key(), &reader.params).unwrap();
    assert_eq!(opened, b"durable");

    // A damaged snapshot is refused at load, not mis-served.
    let mut bytes = std::fs::read(&snapshot).unwrap();
    let middle = bytes.len() / 2;
    bytes[middle] ^= 0xff;
    std::fs::write(&snapshot, &bytes).unwrap();
    assert!(NodeService::load(snapshot, bodies).is_err());
}

#[test]
fn tcp_round_trip_with_clean_shutdown() {
    let mut rng = StdRng::seed_from_u64(47);
    let (owner, readers, service) =
        fixture(Construction::PerSubscriber, &["ursula"], &mut rng);
    let reader = &readers[0];
    let mut client = control_session(&service, &owner, &mut rng);
    publish(&owner, &mut client, Construction::PerSubscriber, "news/a", Some("staff"), b"over tcp", &mut rng);

    let server = NodeServer::start(service, "127.0.0.1:0").unwrap();
    let addr = server.local_addr();

    let transport = TcpTransport::new(TcpStream::connect(addr).unwrap());
    let mut session = NodeClient::establish(
        transport,
        "news/a",
        &owner.params,
        &reader.identity,
        &reader.secret_key(),
        &reader.params,
        &mut rng,
    )
    .unwrap();
    let (key_record, body) = session.fetch(&id("news/a")).unwrap();
    let opened =
        open_item_as_delegatee(&body, &key_record, &reader.secret_key(), &reader.params).unwrap();
    assert_eq!(opened, b"over tcp");
    drop(session);

    server.shutdown();
}
