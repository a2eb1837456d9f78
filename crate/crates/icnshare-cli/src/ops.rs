//! Implementations behind the command-line surface. Each function maps
//! onto one node operation or one client protocol sequence; the caller
//! handles exit codes.

use std::net::TcpStream;
use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use ibpre::{DomainParams, Identity};
use icnshare::{
    bench_crypto, build_rotation_bundle, open_item_as_delegatee, open_item_as_owner,
    policy_identity, revocation_cost, seal_item, storage_overhead, sweep, sweep_csv,
    ControlReply, ControlRequest, Directory, FileBodyStore, FileDirectory, KeyFile, NodeClient,
    NodeServer, NodeService, OverheadScenario, SchemeKind, SealedItem, SizeConstants,
    StateSummary, SweepVariable, TcpTransport, CONTROL_SCOPE,
};
use rand::rngs::StdRng;
use rand::SeedableRng;

use crate::config::NodeConfig;
use crate::usage;

fn identity(s: &str) -> Result<Identity> {
    Identity::new(s).map_err(|e| usage(format!("invalid identity {s:?}: {e}")))
}

fn load_key(path: &Path) -> Result<KeyFile> {
    KeyFile::load(path).with_context(|| format!("reading key file {}", path.display()))
}

fn dial(node: &str) -> Result<TcpTransport> {
    let stream =
        TcpStream::connect(node).with_context(|| format!("connecting to node at {node}"))?;
    Ok(TcpTransport::new(stream))
}

/// Owner-authenticated session on the node's reserved control scope.
fn control_session(
    node: &str,
    owner: &KeyFile,
    rng: &mut StdRng,
) -> Result<NodeClient<TcpTransport>> {
    NodeClient::establish(
        dial(node)?,
        CONTROL_SCOPE,
        &owner.params,
        &owner.identity,
        &owner.secret_key(),
        &owner.params,
        rng,
    )
    .context("establishing the control session")
}

fn node_state(client: &mut NodeClient<TcpTransport>) -> Result<StateSummary> {
    match client.control(&ControlRequest::GetState)? {
        ControlReply::State(state) => Ok(state),
        other => bail!("unexpected reply to a state request: {other:?}"),
    }
}

fn registered_params(state: &StateSummary, id: &Identity) -> Result<DomainParams> {
    state
        .subscribers
        .iter()
        .find(|(sid, _)| sid == id)
        .map(|(_, params)| params.clone())
        .with_context(|| format!("{id} is not a registered subscriber of this node"))
}

pub fn keygen(id: &str, out: &Path, directory: Option<&Path>) -> Result<()> {
    let mut rng = StdRng::from_entropy();
    let key = KeyFile::generate(identity(id)?, &mut rng);
    key.save(out).with_context(|| format!("writing key file {}", out.display()))?;
    println!("generated key material for {} at {}", key.identity, out.display());
    if let Some(dir) = directory {
        let version = FileDirectory::open(dir).publish_params(&key.identity, &key.params)?;
        println!("published parameters for {} (version {version})", key.identity);
    }
    Ok(())
}

pub fn publish_params(key: &Path, directory: &Path) -> Result<()> {
    let key = load_key(key)?;
    let version = FileDirectory::open(directory).publish_params(&key.identity, &key.params)?;
    println!("published parameters for {} (version {version})", key.identity);
    Ok(())
}

pub fn node_init(config_path: &Path, owner_key: &Path) -> Result<()> {
    let config = NodeConfig::load(config_path)?;
    let owner = load_key(owner_key)?;
    if owner.identity != identity(&config.owner_id)? {
        bail!(
            "key file belongs to {}, but the config names {}",
            owner.identity,
            config.owner_id
        );
    }
    if config.snapshot.exists() {
        bail!("refusing to overwrite the existing snapshot {}", config.snapshot.display());
    }

    let mut rng = StdRng::from_entropy();
    let tables = owner.bootstrap_node(config.construction()?, &mut rng)?;
    let store = Arc::new(FileBodyStore::open(config.bodies_dir())?);
    NodeService::with_snapshot(tables, store, config.snapshot.clone())
        .with_context(|| format!("writing snapshot {}", config.snapshot.display()))?;
    let version =
        FileDirectory::open(&config.directory).publish_params(&owner.identity, &owner.params)?;
    println!(
        "initialized node state for {} at {} (parameters published, version {version})",
        owner.identity,
        config.snapshot.display()
    );
    Ok(())
}

pub fn node_run(config_path: &Path) -> Result<()> {
    let config = NodeConfig::load(config_path)?;
    let store = Arc::new(FileBodyStore::open(config.bodies_dir())?);
    let service = NodeService::load(config.snapshot.clone(), store)
        .with_context(|| format!("loading snapshot {} (run `node init` first?)", config.snapshot.display()))?;
    let server = NodeServer::start(Arc::new(service), &config.listen)
        .with_context(|| format!("binding {}", config.listen))?;
    println!("listening on {}", server.local_addr());
    use std::io::Write;
    std::io::stdout().flush()?;
    server.join();
    Ok(())
}

pub fn register_subscriber(
    node: &str,
    owner_key: &Path,
    id: &str,
    directory: &Path,
) -> Result<()> {
    let owner = load_key(owner_key)?;
    let subscriber = identity(id)?;
    let params = FileDirectory::open(directory).lookup_params(&subscriber)?;
    let mut rng = StdRng::from_entropy();
    let mut client = control_session(node, &owner, &mut rng)?;
    let construction = node_state(&mut client)?.construction;
    let rk = owner.registration_rk(construction, &subscriber, &params, &mut rng)?;
    client.control(&ControlRequest::Register { id: subscriber.clone(), params, rk })?;
    println!("registered {subscriber}");
    Ok(())
}

pub fn define_policy(
    node: &str,
    owner_key: &Path,
    name: &str,
    members: &[String],
) -> Result<()> {
    let owner = load_key(owner_key)?;
    let mut rng = StdRng::from_entropy();
    let mut client = control_session(node, &owner, &mut rng)?;
    let state = node_state(&mut client)?;
    let mut entries = Vec::new();
    for member in members {
        let member = identity(member)?;
        let params = registered_params(&state, &member)?;
        let rk = owner.policy_member_rk(state.construction, name, &member, &params, &mut rng)?;
        entries.push((member, rk));
    }
    let count = entries.len();
    client.control(&ControlRequest::DefinePolicy { name: name.to_string(), members: entries })?;
    println!("defined policy {name} with {count} member(s)");
    Ok(())
}

pub fn policy_add(node: &str, owner_key: &Path, name: &str, id: &str) -> Result<()> {
    let owner = load_key(owner_key)?;
    let member = identity(id)?;
    let mut rng = StdRng::from_entropy();
    let mut client = control_session(node, &owner, &mut rng)?;
    let state = node_state(&mut client)?;
    let params = registered_params(&state, &member)?;
    let rk = owner.policy_member_rk(state.construction, name, &member, &params, &mut rng)?;
    client.control(&ControlRequest::UpdatePolicy {
        name: name.to_string(),
        add: vec![(member.clone(), rk)],
        remove: vec![],
    })?;
    println!("added {member} to {name}");
    Ok(())
}

pub fn policy_remove(node: &str, owner_key: &Path, name: &str, id: &str) -> Result<()> {
    let owner = load_key(owner_key)?;
    let member = identity(id)?;
    let mut rng = StdRng::from_entropy();
    let mut client = control_session(node, &owner, &mut rng)?;
    client.control(&ControlRequest::UpdatePolicy {
        name: name.to_string(),
        add: vec![],
        remove: vec![member.clone()],
    })?;
    println!("removed {member} from {name}");
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn seal(
    key: &Path,
    item: &str,
    input: &Path,
    out: &Path,
    policy: Option<&str>,
    host: Option<&str>,
    directory: Option<&Path>,
) -> Result<()> {
    let key = load_key(key)?;
    let plaintext =
        std::fs::read(input).with_context(|| format!("reading {}", input.display()))?;
    let item_id = identity(item)?;

    // Sealing binds the key record to the domain that will serve the
    // item: the author's own, or — for publishing through someone else's
    // node — the host's, resolved from the directory.
    let (params, base) = match host {
        Some(host) => {
            let directory = directory
                .ok_or_else(|| usage("--host needs --directory to resolve the host's parameters"))?;
            let host = identity(host)?;
            (FileDirectory::open(directory).lookup_params(&host)?, host)
        }
        None => (key.params.clone(), key.identity.clone()),
    };
    let target = match policy {
        Some(name) => policy_identity(name),
        None => base,
    };

    let mut rng = StdRng::from_entropy();
    let sealed = seal_item(&plaintext, &item_id, &target, &params, &mut rng);
    std::fs::write(out, sealed.to_bytes())
        .with_context(|| format!("writing {}", out.display()))?;
    println!("sealed {} ({} bytes) for {}", item_id, plaintext.len(), target);
    Ok(())
}

pub fn publish(
    node: &str,
    owner_key: &Path,
    item: &str,
    sealed: &Path,
    policy: Option<&str>,
    from: Option<&str>,
) -> Result<()> {
    let owner = load_key(owner_key)?;
    let item_id = identity(item)?;
    let bytes =
        std::fs::read(sealed).with_context(|| format!("reading {}", sealed.display()))?;
    let sealed = SealedItem::from_bytes(&bytes)
        .with_context(|| format!("{} is not a sealed item", item))?;
    let (body, key_record) = sealed.into_parts();
    let scope_key = owner.scope_key(item)?;
    let policy = policy.map(str::to_string);

    let mut rng = StdRng::from_entropy();
    let mut client = control_session(node, &owner, &mut rng)?;
    let request = match from {
        Some(author) => ControlRequest::PublishForeign {
            item: item_id.clone(),
            policy,
            key_record,
            body,
            scope_key,
            from: identity(author)?,
        },
        None => ControlRequest::PublishItem {
            item: item_id.clone(),
            policy,
            key_record,
            body,
            scope_key,
        },
    };
    client.control(&request)?;
    println!("published {item_id}");
    Ok(())
}

pub fn install_scope_key(node: &str, owner_key: &Path, scope: &str) -> Result<()> {
    let owner = load_key(owner_key)?;
    let mut rng = StdRng::from_entropy();
    let mut client = control_session(node, &owner, &mut rng)?;
    client.control(&ControlRequest::InstallScopeKey {
        scope: scope.to_string(),
        key: owner.scope_key(scope)?,
    })?;
    println!("installed scope key for {scope:?}");
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn fetch(
    node: &str,
    key: &Path,
    host: &str,
    directory: &Path,
    item: &str,
    scope: Option<&str>,
    out: &Path,
) -> Result<()> {
    let key = load_key(key)?;
    let item_id = identity(item)?;
    let host_id = identity(host)?;
    let host_params = FileDirectory::open(directory).lookup_params(&host_id)?;
    let scope = scope.unwrap_or(item);

    let mut rng = StdRng::from_entropy();
    let mut session = NodeClient::establish(
        dial(node)?,
        scope,
        &host_params,
        &key.identity,
        &key.secret_key(),
        &key.params,
        &mut rng,
    )?;
    let (record, body) = session.fetch(&item_id)?;

    // The node hands its owner the stored record unchanged (level 1) and
    // everyone else a re-encrypted one (level 2); open accordingly.
    let plaintext = if record.level == 1 {
        let sealed = SealedItem {
            item_id: body.item_id.clone(),
            nonce: body.nonce,
            body: body.body.clone(),
            key_record: record.clone(),
        };
        open_item_as_owner(&sealed, &key.extract_for(&record.target_id), &key.params)?
    } else {
        open_item_as_delegatee(&body, &record, &key.secret_key(), &key.params)?
    };
    std::fs::write(out, &plaintext).with_context(|| format!("writing {}", out.display()))?;
    println!("fetched {} ({} bytes) to {}", item_id, plaintext.len(), out.display());
    Ok(())
}

pub fn rotate(node: &str, owner_key: &Path, out: &Path, directory: &Path) -> Result<()> {
    let owner = load_key(owner_key)?;
    let mut rng = StdRng::from_entropy();
    let mut client = control_session(node, &owner, &mut rng)?;
    let state = node_state(&mut client)?;

    let replacement = KeyFile::generate(owner.identity.clone(), &mut rng);
    let bundle = build_rotation_bundle(&owner, &replacement, &state, &mut rng)?;
    client.control(&ControlRequest::Rotate { bundle })?;

    replacement
        .save(out)
        .with_context(|| format!("rotation installed, but writing {} failed", out.display()))?;
    let version = FileDirectory::open(directory)
        .publish_params(&replacement.identity, &replacement.params)?;
    println!(
        "rotated keys for {}; new key file at {}, parameters republished (version {version})",
        replacement.identity,
        out.display()
    );
    Ok(())
}

fn parse_schemes(s: &str) -> Result<Vec<SchemeKind>> {
    Ok(match s {
        "all" => SchemeKind::ALL.to_vec(),
        "construction1" => vec![SchemeKind::Construction1],
        "construction2" => vec![SchemeKind::Construction2],
        "trivial" => vec![SchemeKind::Trivial],
        "abe" => vec![SchemeKind::Abe],
        other => {
            return Err(usage(format!(
                "unknown scheme {other:?} (use all, construction1, construction2, trivial, or abe)"
            )))
        }
    })
}

fn scheme_label(scheme: SchemeKind) -> &'static str {
    match scheme {
        SchemeKind::Construction1 => "construction1",
        SchemeKind::Construction2 => "construction2",
        SchemeKind::Trivial => "trivial",
        SchemeKind::Abe => "abe",
    }
}

#[allow(clippy::too_many_arguments)]
pub fn overhead(
    scheme: &str,
    sweep_var: Option<&str>,
    max: u64,
    subscribers: Option<u64>,
    policies: Option<u64>,
    per_policy: Option<u64>,
    items: Option<u64>,
) -> Result<()> {
    let schemes = parse_schemes(scheme)?;
    let sc = SizeConstants::default();
    let base = OverheadScenario::evaluation_default();
    let scenario = OverheadScenario {
        subscribers: subscribers.unwrap_or(base.subscribers),
        policies: policies.unwrap_or(base.policies),
        per_policy: per_policy.unwrap_or(base.per_policy),
        items: items.unwrap_or(base.items),
    };

    match sweep_var {
        None => {
            println!(
                "scheme,storage_bits,revocation_messages,revocation_rekeyed_records,revocation_removed_bits"
            );
            for &scheme in &schemes {
                let bits = storage_overhead(scheme, &sc, &scenario);
                let cost = revocation_cost(scheme, &sc, &scenario);
                println!(
                    "{},{bits},{},{},{}",
                    scheme_label(scheme),
                    cost.control_messages,
                    cost.reencrypted_key_records,
                    cost.removed_key_bits
                );
            }
        }
        Some(var) => {
            let variable = match var {
                "UG" | "ug" => SweepVariable::PerPolicy,
                "F" | "f" => SweepVariable::Items,
                other => {
                    return Err(usage(format!(
                        "unknown sweep variable {other:?} (use UG or F)"
                    )))
                }
            };
            if max == 0 {
                return Err(usage("--max must be at least 1"));
            }
            let rows = sweep(&schemes, &sc, variable, 1..=max, &scenario);
            print!("{}", sweep_csv(&rows));
        }
    }
    Ok(())
}

pub fn bench(trials: u32) -> Result<()> {
    if trials == 0 {
        return Err(usage("--trials must be at least 1"));
    }
    let mut rng = StdRng::from_entropy();
    let report = bench_crypto(trials, &mut rng)?;
    print!("{}", report.render_text());
    Ok(())
}
