//! Command-line drivers for the content-sharing system: the storage-node
//! daemon, the owner tools that provision and publish to it, the
//! subscriber fetch client, and the analytical cost model.
//!
//! Exit codes: 0 success, 1 usage error, 2 protocol/crypto/IO failure,
//! 3 access denied.

mod config;
mod ops;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use icnshare::ProtoError;

/// Marker for bad invocations (maps to exit code 1).
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct Usage(String);

/// A usage error as an [`anyhow::Error`].
fn usage(message: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(Usage(message.into()))
}

#[derive(Parser)]
#[command(
    name = "icnshare",
    version,
    about = "Identity-based content sharing through semi-trusted storage nodes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a principal's key file (each principal is its own key
    /// authority).
    Keygen {
        /// Identity the key file is for.
        #[arg(long)]
        id: String,
        /// Where to write the key file.
        #[arg(long)]
        out: PathBuf,
        /// Also publish the public parameters to this directory file.
        #[arg(long)]
        directory: Option<PathBuf>,
    },
    /// Publish a key file's public parameters to a directory file.
    PublishParams {
        /// Key file whose parameters to publish.
        #[arg(long)]
        key: PathBuf,
        /// Directory file to publish into.
        #[arg(long)]
        directory: PathBuf,
    },
    /// Storage-node daemon.
    #[command(subcommand)]
    Node(NodeCommand),
    /// Register a subscriber on a running node (owner operation).
    RegisterSubscriber {
        /// Node address, e.g. 127.0.0.1:4433.
        #[arg(long)]
        node: String,
        /// The owner's key file.
        #[arg(long)]
        owner_key: PathBuf,
        /// Subscriber identity to register.
        #[arg(long)]
        id: String,
        /// Directory file resolving the subscriber's parameters.
        #[arg(long)]
        directory: PathBuf,
    },
    /// Create an access policy over registered subscribers (owner
    /// operation).
    DefinePolicy {
        #[arg(long)]
        node: String,
        #[arg(long)]
        owner_key: PathBuf,
        /// Policy name.
        #[arg(long)]
        name: String,
        /// Member identity; repeat for several members.
        #[arg(long = "member")]
        members: Vec<String>,
    },
    /// Edit a policy's membership on a running node (owner operation).
    #[command(subcommand)]
    Policy(PolicyCommand),
    /// Seal a content item under a fresh key (leaves the plaintext
    /// untouched; writes the sealed item to a file).
    Seal {
        /// The author's key file.
        #[arg(long)]
        key: PathBuf,
        /// Item name, e.g. docs/report.
        #[arg(long)]
        item: String,
        /// Plaintext input file.
        #[arg(long = "in")]
        input: PathBuf,
        /// Where to write the sealed item.
        #[arg(long)]
        out: PathBuf,
        /// Address the item to this policy's members instead of the
        /// owner alone.
        #[arg(long)]
        policy: Option<String>,
        /// Seal for another owner's node (their identity); needs
        /// --directory to resolve their parameters.
        #[arg(long)]
        host: Option<String>,
        /// Directory file for --host resolution.
        #[arg(long)]
        directory: Option<PathBuf>,
    },
    /// Publish a sealed item to a running node (owner operation).
    Publish {
        #[arg(long)]
        node: String,
        #[arg(long)]
        owner_key: PathBuf,
        /// Item name the sealed file carries.
        #[arg(long)]
        item: String,
        /// The sealed item file written by `seal`.
        #[arg(long)]
        sealed: PathBuf,
        /// Policy whose members may fetch the item (omit for owner-only).
        #[arg(long)]
        policy: Option<String>,
    },
    /// Publish an item sealed by a foreign author, recording who it came
    /// from (owner operation).
    PublishForeign {
        #[arg(long)]
        node: String,
        #[arg(long)]
        owner_key: PathBuf,
        #[arg(long)]
        item: String,
        #[arg(long)]
        sealed: PathBuf,
        #[arg(long)]
        policy: Option<String>,
        /// The foreign author's identity.
        #[arg(long)]
        from: String,
    },
    /// Delegate a whole name prefix so one session can fetch everything
    /// under it (owner operation).
    InstallScopeKey {
        #[arg(long)]
        node: String,
        #[arg(long)]
        owner_key: PathBuf,
        /// The name prefix, e.g. docs/.
        #[arg(long)]
        scope: String,
    },
    /// Fetch an item from a node and write the recovered plaintext.
    Fetch {
        #[arg(long)]
        node: String,
        /// The requesting principal's key file.
        #[arg(long = "as")]
        key: PathBuf,
        /// Identity of the node's owner.
        #[arg(long)]
        host: String,
        /// Directory file resolving the host's parameters.
        #[arg(long)]
        directory: PathBuf,
        /// Item name to fetch.
        #[arg(long)]
        item: String,
        /// Session scope (defaults to the item name; use a prefix the
        /// owner installed to reuse one session for many items).
        #[arg(long)]
        scope: Option<String>,
        /// Where to write the plaintext.
        #[arg(long)]
        out: PathBuf,
    },
    /// Replace the owner's key material: new master secret, re-issued
    /// delegation and scope keys, republished parameters. Stored content
    /// bodies are untouched.
    Rotate {
        #[arg(long)]
        node: String,
        /// The current owner key file.
        #[arg(long)]
        owner_key: PathBuf,
        /// Where to write the replacement key file.
        #[arg(long)]
        out: PathBuf,
        /// Directory file to republish parameters into.
        #[arg(long)]
        directory: PathBuf,
    },
    /// Print the analytical storage-overhead model as CSV.
    Overhead {
        /// all, construction1, construction2, trivial, or abe.
        #[arg(long, default_value = "all")]
        scheme: String,
        /// Sweep one variable instead of printing point values: UG
        /// (members per policy) or F (item count).
        #[arg(long)]
        sweep: Option<String>,
        /// Upper end of the sweep range (the sweep runs 1..=max).
        #[arg(long, default_value_t = 50)]
        max: u64,
        /// Total subscribers U (default: the evaluation scenario).
        #[arg(long)]
        subscribers: Option<u64>,
        /// Policy count G.
        #[arg(long)]
        policies: Option<u64>,
        /// Members per policy U_G.
        #[arg(long)]
        per_policy: Option<u64>,
        /// Item count F.
        #[arg(long)]
        items: Option<u64>,
    },
    /// Time the key operations and print a summary table.
    Bench {
        /// Trials per operation.
        #[arg(long, default_value_t = 20)]
        trials: u32,
    },
}

#[derive(Subcommand)]
enum NodeCommand {
    /// Create the node's initial state from the owner's key file.
    Init {
        /// Config file (or set ICNSHARE_CONFIG).
        #[arg(long)]
        config: Option<PathBuf>,
        /// The owner's key file (used once, to derive the node's tables;
        /// the node never stores the master secret).
        #[arg(long)]
        owner_key: PathBuf,
    },
    /// Serve from the snapshot until killed; prints `listening on ADDR`.
    Run {
        /// Config file (or set ICNSHARE_CONFIG).
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum PolicyCommand {
    /// Grant one registered subscriber membership.
    Add {
        #[arg(long)]
        node: String,
        #[arg(long)]
        owner_key: PathBuf,
        /// Policy name.
        #[arg(long)]
        name: String,
        /// Subscriber identity.
        #[arg(long)]
        id: String,
    },
    /// Revoke one member (a single control message; no content re-keying).
    Remove {
        #[arg(long)]
        node: String,
        #[arg(long)]
        owner_key: PathBuf,
        #[arg(long)]
        name: String,
        #[arg(long)]
        id: String,
    },
}

/// `--config` wins; the ICNSHARE_CONFIG environment variable is the
/// fallback.
fn config_path(flag: Option<PathBuf>) -> anyhow::Result<PathBuf> {
    flag.or_else(|| std::env::var_os("ICNSHARE_CONFIG").map(PathBuf::from))
        .ok_or_else(|| usage("no config file: pass --config or set ICNSHARE_CONFIG"))
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Keygen { id, out, directory } => ops::keygen(&id, &out, directory.as_deref()),
        Command::PublishParams { key, directory } => ops::publish_params(&key, &directory),
        Command::Node(NodeCommand::Init { config, owner_key }) => {
            ops::node_init(&config_path(config)?, &owner_key)
        }
        Command::Node(NodeCommand::Run { config }) => ops::node_run(&config_path(config)?),
        Command::RegisterSubscriber { node, owner_key, id, directory } => {
            ops::register_subscriber(&node, &owner_key, &id, &directory)
        }
        Command::DefinePolicy { node, owner_key, name, members } => {
            ops::define_policy(&node, &owner_key, &name, &members)
        }
        Command::Policy(PolicyCommand::Add { node, owner_key, name, id }) => {
            ops::policy_add(&node, &owner_key, &name, &id)
        }
        Command::Policy(PolicyCommand::Remove { node, owner_key, name, id }) => {
            ops::policy_remove(&node, &owner_key, &name, &id)
        }
        Command::Seal { key, item, input, out, policy, host, directory } => ops::seal(
            &key,
            &item,
            &input,
            &out,
            policy.as_deref(),
            host.as_deref(),
            directory.as_deref(),
        ),
        Command::Publish { node, owner_key, item, sealed, policy } => {
            ops::publish(&node, &owner_key, &item, &sealed, policy.as_deref(), None)
        }
        Command::PublishForeign { node, owner_key, item, sealed, policy, from } => {
            ops::publish(&node, &owner_key, &item, &sealed, policy.as_deref(), Some(&from))
        }
        Command::InstallScopeKey { node, owner_key, scope } => {
            ops::install_scope_key(&node, &owner_key, &scope)
        }
        Command::Fetch { node, key, host, directory, item, scope, out } => {
            ops::fetch(&node, &key, &host, &directory, &item, scope.as_deref(), &out)
        }
        Command::Rotate { node, owner_key, out, directory } => {
            ops::rotate(&node, &owner_key, &out, &directory)
        }
        Command::Overhead { scheme, sweep, max, subscribers, policies, per_policy, items } => {
            ops::overhead(&scheme, sweep.as_deref(), max, subscribers, policies, per_policy, items)
        }
        Command::Bench { trials } => ops::bench(trials),
    }
}

/// 1 for bad invocations, 3 when the node denied access, 2 otherwise.
fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.downcast_ref::<Usage>().is_some() {
            return 1;
        }
        if matches!(cause.downcast_ref::<ProtoError>(), Some(ProtoError::Denied(_))) {
            return 3;
        }
    }
    2
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version surface as clap "errors" but are
            // successful outputs.
            let code = i32::from(e.use_stderr());
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(err) = run(cli.command) {
        eprintln!("error: {err:#}");
        std::process::exit(exit_code(&err));
    }
}
