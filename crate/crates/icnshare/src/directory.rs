//! Resolution service mapping identities to their published system
//! parameters.
//!
//! Every participant runs their own key generator, so before delegating to
//! a subscriber — or initiating a session with an owner's node — the other
//! side's current parameters must be resolved. The service is a plain
//! versioned key/value map: an in-memory variant for tests and a
//! file-backed variant for the command-line tools. Trust in the mapping
//! is assumed; distributing it securely is a deployment concern.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use ibpre::codec::{Reader, Writer};
use ibpre::{CodecError, DomainParams, Identity};

const TAG_DIRECTORY: u8 = 0x21;

/// Errors from parameter resolution.
#[derive(Debug, thiserror::Error)]
pub enum DirectoryError {
    /// No parameters have been published for the identity.
    #[error("no parameters published for {0}")]
    UnknownIdentity(Identity),

    /// The backing store could not be read or written.
    #[error("directory store: {0}")]
    Io(#[from] std::io::Error),

    /// The backing store holds bytes that do not decode.
    #[error("corrupt directory store: {0}")]
    Corrupt(#[from] CodecError),
}

/// One live parameter record.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DirectoryRecord {
    /// The identity the parameters belong to.
    pub identity: Identity,
    /// The published parameters.
    pub params: DomainParams,
    /// Starts at 1, strictly increases on every republish.
    pub version: u64,
}

/// Identity → parameters resolution.
pub trait Directory: Send + Sync {
    /// Publish (or republish) parameters for an identity; returns the new
    /// record version.
    fn publish_params(
        &self,
        identity: &Identity,
        params: &DomainParams,
    ) -> Result<u64, DirectoryError>;

    /// Resolve the latest parameters for an identity.
    fn lookup_params(&self, identity: &Identity) -> Result<DomainParams, DirectoryError>;
}

/// In-process directory for tests and embedded use.
#[derive(Default)]
pub struct MemoryDirectory {
    records: RwLock<HashMap<Identity, DirectoryRecord>>,
}

impl MemoryDirectory {
    /// Empty directory.
    pub fn new() -> Self {
        Self::default()
    }
}

impl Directory for MemoryDirectory {
    fn publish_params(
        &self,
        identity: &Identity,
        params: &DomainParams,
    ) -> Result<u64, DirectoryError> {
        let mut records = self.records.write().expect("directory lock poisoned");
        let version = records.get(identity).map(|r| r.version).unwrap_or(0) + 1;
        records.insert(
            identity.clone(),
            DirectoryRecord { identity: identity.clone(), params: params.clone(), version },
        );
        Ok(version)
    }

    fn lookup_params(&self, identity: &Identity) -> Result<DomainParams, DirectoryError> {
        self.records
            .read()
            .expect("directory lock poisoned")
            .get(identity)
            .map(|r| r.params.clone())
            .ok_or_else(|| DirectoryError::UnknownIdentity(identity.clone()))
    }
}

fn encode_records(records: &[DirectoryRecord]) -> Vec<u8> {
    let mut w = Writer::new(TAG_DIRECTORY);
    w.u32(records.len() as u32);
    for r in records {
        w.bytes(r.identity.as_bytes());
        w.bytes(&r.params.to_bytes());
        w.u64(r.version);
    }
    w.finish()
}

fn decode_records(buf: &[u8]) -> Result<Vec<DirectoryRecord>, CodecError> {
    let mut r = Reader::new(buf, TAG_DIRECTORY)?;
    let count = r.u32("record count")?;
    let mut records = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let identity = r.string("identity")?;
        let params = DomainParams::from_bytes(r.bytes("params")?)?;
        let version = r.u64("version")?;
        if identity.is_empty() || version == 0 {
            return Err(CodecError::InvalidValue("directory record"));
        }
        records.push(DirectoryRecord {
            identity: Identity::new(identity).expect("checked non-empty"),
            params,
            version,
        });
    }
    r.finish()?;
    Ok(records)
}

/// File-backed directory in the canonical encoding; the whole store is
/// rewritten atomically (temp file + rename) on every publish.
pub struct FileDirectory {
    path: PathBuf,
    // Serializes read-modify-write cycles within this process.
    write_lock: Mutex<()>,
}

impl FileDirectory {
    /// Open (or create on first publish) the store at `path`.
    pub fn open(path: impl AsRef<Path>) -> Self {
        FileDirectory { path: path.as_ref().to_path_buf(), write_lock: Mutex::new(()) }
    }

    fn load(&self) -> Result<Vec<DirectoryRecord>, DirectoryError> {
        match std::fs::read(&self.path) {
            Ok(buf) => Ok(decode_records(&buf)?),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Vec::new()),
            Err(e) => Err(e.into()),
        }
    }

    fn store(&self, records: &[DirectoryRecord]) -> Result<(), DirectoryError> {
        crate::util::write_atomic(&self.path, &encode_records(records))?;
        Ok(())
    }
}

impl Directory for FileDirectory {
    fn publish_params(
        &self,
        identity: &Identity,
        params: &DomainParams,
    ) -> Result<u64, DirectoryError> {
        let _guard = self.write_lock.lock().expect("directory lock poisoned");
        let mut records = self.load()?;
        let version = match records.iter_mut().find(|r| &r.identity == identity) {
            Some(existing) => {
                existing.version += 1;
                existing.params = params.clone();
                existing.version
            }
            None => {
                records.push(DirectoryRecord {
                    identity: identity.clone(),
                    params: params.clone(),
                    version: 1,
                });
                1
            }
        };
        self.store(&records)?;
        Ok(version)
    }

    fn lookup_params(&self, identity: &Identity) -> Result<DomainParams, DirectoryError> {
        self.load()?
            .into_iter()
            .find(|r| &r.identity == identity)
            .map(|r| r.params)
            .ok_or_else(|| DirectoryError::UnknownIdentity(identity.clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    fn params(label: &str, seed: u64) -> DomainParams {
        let mut rng = StdRng::seed_from_u64(seed);
        ibpre::setup(128, label, &mut rng).unwrap().0
    }

    #[test]
    fn memory_directory_versions_and_lookups() {
        let dir = MemoryDirectory::new();
        let alice = Identity::new("alice").unwrap();
        let p1 = params("alice", 1);
        let p2 = params("alice", 2);

        assert_eq!(dir.publish_params(&alice, &p1).unwrap(), 1);
        assert_eq!(dir.lookup_params(&alice).unwrap(), p1);
        assert_eq!(dir.publish_params(&alice, &p2).unwrap(), 2);
        assert_eq!(dir.lookup_params(&alice).unwrap(), p2);

        let bob = Identity::new("bob").unwrap();
        assert!(matches!(
            dir.lookup_params(&bob),
            Err(DirectoryError::UnknownIdentity(_))
        ));
    }

    #[test]
    fn file_directory_round_trips_bit_exact() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = FileDirectory::open(tmp.path().join("dir.bin"));
        let alice = Identity::new("alice").unwrap();
        let p = params("alice", 3);

        assert_eq!(dir.publish_params(&alice, &p).unwrap(), 1);
        let got = dir.lookup_params(&alice).unwrap();
        assert_eq!(got, p);
        assert_eq!(got.to_bytes(), p.to_bytes());

        // Reopen from disk.
        let dir2 = FileDirectory::open(tmp.path().join("dir.bin"));
        assert_eq!(dir2.lookup_params(&alice).unwrap(), p);
        assert_eq!(dir2.publish_params(&alice, &p).unwrap(), 2);
    }

    #[test]
    fn corrupt_file_is_reported() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("dir.bin");
        std::fs::write(&path, b"not a directory").unwrap();
        let dir = FileDirectory::open(&path);
        assert!(matches!(
            dir.lookup_params(&Identity::new("a").unwrap()),
            Err(DirectoryError::Corrupt(_))
        ));
    }
}
