//! Node key handling and small files kept in the data directory.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::RngCore;
use waku_core::discovery::peer_id_from_secret_hex;
use waku_core::wire::PeerId;

pub const NODEKEY_FILE: &str = "nodekey";
pub const SNAPSHOT_FILE: &str = "store.snapshot";
pub const PEER_LIST_SEQ_FILE: &str = "peer-list.seq";

pub fn data_file(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

/// Writes via a temporary file and rename so readers never see a partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)
}

/// Uses `explicit` when given, else the key stored in `dir`, else a fresh
/// key that is then stored. Returns the hex secret and the derived peer id.
pub fn load_or_create_nodekey(dir: &Path, explicit: Option<&str>) -> anyhow::Result<(String, PeerId)> {
    let secret = match explicit {
        Some(k) => k.trim().to_owned(),
        None => {
            let path = data_file(dir, NODEKEY_FILE);
            match fs::read_to_string(&path) {
                Ok(s) => s.trim().to_owned(),
                Err(e) if e.kind() == io::ErrorKind::NotFound => {
                    let mut bytes = [0u8; 32];
                    rand::rng().fill_bytes(&mut bytes);
                    let s = hex::encode(bytes);
                    write_atomic(&path, s.as_bytes())?;
                    s
                }
                Err(e) => return Err(anyhow::anyhow!("reading {}: {e}", path.display())),
            }
        }
    };
    let peer = peer_id_from_secret_hex(&secret)?;
    Ok((secret, peer))
}

pub fn read_seq(dir: &Path) -> Option<u64> {
    fs::read_to_string(data_file(dir, PEER_LIST_SEQ_FILE))
        .ok()?
        .trim()
        .parse()
        .ok()
}

pub fn write_seq(dir: &Path, seq: u64) -> io::Result<()> {
    write_atomic(&data_file(dir, PEER_LIST_SEQ_FILE), seq.to_string().as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nodekey_persists_across_starts() {
        let dir = tempfile::tempdir().unwrap();
        let (k1, p1) = load_or_create_nodekey(dir.path(), None).unwrap();
        let (k2, p2) = load_or_create_nodekey(dir.path(), None).unwrap();
        assert_eq!((k1, p1), (k2, p2));
    }

    #[test]
    fn explicit_key_wins_and_is_not_written() {
        let dir = tempfile::tempdir().unwrap();
        let key = "11".repeat(32);
        let (_, p) = load_or_create_nodekey(dir.path(), Some(&key)).unwrap();
        assert_eq!(p, peer_id_from_secret_hex(&key).unwrap());
        assert!(!data_file(dir.path(), NODEKEY_FILE).exists());
        assert!(load_or_create_nodekey(dir.path(), Some("zz")).is_err());
    }

    #[test]
    fn seq_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(read_seq(dir.path()), None);
        write_seq(dir.path(), 17).unwrap();
        assert_eq!(read_seq(dir.path()), Some(17));
    }
}
