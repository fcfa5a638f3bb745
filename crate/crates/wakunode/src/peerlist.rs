//! Fetching and verifying the signed bootstrap peer list.

use std::fs;
use std::path::Path;

use anyhow::Context;
use waku_core::discovery::{parse_verifying_key, verify_peer_list, Multiaddr};

use crate::identity::{read_seq, write_seq};

/// Reads the document from an `http(s)://` URL, a `file://` URL or a plain path.
pub fn fetch(url: &str) -> anyhow::Result<String> {
    if url.starts_with("http://") || url.starts_with("https://") {
        let body = ureq::get(url)
            .call()
            .with_context(|| format!("fetching {url}"))?
            .body_mut()
            .read_to_string()
            .with_context(|| format!("reading body of {url}"))?;
        return Ok(body);
    }
    let path = url.strip_prefix("file://").unwrap_or(url);
    fs::read_to_string(path).with_context(|| format!("reading {path}"))
}

/// Verifies `text` against `key_hex` and the seq last accepted in `data_dir`,
/// then records the new seq.
pub fn accept(text: &str, key_hex: &str, data_dir: &Path) -> anyhow::Result<Vec<Multiaddr>> {
    let key = parse_verifying_key(key_hex)?;
    let (seq, peers) = verify_peer_list(text, &key, read_seq(data_dir))?;
    write_seq(data_dir, seq).context("recording peer list seq")?;
    Ok(peers)
}
