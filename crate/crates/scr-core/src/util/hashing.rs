//! SHA-256 helpers for configs, datasets, and checkpoints.

use std::fs;
use std::io::Read;
use std::path::Path;

use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    hex(&h.finalize())
}

/// Short (48-bit) hex digest used to name run directories.
pub fn short_hash(bytes: &[u8]) -> String {
    sha256_hex(bytes)[..12].to_string()
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    let mut f = fs::File::open(path)?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex(&h.finalize()))
}

/// Hash of a directory tree: sorted `relative-path\0file-hash\n` records.
/// Identical trees hash identically regardless of creation order.
pub fn tree_hash(root: &Path) -> std::io::Result<String> {
    let mut entries = Vec::new();
    collect_files(root, root, &mut entries)?;
    entries.sort();
    let mut h = Sha256::new();
    for rel in entries {
        let file_hash = sha256_file(&root.join(&rel))?;
        h.update(rel.as_bytes());
        h.update([0]);
        h.update(file_hash.as_bytes());
        h.update([b'\n']);
    }
    Ok(hex(&h.finalize()))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> std::io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let path = entry.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            let rel = path
                .strip_prefix(root)
                .expect("path under root")
                .to_string_lossy()
                .replace('\\', "/");
            out.push(rel);
        }
    }
    Ok(())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tree_hash_ignores_creation_order() {
        let d1 = tempfile::tempdir().unwrap();
        fs::write(d1.path().join("a.txt"), "one").unwrap();
        fs::write(d1.path().join("b.txt"), "two").unwrap();
        let d2 = tempfile::tempdir().unwrap();
        fs::write(d2.path().join("b.txt"), "two").unwrap();
        fs::write(d2.path().join("a.txt"), "one").unwrap();
        assert_eq!(
            tree_hash(d1.path()).unwrap(),
            tree_hash(d2.path()).unwrap()
        );
    }
}
