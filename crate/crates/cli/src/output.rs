use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::Failure;

/// Lowercase hex SHA-256 of the compact JSON encoding of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("configs serialize");
    Sha256::digest(bytes).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Comment lines prepended to every CSV.
pub fn provenance<T: Serialize>(command: &str, seed: u64, config: &T) -> String {
    format!(
        "# jsbnn {} {command}\n# seed={seed}\n# config_sha256={}\n",
        env!("CARGO_PKG_VERSION"),
        config_hash(config)
    )
}

pub fn write_text(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))?;
            }
            std::fs::write(p, text).map_err(|e| Failure::io(p, e))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn csv<I: IntoIterator<Item = String>>(header: &str, rows: I) -> String {
    let mut out = String::from(header);
    out.push('\n');
    for row in rows {
        out.push_str(&row);
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = config_hash(&serde_json::json!({"seed": 1}));
        assert_eq!(a.len(), 64);
        assert_eq!(a, config_hash(&serde_json::json!({"seed": 1})));
        assert_ne!(a, config_hash(&serde_json::json!({"seed": 2})));
    }

    #[test]
    fn provenance_lines_are_comments() {
        let p = provenance("train", 7, &1);
        assert!(p.lines().all(|l| l.starts_with("# ")));
        assert!(p.contains("seed=7"));
    }
}
