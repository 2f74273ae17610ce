use std::path::PathBuf;

use sha2::{Digest, Sha256};

use crate::data::write_atomic;
use crate::error::{Error, Result};
use crate::llm::PromptText;

/// One file per key under the cache directory; filename is the hex hash,
/// content is the raw response bytes.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

impl ResponseCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        ResponseCache { dir: dir.into() }
    }

    /// Cache key: hash of (model id, temperature, prompt text).
    pub fn key(model: &str, temperature: f64, prompt: &PromptText) -> String {
        let mut h = Sha256::new();
        h.update(model.as_bytes());
        h.update([0]);
        h.update(format!("{temperature:?}").as_bytes());
        h.update([0]);
        h.update(prompt.system_text.as_bytes());
        h.update([0]);
        h.update(prompt.user_text.as_bytes());
        hex::encode(h.finalize())
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(key)
    }

    pub fn get(&self, key: &str) -> Result<Option<String>> {
        let path = self.path(key);
        match std::fs::read_to_string(&path) {
            Ok(s) => Ok(Some(s)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::io(path, e)),
        }
    }

    pub fn put(&self, key: &str, raw: &str) -> Result<()> {
        write_atomic(&self.path(key), raw.as_bytes())
    }

    pub fn contains(&self, key: &str) -> bool {
        self.path(key).is_file()
    }
}
