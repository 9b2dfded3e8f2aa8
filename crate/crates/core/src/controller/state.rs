use std::path::Path;

use sha2::{Digest, Sha256};

use crate::demos::{seeded_pool, DemonstrationPool, TextEmbedder};
use crate::error::Error;
use crate::learning::{LearningConfig, PromptPools};
use crate::tools::Toolkit;

/// Everything the loop learns: the demonstration pool, the prompt pools and the toolkit.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub demos: DemonstrationPool,
    pub pools: PromptPools,
    pub toolkit: Toolkit,
}

pub const DEMOS_FILE: &str = "demos.json";
pub const TOOLKIT_FILE: &str = "toolkit.json";

impl State {
    /// Seed demonstrations, empty prompt pools.
    pub fn fresh(toolkit: Toolkit, embedder: &dyn TextEmbedder, capacity: usize, learning: &LearningConfig) -> Self {
        let mut pools = PromptPools::new(toolkit.dim, toolkit.tau);
        pools.prefilter_k = learning.prefilter_k.clone();
        State {
            demos: seeded_pool(embedder, capacity),
            pools,
            toolkit,
        }
    }

    pub fn save(&self, dir: &Path) -> crate::Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.demos.save(&dir.join(DEMOS_FILE))?;
        self.pools.save(dir)?;
        self.toolkit.save(&dir.join(TOOLKIT_FILE))
    }

    pub fn exists(dir: &Path) -> bool {
        dir.join(DEMOS_FILE).is_file() && dir.join(TOOLKIT_FILE).is_file()
    }

    pub fn load(dir: &Path, learning: &LearningConfig) -> crate::Result<Self> {
        if !Self::exists(dir) {
            return Err(Error::State(format!("no state checkpoint in {}", dir.display())));
        }
        let toolkit = Toolkit::load(&dir.join(TOOLKIT_FILE))?;
        let mut pools = PromptPools::load(dir, toolkit.dim, toolkit.tau)?;
        pools.prefilter_k = learning.prefilter_k.clone();
        Ok(State {
            demos: DemonstrationPool::load(&dir.join(DEMOS_FILE))?,
            pools,
            toolkit,
        })
    }

    /// SHA-256 over the serialized checkpoint, hex encoded.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        let mut feed = |label: &str, json: serde_json::Result<String>| {
            h.update(label.as_bytes());
            h.update(json.expect("state serializes").as_bytes());
        };
        feed(DEMOS_FILE, serde_json::to_string(&self.demos));
        for (tool, pool) in &self.pools.pools {
            feed(tool, serde_json::to_string(pool));
        }
        feed(TOOLKIT_FILE, serde_json::to_string(&self.toolkit));
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demos::HashedNgramEmbedder;

    fn state() -> State {
        let tk = Toolkit::competent(vec!["dog".into()], Default::default());
        State::fresh(tk, &HashedNgramEmbedder::default(), 256, &LearningConfig::default())
    }

    #[test]
    fn roundtrip_preserves_hash() {
        let s = state();
        let dir = tempfile::tempdir().unwrap();
        s.save(dir.path()).unwrap();
        let back = State::load(dir.path(), &LearningConfig::default()).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.hash(), s.hash());
        assert_eq!(s.hash().len(), 64);
    }

    #[test]
    fn missing_state_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(State::load(dir.path(), &LearningConfig::default()), Err(Error::State(_))));
    }
}
