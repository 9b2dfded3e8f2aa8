use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::embed::TextEmbedder;
use crate::error::{read_json, write_json};
use crate::vecmath::cosine;

pub const DEMO_POOL_VERSION: u32 = 1;
pub const DEFAULT_CAPACITY: usize = 256;
pub const DEFAULT_K_SUCCESS: usize = 4;
pub const DEFAULT_K_FAILURE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemoKind {
    Plan,
    Program,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Success,
    Failure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoExample {
    pub kind: DemoKind,
    pub polarity: Polarity,
    pub instruction: String,
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub critique: Option<String>,
    pub embedding: Vec<f64>,
    pub origin_task: String,
    pub validated: bool,
    /// Insertion sequence number, unique within the pool.
    #[serde(default)]
    pub seq: u64,
    /// Logical time of the last retrieval; 0 if never retrieved.
    #[serde(default)]
    pub last_retrieved: u64,
}

impl DemoExample {
    /// Builds an example with its embedding. Failure examples must carry a critique.
    pub fn new(
        embedder: &dyn TextEmbedder,
        kind: DemoKind,
        polarity: Polarity,
        instruction: &str,
        content: &str,
        critique: Option<&str>,
        origin_task: &str,
    ) -> Result<Self, DemoError> {
        if polarity == Polarity::Failure && critique.is_none_or(|c| c.trim().is_empty()) {
            return Err(DemoError::MissingCritique);
        }
        Ok(DemoExample {
            kind,
            polarity,
            instruction: instruction.to_string(),
            content: content.to_string(),
            critique: critique.map(String::from),
            embedding: embedder.embed(instruction),
            origin_task: origin_task.to_string(),
            validated: false,
            seq: 0,
            last_retrieved: 0,
        })
    }
}

#[derive(Debug, Error)]
pub enum DemoError {
    #[error("failure examples need a critique")]
    MissingCritique,
    #[error("no validator is configured; example not stored")]
    ValidatorUnavailable,
    #[error("embedding has dimension {found}, pool expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("validation failed: {0}")]
    Validation(String),
}

/// Re-runs the origin task with a candidate example force-included.
pub trait DemoValidator {
    fn solves_with(&self, candidate: &DemoExample) -> Result<bool, DemoError>;
}

/// Examples returned for one generation call.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Retrieved {
    pub successes: Vec<DemoExample>,
    pub failures: Vec<DemoExample>,
}

impl Retrieved {
    /// Puts `candidate` first in its list, keeping at most `k` entries there.
    pub fn force_include(&mut self, candidate: DemoExample, k: usize) {
        let list = match candidate.polarity {
            Polarity::Success => &mut self.successes,
            Polarity::Failure => &mut self.failures,
        };
        list.retain(|e| !(e.instruction == candidate.instruction && e.content == candidate.content));
        list.insert(0, candidate);
        list.truncate(k.max(1));
    }

    pub fn seqs(&self) -> Vec<u64> {
        self.successes.iter().chain(&self.failures).map(|e| e.seq).collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SubPools {
    pub plan_success: Vec<DemoExample>,
    pub plan_failure: Vec<DemoExample>,
    pub program_success: Vec<DemoExample>,
    pub program_failure: Vec<DemoExample>,
}

/// The four sub-pools of plan and program examples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemonstrationPool {
    pub version: u32,
    pub embedder: String,
    pub dim: usize,
    pub capacity: usize,
    pub clock: u64,
    pub next_seq: u64,
    pub pools: SubPools,
}

impl DemonstrationPool {
    pub fn new(embedder: &dyn TextEmbedder, dim: usize, capacity: usize) -> Self {
        DemonstrationPool {
            version: DEMO_POOL_VERSION,
            embedder: embedder.id(),
            dim,
            capacity,
            clock: 0,
            next_seq: 1,
            pools: SubPools::default(),
        }
    }

    pub fn sub_pool(&self, kind: DemoKind, polarity: Polarity) -> &[DemoExample] {
        match (kind, polarity) {
            (DemoKind::Plan, Polarity::Success) => &self.pools.plan_success,
            (DemoKind::Plan, Polarity::Failure) => &self.pools.plan_failure,
            (DemoKind::Program, Polarity::Success) => &self.pools.program_success,
            (DemoKind::Program, Polarity::Failure) => &self.pools.program_failure,
        }
    }

    fn sub_pool_mut(&mut self, kind: DemoKind, polarity: Polarity) -> &mut Vec<DemoExample> {
        match (kind, polarity) {
            (DemoKind::Plan, Polarity::Success) => &mut self.pools.plan_success,
            (DemoKind::Plan, Polarity::Failure) => &mut self.pools.plan_failure,
            (DemoKind::Program, Polarity::Success) => &mut self.pools.program_success,
            (DemoKind::Program, Polarity::Failure) => &mut self.pools.program_failure,
        }
    }

    pub fn len(&self) -> usize {
        self.all().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn all(&self) -> impl Iterator<Item = &DemoExample> {
        self.pools
            .plan_success
            .iter()
            .chain(&self.pools.plan_failure)
            .chain(&self.pools.program_success)
            .chain(&self.pools.program_failure)
    }

    /// Inserts without validation (seed loading). Evicts at capacity.
    pub fn insert(&mut self, mut example: DemoExample) -> Result<(), DemoError> {
        if example.embedding.len() != self.dim {
            return Err(DemoError::DimensionMismatch {
                expected: self.dim,
                found: example.embedding.len(),
            });
        }
        if example.polarity == Polarity::Failure && example.critique.is_none() {
            return Err(DemoError::MissingCritique);
        }
        example.seq = self.next_seq;
        self.next_seq += 1;
        let capacity = self.capacity;
        let pool = self.sub_pool_mut(example.kind, example.polarity);
        if pool.len() >= capacity {
            let victim = pool
                .iter()
                .enumerate()
                .min_by_key(|(_, e)| (e.last_retrieved, e.seq))
                .map(|(i, _)| i);
            if let Some(i) = victim {
                pool.remove(i);
            }
        }
        pool.push(example);
        Ok(())
    }

    /// Stores `example` iff the validator's re-run solves its origin task.
    pub fn store_validated(
        &mut self,
        mut example: DemoExample,
        validator: Option<&dyn DemoValidator>,
    ) -> Result<bool, DemoError> {
        let validator = validator.ok_or(DemoError::ValidatorUnavailable)?;
        if example.polarity == Polarity::Failure && example.critique.is_none() {
            return Err(DemoError::MissingCritique);
        }
        if !validator.solves_with(&example)? {
            return Ok(false);
        }
        example.validated = true;
        self.insert(example)?;
        Ok(true)
    }

    /// Top-k examples per polarity by cosine to the instruction; ties keep insertion order.
    pub fn retrieve(
        &self,
        embedder: &dyn TextEmbedder,
        instruction: &str,
        kind: DemoKind,
        k_success: usize,
        k_failure: usize,
    ) -> Retrieved {
        let q = embedder.embed(instruction);
        let top = |pool: &[DemoExample], k: usize| {
            let mut scored: Vec<(f64, u64, &DemoExample)> =
                pool.iter().map(|e| (cosine(&q, &e.embedding), e.seq, e)).collect();
            scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            scored.into_iter().take(k).map(|(_, _, e)| e.clone()).collect()
        };
        Retrieved {
            successes: top(self.sub_pool(kind, Polarity::Success), k_success),
            failures: top(self.sub_pool(kind, Polarity::Failure), k_failure),
        }
    }

    /// Records a retrieval for eviction ordering.
    pub fn mark_retrieved(&mut self, seqs: &[u64]) {
        if seqs.is_empty() {
            return;
        }
        self.clock += 1;
        let now = self.clock;
        for pool in [
            &mut self.pools.plan_success,
            &mut self.pools.plan_failure,
            &mut self.pools.program_success,
            &mut self.pools.program_failure,
        ] {
            for e in pool.iter_mut().filter(|e| seqs.contains(&e.seq)) {
                e.last_retrieved = now;
            }
        }
    }

    pub fn load(path: &Path) -> crate::Result<Self> {
        read_json(path)
    }

    pub fn save(&self, path: &Path) -> crate::Result<()> {
        write_json(path, self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demos::embed::HashedNgramEmbedder;
    use proptest::prelude::*;

    fn emb() -> HashedNgramEmbedder {
        HashedNgramEmbedder::default()
    }

    fn ex(kind: DemoKind, polarity: Polarity, instruction: &str) -> DemoExample {
        let critique = (polarity == Polarity::Failure).then_some("wrong object");
        DemoExample::new(&emb(), kind, polarity, instruction, "A=RESULT(var=IMAGE)", critique, "t0").unwrap()
    }

    struct Fixed(bool);
    impl DemoValidator for Fixed {
        fn solves_with(&self, _c: &DemoExample) -> Result<bool, DemoError> {
            Ok(self.0)
        }
    }

    #[test]
    fn failure_needs_critique() {
        let e = DemoExample::new(&emb(), DemoKind::Plan, Polarity::Failure, "x", "y", None, "t");
        assert!(matches!(e, Err(DemoError::MissingCritique)));
    }

    #[test]
    fn retrieval_budget_and_empty_failures() {
        let mut pool = DemonstrationPool::new(&emb(), 64, 256);
        for i in 0..6 {
            pool.insert(ex(DemoKind::Program, Polarity::Success, &format!("how many dogs {i}"))).unwrap();
        }
        let r = pool.retrieve(&emb(), "how many dogs", DemoKind::Program, 4, 4);
        assert_eq!((r.successes.len(), r.failures.len()), (4, 0));
    }

    #[test]
    fn single_example_always_returned() {
        let mut pool = DemonstrationPool::new(&emb(), 64, 256);
        pool.insert(ex(DemoKind::Plan, Polarity::Success, "replace the sofa")).unwrap();
        let r = pool.retrieve(&emb(), "completely unrelated words", DemoKind::Plan, 4, 4);
        assert_eq!(r.successes.len(), 1);
    }

    #[test]
    fn ties_break_by_insertion() {
        let mut pool = DemonstrationPool::new(&emb(), 64, 256);
        let mut a = ex(DemoKind::Plan, Polarity::Success, "same words");
        a.content = "first".into();
        let mut b = ex(DemoKind::Plan, Polarity::Success, "same words");
        b.content = "second".into();
        pool.insert(a).unwrap();
        pool.insert(b).unwrap();
        let r = pool.retrieve(&emb(), "same words", DemoKind::Plan, 4, 4);
        assert_eq!(r.successes[0].content, "first");
    }

    #[test]
    fn store_validated_contract() {
        let mut pool = DemonstrationPool::new(&emb(), 64, 256);
        let e = ex(DemoKind::Program, Polarity::Success, "x");
        assert!(matches!(pool.store_validated(e.clone(), None), Err(DemoError::ValidatorUnavailable)));
        assert!(!pool.store_validated(e.clone(), Some(&Fixed(false))).unwrap());
        assert!(pool.is_empty());
        assert!(pool.store_validated(e, Some(&Fixed(true))).unwrap());
        assert_eq!(pool.len(), 1);
        assert!(pool.all().all(|e| e.validated));
    }

    #[test]
    fn eviction_is_least_recently_retrieved() {
        let mut pool = DemonstrationPool::new(&emb(), 64, 2);
        pool.insert(ex(DemoKind::Plan, Polarity::Success, "alpha")).unwrap();
        pool.insert(ex(DemoKind::Plan, Polarity::Success, "beta")).unwrap();
        pool.mark_retrieved(&[1]);
        pool.insert(ex(DemoKind::Plan, Polarity::Success, "gamma")).unwrap();
        let left: Vec<&str> = pool.pools.plan_success.iter().map(|e| e.instruction.as_str()).collect();
        assert_eq!(left, ["alpha", "gamma"]);
    }

    #[test]
    fn persistence_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut pool = DemonstrationPool::new(&emb(), 64, 8);
        pool.insert(ex(DemoKind::Plan, Polarity::Failure, "alpha")).unwrap();
        let path = dir.path().join("demos.json");
        pool.save(&path).unwrap();
        assert_eq!(DemonstrationPool::load(&path).unwrap(), pool);
    }

    proptest! {
        #[test]
        fn routing_and_capacity(ops in prop::collection::vec((0u8..4, "[a-z ]{1,12}"), 0..60)) {
            let mut pool = DemonstrationPool::new(&emb(), 64, 5);
            for (code, text) in ops {
                let kind = if code & 1 == 0 { DemoKind::Plan } else { DemoKind::Program };
                let pol = if code & 2 == 0 { Polarity::Success } else { Polarity::Failure };
                pool.insert(ex(kind, pol, &text)).unwrap();
            }
            for kind in [DemoKind::Plan, DemoKind::Program] {
                for pol in [Polarity::Success, Polarity::Failure] {
                    let sub = pool.sub_pool(kind, pol);
                    prop_assert!(sub.len() <= 5);
                    prop_assert!(sub.iter().all(|e| e.kind == kind && e.polarity == pol));
                }
            }
        }
    }
}
