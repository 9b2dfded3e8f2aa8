//! The per-tool prompt pool and cosine-weighted ensembling.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dsl::PromptProvider;
use crate::error::{read_json, write_json};
use crate::tools::knowledge::{FeatureVector, PromptVector};
use crate::tools::UPDATABLE_TOOLS;
use crate::vecmath::cosine;

pub const POOL_VERSION: u32 = 1;

/// Key under which every VQA prompt is stored.
pub const VQA_POOL_KEY: &str = "*";

/// Parallel feature and prompt lists for one concept.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConceptPrompts {
    pub features: Vec<FeatureVector>,
    pub prompts: Vec<PromptVector>,
}

impl ConceptPrompts {
    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptPool {
    pub version: u32,
    pub tool: String,
    pub dim: usize,
    pub tau: f64,
    pub concepts: BTreeMap<String, ConceptPrompts>,
}

impl PromptPool {
    pub fn new(tool: impl Into<String>, dim: usize, tau: f64) -> Self {
        PromptPool {
            version: POOL_VERSION,
            tool: tool.into(),
            dim,
            tau,
            concepts: BTreeMap::new(),
        }
    }

    /// Pool key for a concept; VQA stores everything under one key.
    pub fn key<'a>(&self, concept: &'a str) -> &'a str {
        if self.tool == "VQA" {
            VQA_POOL_KEY
        } else {
            concept
        }
    }

    /// Appends validated pairs. Committing nothing leaves the pool untouched.
    pub fn commit(&mut self, concept: &str, passing: Vec<(FeatureVector, PromptVector)>) {
        if passing.is_empty() {
            return;
        }
        let entry = self.concepts.entry(self.key(concept).to_string()).or_default();
        for (f, p) in passing {
            entry.features.push(f);
            entry.prompts.push(p);
        }
    }

    pub fn entries(&self, concept: &str) -> Option<&ConceptPrompts> {
        self.concepts.get(self.key(concept))
    }

    pub fn total(&self) -> usize {
        self.concepts.values().map(ConceptPrompts::len).sum()
    }

    /// Cosine-weighted mean of the `prefilter_k` prompts whose features are
    /// closest to `query`. Zero vector when the concept is absent.
    pub fn ensemble(&self, concept: &str, query: &FeatureVector, prefilter_k: Option<usize>) -> PromptVector {
        match self.entries(concept) {
            Some(e) if !e.is_empty() => ensemble_entries(e, query, prefilter_k, self.dim),
            _ => PromptVector::zeros(self.dim),
        }
    }

    pub fn load(path: &Path) -> crate::Result<Self> {
        read_json(path)
    }

    pub fn save(&self, path: &Path) -> crate::Result<()> {
        write_json(path, self)
    }
}

pub(crate) fn ensemble_entries(
    e: &ConceptPrompts,
    query: &FeatureVector,
    prefilter_k: Option<usize>,
    dim: usize,
) -> PromptVector {
    let mut scored: Vec<(f64, usize)> = e
        .features
        .iter()
        .enumerate()
        .map(|(i, f)| (cosine(query.values(), f.values()), i))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    if let Some(k) = prefilter_k {
        scored.truncate(k.max(1));
    }
    let weights: Vec<(f64, usize)> = scored.iter().map(|&(c, i)| (c.max(0.0), i)).collect();
    let total: f64 = weights.iter().map(|w| w.0).sum();
    let mut out = vec![0.0; dim];
    if total > 0.0 {
        for &(w, i) in &weights {
            for (o, p) in out.iter_mut().zip(&e.prompts[i].0) {
                *o += w * p;
            }
        }
        out.iter_mut().for_each(|o| *o /= total);
    } else {
        for &(_, i) in &weights {
            for (o, p) in out.iter_mut().zip(&e.prompts[i].0) {
                *o += p;
            }
        }
        let n = weights.len() as f64;
        out.iter_mut().for_each(|o| *o /= n);
    }
    PromptVector(out)
}

/// Default candidate pre-selection size per tool; `None` keeps every entry.
pub fn default_prefilter_k(tool: &str) -> Option<usize> {
    match tool {
        "VQA" => Some(20),
        "SEG" => Some(10),
        _ => None,
    }
}

/// One prompt pool per updatable tool; serves ensembled prompts to the executor.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptPools {
    pub pools: BTreeMap<String, PromptPool>,
    pub prefilter_k: BTreeMap<String, Option<usize>>,
}

impl PromptPools {
    pub fn new(dim: usize, tau: f64) -> Self {
        PromptPools {
            pools: UPDATABLE_TOOLS
                .iter()
                .map(|t| (t.to_string(), PromptPool::new(*t, dim, tau)))
                .collect(),
            prefilter_k: UPDATABLE_TOOLS.iter().map(|t| (t.to_string(), default_prefilter_k(t))).collect(),
        }
    }

    pub fn pool(&self, tool: &str) -> Option<&PromptPool> {
        self.pools.get(tool)
    }

    pub fn pool_mut(&mut self, tool: &str) -> Option<&mut PromptPool> {
        self.pools.get_mut(tool)
    }

    pub fn file_name(tool: &str) -> String {
        format!("pool_{tool}.json")
    }

    pub fn save(&self, dir: &Path) -> crate::Result<()> {
        for (tool, pool) in &self.pools {
            pool.save(&dir.join(Self::file_name(tool)))?;
        }
        Ok(())
    }

    /// Loads every `pool_<TOOL>.json` in `dir`; missing files become empty pools.
    pub fn load(dir: &Path, dim: usize, tau: f64) -> crate::Result<Self> {
        let mut pools = Self::new(dim, tau);
        for tool in UPDATABLE_TOOLS {
            let path = dir.join(Self::file_name(tool));
            if path.exists() {
                pools.pools.insert(tool.to_string(), PromptPool::load(&path)?);
            }
        }
        Ok(pools)
    }
}

impl PromptProvider for PromptPools {
    fn prompt(&self, tool: &str, concept: &str, feature: &FeatureVector) -> PromptVector {
        match self.pools.get(tool) {
            Some(p) => p.ensemble(concept, feature, self.prefilter_k.get(tool).copied().flatten()),
            None => PromptVector::zeros(feature.dim()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fv(v: &[f64]) -> FeatureVector {
        FeatureVector::new(v.to_vec()).unwrap()
    }

    fn unit(i: usize, dim: usize) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        v
    }

    #[test]
    fn absent_concept_is_zero() {
        let pool = PromptPool::new("LOC", 4, 0.9);
        assert!(pool.ensemble("horse", &fv(&[1.0, 0.0, 0.0, 0.0]), None).is_zero());
    }

    #[test]
    fn single_entry_is_returned() {
        let mut pool = PromptPool::new("LOC", 3, 0.9);
        let p = PromptVector(vec![0.3, -2.0, 5.0]);
        pool.commit("horse", vec![(fv(&[1.0, 0.0, 0.0]), p.clone())]);
        for q in [[0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [0.2, 0.3, 0.9]] {
            assert_eq!(pool.ensemble("horse", &fv(&q), None), p);
        }
    }

    #[test]
    fn weighted_mean_of_two() {
        // Features at cosine 0.8 and 0.6 from the query.
        let q = fv(&[1.0, 0.0, 0.0]);
        let f1 = fv(&[0.8, 0.6, 0.0]);
        let f2 = fv(&[0.6, 0.0, 0.8]);
        let mut pool = PromptPool::new("LOC", 3, 0.9);
        pool.commit("c", vec![(f1, PromptVector(unit(0, 3))), (f2, PromptVector(unit(1, 3)))]);
        let p = pool.ensemble("c", &q, None);
        assert!((p.0[0] - 0.8 / 1.4).abs() < 1e-12);
        assert!((p.0[1] - 0.6 / 1.4).abs() < 1e-12);
        assert_eq!(p.0[2], 0.0);
    }

    #[test]
    fn all_negative_weights_fall_back_to_mean() {
        let mut pool = PromptPool::new("LOC", 2, 0.9);
        pool.commit(
            "c",
            vec![
                (fv(&[-1.0, 0.0]), PromptVector(vec![2.0, 0.0])),
                (fv(&[-1.0, -0.1]), PromptVector(vec![0.0, 4.0])),
            ],
        );
        assert_eq!(pool.ensemble("c", &fv(&[1.0, 0.0]), None).0, vec![1.0, 2.0]);
    }

    #[test]
    fn commit_preserves_order_and_counts() {
        let mut pool = PromptPool::new("SEG", 2, 0.9);
        pool.commit("c", vec![]);
        assert!(pool.concepts.is_empty());
        let pair = |x: f64| (fv(&[1.0, x]), PromptVector(vec![x, x]));
        pool.commit("c", vec![pair(1.0), pair(2.0)]);
        pool.commit("c", vec![pair(3.0), pair(4.0), pair(5.0)]);
        let e = pool.entries("c").unwrap();
        assert_eq!(e.len(), 5);
        let xs: Vec<f64> = e.prompts.iter().map(|p| p.0[0]).collect();
        assert_eq!(xs, vec![1.0, 2.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn vqa_pool_uses_shared_key() {
        let mut pool = PromptPool::new("VQA", 2, 0.9);
        pool.commit("person", vec![(fv(&[1.0, 0.0]), PromptVector(vec![1.0, 0.0]))]);
        assert!(pool.concepts.contains_key(VQA_POOL_KEY));
        assert!(pool.entries("dog").is_some());
    }

    #[test]
    fn prefilter_keeps_closest() {
        let mut pool = PromptPool::new("SEG", 2, 0.9);
        pool.commit(
            "c",
            vec![
                (fv(&[0.0, 1.0]), PromptVector(vec![0.0, 9.0])),
                (fv(&[1.0, 0.1]), PromptVector(vec![3.0, 0.0])),
            ],
        );
        let got = pool.ensemble("c", &fv(&[1.0, 0.0]), Some(1)).0;
        assert!((got[0] - 3.0).abs() < 1e-12 && got[1].abs() < 1e-12, "{got:?}");
    }

    #[test]
    fn pools_roundtrip_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut pools = PromptPools::new(2, 0.9);
        pools.pool_mut("LOC").unwrap().commit("c", vec![(fv(&[1.0, 0.0]), PromptVector(vec![0.5, 0.5]))]);
        pools.save(dir.path()).unwrap();
        let back = PromptPools::load(dir.path(), 2, 0.9).unwrap();
        assert_eq!(back, pools);
    }

    type PoolCase = (Vec<(Vec<f64>, Vec<f64>)>, Vec<f64>);

    fn pool_strategy() -> impl Strategy<Value = PoolCase> {
        (1usize..=8).prop_flat_map(|d| {
            (
                prop::collection::vec(
                    (prop::collection::vec(-1.0f64..1.0, d), prop::collection::vec(-5.0f64..5.0, d)),
                    1..=32,
                ),
                prop::collection::vec(-1.0f64..1.0, d),
            )
        })
    }

    proptest! {
        #[test]
        fn ensemble_within_convex_hull((entries, q) in pool_strategy()) {
            let Some(q) = FeatureVector::new(q) else { return Ok(()) };
            let d = q.dim();
            let mut pool = PromptPool::new("LOC", d, 0.9);
            let pairs: Vec<_> = entries
                .into_iter()
                .filter_map(|(f, p)| FeatureVector::new(f).map(|f| (f, PromptVector(p))))
                .collect();
            if pairs.is_empty() { return Ok(()); }
            pool.commit("c", pairs.clone());
            let out = pool.ensemble("c", &q, None);
            for i in 0..d {
                let lo = pairs.iter().map(|(_, p)| p.0[i]).fold(f64::INFINITY, f64::min);
                let hi = pairs.iter().map(|(_, p)| p.0[i]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(out.0[i] >= lo - 1e-9 && out.0[i] <= hi + 1e-9);
            }
        }

        #[test]
        fn other_concepts_do_not_disturb((entries, q) in pool_strategy()) {
            let Some(q) = FeatureVector::new(q) else { return Ok(()) };
            let d = q.dim();
            let pairs: Vec<_> = entries
                .into_iter()
                .filter_map(|(f, p)| FeatureVector::new(f).map(|f| (f, PromptVector(p))))
                .collect();
            if pairs.is_empty() { return Ok(()); }
            let mut pool = PromptPool::new("LOC", d, 0.9);
            pool.commit("c1", pairs[..1].to_vec());
            let before = pool.ensemble("c1", &q, None);
            pool.commit("c2", pairs.clone());
            prop_assert_eq!(pool.ensemble("c1", &q, None), before);
        }
    }
}
