//! The demonstration pool: examples for plan and program generation.

pub mod embed;
pub mod pool;
pub mod prompt;

pub use embed::{HashedNgramEmbedder, TextEmbedder};
pub use pool::{DemoError, DemoExample, DemoKind, DemoValidator, DemonstrationPool, Polarity, Retrieved};
pub use prompt::{assemble_prompt, example_text};

use serde::{Deserialize, Serialize};

use crate::model::TaskKind;

/// A seed example as shipped in `seeds/<family>.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedExample {
    pub kind: DemoKind,
    pub polarity: Polarity,
    pub instruction: String,
    pub content: String,
    #[serde(default)]
    pub critique: Option<String>,
}

fn seed_text(kind: TaskKind) -> &'static str {
    match kind {
        TaskKind::Vqa => include_str!("../../seeds/vqa.json"),
        TaskKind::MultiImage => include_str!("../../seeds/multi_image.json"),
        TaskKind::Edit => include_str!("../../seeds/edit.json"),
        TaskKind::Tag => include_str!("../../seeds/tag.json"),
    }
}

pub fn seed_examples(kind: TaskKind) -> Vec<SeedExample> {
    serde_json::from_str(seed_text(kind)).expect("bundled seed file is valid JSON")
}

/// Pool holding the bundled seed examples of every task family.
pub fn seeded_pool(embedder: &dyn TextEmbedder, capacity: usize) -> DemonstrationPool {
    let dim = embedder.embed("probe").len();
    let mut pool = DemonstrationPool::new(embedder, dim, capacity);
    for kind in TaskKind::ALL {
        for s in seed_examples(kind) {
            let mut e = DemoExample::new(
                embedder,
                s.kind,
                s.polarity,
                &s.instruction,
                &s.content,
                s.critique.as_deref(),
                &format!("seed-{}", kind.as_str()),
            )
            .expect("seed failure examples carry critiques");
            e.validated = true;
            pool.insert(e).expect("seed embedding matches pool dimension");
        }
    }
    pool
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_programs_parse_and_validate() {
        let sigs = crate::tools::standard_signatures();
        for kind in TaskKind::ALL {
            for s in seed_examples(kind) {
                if s.kind == DemoKind::Program && s.polarity == Polarity::Success {
                    let ast = crate::dsl::parse_program(&s.content).unwrap();
                    assert_eq!(crate::dsl::validate(&ast, &sigs), vec![], "{}", s.instruction);
                }
            }
        }
    }

    #[test]
    fn about_twenty_seeds() {
        let pool = seeded_pool(&HashedNgramEmbedder::default(), pool::DEFAULT_CAPACITY);
        assert_eq!(pool.len(), 20);
        assert!(pool.all().all(|e| e.validated));
    }
}
