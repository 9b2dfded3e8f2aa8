#![allow(dead_code)]

use clova_core::backend::ScriptedBackend;
use clova_core::bench::{generate_benchmark, Benchmark, BenchmarkSpec, Counts};
use clova_core::controller::{ControllerConfig, Runtime, State};
use clova_core::demos::HashedNgramEmbedder;

pub struct Harness {
    pub bench: Benchmark,
    pub backend: ScriptedBackend,
    pub embedder: HashedNgramEmbedder,
    pub cfg: ControllerConfig,
}

impl Harness {
    pub fn new(spec: &BenchmarkSpec) -> Self {
        let bench = generate_benchmark(spec).expect("benchmark generates");
        let backend = ScriptedBackend::new(bench.rules.clone(), bench.world()).expect("rules compile");
        let cfg = ControllerConfig {
            rho_dataset: spec.corruption.dataset,
            rho_web: spec.corruption.web,
            seed: spec.seed,
            ..Default::default()
        };
        Harness {
            bench,
            backend,
            embedder: HashedNgramEmbedder::default(),
            cfg,
        }
    }

    pub fn runtime(&self) -> Runtime<'_> {
        Runtime {
            backend: &self.backend,
            scenes: &self.bench.scenes,
            embedder: &self.embedder,
            cfg: &self.cfg,
        }
    }

    pub fn fresh_state(&self) -> State {
        State::fresh(self.bench.toolkit.clone(), &self.embedder, self.cfg.demo_capacity, &self.cfg.learning)
    }
}

pub fn small_spec(seed: u64, train: usize, test: usize) -> BenchmarkSpec {
    BenchmarkSpec {
        counts: Counts { train, test },
        ..BenchmarkSpec::desk_preset(seed)
    }
}

pub fn noisy(mut spec: BenchmarkSpec, rho: f64) -> BenchmarkSpec {
    spec.corruption.dataset = rho;
    spec.corruption.web = rho;
    spec.corruption.llm = rho;
    spec
}
