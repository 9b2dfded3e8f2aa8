use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::templates::{fill, templates, Catalog, SlotPool, Template, Values};
use super::{BenchmarkSpec, SpecError};
use crate::backend::oracle::World;
use crate::backend::scripted::{Fault, FaultKind, Respond, RuleMatch, Trigger};
use crate::backend::{Purpose, RuleSet, ScriptedRule};
use crate::dsl::{execute, parse_program, validate, Env, ProgramAst, ZeroPrompts};
use crate::error::{read_json, write_json, Error};
use crate::model::{judge, Split, TaskInstance, TaskKind, ToolOutput};
use crate::tools::scene::SimScene;
use crate::tools::{is_updatable, standard_signatures, Toolkit, UPDATABLE_TOOLS};
use crate::vecmath::{hash_parts, rng};

const MAX_DRAWS: usize = 400;

/// Generator-side facts about a task that the learner never sees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMeta {
    pub id: String,
    pub template: String,
    pub oracle_program: String,
    /// The single concept the initial toolkit lacks, as (tool, concept).
    pub unknown: Option<(String, String)>,
    pub fault: Option<Fault>,
}

#[derive(Debug, Clone)]
pub struct Benchmark {
    pub spec: BenchmarkSpec,
    pub train: Vec<TaskInstance>,
    pub test: Vec<TaskInstance>,
    pub scenes: BTreeMap<String, SimScene>,
    pub toolkit: Toolkit,
    pub rules: RuleSet,
    pub meta: BTreeMap<String, TaskMeta>,
}

fn relevant_pool(tool: &str) -> SlotPool {
    match tool {
        "SELECT" | "CLASSIFY" => SlotPool::Person,
        _ => SlotPool::Object,
    }
}

fn env_for(kind: TaskKind, scenes: &[SimScene]) -> Env {
    kind.input_names()
        .iter()
        .zip(scenes)
        .map(|(n, s)| (n.to_string(), ToolOutput::Image(s.clone())))
        .collect()
}

struct Ctx<'a> {
    spec: &'a BenchmarkSpec,
    catalog: Catalog<'a>,
    people: Vec<String>,
    unknown: BTreeMap<String, BTreeSet<String>>,
    toolkit: &'a Toolkit,
    competent: Toolkit,
    kinds: Vec<(TaskKind, f64)>,
}

struct Draft {
    task: TaskInstance,
    scenes: Vec<SimScene>,
    meta: TaskMeta,
}

impl Ctx<'_> {
    fn pick_kind(&self, r: &mut ChaCha8Rng, allowed: impl Fn(TaskKind) -> bool) -> Option<TaskKind> {
        let options: Vec<(TaskKind, f64)> = self.kinds.iter().copied().filter(|(k, _)| allowed(*k)).collect();
        options.choose_weighted(r, |(_, w)| *w).ok().map(|(k, _)| *k)
    }

    fn pool(&self, p: SlotPool) -> &[String] {
        match p {
            SlotPool::Object => self.catalog.objects,
            SlotPool::Person => &self.people,
        }
    }

    fn fill_slots(&self, t: &Template, forced: Option<(&str, &str)>, r: &mut ChaCha8Rng) -> Option<Values> {
        let mut values = Values::new();
        let forced_slot = match forced {
            Some((tool, concept)) => {
                let pool = relevant_pool(tool);
                let candidates: Vec<&str> = t
                    .slots
                    .iter()
                    .filter(|s| s.pool == pool && s.consumers.contains(&tool))
                    .map(|s| s.name)
                    .collect();
                let name = *candidates.choose(r)?;
                values.insert(name.to_string(), concept.to_string());
                Some(name)
            }
            None => None,
        };
        for s in t.slots {
            if Some(s.name) == forced_slot {
                continue;
            }
            let taken: Vec<&str> = values.values().map(String::as_str).collect();
            let options: Vec<&String> = match s.same_category_as.and_then(|o| values.get(o)) {
                Some(other) => {
                    let cat = self.catalog.category_of(other)?;
                    self.catalog.people.get(cat)?.iter().collect()
                }
                None => self.pool(s.pool).iter().collect(),
            };
            let options: Vec<&String> = options.into_iter().filter(|o| !taken.contains(&o.as_str())).collect();
            let v = options.choose(r)?;
            values.insert(s.name.to_string(), (*v).clone());
        }
        if let Some(name) = forced_slot {
            // A same-category partner drawn before the forced slot must agree with it.
            for s in t.slots {
                if let Some(other) = s.same_category_as {
                    let (a, b) = (values.get(s.name)?, values.get(other)?);
                    if self.catalog.category_of(a) != self.catalog.category_of(b) {
                        let cat = self.catalog.category_of(&values[name])?.to_string();
                        let keep = if s.name == name { other } else { s.name };
                        let options: Vec<&String> = self.catalog.people[&cat]
                            .iter()
                            .filter(|n| **n != values[name])
                            .collect();
                        let pick = (*options.choose(r)?).clone();
                        values.insert(keep.to_string(), pick);
                    }
                }
            }
        }
        Some(values)
    }

    fn unknown_pairs(&self, t: &Template, values: &Values) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for s in t.slots {
            let c = &values[s.name];
            for tool in s.consumers {
                if self.unknown.get(*tool).is_some_and(|u| u.contains(c)) {
                    out.push((tool.to_string(), c.clone()));
                }
            }
        }
        out.sort();
        out.dedup();
        out
    }

    fn outcome(&self, task: &TaskInstance, ast: &ProgramAst, env: &Env, competent: bool) -> bool {
        let tk = if competent { &self.competent } else { self.toolkit };
        judge(task, &execute(ast, env, tk, &ZeroPrompts)).correct
    }

    /// Candidate planner faults for `ast`, in random order.
    fn fault_candidates(&self, ast: &ProgramAst, values: &Values, r: &mut ChaCha8Rng) -> Vec<Fault> {
        let mut out = Vec::new();
        let fault = |kind, step, arg: Option<&str>, value: Option<String>| Fault {
            kind,
            step,
            arg: arg.map(String::from),
            value,
            trigger: Trigger::UnlessCritiqueInPrompt,
            vague_global: false,
        };
        let taken: Vec<&str> = values.values().map(String::as_str).collect();
        for (j, step) in ast.steps.iter().enumerate() {
            for (name, v) in &step.args {
                let Some(current) = v.as_str() else { continue };
                let alternatives: Vec<String> = match (step.tool.as_str(), name.as_str()) {
                    ("CROP", "side") => ["left", "right", "above", "below", "in"]
                        .iter()
                        .filter(|s| **s != current)
                        .map(|s| s.to_string())
                        .collect(),
                    ("LOC" | "SEG", "object") | ("REPLACE", "prompt") => self
                        .catalog
                        .objects
                        .iter()
                        .filter(|o| !taken.contains(&o.as_str()))
                        .take(3)
                        .cloned()
                        .collect(),
                    ("SELECT", "query") => self.people.iter().filter(|p| p.as_str() != current).take(3).cloned().collect(),
                    _ => Vec::new(),
                };
                for alt in alternatives {
                    out.push(fault(FaultKind::WrongToolArg, j, Some(name), Some(alt)));
                }
            }
            let swap = match step.tool.as_str() {
                "LOC" => Some("SEG"),
                "SEG" => Some("LOC"),
                "COLORPOP" => Some("BGBLUR"),
                _ => None,
            };
            if let Some(tool) = swap {
                out.push(fault(FaultKind::WrongTool, j, None, Some(tool.to_string())));
            }
            if j + 2 < ast.steps.len() {
                out.push(fault(FaultKind::WrongStepOrder, j, None, None));
            }
        }
        out.shuffle(r);
        out
    }

    #[allow(clippy::too_many_arguments)]
    fn draft(
        &self,
        id: &str,
        split: Split,
        want: Option<(&str, &str)>,
        fault: bool,
        reserved: &BTreeSet<String>,
        used: &BTreeSet<String>,
        r: &mut ChaCha8Rng,
    ) -> Option<Draft> {
        let kind = match want {
            Some((tool, _)) => {
                let pool = relevant_pool(tool);
                self.pick_kind(r, |k| templates().iter().any(|t| t.kind == k && t.supports(tool, pool)))?
            }
            None => self.pick_kind(r, |_| true)?,
        };
        let options: Vec<&Template> = templates()
            .iter()
            .filter(|t| t.kind == kind && want.is_none_or(|(tool, _)| t.supports(tool, relevant_pool(tool))))
            .collect();
        let t = *options.choose(r)?;
        let mut values = self.fill_slots(t, want, r)?;
        let unknown = self.unknown_pairs(t, &values);
        match want {
            Some((tool, c)) if unknown != [(tool.to_string(), c.to_string())] => return None,
            None if !unknown.is_empty() => return None,
            _ => {}
        }
        let built = (t.build)(&values, &self.catalog, id, r)?;
        values.extend(built.extra);
        let instruction = fill(t.instruction, &values);
        if reserved.contains(&instruction) || (fault && used.contains(&instruction)) {
            return None;
        }
        let program = fill(t.program, &values);
        let ast = parse_program(&program).ok()?;
        let task = TaskInstance {
            id: id.to_string(),
            kind,
            instruction,
            inputs: built.scenes.iter().map(|s| s.id.clone()).collect(),
            feedback: built.feedback,
            split,
        };
        task.check().ok()?;
        let env = env_for(kind, &built.scenes);
        if !self.outcome(&task, &ast, &env, true) {
            return None;
        }
        if self.outcome(&task, &ast, &env, false) == want.is_some() {
            return None;
        }
        let fault = if fault {
            let sigs = standard_signatures();
            let mut chosen = None;
            for f in self.fault_candidates(&ast, &values, r) {
                let Ok(faulty) = parse_program(&f.apply(&program)) else { continue };
                if validate(&faulty, &sigs).is_empty() && !self.outcome(&task, &faulty, &env, true) {
                    chosen = Some(f);
                    break;
                }
            }
            let mut f = chosen?;
            f.vague_global = ast.steps.iter().any(|s| is_updatable(&s.tool))
                && r.gen::<f64>() < self.spec.fault_injection.vague;
            Some(f)
        } else {
            None
        };
        Some(Draft {
            meta: TaskMeta {
                id: id.to_string(),
                template: t.id.to_string(),
                oracle_program: program,
                unknown: want.map(|(a, b)| (a.to_string(), b.to_string())),
                fault,
            },
            task,
            scenes: built.scenes,
        })
    }
}

fn choose_unknown(spec: &BenchmarkSpec, objects: &[String], people: &[String]) -> BTreeMap<String, BTreeSet<String>> {
    UPDATABLE_TOOLS
        .iter()
        .map(|tool| {
            let pool = match relevant_pool(tool) {
                SlotPool::Object => objects,
                SlotPool::Person => people,
            };
            let n = ((1.0 - spec.known_fraction(tool)) * pool.len() as f64).round() as usize;
            let mut r = rng(hash_parts(&["unknown", &spec.seed.to_string(), tool]));
            let picked: BTreeSet<String> = pool.choose_multiple(&mut r, n.min(pool.len())).cloned().collect();
            (tool.to_string(), picked)
        })
        .collect()
}

fn program_rules(spec: &BenchmarkSpec) -> Vec<ScriptedRule> {
    let mut rules = Vec::new();
    for t in templates() {
        if spec.template_mix.get(&t.kind).copied().unwrap_or(0.0) <= 0.0 {
            continue;
        }
        for (purpose, text) in [(Purpose::Plan, t.plan), (Purpose::Program, t.program)] {
            rules.push(ScriptedRule {
                when: RuleMatch {
                    purpose,
                    kind: Some(t.kind.as_str().to_string()),
                    pattern: Some(t.pattern()),
                },
                respond: Respond::Template(text.to_string()),
                fault: None,
            });
        }
    }
    rules
}

/// Deterministic benchmark for `spec`: tasks, scenes, the initial toolkit and the backend rules.
pub fn generate_benchmark(spec: &BenchmarkSpec) -> Result<Benchmark, SpecError> {
    spec.check()?;
    let people: Vec<String> = spec.people.values().flatten().cloned().collect();
    let unknown = choose_unknown(spec, &spec.concept_universe, &people);
    let universe: Vec<String> = spec.concept_universe.iter().chain(&people).cloned().collect();
    let known: BTreeMap<String, BTreeSet<String>> = UPDATABLE_TOOLS
        .iter()
        .map(|t| {
            let u = &unknown[*t];
            (t.to_string(), universe.iter().filter(|c| !u.contains(*c)).cloned().collect())
        })
        .collect();
    let toolkit = Toolkit::new(universe.clone(), &known, spec.people.clone());
    let ctx = Ctx {
        spec,
        catalog: Catalog {
            objects: &spec.concept_universe,
            people: &spec.people,
        },
        people,
        competent: toolkit.to_competent(),
        toolkit: &toolkit,
        unknown: unknown.clone(),
        kinds: spec
            .template_mix
            .iter()
            .filter(|(_, w)| **w > 0.0)
            .map(|(k, w)| (*k, *w))
            .collect(),
    };
    let all_pairs: Vec<(String, String)> = unknown
        .iter()
        .flat_map(|(t, cs)| cs.iter().map(move |c| (t.clone(), c.clone())))
        .filter(|(t, _)| {
            let pool = relevant_pool(t);
            ctx.kinds.iter().any(|(k, _)| templates().iter().any(|tp| tp.kind == *k && tp.supports(t, pool)))
        })
        .collect();

    let mut scenes = BTreeMap::new();
    let mut meta = BTreeMap::new();
    let mut covered: Vec<(String, String)> = Vec::new();
    let mut used: BTreeSet<String> = BTreeSet::new();
    let mut reserved: BTreeSet<String> = BTreeSet::new();
    let mut splits = (Vec::new(), Vec::new());

    for (split, n) in [(Split::Train, spec.counts.train), (Split::Test, spec.counts.test)] {
        let prefix = match split {
            Split::Train => "train",
            Split::Test => "test",
        };
        for i in 0..n {
            let id = format!("{prefix}-{i:04}");
            let mut r = rng(hash_parts(&["task", &spec.seed.to_string(), &id]));
            let pairs: &[(String, String)] = match split {
                Split::Train => &all_pairs,
                Split::Test => &covered,
            };
            let want_unknown = !pairs.is_empty() && r.gen::<f64>() < spec.unknown_task_fraction;
            let want_fault = !want_unknown && r.gen::<f64>() < spec.fault_injection.planner;
            let mut draft = None;
            for _ in 0..MAX_DRAWS {
                let want = if want_unknown {
                    // Cycle through unknowns so every one is taught early in training.
                    let idx = match split {
                        Split::Train if i < pairs.len() * 2 => i % pairs.len(),
                        _ => r.gen_range(0..pairs.len()),
                    };
                    Some((pairs[idx].0.as_str(), pairs[idx].1.as_str()))
                } else {
                    None
                };
                if let Some(d) = ctx.draft(&id, split, want, want_fault, &reserved, &used, &mut r) {
                    draft = Some(d);
                    break;
                }
            }
            let d = draft.ok_or_else(|| SpecError::Infeasible {
                task: id.clone(),
                reason: format!("no template draw satisfied the constraints in {MAX_DRAWS} tries"),
            })?;
            if let (Split::Train, Some(pair)) = (split, &d.meta.unknown) {
                if !covered.contains(pair) {
                    covered.push(pair.clone());
                }
            }
            used.insert(d.task.instruction.clone());
            if d.meta.fault.is_some() {
                reserved.insert(d.task.instruction.clone());
            }
            for s in d.scenes {
                scenes.insert(s.id.clone(), s);
            }
            meta.insert(id, d.meta);
            match split {
                Split::Train => splits.0.push(d.task),
                Split::Test => splits.1.push(d.task),
            }
        }
    }

    let mut rules = Vec::new();
    for (id, m) in &meta {
        let Some(f) = &m.fault else { continue };
        let task = splits.0.iter().chain(&splits.1).find(|t| &t.id == id).expect("meta has a task");
        rules.push(ScriptedRule {
            when: RuleMatch {
                purpose: Purpose::Program,
                kind: Some(task.kind.as_str().to_string()),
                pattern: Some(format!("^{}$", regex::escape(&task.instruction))),
            },
            respond: Respond::Template(m.oracle_program.clone()),
            fault: Some(f.clone()),
        });
    }
    rules.extend(program_rules(spec));
    rules.extend(RuleSet::oracle_rules());
    let mut rules = RuleSet::new(rules);
    rules.answer_corruption = spec.corruption.llm;

    Ok(Benchmark {
        spec: spec.clone(),
        train: splits.0,
        test: splits.1,
        scenes,
        toolkit,
        rules,
        meta,
    })
}

impl Benchmark {
    pub fn world(&self) -> World {
        World::new(self.scenes.clone(), &self.toolkit)
    }

    pub fn tasks(&self) -> impl Iterator<Item = &TaskInstance> {
        self.train.iter().chain(&self.test)
    }

    /// Runs every task's oracle program with competent tools.
    pub fn check_solvable(&self) -> Result<(), SpecError> {
        let world = self.world();
        for task in self.tasks() {
            let m = &self.meta[&task.id];
            let ast = parse_program(&m.oracle_program).map_err(|e| SpecError::Infeasible {
                task: task.id.clone(),
                reason: e.to_string(),
            })?;
            let bindings: Vec<(String, String)> = task
                .kind
                .input_names()
                .iter()
                .zip(&task.inputs)
                .map(|(n, s)| (n.to_string(), s.clone()))
                .collect();
            let env = world.env(&bindings).ok_or_else(|| SpecError::Infeasible {
                task: task.id.clone(),
                reason: "missing scene".into(),
            })?;
            if !judge(task, &world.run(&ast, &env)).correct {
                return Err(SpecError::Infeasible {
                    task: task.id.clone(),
                    reason: "oracle program does not solve the task".into(),
                });
            }
        }
        Ok(())
    }

    /// Writes tasks.jsonl, scenes.json, toolkit.json, rules.json and spec.json.
    pub fn write(&self, dir: &Path) -> crate::Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut lines = String::new();
        for t in self.tasks() {
            lines.push_str(&serde_json::to_string(t).map_err(|e| Error::json(dir.join("tasks.jsonl"), e))?);
            lines.push('\n');
        }
        let tasks_path = dir.join("tasks.jsonl");
        std::fs::write(&tasks_path, lines).map_err(|e| Error::io(&tasks_path, e))?;
        write_json(&dir.join("scenes.json"), &self.scenes)?;
        self.toolkit.save(&dir.join("toolkit.json"))?;
        write_json(&dir.join("rules.json"), &self.rules)?;
        write_json(&dir.join("spec.json"), &self.spec)?;
        Ok(())
    }
}

/// A benchmark bundle read back from disk.
#[derive(Debug, Clone)]
pub struct Bundle {
    pub dir: PathBuf,
    pub spec: BenchmarkSpec,
    pub tasks: Vec<TaskInstance>,
    pub scenes: BTreeMap<String, SimScene>,
    pub toolkit: Toolkit,
}

impl Bundle {
    pub fn load(dir: &Path) -> crate::Result<Self> {
        let tasks_path = dir.join("tasks.jsonl");
        let text = std::fs::read_to_string(&tasks_path).map_err(|e| Error::io(&tasks_path, e))?;
        let tasks = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str::<TaskInstance>(l).map_err(|e| Error::json(&tasks_path, e)))
            .collect::<crate::Result<Vec<_>>>()?;
        for t in &tasks {
            t.check().map_err(|reason| Error::InvalidTask {
                id: t.id.clone(),
                reason,
            })?;
        }
        Ok(Bundle {
            dir: dir.to_path_buf(),
            spec: read_json(&dir.join("spec.json"))?,
            tasks,
            scenes: read_json(&dir.join("scenes.json"))?,
            toolkit: Toolkit::load(&dir.join("toolkit.json"))?,
        })
    }

    pub fn rules_path(&self) -> PathBuf {
        self.dir.join("rules.json")
    }

    pub fn split(&self, split: Split) -> Vec<TaskInstance> {
        self.tasks.iter().filter(|t| t.split == split).cloned().collect()
    }
}
