use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::controller::{EpisodeRecord, Tag};
use crate::error::Error;
use crate::model::{Outcome, TagCounts, TaskInstance, TaskKind};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KindMetrics {
    pub total: usize,
    pub correct: usize,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    /// `None` when there are no tasks.
    pub accuracy: Option<f64>,
    /// `None` when there are no tag tasks.
    pub f1: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub total: usize,
    pub correct: usize,
    pub per_kind: BTreeMap<TaskKind, KindMetrics>,
    pub episodes: usize,
    pub attempts: usize,
    pub tool_updates: usize,
    pub prompts_committed: usize,
    pub prompts_discarded: usize,
    pub demos_stored: usize,
}

fn ratio(a: usize, b: usize) -> Option<f64> {
    (b > 0).then(|| a as f64 / b as f64)
}

fn compute<'a>(records: &'a [EpisodeRecord], tasks: &[TaskInstance], pick: impl Fn(&'a EpisodeRecord) -> (bool, Option<TagCounts>)) -> crate::Result<Metrics> {
    let by_id: BTreeMap<&str, &EpisodeRecord> = records.iter().map(|r| (r.task_id.as_str(), r)).collect();
    let mut m = Metrics::default();
    let mut tags = TagCounts::default();
    let mut tag_tasks = 0;
    for task in tasks {
        let rec = by_id.get(task.id.as_str()).ok_or_else(|| Error::MissingRecord(task.id.clone()))?;
        let (correct, counts) = pick(rec);
        m.total += 1;
        let k = m.per_kind.entry(task.kind).or_default();
        k.total += 1;
        if correct {
            m.correct += 1;
            k.correct += 1;
        }
        if task.kind == TaskKind::Tag {
            tag_tasks += 1;
            let c = counts.unwrap_or(TagCounts {
                predicted: 0,
                expected: task.feedback.expected_boxes.as_ref().map_or(0, Vec::len),
                matched: 0,
            });
            tags.predicted += c.predicted;
            tags.expected += c.expected;
            tags.matched += c.matched;
        }
        m.episodes += 1;
        m.attempts += rec.attempts.len();
        m.tool_updates += rec.updates.len();
        m.prompts_committed += rec.updates.iter().map(|u| u.committed).sum::<usize>();
        m.prompts_discarded += rec.updates.iter().map(|u| u.discarded).sum::<usize>();
        m.demos_stored += rec.demo_stores.iter().filter(|d| d.stored).count();
    }
    for k in m.per_kind.values_mut() {
        k.accuracy = ratio(k.correct, k.total);
    }
    m.accuracy = ratio(m.correct, m.total);
    if tag_tasks > 0 {
        let p = ratio(tags.matched, tags.predicted).unwrap_or(0.0);
        let r = ratio(tags.matched, tags.expected).unwrap_or(0.0);
        m.precision = Some(p);
        m.recall = Some(r);
        m.f1 = Some(if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 });
    }
    Ok(m)
}

fn outcome_pair(o: &Outcome) -> (bool, Option<TagCounts>) {
    (o.correct, o.tags)
}

/// Metrics over final outcomes; one record per task is required.
pub fn score(records: &[EpisodeRecord], tasks: &[TaskInstance]) -> crate::Result<Metrics> {
    compute(records, tasks, |r| outcome_pair(&r.final_outcome))
}

/// Online metrics: each task counts by the tag of its first attempt.
pub fn score_tags(records: &[EpisodeRecord], tasks: &[TaskInstance]) -> crate::Result<Metrics> {
    compute(records, tasks, |r| {
        let first = r.attempts.first().map(|a| a.outcome.tags).unwrap_or_default();
        (r.tag == Tag::Correct, first)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::AttemptRecord;
    use crate::model::{ExecutionTrace, Feedback, LabeledBox, Split};
    use crate::tools::scene::BBox;
    use proptest::prelude::*;

    fn task(id: &str, kind: TaskKind) -> TaskInstance {
        let feedback = match kind {
            TaskKind::Tag => Feedback {
                expected_boxes: Some(vec![
                    LabeledBox { label: "a".into(), bbox: BBox::new(0, 0, 5, 5) },
                    LabeledBox { label: "b".into(), bbox: BBox::new(9, 0, 5, 5) },
                ]),
                ..Default::default()
            },
            _ => Feedback { expected_answer: Some("x".into()), ..Default::default() },
        };
        TaskInstance { id: id.into(), kind, instruction: "i".into(), inputs: vec!["s".into()], feedback, split: Split::Test }
    }

    fn record(id: &str, kind: TaskKind, correct: bool, tags: Option<TagCounts>) -> EpisodeRecord {
        let outcome = Outcome { correct, predicted: String::new(), normalized_expected: String::new(), tags };
        EpisodeRecord {
            task_id: id.into(),
            kind,
            attempts: vec![AttemptRecord {
                plan: None,
                program: String::new(),
                trace: ExecutionTrace::default(),
                outcome: outcome.clone(),
                error: None,
            }],
            critiques: vec![],
            updates: vec![],
            demo_stores: vec![],
            notes: vec![],
            tag: if correct { Tag::Correct } else { Tag::Wrong },
            final_outcome: outcome,
            local_backend_calls: None,
        }
    }

    #[test]
    fn three_of_four() {
        let tasks: Vec<_> = (0..4).map(|i| task(&format!("t{i}"), TaskKind::Vqa)).collect();
        let recs: Vec<_> = (0..4).map(|i| record(&format!("t{i}"), TaskKind::Vqa, i != 2, None)).collect();
        let m = score(&recs, &tasks).unwrap();
        assert_eq!(m.accuracy, Some(0.75));
        assert_eq!(m.f1, None);
    }

    #[test]
    fn tag_f1_half() {
        let tasks = vec![task("t", TaskKind::Tag)];
        let recs = vec![record("t", TaskKind::Tag, false, Some(TagCounts { predicted: 2, expected: 2, matched: 1 }))];
        let m = score(&recs, &tasks).unwrap();
        // P = 1/2, R = 1/2, F1 = 2PR/(P+R)
        let (p, r) = (0.5, 0.5);
        assert_eq!(m.f1, Some(2.0 * p * r / (p + r)));
    }

    #[test]
    fn empty_and_missing() {
        let m = score(&[], &[]).unwrap();
        assert_eq!(m.accuracy, None);
        assert_eq!(m.f1, None);
        assert!(matches!(score(&[], &[task("t", TaskKind::Vqa)]), Err(Error::MissingRecord(_))));
    }

    proptest! {
        #[test]
        fn permutation_invariant(flags in proptest::collection::vec(any::<bool>(), 1..20), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let tasks: Vec<_> = flags.iter().enumerate().map(|(i, _)| task(&format!("t{i}"), TaskKind::Vqa)).collect();
            let mut recs: Vec<_> = flags.iter().enumerate().map(|(i, c)| record(&format!("t{i}"), TaskKind::Vqa, *c, None)).collect();
            let before = score(&recs, &tasks).unwrap();
            recs.shuffle(&mut crate::vecmath::rng(seed));
            prop_assert_eq!(score(&recs, &tasks).unwrap(), before);
        }
    }
}
