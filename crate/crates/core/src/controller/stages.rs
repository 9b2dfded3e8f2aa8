use rayon::prelude::*;

use super::{evaluate_task, run_episode, EpisodeRecord, Runtime, State};
use crate::bench::{score, score_tags, Metrics};
use crate::model::TaskInstance;

/// Sequential learning episodes. `sink` sees each record as soon as it is complete.
pub fn run_training_stage(
    rt: &Runtime<'_>,
    state: &mut State,
    tasks: &[TaskInstance],
    sink: &mut dyn FnMut(&EpisodeRecord),
) -> crate::Result<Vec<EpisodeRecord>> {
    let mut records = Vec::with_capacity(tasks.len());
    for task in tasks {
        let rec = run_episode(rt, state, task, true)?;
        sink(&rec);
        records.push(rec);
    }
    Ok(records)
}

/// Frozen-state inference over `tasks`, on up to `jobs` threads. Record order follows `tasks`.
pub fn run_test_stage(
    rt: &Runtime<'_>,
    state: &State,
    tasks: &[TaskInstance],
    jobs: usize,
) -> crate::Result<(Vec<EpisodeRecord>, Metrics)> {
    let records: Vec<EpisodeRecord> = if jobs <= 1 {
        tasks.iter().map(|t| evaluate_task(rt, state, t)).collect::<crate::Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| crate::Error::State(format!("thread pool: {e}")))?;
        pool.install(|| tasks.par_iter().map(|t| evaluate_task(rt, state, t)).collect::<crate::Result<_>>())?
    };
    let metrics = score(&records, tasks)?;
    Ok((records, metrics))
}

/// Learning episodes scored by the first attempt of each task.
pub fn run_online(
    rt: &Runtime<'_>,
    state: &mut State,
    tasks: &[TaskInstance],
    sink: &mut dyn FnMut(&EpisodeRecord),
) -> crate::Result<(Vec<EpisodeRecord>, Metrics)> {
    let records = run_training_stage(rt, state, tasks, sink)?;
    let metrics = score_tags(&records, tasks)?;
    Ok((records, metrics))
}
