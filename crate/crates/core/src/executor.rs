//! A local map/shuffle/reduce harness.
//!
//! [`run_job`] maps every input record, groups the emitted records by key and
//! reduces each group. Map tasks and reduce tasks each run on up to
//! `parallelism` worker threads. The result equals the sequential reference
//! semantics regardless of worker count: within a key, values keep the order
//! (input position, emission order) they were produced in, and the final
//! output is stably sorted by key.

use std::collections::BTreeMap;
use std::fmt;
use std::num::NonZeroUsize;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use thiserror::Error;

/// Error type user map/reduce functions may return.
pub type TaskError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct KeyedRecord {
    pub key: Vec<u8>,
    pub value: Vec<u8>,
}

impl KeyedRecord {
    /// # Panics
    /// If `key` is empty.
    pub fn new(key: impl Into<Vec<u8>>, value: impl Into<Vec<u8>>) -> Self {
        let key = key.into();
        assert!(!key.is_empty(), "record keys must be non-empty");
        Self {
            key,
            value: value.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Map,
    Reduce,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Map => "map",
            Phase::Reduce => "reduce",
        })
    }
}

#[derive(Debug, Error)]
#[error("{phase} task for key {} failed: {source}", String::from_utf8_lossy(.key))]
pub struct JobError {
    pub phase: Phase,
    pub key: Vec<u8>,
    #[source]
    pub source: TaskError,
}

pub type MapFn<'a> = Box<dyn Fn(&KeyedRecord) -> Result<Vec<KeyedRecord>, TaskError> + Send + Sync + 'a>;
pub type ReduceFn<'a> =
    Box<dyn Fn(&[u8], &[Vec<u8>]) -> Result<Vec<KeyedRecord>, TaskError> + Send + Sync + 'a>;

/// A map function, a reduce function and a worker count. The functions must
/// not communicate except through the records they emit.
pub struct JobSpec<'a> {
    pub map: MapFn<'a>,
    pub reduce: ReduceFn<'a>,
    /// Worker threads; defaults to the number of input records.
    pub parallelism: Option<NonZeroUsize>,
}

impl<'a> JobSpec<'a> {
    pub fn new(
        map: impl Fn(&KeyedRecord) -> Result<Vec<KeyedRecord>, TaskError> + Send + Sync + 'a,
        reduce: impl Fn(&[u8], &[Vec<u8>]) -> Result<Vec<KeyedRecord>, TaskError> + Send + Sync + 'a,
    ) -> Self {
        Self {
            map: Box::new(map),
            reduce: Box::new(reduce),
            parallelism: None,
        }
    }

    pub fn with_parallelism(mut self, workers: usize) -> Self {
        self.parallelism = NonZeroUsize::new(workers);
        self
    }
}

/// Runs `task` over `0..count` on up to `workers` threads, collecting results
/// by index. Stops handing out work after the first failure.
fn run_tasks<T: Send>(
    count: usize,
    workers: usize,
    task: impl Fn(usize) -> Result<T, TaskError> + Sync,
) -> Result<Vec<T>, (usize, TaskError)> {
    let workers = workers.clamp(1, count.max(1));
    let next = AtomicUsize::new(0);
    let cancelled = AtomicBool::new(false);
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..count).map(|_| None).collect());
    let failures: Mutex<Vec<(usize, TaskError)>> = Mutex::new(Vec::new());

    let worker = || loop {
        if cancelled.load(Ordering::Acquire) {
            break;
        }
        let k = next.fetch_add(1, Ordering::AcqRel);
        if k >= count {
            break;
        }
        match task(k) {
            Ok(v) => slots.lock().expect("slots")[k] = Some(v),
            Err(e) => {
                cancelled.store(true, Ordering::Release);
                failures.lock().expect("failures").push((k, e));
            }
        }
    };
    if workers == 1 {
        worker();
    } else {
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(&worker);
            }
        });
    }

    let mut failures = failures.into_inner().expect("failures");
    if !failures.is_empty() {
        failures.sort_by_key(|(k, _)| *k);
        return Err(failures.swap_remove(0));
    }
    Ok(slots
        .into_inner()
        .expect("slots")
        .into_iter()
        .map(|v| v.expect("every task ran"))
        .collect())
}

/// Map, shuffle by key, reduce. See the module docs for ordering guarantees.
pub fn run_job(inputs: &[KeyedRecord], job: &JobSpec<'_>) -> Result<Vec<KeyedRecord>, JobError> {
    let workers = job
        .parallelism
        .map_or(inputs.len().max(1), NonZeroUsize::get);

    let mapped = run_tasks(inputs.len(), workers, |k| (job.map)(&inputs[k])).map_err(
        |(k, source)| JobError {
            phase: Phase::Map,
            key: inputs[k].key.clone(),
            source,
        },
    )?;

    let mut groups: BTreeMap<Vec<u8>, Vec<Vec<u8>>> = BTreeMap::new();
    for rec in mapped.into_iter().flatten() {
        groups.entry(rec.key).or_default().push(rec.value);
    }
    let groups: Vec<(Vec<u8>, Vec<Vec<u8>>)> = groups.into_iter().collect();

    let reduced = run_tasks(groups.len(), workers, |k| {
        let (key, values) = &groups[k];
        (job.reduce)(key, values)
    })
    .map_err(|(k, source)| JobError {
        phase: Phase::Reduce,
        key: groups[k].0.clone(),
        source,
    })?;

    let mut out: Vec<KeyedRecord> = reduced.into_iter().flatten().collect();
    out.sort_by(|a, b| a.key.cmp(&b.key));
    Ok(out)
}

/// An iterative computation where every round is one job.
pub trait RoundDriver {
    type State;
    type Summary: Clone;
    type Error: From<JobError>;

    /// Inputs and job for `round` (1-based) given the current state.
    fn build<'s>(
        &'s self,
        round: usize,
        state: &'s Self::State,
    ) -> Result<(Vec<KeyedRecord>, JobSpec<'s>), Self::Error>;

    /// Folds the job output into the next state and summarises it.
    fn fold(
        &mut self,
        round: usize,
        state: Self::State,
        output: Vec<KeyedRecord>,
    ) -> Result<(Self::State, Self::Summary), Self::Error>;

    /// Checked after every round; `prev` is `None` after the first.
    fn should_stop(&mut self, prev: Option<&Self::Summary>, curr: &Self::Summary) -> bool;
}

#[derive(Debug)]
pub struct RoundsOutcome<S, T> {
    pub state: S,
    pub trace: Vec<T>,
    /// `false` when `max_rounds` ran out before the stop predicate fired.
    pub converged: bool,
}

/// A failed round, with the summaries of the rounds that completed.
#[derive(Debug)]
pub struct RoundsFailure<T, E> {
    pub round: usize,
    pub trace: Vec<T>,
    pub error: E,
}

pub fn run_rounds<D: RoundDriver>(
    driver: &mut D,
    initial: D::State,
    max_rounds: usize,
) -> Result<RoundsOutcome<D::State, D::Summary>, RoundsFailure<D::Summary, D::Error>> {
    assert!(max_rounds >= 1, "max_rounds must be at least 1");
    let mut state = initial;
    let mut trace: Vec<D::Summary> = Vec::new();
    for round in 1..=max_rounds {
        let output = {
            let built = driver.build(round, &state);
            let result = built.and_then(|(inputs, job)| run_job(&inputs, &job).map_err(D::Error::from));
            match result {
                Ok(out) => out,
                Err(error) => return Err(RoundsFailure { round, trace, error }),
            }
        };
        let (next, summary) = match driver.fold(round, state, output) {
            Ok(v) => v,
            Err(error) => return Err(RoundsFailure { round, trace, error }),
        };
        state = next;
        let stop = driver.should_stop(trace.last(), &summary);
        trace.push(summary);
        if stop {
            return Ok(RoundsOutcome {
                state,
                trace,
                converged: true,
            });
        }
    }
    Ok(RoundsOutcome {
        state,
        trace,
        converged: false,
    })
}
