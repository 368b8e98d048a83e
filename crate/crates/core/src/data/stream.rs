//! Task streams: ordered tasks built from registered base datasets.

use std::collections::BTreeMap;
use std::fmt;

use rand::RngCore;

use super::transform::{apply_transform, TaskTransform};
use super::Dataset;
use crate::error::{ensure, Error, Result};
use crate::rng::Rng;

/// The transforms defining one task, applied in order.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskSpec {
    pub transforms: Vec<TaskTransform>,
}

impl TaskSpec {
    pub fn new(transforms: Vec<TaskTransform>) -> Self {
        TaskSpec { transforms }
    }

    /// The dataset named by the last `DatasetSwap`, if any.
    pub fn base_name(&self) -> Option<&str> {
        self.transforms.iter().rev().find_map(|t| match t {
            TaskTransform::DatasetSwap { name } => Some(name.as_str()),
            _ => None,
        })
    }
}

impl From<TaskTransform> for TaskSpec {
    fn from(t: TaskTransform) -> Self {
        TaskSpec { transforms: vec![t] }
    }
}

impl fmt::Display for TaskSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.transforms.is_empty() {
            return write!(f, "identity");
        }
        let parts: Vec<String> = self.transforms.iter().map(|t| t.to_string()).collect();
        write!(f, "{}", parts.join("+"))
    }
}

/// Named (train, test) base datasets. The first one inserted is the default.
#[derive(Clone, Debug, Default)]
pub struct DatasetRegistry {
    sets: BTreeMap<String, (Dataset, Dataset)>,
    default: Option<String>,
}

impl DatasetRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, train: Dataset, test: Dataset) {
        let name = name.into();
        self.default.get_or_insert_with(|| name.clone());
        self.sets.insert(name, (train, test));
    }

    pub fn get(&self, name: &str) -> Result<&(Dataset, Dataset)> {
        self.sets
            .get(name)
            .ok_or_else(|| Error::contract(format!("no dataset registered as '{name}'")))
    }

    pub fn default_pair(&self) -> Result<&(Dataset, Dataset)> {
        let name = self.default.as_deref().ok_or_else(|| Error::contract("empty dataset registry"))?;
        self.get(name)
    }
}

#[derive(Clone, Debug)]
pub struct Task {
    /// 1-based.
    pub id: usize,
    pub spec: TaskSpec,
    pub train: Dataset,
    pub test: Dataset,
}

#[derive(Clone, Debug)]
pub struct TaskStream {
    pub tasks: Vec<Task>,
    pub seed: u64,
}

impl TaskStream {
    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    /// Task `id` (1-based).
    pub fn task(&self, id: usize) -> &Task {
        &self.tasks[id - 1]
    }

    /// The first `n` tasks as a stream of their own.
    pub fn prefix(&self, n: usize) -> TaskStream {
        TaskStream {
            tasks: self.tasks[..n.min(self.tasks.len())].to_vec(),
            seed: self.seed,
        }
    }
}

/// Builds one task per spec.
///
/// Label corruption and class removal act on the training split only, so
/// every task is evaluated against its clean test labels and all classes.
/// Other transforms reach both splits with the same parameters.
pub fn build_stream(specs: &[TaskSpec], registry: &DatasetRegistry, rng: &Rng) -> Result<TaskStream> {
    ensure!(!specs.is_empty(), "a task stream needs at least one task");
    let mut tasks = Vec::with_capacity(specs.len());
    for (t, spec) in specs.iter().enumerate() {
        let (base_train, base_test) = match spec.base_name() {
            Some(name) => registry.get(name)?,
            None => registry.default_pair()?,
        };
        let mut train = base_train.clone();
        let mut test = base_test.clone();
        let mut train_rng = rng.substream_indexed("task-train", t as u64);
        let mut test_rng = rng.substream_indexed("task-test", t as u64);
        for tr in &spec.transforms {
            tr.validate()?;
            match tr {
                TaskTransform::DatasetSwap { .. } => {}
                TaskTransform::LabelCorrupt { .. } | TaskTransform::ClassRemoval { .. } => {
                    train = apply_transform(&train, tr, &mut train_rng)?;
                }
                _ => {
                    train = apply_transform(&train, tr, &mut train_rng)?;
                    test = apply_transform(&test, tr, &mut test_rng)?;
                }
            }
        }
        let label = format!("{}#{}", base_train.name(), t + 1);
        tasks.push(Task {
            id: t + 1,
            spec: spec.clone(),
            train: train.renamed(label.clone()),
            test: test.renamed(label),
        });
    }
    Ok(TaskStream { tasks, seed: rng.seed() })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RotationSchedule {
    /// Task t is rotated by `step · (t − 1)` degrees.
    Incremental { step: f64 },
    /// Each task draws a fixed angle uniformly from [0, 180].
    Random,
}

pub fn rotation_specs(num_tasks: usize, schedule: RotationSchedule, rng: &Rng) -> Result<Vec<TaskSpec>> {
    let mut angles = rng.substream("rotation-angles");
    (0..num_tasks)
        .map(|t| {
            let degrees = match schedule {
                RotationSchedule::Incremental { step } => step * t as f64,
                RotationSchedule::Random => angles.uniform_range(0.0, 180.0),
            };
            let tr = TaskTransform::Rotation { degrees };
            tr.validate()?;
            Ok(tr.into())
        })
        .collect()
}

/// One independent pixel permutation per task (task 1 included).
pub fn permutation_specs(num_tasks: usize, rng: &Rng) -> Vec<TaskSpec> {
    let mut seeds = rng.substream("permutation-seeds");
    (0..num_tasks)
        .map(|_| TaskTransform::Permutation { seed: seeds.next_u64() }.into())
        .collect()
}
