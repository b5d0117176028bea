//! Per-client datasets: synthetic subjects, corpus ingestion, evaluation
//! split, non-IID partitioning and pair sampling.

mod corpus;
mod pairs;
mod partition;
mod synth;

use std::path::PathBuf;
use std::sync::Arc;

use thiserror::Error;

use crate::nn::Tensor;

pub use corpus::{ingest_corpus, resize_bilinear, write_corpus, Corpus};
pub use pairs::{labeled_images, sample_pairs, split_eval, EvalSplit};
pub use partition::{partition, Partition, PartitionScheme};
pub use synth::{synth_generate, SynthConfig};

/// All impressions of one subject; pixel values lie in [0, 1].
#[derive(Debug, Clone)]
pub struct Subject<T> {
    pub id: u32,
    pub impressions: Vec<Arc<Tensor<T>>>,
}

/// Index of one impression: `subject` indexes the subject list, not the id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ImpressionRef {
    pub subject: usize,
    pub impression: usize,
}

#[derive(Debug, Clone)]
pub struct Pair<T> {
    pub a: Arc<Tensor<T>>,
    pub b: Arc<Tensor<T>>,
    pub subject_a: u32,
    pub subject_b: u32,
    /// True iff both images come from the same subject.
    pub matched: bool,
}

#[derive(Debug, Clone)]
pub struct LabeledImage<T> {
    pub image: Arc<Tensor<T>>,
    pub label: usize,
}

/// A client's view of the training data.
#[derive(Debug, Clone, Copy)]
pub struct ClientData<'a, T> {
    pub subjects: &'a [Subject<T>],
    pub items: &'a [ImpressionRef],
}

impl<'a, T> ClientData<'a, T> {
    pub fn new(subjects: &'a [Subject<T>], items: &'a [ImpressionRef]) -> Self {
        Self { subjects, items }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn image(&self, item: ImpressionRef) -> &'a Arc<Tensor<T>> {
        &self.subjects[item.subject].impressions[item.impression]
    }
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{path}: {reason}")]
    File { path: PathBuf, reason: String },
    #[error("no valid subjects under {root} ({failures} file errors)")]
    NoSubjects { root: PathBuf, failures: usize },
    #[error("partition infeasible: {0}")]
    Infeasible(String),
    #[error("cannot form pairs: {0}")]
    Unpairable(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
