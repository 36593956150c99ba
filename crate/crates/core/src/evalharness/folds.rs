use serde::Serialize;

use crate::error::{Error, Result};
use crate::evalharness::DatasetManifest;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Fold {
    pub held_out_subject: String,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FoldPlan {
    pub folds: Vec<Fold>,
}

/// Leave-one-subject-out: one fold per subject, ordered by subject id.
pub fn loso_folds(manifest: &DatasetManifest) -> Result<FoldPlan> {
    let subjects = manifest.subjects();
    if subjects.len() < 2 {
        return Err(Error::invalid(format!(
            "leave-one-subject-out needs at least 2 subjects, found {}",
            subjects.len()
        )));
    }
    let folds = subjects
        .into_iter()
        .map(|subject| {
            let (test, train): (Vec<_>, Vec<_>) = manifest
                .entries()
                .iter()
                .partition(|e| e.subject_id == subject);
            Fold {
                held_out_subject: subject,
                train_ids: train.into_iter().map(|e| e.video_id.clone()).collect(),
                test_ids: test.into_iter().map(|e| e.video_id.clone()).collect(),
            }
        })
        .collect();
    Ok(FoldPlan { folds })
}
