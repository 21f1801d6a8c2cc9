//! Frame-level ROC-AUC: micro (all videos concatenated) and macro (per-video mean).

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};

/// Scores and binary labels of one video, frame-aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledVideo {
    pub video_id: String,
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
}

impl LabeledVideo {
    pub fn new(video_id: impl Into<String>, scores: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        let video_id = video_id.into();
        if scores.len() != labels.len() {
            return Err(Error::data(
                &video_id,
                format!("{} scores but {} labels", scores.len(), labels.len()),
            ));
        }
        if let Some(l) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::data(&video_id, format!("label {l} is not 0 or 1")));
        }
        Ok(Self {
            video_id,
            scores,
            labels,
        })
    }

    fn has_both_classes(&self) -> bool {
        self.labels.contains(&0) && self.labels.contains(&1)
    }
}

/// Probability that a random positive outranks a random negative, ties counting ½.
/// Computed from midranks (Mann-Whitney U).
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension {
            expected: labels.len(),
            got: scores.len(),
        });
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::NonFinite(format!("score {s}")));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.iter().filter(|&&l| l == 0).count();
    if pos + neg != labels.len() {
        return Err(Error::InvalidConfig("labels must be 0 or 1".into()));
    }
    if pos == 0 || neg == 0 {
        return Err(Error::Undefined(format!(
            "AUC is undefined for single-class input ({pos} positive, {neg} negative)"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of positive ranks, with tied groups sharing their mean rank. Ranks are
    // doubled so every midrank stays an integer.
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let midrank2 = (i + 1 + j) as u128;
        let group_pos = order[i..j].iter().filter(|&&k| labels[k] == 1).count() as u128;
        rank_sum2 += midrank2 * group_pos;
        i = j;
    }
    let (p, n) = (pos as u128, neg as u128);
    let u2 = rank_sum2 - p * (p + 1);
    Ok(u2 as f64 / (2 * p * n) as f64)
}

/// AUC over the concatenation of every video's frames.
pub fn micro_auc(run: &[LabeledVideo]) -> Result<f64> {
    let scores: Vec<f64> = run.iter().flat_map(|v| v.scores.iter().copied()).collect();
    let labels: Vec<u8> = run.iter().flat_map(|v| v.labels.iter().copied()).collect();
    if scores.is_empty() {
        return Err(Error::Empty("evaluation run".into()));
    }
    roc_auc(&scores, &labels)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MacroAuc {
    pub auc: f64,
    pub per_video: Vec<(String, f64)>,
    /// Videos left out because they contain only one class.
    pub skipped: Vec<String>,
}

/// Unweighted mean of per-video AUCs over videos containing both classes.
pub fn macro_auc_detailed(run: &[LabeledVideo]) -> Result<MacroAuc> {
    let per: Vec<Option<(String, f64)>> = run
        .par_iter()
        .map(|v| {
            if v.has_both_classes() {
                roc_auc(&v.scores, &v.labels).map(|a| Some((v.video_id.clone(), a)))
            } else {
                Ok(None)
            }
        })
        .collect::<Result<_>>()?;
    let mut per_video = Vec::new();
    let mut skipped = Vec::new();
    for (v, r) in run.iter().zip(per) {
        match r {
            Some(p) => per_video.push(p),
            None => {
                log::warn!("video {} has a single label class; excluded from macro AUC", v.video_id);
                skipped.push(v.video_id.clone());
            }
        }
    }
    if per_video.is_empty() {
        return Err(Error::Undefined(
            "macro AUC is undefined: no video contains both normal and anomalous frames".into(),
        ));
    }
    let auc = per_video.iter().map(|(_, a)| a).sum::<f64>() / per_video.len() as f64;
    Ok(MacroAuc {
        auc,
        per_video,
        skipped,
    })
}

pub fn macro_auc(run: &[LabeledVideo]) -> Result<f64> {
    macro_auc_detailed(run).map(|m| m.auc)
}
