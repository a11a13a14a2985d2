//! Membership attacks against unlearned models.
//!
//! - class-wise reminiscence ([`rea_classwise`]): how quickly a candidate
//!   class can be pushed back onto the unlearned label slot;
//! - sample-wise reminiscence ([`rea_samplewise`]) on top of an offline
//!   likelihood-ratio attack ([`mia_lira_scores`]);
//! - the unlearning-aware logistic attack [`mia_up`].
//!
//! All attacks work on copies; the victim parameters are never modified.

mod lira;
mod mia_up;
mod rea_class;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use lira::{
    logit_confidence, mia_lira, mia_lira_scores, rea_samplewise, top_n, train_shadow_ensemble, ReaSampleConfig,
    ShadowEnsemble,
};
pub use mia_up::{mia_up, sorted_softmax_features, LogisticScorer, UpShadow};
pub use rea_class::{
    aggregate_confidence, class_probe, rea_classwise, resonance_index, ReaClassConfig, ReaClassOutcome,
};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    ReaClass,
    ReaSample,
    MiaLira,
    MiaUp,
}

impl AttackKind {
    pub const ALL: [AttackKind; 4] = [
        AttackKind::ReaClass,
        AttackKind::ReaSample,
        AttackKind::MiaLira,
        AttackKind::MiaUp,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            AttackKind::ReaClass => "rea_class",
            AttackKind::ReaSample => "rea_sample",
            AttackKind::MiaLira => "mia_lira",
            AttackKind::MiaUp => "mia_up",
        }
    }
}

impl std::str::FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AttackKind::ALL
            .into_iter()
            .find(|k| k.tag() == s)
            .ok_or_else(|| Error::rejected(format!("unknown attack `{s}`")))
    }
}

impl std::fmt::Display for AttackKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

/// One reminiscence run: candidate, learning rate and its resonance index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResonanceEntry {
    pub target: String,
    pub lr: f64,
    pub idx_r: usize,
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetScore {
    pub target: String,
    pub score: f64,
    /// Ground-truth membership, when the harness knows it.
    pub member: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub attack_tag: String,
    pub per_target_scores: Vec<TargetScore>,
    pub tau: Option<f64>,
    pub decisions: Option<Vec<bool>>,
    pub resonance_indices: Option<Vec<ResonanceEntry>>,
    /// Echo of the attack configuration.
    pub config: serde_json::Value,
}

impl AttackReport {
    /// Report with targets named by row index.
    pub fn from_scores(tag: &str, scores: &[f64]) -> Self {
        Self {
            attack_tag: tag.to_owned(),
            per_target_scores: scores
                .iter()
                .enumerate()
                .map(|(i, &score)| TargetScore {
                    target: i.to_string(),
                    score,
                    member: None,
                })
                .collect(),
            tau: None,
            decisions: None,
            resonance_indices: None,
            config: serde_json::Value::Null,
        }
    }

    pub fn scores(&self) -> Vec<f64> {
        self.per_target_scores.iter().map(|t| t.score).collect()
    }

    /// Attaches ground-truth membership labels.
    pub fn with_membership(mut self, members: &[bool]) -> Result<Self> {
        if members.len() != self.per_target_scores.len() {
            return Err(Error::rejected("membership labels do not match the targets"));
        }
        for (t, &m) in self.per_target_scores.iter_mut().zip(members) {
            t.member = Some(m);
        }
        Ok(self)
    }

    /// `(score, member)` pairs for ROC analysis; every target must carry a
    /// membership label.
    pub fn labeled_scores(&self) -> Result<Vec<(f64, bool)>> {
        self.per_target_scores
            .iter()
            .map(|t| {
                t.member
                    .map(|m| (t.score, m))
                    .ok_or_else(|| Error::rejected(format!("target {} has no membership label", t.target)))
            })
            .collect()
    }

    /// Records `tau` and the decisions `score > tau`.
    pub fn apply_threshold(&mut self, tau: f64) {
        self.decisions = Some(threshold_decisions(self, tau));
        self.tau = Some(tau);
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(t) = self.per_target_scores.iter().find(|t| !t.score.is_finite()) {
            return Err(Error::Internal(format!("non-finite score for target {}", t.target)));
        }
        if self.decisions.is_some() != self.tau.is_some() {
            return Err(Error::Internal("decisions recorded without a threshold".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// `target_id,score,decision` rows; the decision column is empty when
    /// no threshold was applied.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["target_id", "score", "decision"])
            .map_err(|e| Error::Internal(e.to_string()))?;
        for (i, t) in self.per_target_scores.iter().enumerate() {
            let d = match &self.decisions {
                Some(d) => u8::from(d[i]).to_string(),
                None => String::new(),
            };
            w.write_record([t.target.as_str(), &t.score.to_string(), &d])
                .map_err(|e| Error::Internal(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Internal(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Internal(e.to_string()))
    }

    /// Writes `<stem>.json` and `<stem>.csv` into `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir)?;
        let json = dir.join(format!("{stem}.json"));
        let csv = dir.join(format!("{stem}.csv"));
        std::fs::write(&json, self.to_json()?)?;
        std::fs::write(&csv, self.to_csv()?)?;
        Ok((json, csv))
    }
}

/// One bit per target: `score > tau`.
pub fn threshold_decisions(report: &AttackReport, tau: f64) -> Vec<bool> {
    report.per_target_scores.iter().map(|t| t.score > tau).collect()
}
