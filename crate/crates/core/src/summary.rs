//! Key-shot selection under a frame budget.

use ndarray::{ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kts::{kts_changepoints, shots_from_changepoints, ChangePoints, KtsConfig, Shot};
use crate::model::{forward, Dropout, ForwardTrace, HyperParams, ModelParams};

/// Default summary length as a fraction of the video.
pub const DEFAULT_RATIO: f64 = 0.15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotScores {
    pub shots: Vec<Shot>,
    /// Mean frame score per shot.
    pub means: Vec<f64>,
    pub lengths: Vec<usize>,
}

pub fn shot_scores(y: ArrayView1<'_, f64>, shots: &[Shot]) -> ShotScores {
    let means = shots
        .iter()
        .map(|s| y.slice(ndarray::s![s.start..s.end]).sum() / s.len() as f64)
        .collect();
    ShotScores {
        shots: shots.to_vec(),
        means,
        lengths: shots.iter().map(Shot::len).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub shots: Vec<Shot>,
    pub selected: Vec<bool>,
    pub frame_mask: Vec<u8>,
    /// Frame budget the selection had to respect.
    pub budget: usize,
    /// Sum of the selected shots' mean scores.
    pub value: f64,
}

impl Summary {
    pub fn selected_shots(&self) -> Vec<Shot> {
        self.shots
            .iter()
            .zip(&self.selected)
            .filter(|(_, &p)| p)
            .map(|(s, _)| *s)
            .collect()
    }

    pub fn selected_frames(&self) -> usize {
        self.frame_mask.iter().map(|&v| v as usize).sum()
    }
}

/// `floor(ratio · N)` frames, with a little slack for ratios such as 0.29
/// whose products land just under an integer.
pub fn budget_for(n_frames: usize, ratio: f64) -> usize {
    ((ratio * n_frames as f64) + 1e-9).floor() as usize
}

/// Exact 0/1 knapsack over integer shot lengths.
///
/// Among optimal selections the lexicographically smallest index sequence
/// wins: the table is filled over suffixes so that reconstruction can walk
/// shots in increasing order and take each one whenever doing so stays
/// optimal. Shots scoring exactly zero are taken when they fit, so with such
/// scores the result is the smallest optimal sequence among maximal ones.
pub fn knapsack_select(scores: &ShotScores, budget: usize) -> Summary {
    let t = scores.shots.len();
    let cap = budget;
    // best[k][w]: best value using shots k.. with capacity w.
    let mut best = vec![vec![0.0f64; cap + 1]; t + 1];
    for k in (0..t).rev() {
        let (len, val) = (scores.lengths[k], scores.means[k]);
        for w in 0..=cap {
            let skip = best[k + 1][w];
            best[k][w] = if len <= w {
                skip.max(val + best[k + 1][w - len])
            } else {
                skip
            };
        }
    }

    let mut selected = vec![false; t];
    let mut w = cap;
    for k in 0..t {
        let len = scores.lengths[k];
        if len <= w && scores.means[k] + best[k + 1][w - len] >= best[k + 1][w] {
            selected[k] = true;
            w -= len;
        }
    }

    let n_frames = scores.shots.last().map_or(0, |s| s.end);
    let mut frame_mask = vec![0u8; n_frames];
    for (shot, _) in scores.shots.iter().zip(&selected).filter(|(_, &p)| p) {
        frame_mask[shot.start..shot.end].fill(1);
    }
    Summary {
        shots: scores.shots.clone(),
        value: best[0][cap],
        selected,
        frame_mask,
        budget,
    }
}

/// Where shot boundaries come from.
#[derive(Debug, Clone)]
pub enum ShotSource<'a> {
    Precomputed(&'a ChangePoints),
    Kts(KtsConfig),
}

/// Scores every frame in evaluation mode, segments the video and picks key
/// shots filling at most `floor(ratio · N)` frames.
pub fn generate_summary(
    x: ArrayView2<'_, f64>,
    params: &ModelParams,
    hyper: &HyperParams,
    ratio: f64,
    source: ShotSource<'_>,
) -> Result<(Summary, ForwardTrace)> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "summary ratio must lie in (0, 1], got {ratio}"
        )));
    }
    let trace = forward(x, params, hyper, Dropout::Off)?;
    let n = x.nrows();
    let shots = match source {
        ShotSource::Precomputed(cp) => {
            if cp.n_frames != n {
                return Err(Error::Shape(format!(
                    "change points are for {} frames, video has {n}",
                    cp.n_frames
                )));
            }
            shots_from_changepoints(cp)
        }
        ShotSource::Kts(config) => shots_from_changepoints(&kts_changepoints(x, &config)),
    };
    let scores = shot_scores(trace.scores.view(), &shots);
    Ok((knapsack_select(&scores, budget_for(n, ratio)), trace))
}
