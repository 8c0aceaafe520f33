//! Worst-case error certificates from clean test margins.
//!
//! If at most `c` hypotheses can be corrupted, each one moves the margin of
//! the true label down by at most two. So every clean instance with margin
//! above `2c` stays correct, and the fraction with margin at most `2c`
//! bounds the corrupted error on the sample. Hoeffding and the exact
//! binomial limit turn that fraction into a bound on the expected error.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::binomial;
use crate::data::Dataset;
use crate::ensemble::{VoteVector, VotingEnsemble};
use crate::error::{invalid, Error, Result};
use crate::robustness::CorruptionBound;

/// Votes for `y` minus the strongest rival's votes.
pub fn margin(s: &VoteVector, y: usize) -> i64 {
    let c = s.counts();
    let rival = (0..c.len()).filter(|&j| j != y).map(|j| c[j]).max().unwrap_or(0);
    c[y] as i64 - rival as i64
}

/// 1 when `c` corrupt hypotheses could push the margin to zero or below.
pub fn corrupt_loss(s: &VoteVector, y: usize, c: usize) -> u8 {
    loss_at(margin(s, y), c)
}

fn loss_at(delta: i64, c: usize) -> u8 {
    u8::from(delta - 2 * c as i64 <= 0)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarginHistogram {
    pub h: usize,
    pub m: u64,
    pub counts: BTreeMap<i64, u64>,
}

impl MarginHistogram {
    pub fn from_margins(h: usize, margins: impl IntoIterator<Item = i64>) -> Result<Self> {
        let mut counts = BTreeMap::new();
        let mut m = 0;
        for d in margins {
            if d.unsigned_abs() > h as u64 {
                return Err(invalid(format!("margin {d} outside [-{h}, {h}]")));
            }
            *counts.entry(d).or_insert(0) += 1;
            m += 1;
        }
        if m == 0 {
            return Err(Error::EmptyDataset);
        }
        Ok(Self { h, m, counts })
    }

    /// Instances whose margin is at most `threshold`.
    pub fn at_most(&self, threshold: i64) -> u64 {
        self.counts.range(..=threshold).map(|(_, &c)| c).sum()
    }

    /// Writes `delta,count` rows in increasing margin order.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["delta", "count"])?;
        for (d, c) in &self.counts {
            w.write_record([d.to_string(), c.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn histogram_from_votes(h: usize, votes: &[VoteVector], labels: &[usize]) -> Result<MarginHistogram> {
    if votes.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            got: votes.len(),
        });
    }
    MarginHistogram::from_margins(h, votes.iter().zip(labels).map(|(s, &y)| margin(s, y)))
}

/// Margin histogram of `ensemble` over a clean test set.
pub fn build_histogram(ensemble: &VotingEnsemble, test: &Dataset) -> Result<MarginHistogram> {
    if test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let votes = ensemble.vote_matrix(test)?;
    histogram_from_votes(ensemble.h(), &votes, test.labels())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertifiedBound {
    pub c: usize,
    pub losses: u64,
    pub m: u64,
    pub empirical_loss: f64,
    pub epsilon: f64,
    pub hoeffding_bound: f64,
    pub binomial_bound: f64,
    pub confidence: f64,
}

/// Slack `eps` with `exp(-2 m eps^2) = 1 - confidence`.
pub fn hoeffding_epsilon(m: u64, confidence: f64) -> Result<f64> {
    check_confidence(confidence)?;
    if m == 0 {
        return Err(Error::EmptyDataset);
    }
    Ok(((1.0 / (1.0 - confidence)).ln() / (2.0 * m as f64)).sqrt())
}

fn check_confidence(confidence: f64) -> Result<()> {
    if confidence > 0.0 && confidence < 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("confidence {confidence} must lie in (0, 1)")))
    }
}

pub fn certified_bound(hist: &MarginHistogram, c: usize, confidence: f64) -> Result<CertifiedBound> {
    let epsilon = hoeffding_epsilon(hist.m, confidence)?;
    let losses = hist.at_most(2 * c as i64);
    let empirical_loss = losses as f64 / hist.m as f64;
    Ok(CertifiedBound {
        c,
        losses,
        m: hist.m,
        empirical_loss,
        epsilon,
        hoeffding_bound: (empirical_loss + epsilon).min(1.0),
        binomial_bound: binomial::one_sided_upper(losses, hist.m, confidence)?,
        confidence,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub l: usize,
    pub bound: CertifiedBound,
}

/// Certified bounds for `l = 0..=l_max`, with `l -> c` supplied by
/// `family_bound`. Heuristic corrupt counts are refused.
pub fn bound_curve(
    hist: &MarginHistogram,
    mut family_bound: impl FnMut(usize) -> CorruptionBound,
    l_max: usize,
    confidence: f64,
) -> Result<Vec<CurvePoint>> {
    check_confidence(confidence)?;
    let mut curve: Vec<CurvePoint> = Vec::with_capacity(l_max + 1);
    for l in 0..=l_max {
        let fb = family_bound(l);
        if !fb.exactness.is_sound() {
            return Err(Error::UnsoundCertificate { l });
        }
        // c is nondecreasing in l; enforce it so the curve is too
        let c = curve.last().map_or(fb.c, |p| p.bound.c.max(fb.c));
        curve.push(CurvePoint {
            l,
            bound: certified_bound(hist, c, confidence)?,
        });
    }
    Ok(curve)
}

/// Writes `l,c,empirical,hoeffding,binomial` rows.
pub fn write_curve_csv<W: Write>(curve: &[CurvePoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["l", "c", "empirical", "hoeffding", "binomial"])?;
    for p in curve {
        w.write_record([
            p.l.to_string(),
            p.bound.c.to_string(),
            format!("{:.6}", p.bound.empirical_loss),
            format!("{:.6}", p.bound.hoeffding_bound),
            format!("{:.6}", p.bound.binomial_bound),
        ])?;
    }
    w.flush()?;
    Ok(())
}
