//! How many voting hypotheses an adversary can corrupt with `l` features.
//!
//! A hypothesis is corrupt when its subspace contains at least one corrupt
//! feature. Each family type has its own route from `l` to the corrupt count
//! `c`:
//!
//! | family          | route                                   | exactness |
//! |-----------------|-----------------------------------------|-----------|
//! | fixed split     | `c = min(l, h)`                         | analytic  |
//! | all k-subsets   | `c = C(n,k) - C(n-l,k)`                 | analytic  |
//! | modulus groups  | `c = floor(h k l / n)`                  | analytic  |
//! | random subspace | max-coverage search over feature sets   | search    |
//!
//! Search results that had to fall back to the greedy heuristic are tagged
//! [`Exactness::GreedyLowerBound`]; they may understate the adversary and
//! must not feed a certificate.

use std::io::Write;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::subspaces::{binomial, Method, SubspaceFamily};

/// Default limit on candidate feature sets visited by the exact search.
pub const DEFAULT_SEARCH_BUDGET: u64 = 10_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Exactness {
    Analytic,
    ExactSearch,
    GreedyLowerBound,
}

impl Exactness {
    /// Whether a certificate may be built on this count.
    pub fn is_sound(self) -> bool {
        !matches!(self, Exactness::GreedyLowerBound)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Exactness::Analytic => "analytic",
            Exactness::ExactSearch => "exact-search",
            Exactness::GreedyLowerBound => "greedy-lower-bound",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorruptionBound {
    pub l: usize,
    /// Maximum number of corrupt hypotheses.
    pub c: usize,
    pub h: usize,
    /// `c / h`.
    pub r: f64,
    pub exactness: Exactness,
}

impl CorruptionBound {
    fn new(l: usize, c: usize, h: usize, exactness: Exactness) -> Self {
        let c = c.min(h);
        let r = if h == 0 { 0.0 } else { c as f64 / h as f64 };
        Self { l, c, h, r, exactness }
    }
}

fn ratio(num: usize, den: usize) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

/// Every corrupt feature lies in exactly one subset of a fixed split.
pub fn fixed_split_bound(_n: usize, h: usize, l: usize) -> CorruptionBound {
    CorruptionBound::new(l, l.min(h), h, Exactness::Analytic)
}

/// Fraction of all size-`k` subsets of `n` features that contain at least
/// one of `l` fixed features: `1 - prod_{i<l} (n-k-i)/(n-i)`.
pub fn ksubset_corrupt_fraction(n: usize, k: usize, l: usize) -> BigRational {
    let l = l.min(n);
    if l > n.saturating_sub(k) {
        return BigRational::one();
    }
    let mut clean = BigRational::one();
    for i in 0..l {
        clean *= ratio(n - k - i, n - i);
    }
    BigRational::one() - clean
}

/// Lower bound on the corrupt fraction that an adversary can force on any
/// family whose subsets each hold at least `k` of the `n` features. Greedy
/// pigeonhole: after `i` corruptions some remaining feature lies in at least
/// a `k/(n-i)` share of the still-clean hypotheses.
pub fn guaranteed_corrupt_fraction(n: usize, k: usize, l: usize) -> BigRational {
    ksubset_corrupt_fraction(n, k, l)
}

/// Analytic bound for the full k-subset family.
pub fn ksubset_bound(n: usize, k: usize, l: usize) -> Result<CorruptionBound> {
    let h = binomial(n, k)
        .to_usize()
        .ok_or_else(|| invalid(format!("C({n},{k}) does not fit in memory-sized integers")))?;
    let clean = binomial(n - l.min(n), k).to_usize().unwrap_or(0);
    Ok(CorruptionBound::new(l, h - clean, h, Exactness::Analytic))
}

/// `ln(1/(1-r)) n/k - 1/2`, the closed-form approximation of the largest
/// tolerable `l` at corrupt fraction `r`. Tight when `n >> k`.
pub fn ksubset_tolerance_approx(n: usize, k: usize, r: f64) -> Result<f64> {
    if !(r > 0.0 && r < 1.0) {
        return Err(invalid(format!("corrupt fraction r={r} must lie in (0, 1)")));
    }
    if k == 0 {
        return Err(invalid("k must be positive"));
    }
    Ok((1.0 / (1.0 - r)).ln() * n as f64 / k as f64 - 0.5)
}

/// Largest `l` whose exact k-subset corrupt fraction does not exceed `r`.
pub fn ksubset_max_tolerable(n: usize, k: usize, r: &BigRational) -> usize {
    // the fraction is nondecreasing in l
    let (mut lo, mut hi) = (0usize, n);
    while lo < hi {
        let mid = (lo + hi).div_ceil(2);
        if ksubset_corrupt_fraction(n, k, mid) <= *r {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    lo
}

/// Bound for unions of cyclic-shift groups over `n` features: each feature
/// sits in at most `k` of every `n` shifts, so `r <= k l / n`.
pub fn modulus_bound(n: usize, k: usize, l: usize, h: usize) -> CorruptionBound {
    let c = (h * k * l).checked_div(n).unwrap_or(h);
    CorruptionBound::new(l, c, h, Exactness::Analytic)
}

/// Probability that a uniformly random size-`k` subset of `n` features
/// contains `j` given features, as an exact rational.
pub fn coverage_probability_exact(n: usize, k: usize, j: usize) -> BigRational {
    if j > k {
        return BigRational::zero();
    }
    (0..j).fold(BigRational::one(), |acc, i| acc * ratio(k - i, n - i))
}

pub fn coverage_probability(n: usize, k: usize, j: usize) -> f64 {
    coverage_probability_exact(n, k, j).to_f64().unwrap_or(f64::NAN)
}

// ---------------------------------------------------------------------------
// Max-coverage search

struct Incidence {
    /// Hypothesis bitsets, one per attackable feature, sorted by degree.
    sets: Vec<Vec<u64>>,
    degrees: Vec<usize>,
}

impl Incidence {
    fn new(family: &SubspaceFamily) -> Self {
        let h = family.h();
        let words = h.div_ceil(64);
        let mut by_feature = vec![vec![0u64; words]; family.n];
        let mut degree = vec![0usize; family.n];
        for (j, s) in family.subsets.iter().enumerate() {
            for &f in s.indices() {
                by_feature[f][j / 64] |= 1 << (j % 64);
                degree[f] += 1;
            }
        }
        let mut features: Vec<usize> = (0..family.n)
            .filter(|&f| degree[f] > 0 && !family.is_dummy(f))
            .collect();
        features.sort_by(|&a, &b| degree[b].cmp(&degree[a]).then(a.cmp(&b)));
        Self {
            degrees: features.iter().map(|&f| degree[f]).collect(),
            sets: features.into_iter().map(|f| std::mem::take(&mut by_feature[f])).collect(),
        }
    }

    fn words(&self) -> usize {
        self.sets.first().map_or(0, Vec::len)
    }
}

fn popcount(bits: &[u64]) -> usize {
    bits.iter().map(|w| w.count_ones() as usize).sum()
}

/// Greedy max coverage: repeatedly corrupt the feature that hits the most
/// still-clean hypotheses. Never exceeds the true maximum.
pub fn greedy_corrupt_count(family: &SubspaceFamily, l: usize) -> usize {
    let inc = Incidence::new(family);
    let mut covered = vec![0u64; inc.words()];
    let mut count = 0;
    for _ in 0..l {
        let best = inc
            .sets
            .iter()
            .map(|s| s.iter().zip(&covered).map(|(a, b)| (a & !b).count_ones() as usize).sum::<usize>())
            .enumerate()
            .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)));
        match best {
            Some((i, gain)) if gain > 0 => {
                for (c, s) in covered.iter_mut().zip(&inc.sets[i]) {
                    *c |= s;
                }
                count += gain;
            }
            _ => break,
        }
    }
    count
}

struct BranchAndBound<'a> {
    inc: &'a Incidence,
    best: usize,
    unions: Vec<Vec<u64>>,
}

impl BranchAndBound<'_> {
    fn run(&mut self, start: usize, depth: usize, slots: usize, current: usize) {
        if slots == 0 {
            self.best = self.best.max(current);
            return;
        }
        let nf = self.inc.sets.len();
        for i in start..=nf - slots {
            // degrees are sorted, so the next `slots` entries bound any
            // completion from here on
            let optimistic: usize = current + self.inc.degrees[i..i + slots].iter().sum::<usize>();
            if optimistic <= self.best {
                break;
            }
            let (head, tail) = self.unions.split_at_mut(depth + 1);
            let next = &mut tail[0];
            for ((n, u), s) in next.iter_mut().zip(&head[depth]).zip(&self.inc.sets[i]) {
                *n = u | s;
            }
            let count = popcount(next);
            self.best = self.best.max(count);
            self.run(i + 1, depth + 1, slots - 1, count);
        }
    }
}

/// Exact maximum number of hypotheses hit by some set of at most `l`
/// features, or `None` when more than `budget` candidate sets would need to
/// be considered.
pub fn exact_corrupt_count(family: &SubspaceFamily, l: usize, budget: u64) -> Option<usize> {
    let inc = Incidence::new(family);
    let nf = inc.sets.len();
    let slots = l.min(nf);
    if slots == 0 {
        return Some(0);
    }
    if slots == nf {
        let mut all = vec![0u64; inc.words()];
        for s in &inc.sets {
            for (a, b) in all.iter_mut().zip(s) {
                *a |= b;
            }
        }
        return Some(popcount(&all));
    }
    if binomial(nf, slots) > num_bigint::BigUint::from(budget) {
        return None;
    }
    let mut search = BranchAndBound {
        inc: &inc,
        best: greedy_corrupt_count(family, l),
        unions: vec![vec![0u64; inc.words()]; slots + 1],
    };
    search.run(0, 0, slots, 0);
    Some(search.best)
}

/// Worst-case corrupt count for an arbitrary family: exact when the search
/// fits `budget`, greedy otherwise.
pub fn worst_case_corrupt_count(family: &SubspaceFamily, l: usize, budget: u64) -> CorruptionBound {
    let h = family.h();
    match exact_corrupt_count(family, l, budget) {
        Some(c) => CorruptionBound::new(l, c, h, Exactness::ExactSearch),
        None => CorruptionBound::new(l, greedy_corrupt_count(family, l), h, Exactness::GreedyLowerBound),
    }
}

/// Picks the tightest sound route for the family's generation method.
pub fn family_bound(family: &SubspaceFamily, l: usize, budget: u64) -> CorruptionBound {
    let h = family.h();
    let uniform_k = family.min_subset_size() == family.max_subset_size();
    match family.method {
        Method::FixedSplit => fixed_split_bound(family.n, h, l),
        Method::Modulus if uniform_k => modulus_bound(family.n, family.max_subset_size(), l, h),
        Method::KSubset
            if uniform_k
                && family.dummy_indices.is_empty()
                && binomial(family.n, family.max_subset_size()) == num_bigint::BigUint::from(h) =>
        {
            ksubset_bound(family.n, family.max_subset_size(), l)
                .unwrap_or_else(|_| worst_case_corrupt_count(family, l, budget))
        }
        _ => worst_case_corrupt_count(family, l, budget),
    }
}

/// Writes `l,c,r,exactness` rows.
pub fn write_bound_csv<W: Write>(bounds: &[CorruptionBound], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["l", "c", "r", "exactness"])?;
    for b in bounds {
        w.write_record([
            b.l.to_string(),
            b.c.to_string(),
            format!("{:.6}", b.r),
            b.exactness.as_str().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
