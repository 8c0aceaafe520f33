//! Feature-subspace families for majority-vote ensembles.
//!
//! Four generators are provided:
//!
//! * [`fixed_split`]: disjoint, near-equal partition of the features.
//! * [`enumerate_k_subsets`]: every size-`k` subset, in lexicographic order.
//! * [`random_subspace`]: `h` distinct size-`k` subsets drawn uniformly.
//! * [`modulus_partition`]: unions of cyclic-shift orbits of size-`k` subsets
//!   under `i -> (i + 1) mod n`.
//!
//! The orbit machinery ([`shift`], [`period`], [`modulus_group`],
//! [`group_size_spectrum`], [`pad_dummy_features`]) is exposed on its own so
//! that the combinatorial facts the corruption bounds rest on can be checked
//! directly.

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};
use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::rng_from;

/// Default cap on the number of subsets [`enumerate_k_subsets`] will produce.
pub const DEFAULT_ENUMERATION_CAP: u64 = 1_000_000;

/// Below this many candidate subsets, samplers work on explicit ranks
/// instead of rejection sampling.
const EXPLICIT_SAMPLING_LIMIT: u64 = 1 << 22;

pub type FeatureIndex = usize;

/// A non-empty set of distinct feature indices, stored in ascending order.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Subspace(Vec<FeatureIndex>);

impl Subspace {
    pub fn new(mut indices: Vec<FeatureIndex>, n: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(invalid("a subspace needs at least one feature"));
        }
        indices.sort_unstable();
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(invalid("subspace indices must be distinct"));
        }
        if let Some(&last) = indices.last() {
            if last >= n {
                return Err(invalid(format!(
                    "feature index {last} out of range for {n} features"
                )));
            }
        }
        Ok(Self(indices))
    }

    /// Caller guarantees the indices are sorted, distinct and non-empty.
    pub(crate) fn from_sorted(indices: Vec<FeatureIndex>) -> Self {
        debug_assert!(!indices.is_empty());
        debug_assert!(indices.windows(2).all(|w| w[0] < w[1]));
        Self(indices)
    }

    pub fn indices(&self) -> &[FeatureIndex] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, f: FeatureIndex) -> bool {
        self.0.binary_search(&f).is_ok()
    }

    pub fn mask(&self, n: usize) -> BinaryMask {
        let mut bits = vec![false; n];
        for &i in &self.0 {
            bits[i] = true;
        }
        BinaryMask(bits)
    }
}

impl fmt::Display for Subspace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (pos, i) in self.0.iter().enumerate() {
            if pos > 0 {
                write!(f, ",")?;
            }
            write!(f, "{i}")?;
        }
        write!(f, "}}")
    }
}

/// Indicator vector of a subspace over all `n` features.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryMask(Vec<bool>);

impl BinaryMask {
    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn ones(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    /// Circular right shift by `j` positions.
    pub fn rotate_right(&self, j: usize) -> BinaryMask {
        let mut bits = self.0.clone();
        if !bits.is_empty() {
            let len = bits.len();
            bits.rotate_right(j % len);
        }
        BinaryMask(bits)
    }

    /// Smallest positive `j` with `rotate_right(j) == self`.
    pub fn period(&self) -> usize {
        let n = self.0.len();
        (1..=n)
            .find(|&j| n.is_multiple_of(j) && (0..n).all(|i| self.0[i] == self.0[(i + j) % n]))
            .unwrap_or(n)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    FixedSplit,
    KSubset,
    RandomSubspace,
    Modulus,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Method::FixedSplit => "fixed-split",
            Method::KSubset => "k-subset",
            Method::RandomSubspace => "random-subspace",
            Method::Modulus => "modulus",
        };
        f.write_str(s)
    }
}

/// Generation parameters recorded alongside a family.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FamilyParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_groups: Option<usize>,
    /// One generating subset per modulus group.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub generators: Vec<Subspace>,
    /// Feature order applied before splitting, when one was used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ordering: Option<Vec<FeatureIndex>>,
}

/// An ordered collection of subspaces over `n` features.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubspaceFamily {
    pub n: usize,
    pub method: Method,
    pub params: FamilyParams,
    #[serde(default)]
    pub dummy_indices: Vec<FeatureIndex>,
    pub subsets: Vec<Subspace>,
}

impl SubspaceFamily {
    /// Number of voting hypotheses.
    pub fn h(&self) -> usize {
        self.subsets.len()
    }

    /// Features excluding dummies.
    pub fn real_feature_count(&self) -> usize {
        self.n - self.dummy_indices.len()
    }

    pub fn is_dummy(&self, f: FeatureIndex) -> bool {
        self.dummy_indices.binary_search(&f).is_ok()
    }

    /// Indices of subset `i` that a learner may read.
    pub fn learnable(&self, i: usize) -> Vec<FeatureIndex> {
        self.subsets[i]
            .indices()
            .iter()
            .copied()
            .filter(|&f| !self.is_dummy(f))
            .collect()
    }

    pub fn min_subset_size(&self) -> usize {
        self.subsets.iter().map(Subspace::len).min().unwrap_or(0)
    }

    pub fn max_subset_size(&self) -> usize {
        self.subsets.iter().map(Subspace::len).max().unwrap_or(0)
    }

    /// Checks the structural invariants of the family.
    pub fn validate(&self) -> Result<()> {
        if self.subsets.is_empty() {
            return Err(invalid("family has no subsets"));
        }
        if self.dummy_indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("dummy indices must be sorted and distinct"));
        }
        if self.dummy_indices.iter().any(|&d| d >= self.n) {
            return Err(invalid("dummy index out of range"));
        }
        for s in &self.subsets {
            Subspace::new(s.indices().to_vec(), self.n)?;
        }
        match self.method {
            Method::FixedSplit => {
                let mut seen = vec![false; self.n];
                for s in &self.subsets {
                    for &i in s.indices() {
                        if seen[i] {
                            return Err(invalid(format!("feature {i} appears in two fixed-split subsets")));
                        }
                        seen[i] = true;
                    }
                }
                if let Some(missing) = (0..self.n).find(|&i| !seen[i] && !self.is_dummy(i)) {
                    return Err(invalid(format!("fixed split does not cover feature {missing}")));
                }
            }
            Method::Modulus | Method::KSubset | Method::RandomSubspace => {
                if self.min_subset_size() != self.max_subset_size() {
                    return Err(invalid(format!("{} family has subsets of unequal size", self.method)));
                }
                let distinct: HashSet<&Subspace> = self.subsets.iter().collect();
                if distinct.len() != self.subsets.len() {
                    return Err(invalid("family repeats a subset"));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let family: SubspaceFamily = serde_json::from_str(s)?;
        family.validate()?;
        Ok(family)
    }
}

// ---------------------------------------------------------------------------
// Combinatorics helpers

pub fn binomial(n: usize, k: usize) -> BigUint {
    if k > n {
        return BigUint::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigUint::one();
    for i in 0..k {
        acc *= BigUint::from(n - i);
        acc /= BigUint::from(i + 1);
    }
    acc
}

pub fn binomial_u64(n: usize, k: usize) -> Option<u64> {
    binomial(n, k).to_u64()
}

pub fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn divisors(n: usize) -> Vec<usize> {
    (1..=n).filter(|d| n.is_multiple_of(*d)).collect()
}

fn euler_phi(n: usize) -> usize {
    (1..=n).filter(|&i| gcd(i, n) == 1).count()
}

/// Advances `comb` to the next k-combination of `0..n` in lexicographic
/// order. Returns false after the last one.
fn next_combination(comb: &mut [usize], n: usize) -> bool {
    let k = comb.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if comb[i] < n - k + i {
            comb[i] += 1;
            for j in i + 1..k {
                comb[j] = comb[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// The combination of lexicographic rank `rank` among k-subsets of `0..n`.
fn unrank_combination(n: usize, k: usize, mut rank: u64) -> Vec<usize> {
    let mut out = Vec::with_capacity(k);
    let mut next = 0;
    for pos in 0..k {
        let remaining = k - pos - 1;
        let mut x = next;
        loop {
            let block = binomial_u64(n - x - 1, remaining).expect("rank fits u64");
            if rank < block {
                break;
            }
            rank -= block;
            x += 1;
        }
        out.push(x);
        next = x + 1;
    }
    out
}

fn check_k(n: usize, k: usize) -> Result<()> {
    if k == 0 || k > n {
        return Err(invalid(format!("subset size k={k} must satisfy 1 <= k <= n={n}")));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Feature orderings

/// A seed-determined permutation of `0..n`.
pub fn random_permutation(n: usize, seed: u64) -> Vec<FeatureIndex> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from(seed));
    order
}

fn check_permutation(order: &[FeatureIndex]) -> Result<()> {
    let mut seen = vec![false; order.len()];
    for &i in order {
        if i >= order.len() || seen[i] {
            return Err(invalid("ordering is not a permutation of 0..n"));
        }
        seen[i] = true;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Generators

/// Splits `n` features into `h` disjoint subsets after shuffling the feature
/// order with `ordering_seed`. The first `n mod h` subsets get one extra
/// feature.
pub fn fixed_split(n: usize, h: usize, ordering_seed: u64) -> Result<SubspaceFamily> {
    let mut family = fixed_split_with_order(&random_permutation(n, ordering_seed), h)?;
    family.params.seed = Some(ordering_seed);
    Ok(family)
}

/// Fixed split over an explicit feature ordering (for instance one ranked by
/// mutual information or domain knowledge).
pub fn fixed_split_with_order(order: &[FeatureIndex], h: usize) -> Result<SubspaceFamily> {
    let n = order.len();
    if h == 0 || h > n {
        return Err(invalid(format!("fixed split needs 1 <= h <= n, got h={h}, n={n}")));
    }
    check_permutation(order)?;
    let base = n / h;
    let extra = n % h;
    let mut subsets = Vec::with_capacity(h);
    let mut start = 0;
    for i in 0..h {
        let size = base + usize::from(i < extra);
        let mut idx = order[start..start + size].to_vec();
        idx.sort_unstable();
        subsets.push(Subspace::from_sorted(idx));
        start += size;
    }
    Ok(SubspaceFamily {
        n,
        method: Method::FixedSplit,
        params: FamilyParams {
            h: Some(h),
            ordering: Some(order.to_vec()),
            ..Default::default()
        },
        dummy_indices: Vec::new(),
        subsets,
    })
}

/// Fixed split where each group of functionally related features stays in a
/// single subset. Features not named in any group form singleton groups.
/// Groups are shuffled with `seed` and then assigned largest-first to the
/// currently smallest subset.
pub fn fixed_split_grouped(
    n: usize,
    groups: &[Vec<FeatureIndex>],
    h: usize,
    seed: u64,
) -> Result<SubspaceFamily> {
    let mut owner = vec![None; n];
    let mut units: Vec<Vec<usize>> = Vec::new();
    for g in groups {
        if g.is_empty() {
            continue;
        }
        for &f in g {
            if f >= n {
                return Err(invalid(format!("grouped feature {f} out of range for {n} features")));
            }
            if owner[f].is_some() {
                return Err(invalid(format!("feature {f} belongs to two groups")));
            }
            owner[f] = Some(units.len());
        }
        units.push(g.clone());
    }
    for (f, o) in owner.iter().enumerate() {
        if o.is_none() {
            units.push(vec![f]);
        }
    }
    if h == 0 || h > units.len() {
        return Err(invalid(format!(
            "grouped fixed split needs 1 <= h <= {} atomic groups, got h={h}",
            units.len()
        )));
    }
    units.shuffle(&mut rng_from(seed));
    // stable sort keeps the shuffled order among equal sizes
    units.sort_by_key(|u| std::cmp::Reverse(u.len()));
    let mut bins: Vec<Vec<usize>> = vec![Vec::new(); h];
    for unit in units {
        let target = (0..h).min_by_key(|&b| (bins[b].len(), b)).unwrap();
        bins[target].extend(unit);
    }
    let subsets = bins
        .into_iter()
        .map(|mut b| {
            b.sort_unstable();
            Subspace::from_sorted(b)
        })
        .collect();
    Ok(SubspaceFamily {
        n,
        method: Method::FixedSplit,
        params: FamilyParams {
            h: Some(h),
            seed: Some(seed),
            ..Default::default()
        },
        dummy_indices: Vec::new(),
        subsets,
    })
}

/// Every size-`k` subset of `0..n` in lexicographic order.
pub fn enumerate_k_subsets(n: usize, k: usize, cap: u64) -> Result<SubspaceFamily> {
    check_k(n, k)?;
    let count = binomial(n, k);
    if count > BigUint::from(cap) {
        return Err(Error::BudgetExceeded {
            count: count.to_string(),
            cap,
        });
    }
    let mut subsets = Vec::with_capacity(count.to_usize().unwrap_or(0));
    let mut comb: Vec<usize> = (0..k).collect();
    loop {
        subsets.push(Subspace::from_sorted(comb.clone()));
        if !next_combination(&mut comb, n) {
            break;
        }
    }
    Ok(SubspaceFamily {
        n,
        method: Method::KSubset,
        params: FamilyParams {
            h: Some(subsets.len()),
            k: Some(k),
            ..Default::default()
        },
        dummy_indices: Vec::new(),
        subsets,
    })
}

/// `h` distinct size-`k` subsets drawn uniformly without replacement.
pub fn random_subspace(n: usize, k: usize, h: usize, seed: u64) -> Result<SubspaceFamily> {
    check_k(n, k)?;
    if h == 0 {
        return Err(invalid("random subspace needs h >= 1"));
    }
    let total = binomial(n, k);
    if BigUint::from(h) > total {
        return Err(invalid(format!(
            "cannot draw h={h} distinct subsets: only C({n},{k})={total} exist"
        )));
    }
    let mut rng = rng_from(seed);
    let subsets: Vec<Subspace> = match total.to_u64() {
        Some(t) if t <= EXPLICIT_SAMPLING_LIMIT => index::sample(&mut rng, t as usize, h)
            .into_iter()
            .map(|r| Subspace::from_sorted(unrank_combination(n, k, r as u64)))
            .collect(),
        _ => {
            let mut seen = HashSet::with_capacity(h);
            let mut out = Vec::with_capacity(h);
            while out.len() < h {
                let mut idx = index::sample(&mut rng, n, k).into_vec();
                idx.sort_unstable();
                let s = Subspace::from_sorted(idx);
                if seen.insert(s.clone()) {
                    out.push(s);
                }
            }
            out
        }
    };
    Ok(SubspaceFamily {
        n,
        method: Method::RandomSubspace,
        params: FamilyParams {
            h: Some(h),
            k: Some(k),
            seed: Some(seed),
            ..Default::default()
        },
        dummy_indices: Vec::new(),
        subsets,
    })
}

// ---------------------------------------------------------------------------
// Cyclic orbits

/// Adds one to every index modulo `n`.
pub fn shift(b: &Subspace, n: usize) -> Subspace {
    shift_by(b, n, 1)
}

fn shift_by(b: &Subspace, n: usize, j: usize) -> Subspace {
    let mut idx: Vec<usize> = b.indices().iter().map(|&i| (i + j) % n).collect();
    idx.sort_unstable();
    Subspace::from_sorted(idx)
}

/// Orbit length of `b` under [`shift`]: the smallest positive `j` for which
/// shifting by `j` returns `b`. Always divides `n`.
pub fn period(b: &Subspace, n: usize) -> usize {
    divisors(n)
        .into_iter()
        .find(|&j| shift_by(b, n, j) == *b)
        .unwrap_or(n)
}

/// The distinct subsets reachable from `b` by repeated shifting, starting
/// with `b` itself.
pub fn modulus_group(b: &Subspace, n: usize) -> Vec<Subspace> {
    let mut group = vec![b.clone()];
    let mut cur = shift(b, n);
    while cur != *b {
        let next = shift(&cur, n);
        group.push(cur);
        cur = next;
    }
    group
}

/// Number of orbits of size-`k` subsets of `0..n` under cyclic shift
/// (binary necklaces of length `n` with `k` ones), by Burnside's lemma.
pub fn orbit_count(n: usize, k: usize) -> BigUint {
    if k == 0 || k > n {
        return BigUint::zero();
    }
    let g = gcd(n, k);
    let sum: BigUint = divisors(g)
        .into_iter()
        .map(|d| BigUint::from(euler_phi(d)) * binomial(n / d, k / d))
        .sum();
    sum / BigUint::from(n)
}

/// Group sizes attainable by orbits of size-`k` subsets of `0..n`.
///
/// For `k < n` this is `{ n/q : q divides gcd(n, k) }`. When `k == n` the
/// only subset is all of `0..n`, whose orbit has size 1, so `{1}` is
/// returned.
pub fn group_size_spectrum(n: usize, k: usize) -> BTreeSet<usize> {
    if k == 0 || k > n {
        return BTreeSet::new();
    }
    if k == n {
        return BTreeSet::from([1]);
    }
    divisors(gcd(n, k)).into_iter().map(|q| n / q).collect()
}

/// A generator whose orbit has size `n/q`: within each of the `q` blocks of
/// length `n/q`, the first `k/q` positions are set.
pub fn pattern_generator(n: usize, k: usize, q: usize) -> Result<Subspace> {
    check_k(n, k)?;
    if q == 0 || !n.is_multiple_of(q) || !k.is_multiple_of(q) {
        return Err(invalid(format!("q={q} must divide both n={n} and k={k}")));
    }
    let block = n / q;
    let ones = k / q;
    let idx = (0..q)
        .flat_map(|b| (0..ones).map(move |i| b * block + i))
        .collect();
    Ok(Subspace::from_sorted(idx))
}

/// Every orbit of size-`k` subsets of `0..n`, generated from the
/// lexicographically smallest uncovered subset each time. Refuses when
/// `C(n, k)` exceeds `cap`.
pub fn full_modulus_partition(n: usize, k: usize, cap: u64) -> Result<Vec<Vec<Subspace>>> {
    let all = enumerate_k_subsets(n, k, cap)?;
    let mut covered: HashSet<Subspace> = HashSet::new();
    let mut groups = Vec::new();
    for s in all.subsets {
        if covered.contains(&s) {
            continue;
        }
        let g = modulus_group(&s, n);
        covered.extend(g.iter().cloned());
        groups.push(g);
    }
    Ok(groups)
}

/// Union of `num_groups` distinct orbits of size-`k` subsets of `0..n`.
///
/// Each generator is drawn uniformly (under `seed`) from the size-`k` subsets
/// not already covered by earlier groups.
pub fn modulus_partition(n: usize, k: usize, num_groups: usize, seed: u64) -> Result<SubspaceFamily> {
    check_k(n, k)?;
    if num_groups == 0 {
        return Err(invalid("modulus partition needs at least one group"));
    }
    let available = orbit_count(n, k);
    if BigUint::from(num_groups) > available {
        return Err(invalid(format!(
            "requested {num_groups} groups but P({n},{k}) has only {available}"
        )));
    }
    let mut rng = rng_from(seed);
    let mut covered: HashSet<Subspace> = HashSet::new();
    let mut generators = Vec::with_capacity(num_groups);
    let mut subsets = Vec::new();
    let take = |g: Subspace, covered: &mut HashSet<Subspace>, subsets: &mut Vec<Subspace>, generators: &mut Vec<Subspace>| {
        let group = modulus_group(&g, n);
        covered.extend(group.iter().cloned());
        subsets.extend(group);
        generators.push(g);
    };
    match binomial(n, k).to_u64() {
        Some(t) if t <= EXPLICIT_SAMPLING_LIMIT => {
            // The first uncovered entry of a uniform shuffle is uniform over
            // the uncovered subsets at every step.
            let mut ranks: Vec<u64> = (0..t).collect();
            ranks.shuffle(&mut rng);
            for r in ranks {
                if generators.len() == num_groups {
                    break;
                }
                let s = Subspace::from_sorted(unrank_combination(n, k, r));
                if !covered.contains(&s) {
                    take(s, &mut covered, &mut subsets, &mut generators);
                }
            }
        }
        _ => {
            while generators.len() < num_groups {
                let mut idx = index::sample(&mut rng, n, k).into_vec();
                idx.sort_unstable();
                let s = Subspace::from_sorted(idx);
                if !covered.contains(&s) {
                    take(s, &mut covered, &mut subsets, &mut generators);
                }
            }
        }
    }
    Ok(SubspaceFamily {
        n,
        method: Method::Modulus,
        params: FamilyParams {
            h: Some(subsets.len()),
            k: Some(k),
            seed: Some(seed),
            num_groups: Some(num_groups),
            generators,
            ..Default::default()
        },
        dummy_indices: Vec::new(),
        subsets,
    })
}

/// Modulus family built from explicit generators. Generators whose orbit was
/// already produced by an earlier generator are rejected.
pub fn modulus_from_generators(n: usize, generators: &[Subspace]) -> Result<SubspaceFamily> {
    let k = generators
        .first()
        .map(Subspace::len)
        .ok_or_else(|| invalid("at least one generator is required"))?;
    let mut covered: HashSet<Subspace> = HashSet::new();
    let mut subsets = Vec::new();
    for g in generators {
        let g = Subspace::new(g.indices().to_vec(), n)?;
        if g.len() != k {
            return Err(invalid("all modulus generators must have the same size"));
        }
        if covered.contains(&g) {
            return Err(invalid(format!("generator {g} lies in an earlier group")));
        }
        let group = modulus_group(&g, n);
        covered.extend(group.iter().cloned());
        subsets.extend(group);
    }
    Ok(SubspaceFamily {
        n,
        method: Method::Modulus,
        params: FamilyParams {
            h: Some(subsets.len()),
            k: Some(k),
            num_groups: Some(generators.len()),
            generators: generators.to_vec(),
            ..Default::default()
        },
        dummy_indices: Vec::new(),
        subsets,
    })
}

/// Pads `n` up to a multiple of `k`. Returns the padded count and the dummy
/// indices, which are placed at the end (`n..n'`).
pub fn pad_dummy_features(n: usize, k: usize) -> Result<(usize, Vec<FeatureIndex>)> {
    check_k(n, k)?;
    let rem = n % k;
    if rem == 0 {
        return Ok((n, Vec::new()));
    }
    let padded = n + k - rem;
    Ok((padded, (n..padded).collect()))
}

/// Modulus family of group size `ceil(n/k)` over the padded feature range.
///
/// With `g = n'/k` the single group consists of the residue classes
/// `{r, r+g, r+2g, ...}`, i.e. a disjoint split of the padded features.
/// Dummies occupy the last `n' - n` indices, so each subset holds at most one
/// of them whenever `n' - n <= g`.
pub fn modulus_padded(n: usize, k: usize) -> Result<SubspaceFamily> {
    let (padded, dummies) = pad_dummy_features(n, k)?;
    let generator = pattern_generator(padded, k, k)?;
    let mut family = modulus_from_generators(padded, &[generator])?;
    family.dummy_indices = dummies;
    if family.subsets.iter().any(|s| s.indices().iter().all(|&i| i >= n)) {
        return Err(invalid(format!(
            "padding n={n} to {padded} leaves a subset with only dummy features"
        )));
    }
    Ok(family)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sub(idx: &[usize], n: usize) -> Subspace {
        Subspace::new(idx.to_vec(), n).unwrap()
    }

    fn sizes(f: &SubspaceFamily) -> Vec<usize> {
        let mut s: Vec<usize> = f.subsets.iter().map(Subspace::len).collect();
        s.sort_unstable_by(|a, b| b.cmp(a));
        s
    }

    #[test]
    fn subspace_rejects_bad_input() {
        assert!(Subspace::new(vec![], 3).is_err());
        assert!(Subspace::new(vec![1, 1], 3).is_err());
        assert!(Subspace::new(vec![3], 3).is_err());
        assert_eq!(sub(&[2, 0], 3).indices(), &[0, 2]);
    }

    #[test]
    fn fixed_split_sizes() {
        let f = fixed_split(900, 9, 1).unwrap();
        assert_eq!(sizes(&f), vec![100; 9]);
        f.validate().unwrap();

        assert_eq!(sizes(&fixed_split(10, 3, 5).unwrap()), vec![4, 3, 3]);
        assert_eq!(sizes(&fixed_split(5, 5, 5).unwrap()), vec![1; 5]);
        assert_eq!(sizes(&fixed_split(409, 25, 0).unwrap()).iter().filter(|&&s| s == 17).count(), 9);
    }

    #[test]
    fn fixed_split_errors() {
        assert!(matches!(fixed_split(5, 6, 0), Err(Error::InvalidParameter(_))));
        assert!(matches!(fixed_split(5, 0, 0), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn fixed_split_respects_explicit_order() {
        let f = fixed_split_with_order(&[3, 2, 1, 0], 2).unwrap();
        assert_eq!(f.subsets, vec![sub(&[2, 3], 4), sub(&[0, 1], 4)]);
        assert!(fixed_split_with_order(&[0, 0, 1], 2).is_err());
    }

    #[test]
    fn grouped_split_keeps_groups_together() {
        let groups = vec![vec![0, 1, 2], vec![5, 9]];
        let f = fixed_split_grouped(12, &groups, 4, 3).unwrap();
        f.validate().unwrap();
        for g in &groups {
            let owner: BTreeSet<usize> = g
                .iter()
                .map(|&x| f.subsets.iter().position(|s| s.contains(x)).unwrap())
                .collect();
            assert_eq!(owner.len(), 1, "group {g:?} split across subsets");
        }
        assert!(fixed_split_grouped(4, &[vec![0, 1, 2, 3]], 2, 0).is_err());
    }

    #[test]
    fn k_subsets_enumeration() {
        let f = enumerate_k_subsets(4, 2, 100).unwrap();
        assert_eq!(f.h(), 6);
        assert_eq!(f.subsets[0], sub(&[0, 1], 4));
        assert_eq!(f.subsets[5], sub(&[2, 3], 4));
        assert!(f.subsets.windows(2).all(|w| w[0] < w[1]));

        let f = enumerate_k_subsets(5, 5, 100).unwrap();
        assert_eq!(f.subsets, vec![sub(&[0, 1, 2, 3, 4], 5)]);

        let f = enumerate_k_subsets(3, 1, 100).unwrap();
        assert_eq!(f.subsets, vec![sub(&[0], 3), sub(&[1], 3), sub(&[2], 3)]);
    }

    #[test]
    fn k_subsets_cap() {
        match enumerate_k_subsets(30, 15, 1000) {
            Err(Error::BudgetExceeded { count, cap }) => {
                assert_eq!(count, "155117520");
                assert_eq!(cap, 1000);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unrank_matches_enumeration() {
        let f = enumerate_k_subsets(7, 3, 100).unwrap();
        for (r, s) in f.subsets.iter().enumerate() {
            assert_eq!(unrank_combination(7, 3, r as u64), s.indices());
        }
    }

    #[test]
    fn random_subspace_contract() {
        let f = random_subspace(10, 3, 5, 42).unwrap();
        assert_eq!(f.h(), 5);
        f.validate().unwrap();
        assert_eq!(f, random_subspace(10, 3, 5, 42).unwrap());
        assert_eq!(f.to_json().unwrap(), random_subspace(10, 3, 5, 42).unwrap().to_json().unwrap());
        assert!(matches!(random_subspace(4, 2, 7, 0), Err(Error::InvalidParameter(_))));
        // every subset, h = C(n,k)
        assert_eq!(random_subspace(4, 2, 6, 0).unwrap().h(), 6);
    }

    #[test]
    fn random_subspace_large_space() {
        let f = random_subspace(1000, 100, 50, 1).unwrap();
        f.validate().unwrap();
        assert!(f.subsets.iter().all(|s| s.len() == 100));
    }

    #[test]
    fn shift_examples() {
        assert_eq!(shift(&sub(&[0, 4, 8], 10), 10), sub(&[1, 5, 9], 10));
        assert_eq!(shift(&sub(&[1, 5, 9], 10), 10), sub(&[0, 2, 6], 10));
        assert_eq!(shift(&sub(&[0, 1, 2], 3), 3), sub(&[0, 1, 2], 3));
    }

    #[test]
    fn period_examples() {
        let b = sub(&[0, 1, 5, 6], 10);
        let mask = b.mask(10);
        assert_eq!(
            mask.bits().iter().map(|&x| u8::from(x)).collect::<Vec<_>>(),
            vec![1, 1, 0, 0, 0, 1, 1, 0, 0, 0]
        );
        assert_eq!(
            mask.rotate_right(2).bits().iter().map(|&x| u8::from(x)).collect::<Vec<_>>(),
            vec![0, 0, 1, 1, 0, 0, 0, 1, 1, 0]
        );
        assert_eq!(period(&b, 10), 5);
        assert_eq!(mask.period(), 5);
        assert_eq!(period(&sub(&[0, 1, 2, 3, 4], 5), 5), 1);
        for s in enumerate_k_subsets(10, 3, 1000).unwrap().subsets {
            assert_eq!(period(&s, 10), 10);
        }
    }

    #[test]
    fn group_examples() {
        assert_eq!(modulus_group(&sub(&[0, 2], 4), 4), vec![sub(&[0, 2], 4), sub(&[1, 3], 4)]);
        assert_eq!(modulus_group(&sub(&[0, 4, 8], 10), 10).len(), 10);
        assert_eq!(
            modulus_group(&sub(&[0, 3], 6), 6),
            vec![sub(&[0, 3], 6), sub(&[1, 4], 6), sub(&[2, 5], 6)]
        );
    }

    #[test]
    fn partition_examples() {
        let f = modulus_partition(10, 3, 1, 7).unwrap();
        assert_eq!(f.h(), 10);
        f.validate().unwrap();

        let groups = full_modulus_partition(4, 2, 1000).unwrap();
        let mut gs: Vec<usize> = groups.iter().map(Vec::len).collect();
        gs.sort_unstable();
        assert_eq!(gs, vec![2, 4]);

        let all = modulus_partition(4, 2, 2, 3).unwrap();
        assert_eq!(all.h(), 6);
        assert!(modulus_partition(4, 2, 3, 3).is_err());
    }

    #[test]
    fn partition_large_n_uses_rejection() {
        let f = modulus_partition(64, 5, 3, 11).unwrap();
        assert_eq!(f.h(), 3 * 64);
        f.validate().unwrap();
    }

    #[test]
    fn orbit_counts() {
        for n in 1..=12 {
            for k in 1..=n {
                let groups = full_modulus_partition(n, k, 10_000).unwrap();
                assert_eq!(orbit_count(n, k), BigUint::from(groups.len()), "n={n} k={k}");
            }
        }
    }

    #[test]
    fn spectrum_examples() {
        assert_eq!(group_size_spectrum(24, 9), BTreeSet::from([24, 8]));
        assert_eq!(group_size_spectrum(10, 3), BTreeSet::from([10]));
        assert_eq!(group_size_spectrum(12, 6), BTreeSet::from([12, 6, 4, 2]));
        assert_eq!(group_size_spectrum(5, 5), BTreeSet::from([1]));
    }

    #[test]
    fn spectrum_from_example_generator() {
        let b = sub(&[0, 4, 7, 8, 12, 15, 16, 20, 23], 24);
        assert_eq!(period(&b, 24), 8);
    }

    #[test]
    fn pattern_generators_realize_sizes() {
        for q in [1, 2, 3, 6] {
            let g = pattern_generator(12, 6, q).unwrap();
            assert_eq!(modulus_group(&g, 12).len(), 12 / q);
        }
        assert!(pattern_generator(12, 6, 4).is_err());
    }

    #[test]
    fn padding() {
        assert_eq!(pad_dummy_features(10, 4).unwrap(), (12, vec![10, 11]));
        assert_eq!(pad_dummy_features(12, 4).unwrap(), (12, vec![]));
        assert_eq!(pad_dummy_features(10, 5).unwrap(), (10, vec![]));

        let f = modulus_padded(10, 4).unwrap();
        assert_eq!(f.n, 12);
        assert_eq!(f.h(), 3);
        for s in &f.subsets {
            assert!(s.indices().iter().filter(|&&i| f.is_dummy(i)).count() <= 1);
        }
        f.validate().unwrap();

        let f = modulus_padded(10, 5).unwrap();
        assert_eq!(f.h(), 2);
    }

    #[test]
    fn family_json_round_trip() {
        let f = modulus_padded(10, 4).unwrap();
        let back = SubspaceFamily::from_json(&f.to_json().unwrap()).unwrap();
        assert_eq!(f, back);
        let v: serde_json::Value = serde_json::from_str(&f.to_json().unwrap()).unwrap();
        assert_eq!(v["method"], "modulus");
        assert_eq!(v["dummy_indices"], serde_json::json!([10, 11]));
        assert!(v["subsets"].is_array());
    }
}
