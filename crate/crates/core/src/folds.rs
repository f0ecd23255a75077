//! Cross-validation fold plans with group integrity.
//!
//! Speaker mode partitions speakers into `k` folds, keeping each fold's tone
//! distribution close to the global one. Dialect mode holds out one dialect
//! per evaluation instance.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::ToneToken;

pub const DEFAULT_K: usize = 4;
pub const DEFAULT_SEED: u64 = 42;

/// Largest possible L1 distance between two distributions; used for empty folds.
const MAX_DIVERGENCE: f64 = 2.0;
const EPS: f64 = 1e-12;
const MAX_REFINE_PASSES: usize = 200;
const COVER_SEARCH_BUDGET: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FoldMode {
    SpeakerIndependent,
    DialectIndependent,
}

impl FoldMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            FoldMode::SpeakerIndependent => "speaker_independent",
            FoldMode::DialectIndependent => "dialect_independent",
        }
    }

    pub fn group_of<'a>(&self, token: &'a ToneToken) -> &'a str {
        match self {
            FoldMode::SpeakerIndependent => &token.speaker_id,
            FoldMode::DialectIndependent => &token.dialect,
        }
    }
}

impl fmt::Display for FoldMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One train/test split: evaluate on fold `test`, train on the `train` folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalInstance {
    pub test: usize,
    pub train: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub mode: FoldMode,
    pub k: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_dialects: Option<usize>,
    pub groups: BTreeMap<String, usize>,
    pub tokens: BTreeMap<String, usize>,
    #[serde(default)]
    pub instances: Vec<EvalInstance>,
}

#[derive(Debug, Error)]
pub enum FoldError {
    #[error("k must be at least 2, got {0}")]
    InvalidK(usize),
    #[error("need at least {needed} distinct {kind}s, found {found}")]
    TooFewGroups {
        kind: &'static str,
        needed: usize,
        found: usize,
    },
    #[error("class `{class}` cannot be represented in every fold")]
    ClassUnrepresentable { class: String },
    #[error("train dialect count {requested} must be between 1 and {max} (there are {dialects} dialects)")]
    InvalidTrainCount {
        requested: usize,
        dialects: usize,
        max: usize,
    },
    #[error("fold plan JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

/// Every held-out fold against all remaining folds.
pub fn leave_one_out_instances(k: usize) -> Vec<EvalInstance> {
    (0..k)
        .map(|test| EvalInstance {
            test,
            train: (0..k).filter(|&f| f != test).collect(),
        })
        .collect()
}

impl FoldPlan {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("fold plan serializes");
        s.push('\n');
        s
    }

    pub fn from_json(s: &str) -> Result<Self, FoldError> {
        let mut plan: FoldPlan = serde_json::from_str(s)?;
        if plan.instances.is_empty() {
            plan.instances = leave_one_out_instances(plan.k);
        }
        Ok(plan)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), FoldError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, FoldError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn fold_of(&self, token_id: &str) -> Option<usize> {
        self.tokens.get(token_id).copied()
    }
}

fn l1_divergence(counts: &[usize], total: usize, global: &[f64]) -> f64 {
    if total == 0 {
        return MAX_DIVERGENCE;
    }
    let t = total as f64;
    counts.iter().zip(global).map(|(&c, &p)| (c as f64 / t - p).abs()).sum()
}

struct Group {
    name: String,
    counts: Vec<usize>,
    total: usize,
}

#[derive(Clone)]
struct FoldState {
    counts: Vec<Vec<usize>>,
    totals: Vec<usize>,
    members: Vec<usize>,
}

impl FoldState {
    fn new(k: usize, classes: usize) -> Self {
        FoldState {
            counts: vec![vec![0; classes]; k],
            totals: vec![0; k],
            members: vec![0; k],
        }
    }

    fn add(&mut self, f: usize, g: &Group) {
        for (c, &n) in self.counts[f].iter_mut().zip(&g.counts) {
            *c += n;
        }
        self.totals[f] += g.total;
        self.members[f] += 1;
    }

    fn remove(&mut self, f: usize, g: &Group) {
        for (c, &n) in self.counts[f].iter_mut().zip(&g.counts) {
            *c -= n;
        }
        self.totals[f] -= g.total;
        self.members[f] -= 1;
    }

    fn divergences(&self, global: &[f64]) -> Vec<f64> {
        self.counts
            .iter()
            .zip(&self.totals)
            .map(|(c, &t)| l1_divergence(c, t, global))
            .collect()
    }

    /// (missing class slots, max divergence, summed divergence, size spread)
    fn score(&self, global: &[f64]) -> Score {
        let div = self.divergences(global);
        let missing = self
            .counts
            .iter()
            .map(|c| c.iter().zip(global).filter(|(&n, &p)| n == 0 && p > 0.0).count())
            .sum();
        let spread = self.totals.iter().max().unwrap_or(&0) - self.totals.iter().min().unwrap_or(&0);
        Score {
            missing,
            max: div.iter().cloned().fold(0.0, f64::max),
            sum: div.iter().sum(),
            spread,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Score {
    missing: usize,
    max: f64,
    sum: f64,
    spread: usize,
}

impl Score {
    fn better_than(&self, other: &Score) -> bool {
        if self.missing != other.missing {
            return self.missing < other.missing;
        }
        if (self.max - other.max).abs() > EPS {
            return self.max < other.max;
        }
        if (self.sum - other.sum).abs() > EPS {
            return self.sum < other.sum;
        }
        self.spread < other.spread
    }
}

/// Greedy stratified speaker-to-fold assignment followed by a local search
/// over single moves and pairwise swaps. If that leaves a class missing from
/// some fold, a bounded exact search looks for an assignment covering every
/// class in every fold and the local search restarts from it.
///
/// Speakers are visited by descending token count (ties in seeded-shuffle
/// order) and placed where the plan's worst fold divergence, then summed
/// divergence, is lowest; ties go to the fold with fewer tokens.
pub fn build_speaker_folds(tokens: &[ToneToken], k: usize, seed: u64) -> Result<FoldPlan, FoldError> {
    if k < 2 {
        return Err(FoldError::InvalidK(k));
    }
    let classes: Vec<&str> = tokens
        .iter()
        .map(|t| t.tone.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let class_idx: BTreeMap<&str, usize> = classes.iter().enumerate().map(|(i, &c)| (c, i)).collect();

    let mut by_speaker: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for t in tokens {
        by_speaker
            .entry(&t.speaker_id)
            .or_insert_with(|| vec![0; classes.len()])[class_idx[t.tone.as_str()]] += 1;
    }
    if by_speaker.len() < k {
        return Err(FoldError::TooFewGroups {
            kind: "speaker",
            needed: k,
            found: by_speaker.len(),
        });
    }
    let n = tokens.len() as f64;
    let mut global = vec![0f64; classes.len()];
    for t in tokens {
        global[class_idx[t.tone.as_str()]] += 1.0;
    }
    global.iter_mut().for_each(|p| *p /= n);

    let mut groups: Vec<Group> = by_speaker
        .into_iter()
        .map(|(name, counts)| Group {
            name: name.to_owned(),
            total: counts.iter().sum(),
            counts,
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    groups.shuffle(&mut rng);
    groups.sort_by_key(|g| std::cmp::Reverse(g.total));

    let mut state = FoldState::new(k, classes.len());
    let mut assign = vec![0usize; groups.len()];
    for (gi, g) in groups.iter().enumerate() {
        let mut best: Option<(usize, f64, f64, usize)> = None;
        for f in 0..k {
            state.add(f, g);
            let div = state.divergences(&global);
            state.remove(f, g);
            let max = div.iter().cloned().fold(0.0, f64::max);
            let sum: f64 = div.iter().sum();
            let size = state.totals[f];
            let better = match best {
                None => true,
                Some((_, bmax, bsum, bsize)) => {
                    if (max - bmax).abs() > EPS {
                        max < bmax
                    } else if (sum - bsum).abs() > EPS {
                        sum < bsum
                    } else {
                        size < bsize
                    }
                }
            };
            if better {
                best = Some((f, max, sum, size));
            }
        }
        let f = best.expect("k >= 2").0;
        state.add(f, g);
        assign[gi] = f;
    }

    refine(&groups, &mut assign, &mut state, &global);
    if state.score(&global).missing > 0 {
        if let Some(cover) = cover_search(&groups, k, classes.len()) {
            log::debug!("local search left classes uncovered; restarting from an exact cover");
            state = FoldState::new(k, classes.len());
            for (g, &f) in groups.iter().zip(&cover) {
                state.add(f, g);
            }
            assign = cover;
            refine(&groups, &mut assign, &mut state, &global);
        }
    }

    for (f, counts) in state.counts.iter().enumerate() {
        for (c, &cnt) in counts.iter().enumerate() {
            if cnt == 0 && global[c] > 0.0 {
                log::debug!("fold {f} lacks class {}", classes[c]);
                return Err(FoldError::ClassUnrepresentable {
                    class: classes[c].to_owned(),
                });
            }
        }
    }

    let group_map: BTreeMap<String, usize> = groups.iter().zip(&assign).map(|(g, &f)| (g.name.clone(), f)).collect();
    let token_map = tokens
        .iter()
        .map(|t| (t.token_id.clone(), group_map[t.speaker_id.as_str()]))
        .collect();
    Ok(FoldPlan {
        mode: FoldMode::SpeakerIndependent,
        k,
        seed,
        train_dialects: None,
        groups: group_map,
        tokens: token_map,
        instances: leave_one_out_instances(k),
    })
}

/// Depth-first search for an assignment with every class present in every
/// fold. Gives up (returns `None`) after `COVER_SEARCH_BUDGET` nodes.
fn cover_search(groups: &[Group], k: usize, n_classes: usize) -> Option<Vec<usize>> {
    // most constrained speakers (fewest classes) first
    let mut order: Vec<usize> = (0..groups.len()).collect();
    order.sort_by_key(|&g| (groups[g].counts.iter().filter(|&&n| n > 0).count(), g));
    // remaining[i][c]: speakers at positions >= i of `order` that have class c
    let mut remaining = vec![vec![0usize; n_classes]; order.len() + 1];
    for i in (0..order.len()).rev() {
        let (head, tail) = remaining.split_at_mut(i + 1);
        for ((r, next), &n) in head[i].iter_mut().zip(&tail[0]).zip(&groups[order[i]].counts) {
            *r = next + usize::from(n > 0);
        }
    }
    let mut has = vec![vec![false; n_classes]; k];
    let mut assign = vec![usize::MAX; groups.len()];
    let mut budget = COVER_SEARCH_BUDGET;

    #[allow(clippy::too_many_arguments)]
    fn go(
        i: usize,
        used: usize,
        order: &[usize],
        groups: &[Group],
        remaining: &[Vec<usize>],
        has: &mut Vec<Vec<bool>>,
        assign: &mut Vec<usize>,
        budget: &mut usize,
    ) -> bool {
        if *budget == 0 {
            return false;
        }
        *budget -= 1;
        let k = has.len();
        for c in 0..remaining[i].len() {
            let lacking = has.iter().filter(|f| !f[c]).count();
            if lacking > remaining[i][c] {
                return false;
            }
        }
        if i == order.len() {
            return true;
        }
        let g = order[i];
        // folds are interchangeable: open at most one new fold per step
        for f in 0..k.min(used + 1) {
            let added: Vec<usize> = (0..has[f].len())
                .filter(|&c| groups[g].counts[c] > 0 && !has[f][c])
                .collect();
            for &c in &added {
                has[f][c] = true;
            }
            assign[g] = f;
            if go(i + 1, used.max(f + 1), order, groups, remaining, has, assign, budget) {
                return true;
            }
            for &c in &added {
                has[f][c] = false;
            }
        }
        false
    }

    go(0, 0, &order, groups, &remaining, &mut has, &mut assign, &mut budget).then_some(assign)
}

fn refine(groups: &[Group], assign: &mut [usize], state: &mut FoldState, global: &[f64]) {
    let k = state.totals.len();
    let mut current = state.score(global);
    for _ in 0..MAX_REFINE_PASSES {
        let mut improved = false;
        for gi in 0..groups.len() {
            let from = assign[gi];
            if state.members[from] <= 1 {
                continue;
            }
            for to in 0..k {
                if to == from {
                    continue;
                }
                state.remove(from, &groups[gi]);
                state.add(to, &groups[gi]);
                let s = state.score(global);
                if s.better_than(&current) {
                    assign[gi] = to;
                    current = s;
                    improved = true;
                    break;
                }
                state.remove(to, &groups[gi]);
                state.add(from, &groups[gi]);
            }
        }
        for a in 0..groups.len() {
            for b in a + 1..groups.len() {
                let (fa, fb) = (assign[a], assign[b]);
                if fa == fb {
                    continue;
                }
                state.remove(fa, &groups[a]);
                state.remove(fb, &groups[b]);
                state.add(fb, &groups[a]);
                state.add(fa, &groups[b]);
                let s = state.score(global);
                if s.better_than(&current) {
                    assign[a] = fb;
                    assign[b] = fa;
                    current = s;
                    improved = true;
                } else {
                    state.remove(fb, &groups[a]);
                    state.remove(fa, &groups[b]);
                    state.add(fa, &groups[a]);
                    state.add(fb, &groups[b]);
                }
            }
        }
        if !improved {
            break;
        }
    }
}

/// Leave-one-dialect-out plan. With `train_dialect_count = Some(n)`, every
/// held-out dialect is paired with each combination of exactly `n` other
/// dialects; otherwise it trains on all remaining dialects.
pub fn build_dialect_folds(
    tokens: &[ToneToken],
    train_dialect_count: Option<usize>,
    seed: u64,
) -> Result<FoldPlan, FoldError> {
    let dialects: Vec<&str> = tokens
        .iter()
        .map(|t| t.dialect.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let k = dialects.len();
    if k < 2 {
        return Err(FoldError::TooFewGroups {
            kind: "dialect",
            needed: 2,
            found: k,
        });
    }
    let instances = match train_dialect_count {
        None => leave_one_out_instances(k),
        Some(n) => {
            if n == 0 || n >= k {
                return Err(FoldError::InvalidTrainCount {
                    requested: n,
                    dialects: k,
                    max: k - 1,
                });
            }
            let mut out = Vec::new();
            for test in 0..k {
                let others: Vec<usize> = (0..k).filter(|&f| f != test).collect();
                for combo in combinations(&others, n) {
                    out.push(EvalInstance { test, train: combo });
                }
            }
            out
        }
    };
    let groups: BTreeMap<String, usize> = dialects.iter().enumerate().map(|(i, d)| ((*d).to_owned(), i)).collect();
    let token_map = tokens
        .iter()
        .map(|t| (t.token_id.clone(), groups[t.dialect.as_str()]))
        .collect();
    Ok(FoldPlan {
        mode: FoldMode::DialectIndependent,
        k,
        seed,
        train_dialects: train_dialect_count,
        groups,
        tokens: token_map,
        instances,
    })
}

/// All size-`r` subsets of `items`, in lexicographic order.
fn combinations(items: &[usize], r: usize) -> Vec<Vec<usize>> {
    fn go(items: &[usize], r: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == r {
            out.push(cur.clone());
            return;
        }
        for i in start..items.len() {
            cur.push(items[i]);
            go(items, r, i + 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(items, r, 0, &mut Vec::with_capacity(r), &mut out);
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    UnassignedToken(String),
    UnknownToken(String),
    FoldOutOfRange { token: String, fold: usize },
    GroupSplit { group: String, folds: Vec<usize> },
    GroupMapMismatch { group: String },
    EmptyFold(usize),
    MissingClass { fold: usize, class: String },
    BadInstance(usize),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::UnassignedToken(t) => write!(f, "unassigned token `{t}`"),
            Violation::UnknownToken(t) => write!(f, "plan assigns unknown token `{t}`"),
            Violation::FoldOutOfRange { token, fold } => {
                write!(f, "token `{token}` assigned to out-of-range fold {fold}")
            }
            Violation::GroupSplit { group, folds } => write!(f, "group `{group}` split across folds {folds:?}"),
            Violation::GroupMapMismatch { group } => write!(f, "group map disagrees with token folds for `{group}`"),
            Violation::EmptyFold(k) => write!(f, "fold {k} is empty"),
            Violation::MissingClass { fold, class } => write!(f, "fold {fold} has no `{class}` tokens"),
            Violation::BadInstance(i) => write!(f, "evaluation instance {i} is malformed"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldStats {
    pub classes: Vec<String>,
    /// `counts[fold][class]`
    pub counts: Vec<Vec<usize>>,
    /// L1 distance of each fold's class proportions from the global ones.
    pub divergence: Vec<f64>,
    pub total: usize,
}

impl FoldStats {
    pub fn max_divergence(&self) -> f64 {
        self.divergence.iter().cloned().fold(0.0, f64::max)
    }
}

impl fmt::Display for FoldStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "fold")?;
        for c in &self.classes {
            write!(f, "\t{c}")?;
        }
        writeln!(f, "\ttotal\tL1")?;
        for (i, row) in self.counts.iter().enumerate() {
            write!(f, "{i}")?;
            for n in row {
                write!(f, "\t{n}")?;
            }
            writeln!(f, "\t{}\t{:.4}", row.iter().sum::<usize>(), self.divergence[i])?;
        }
        Ok(())
    }
}

/// Fold statistics for an arbitrary token-to-fold assignment.
pub fn fold_stats(tokens: &[ToneToken], k: usize, fold_of: impl Fn(&ToneToken) -> usize) -> FoldStats {
    let classes: Vec<String> = tokens
        .iter()
        .map(|t| t.tone.as_str().to_owned())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut counts = vec![vec![0usize; classes.len()]; k];
    let mut global = vec![0f64; classes.len()];
    for t in tokens {
        let c = classes.binary_search_by(|x| x.as_str().cmp(t.tone.as_str())).unwrap();
        counts[fold_of(t)][c] += 1;
        global[c] += 1.0;
    }
    let n = tokens.len().max(1) as f64;
    global.iter_mut().for_each(|p| *p /= n);
    let divergence = counts
        .iter()
        .map(|row| l1_divergence(row, row.iter().sum(), &global))
        .collect();
    FoldStats {
        classes,
        counts,
        divergence,
        total: tokens.len(),
    }
}

/// Recheck every plan invariant against the token list from scratch.
pub fn validate_plan(plan: &FoldPlan, tokens: &[ToneToken]) -> Result<FoldStats, Vec<Violation>> {
    let mut v = Vec::new();
    let ids: BTreeSet<&str> = tokens.iter().map(|t| t.token_id.as_str()).collect();
    for t in tokens {
        match plan.tokens.get(&t.token_id) {
            None => v.push(Violation::UnassignedToken(t.token_id.clone())),
            Some(&f) if f >= plan.k => v.push(Violation::FoldOutOfRange {
                token: t.token_id.clone(),
                fold: f,
            }),
            _ => {}
        }
    }
    for id in plan.tokens.keys() {
        if !ids.contains(id.as_str()) {
            v.push(Violation::UnknownToken(id.clone()));
        }
    }
    let mut group_folds: BTreeMap<&str, BTreeSet<usize>> = BTreeMap::new();
    for t in tokens {
        if let Some(&f) = plan.tokens.get(&t.token_id) {
            group_folds.entry(plan.mode.group_of(t)).or_default().insert(f);
        }
    }
    for (g, folds) in &group_folds {
        if folds.len() > 1 {
            v.push(Violation::GroupSplit {
                group: (*g).to_owned(),
                folds: folds.iter().copied().collect(),
            });
        } else if plan.groups.get(*g) != folds.iter().next() {
            v.push(Violation::GroupMapMismatch { group: (*g).to_owned() });
        }
    }
    for (i, inst) in plan.instances.iter().enumerate() {
        if inst.test >= plan.k || inst.train.is_empty() || inst.train.iter().any(|&f| f >= plan.k || f == inst.test) {
            v.push(Violation::BadInstance(i));
        }
    }
    if !v.is_empty() {
        return Err(v);
    }

    let stats = fold_stats(tokens, plan.k, |t| plan.tokens[&t.token_id]);
    for (f, row) in stats.counts.iter().enumerate() {
        if row.iter().sum::<usize>() == 0 {
            v.push(Violation::EmptyFold(f));
        } else if plan.mode == FoldMode::SpeakerIndependent {
            for (c, &n) in row.iter().enumerate() {
                if n == 0 {
                    v.push(Violation::MissingClass {
                        fold: f,
                        class: stats.classes[c].clone(),
                    });
                }
            }
        }
    }
    if v.is_empty() {
        Ok(stats)
    } else {
        Err(v)
    }
}
