//! Loss modes for partially labeled attribute learning.
//!
//! All modes share the asymmetric positive/negative terms; they differ only
//! in what they do with unannotated attributes:
//!
//! * `*_ignoring`    — drop every unannotated term.
//! * `*_negatifying` — treat every unannotated attribute as negative.
//! * `selective`     — negatify unannotated attributes, but stochastically
//!   ignore a presence-weighted sample of the feasible ones (the ones the
//!   vision-language scores mark as ambiguous), and decay infeasible ones
//!   with a larger focusing exponent since they are almost all easy negatives.
//!
//! Terms are negated log-likelihoods, so training minimizes a non-negative
//! loss. Probabilities are clamped to [1e-7, 1 - 1e-7] before any log.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Instance;
use crate::error::{Error, Result};
use crate::feasible::FeasibleSets;
use crate::vlm::PresenceDistribution;

pub const CLAMP_EPS: f64 = 1e-7;

fn clamp(p: f64) -> f64 {
    p.clamp(CLAMP_EPS, 1.0 - CLAMP_EPS)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    CeIgnoring,
    CeNegatifying,
    AslIgnoring,
    AslNegatifying,
    Selective,
}

impl LossMode {
    pub const ALL: [LossMode; 5] = [
        LossMode::CeIgnoring,
        LossMode::CeNegatifying,
        LossMode::AslIgnoring,
        LossMode::AslNegatifying,
        LossMode::Selective,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            LossMode::CeIgnoring => "ce_ignoring",
            LossMode::CeNegatifying => "ce_negatifying",
            LossMode::AslIgnoring => "asl_ignoring",
            LossMode::AslNegatifying => "asl_negatifying",
            LossMode::Selective => "selective",
        }
    }

    fn is_ce(&self) -> bool {
        matches!(self, LossMode::CeIgnoring | LossMode::CeNegatifying)
    }
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown loss mode `{s}` (expected one of: ce_ignoring, ce_negatifying, \
                     asl_ignoring, asl_negatifying, selective)"
                ))
            })
    }
}

/// Size of the ignore set. `All` is the sentinel meaning "the entire pool of
/// unannotated feasible attributes".
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NumIgnore {
    Count(usize),
    All,
}

impl NumIgnore {
    /// Effective draw budget; the sampler caps it at the pool size.
    pub fn budget(&self) -> usize {
        match self {
            NumIgnore::Count(n) => *n,
            NumIgnore::All => usize::MAX,
        }
    }
}

impl fmt::Display for NumIgnore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NumIgnore::Count(n) => write!(f, "{n}"),
            NumIgnore::All => f.write_str("ALL"),
        }
    }
}

impl FromStr for NumIgnore {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("all") {
            return Ok(NumIgnore::All);
        }
        s.parse::<usize>().map(NumIgnore::Count).map_err(|_| {
            Error::Config(format!("num_ignore must be a non-negative integer or ALL, got `{s}`"))
        })
    }
}

impl Serialize for NumIgnore {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            NumIgnore::Count(n) => serializer.serialize_u64(*n as u64),
            NumIgnore::All => serializer.serialize_str("ALL"),
        }
    }
}

impl<'de> Deserialize<'de> for NumIgnore {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Count(u64),
            Text(String),
        }
        match Repr::deserialize(deserializer)? {
            Repr::Count(n) => Ok(NumIgnore::Count(n as usize)),
            Repr::Text(s) => NumIgnore::from_str(&s).map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub mode: LossMode,
    /// Focusing exponent on positive terms.
    pub gamma_pos: f64,
    /// Focusing exponent on annotated-negative terms (and unannotated ones in
    /// asl_negatifying mode).
    pub gamma_neg: f64,
    /// Focusing exponent on unannotated feasible attributes (selective mode).
    pub gamma_feasible: f64,
    /// Focusing exponent on unannotated infeasible attributes (selective
    /// mode). Must exceed `gamma_feasible`: infeasible attributes are almost
    /// all easy negatives, so their terms decay faster.
    pub gamma_infeasible: f64,
    /// How many unannotated feasible attributes to ignore per instance.
    pub num_ignore: NumIgnore,
    /// Draw the ignore set with replacement instead of the default
    /// without-replacement draws.
    #[serde(default)]
    pub sample_with_replacement: bool,
    /// Draw the ignore set once per instance (at epoch 0) and reuse it,
    /// instead of redrawing every time the instance appears.
    #[serde(default)]
    pub fixed_ignore_mask: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            mode: LossMode::Selective,
            gamma_pos: 1.0,
            gamma_neg: 2.0,
            gamma_feasible: 4.0,
            gamma_infeasible: 7.0,
            num_ignore: NumIgnore::Count(30),
            sample_with_replacement: false,
            fixed_ignore_mask: false,
        }
    }
}

impl LossConfig {
    /// Checks ranges and normalizes: CE modes force every focusing exponent
    /// to zero.
    pub fn validated(mut self) -> Result<Self> {
        for (name, g) in [
            ("gamma_pos", self.gamma_pos),
            ("gamma_neg", self.gamma_neg),
            ("gamma_feasible", self.gamma_feasible),
            ("gamma_infeasible", self.gamma_infeasible),
        ] {
            if !(g >= 0.0 && g.is_finite()) {
                return Err(Error::Config(format!("{name} must be >= 0, got {g}")));
            }
        }
        if self.mode.is_ce() {
            self.gamma_pos = 0.0;
            self.gamma_neg = 0.0;
            self.gamma_feasible = 0.0;
            self.gamma_infeasible = 0.0;
        }
        if self.mode == LossMode::Selective && self.gamma_feasible >= self.gamma_infeasible {
            return Err(Error::Config(format!(
                "selective mode requires gamma_feasible < gamma_infeasible, got {} >= {}",
                self.gamma_feasible, self.gamma_infeasible
            )));
        }
        Ok(self)
    }
}

/// Per-instance set of ignored attributes, drawn from the unannotated
/// feasible pool.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct IgnoreMask {
    ignored: BTreeSet<usize>,
}

impl IgnoreMask {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn contains(&self, attr: usize) -> bool {
        self.ignored.contains(&attr)
    }

    pub fn len(&self) -> usize {
        self.ignored.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ignored.is_empty()
    }

    pub fn attrs(&self) -> &BTreeSet<usize> {
        &self.ignored
    }
}

/// Positive term: -(1 - p)^{gamma} ln(p). Zero at p -> 1.
pub fn positive_term(p: f64, gamma_pos: f64) -> f64 {
    let p = clamp(p);
    -(1.0 - p).powf(gamma_pos) * p.ln()
}

/// Negative term: -p^{gamma} ln(1 - p). Zero at p -> 0. Also serves both
/// branches of the selective unannotated term with the feasible/infeasible
/// exponents.
pub fn negative_term(p: f64, gamma: f64) -> f64 {
    let p = clamp(p);
    -p.powf(gamma) * (1.0 - p).ln()
}

/// d/dp of `positive_term`, evaluated at the clamped p.
pub fn positive_term_grad(p: f64, gamma_pos: f64) -> f64 {
    let p = clamp(p);
    let decay = if gamma_pos == 0.0 {
        0.0
    } else {
        gamma_pos * (1.0 - p).powf(gamma_pos - 1.0) * p.ln()
    };
    decay - (1.0 - p).powf(gamma_pos) / p
}

/// d/dp of `negative_term`, evaluated at the clamped p.
pub fn negative_term_grad(p: f64, gamma: f64) -> f64 {
    let p = clamp(p);
    let decay = if gamma == 0.0 {
        0.0
    } else {
        -gamma * p.powf(gamma - 1.0) * (1.0 - p).ln()
    };
    decay + p.powf(gamma) / (1.0 - p)
}

/// Draws the ignore set: `min(num_ignore, |pool|)` distinct attributes from
/// the pool of unannotated feasible attributes, each draw proportional to the
/// remaining renormalized presence probability (sequential categorical draws
/// without replacement).
pub fn sample_ignore_set<R: Rng>(
    dist: &PresenceDistribution,
    unannotated: &BTreeSet<usize>,
    num_ignore: usize,
    rng: &mut R,
) -> IgnoreMask {
    let mut pool: Vec<(usize, f64)> = dist
        .probs()
        .iter()
        .filter(|(a, _)| unannotated.contains(a))
        .map(|(&a, &w)| (a, w))
        .collect();
    let k = num_ignore.min(pool.len());
    let mut ignored = BTreeSet::new();
    for _ in 0..k {
        let total: f64 = pool.iter().map(|(_, w)| w).sum();
        let mut u = rng.gen::<f64>() * total;
        let mut chosen = pool.len() - 1;
        for (i, (_, w)) in pool.iter().enumerate() {
            if u < *w {
                chosen = i;
                break;
            }
            u -= *w;
        }
        ignored.insert(pool.swap_remove(chosen).0);
    }
    IgnoreMask { ignored }
}

/// With-replacement variant: `num_ignore` independent categorical draws from
/// the pool; duplicates collapse, so the mask may come out smaller.
pub fn sample_ignore_set_with_replacement<R: Rng>(
    dist: &PresenceDistribution,
    unannotated: &BTreeSet<usize>,
    num_ignore: usize,
    rng: &mut R,
) -> IgnoreMask {
    let pool: Vec<(usize, f64)> = dist
        .probs()
        .iter()
        .filter(|(a, _)| unannotated.contains(a))
        .map(|(&a, &w)| (a, w))
        .collect();
    let mut ignored = BTreeSet::new();
    if pool.is_empty() {
        return IgnoreMask { ignored };
    }
    let total: f64 = pool.iter().map(|(_, w)| w).sum();
    let draws = num_ignore.min(pool.len());
    for _ in 0..draws {
        let mut u = rng.gen::<f64>() * total;
        let mut chosen = pool.len() - 1;
        for (i, (_, w)) in pool.iter().enumerate() {
            if u < *w {
                chosen = i;
                break;
            }
            u -= *w;
        }
        ignored.insert(pool[chosen].0);
    }
    IgnoreMask { ignored }
}

/// Dispatches on the config's sampling scheme.
pub fn draw_ignore_mask<R: Rng>(
    dist: &PresenceDistribution,
    unannotated: &BTreeSet<usize>,
    cfg: &LossConfig,
    rng: &mut R,
) -> IgnoreMask {
    if cfg.sample_with_replacement {
        sample_ignore_set_with_replacement(dist, unannotated, cfg.num_ignore.budget(), rng)
    } else {
        sample_ignore_set(dist, unannotated, cfg.num_ignore.budget(), rng)
    }
}

/// Selective-mode term for one unannotated attribute: zero if ignored,
/// negatified with the feasible exponent if feasible, with the infeasible
/// exponent otherwise.
pub fn unannotated_term(
    p: f64,
    attr: usize,
    object: &str,
    fs: &FeasibleSets,
    mask: &IgnoreMask,
    cfg: &LossConfig,
) -> f64 {
    if fs.is_feasible(object, attr) {
        if mask.contains(attr) {
            0.0
        } else {
            negative_term(p, cfg.gamma_feasible)
        }
    } else {
        negative_term(p, cfg.gamma_infeasible)
    }
}

fn unannotated_term_grad(
    p: f64,
    attr: usize,
    object: &str,
    fs: &FeasibleSets,
    mask: &IgnoreMask,
    cfg: &LossConfig,
) -> f64 {
    if fs.is_feasible(object, attr) {
        if mask.contains(attr) {
            0.0
        } else {
            negative_term_grad(p, cfg.gamma_feasible)
        }
    } else {
        negative_term_grad(p, cfg.gamma_infeasible)
    }
}

fn check_finite(p: &[f64]) -> Result<()> {
    if let Some(i) = p.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!(
            "prediction component {i} is {}",
            p[i]
        )));
    }
    Ok(())
}

/// Total loss of one instance: positive terms over P, negative terms over N,
/// and the mode's unannotated handling over the rest.
pub fn instance_loss(
    p: &[f64],
    instance: &Instance,
    fs: &FeasibleSets,
    mask: &IgnoreMask,
    cfg: &LossConfig,
) -> Result<f64> {
    check_finite(p)?;
    let object = instance.object_id.as_str();
    let mut total = 0.0;
    for (a, &pa) in p.iter().enumerate() {
        total += if instance.positives.contains(&a) {
            positive_term(pa, cfg.gamma_pos)
        } else if instance.negatives.contains(&a) {
            negative_term(pa, cfg.gamma_neg)
        } else {
            match cfg.mode {
                LossMode::CeIgnoring | LossMode::AslIgnoring => 0.0,
                LossMode::CeNegatifying | LossMode::AslNegatifying => {
                    negative_term(pa, cfg.gamma_neg)
                }
                LossMode::Selective => unannotated_term(pa, a, object, fs, mask, cfg),
            }
        };
    }
    Ok(total)
}

/// Exact partial derivatives of `instance_loss` with respect to each p_a.
/// Ignored attributes contribute zero.
pub fn instance_loss_grad(
    p: &[f64],
    instance: &Instance,
    fs: &FeasibleSets,
    mask: &IgnoreMask,
    cfg: &LossConfig,
) -> Result<Vec<f64>> {
    check_finite(p)?;
    let object = instance.object_id.as_str();
    Ok(p.iter()
        .enumerate()
        .map(|(a, &pa)| {
            if instance.positives.contains(&a) {
                positive_term_grad(pa, cfg.gamma_pos)
            } else if instance.negatives.contains(&a) {
                negative_term_grad(pa, cfg.gamma_neg)
            } else {
                match cfg.mode {
                    LossMode::CeIgnoring | LossMode::AslIgnoring => 0.0,
                    LossMode::CeNegatifying | LossMode::AslNegatifying => {
                        negative_term_grad(pa, cfg.gamma_neg)
                    }
                    LossMode::Selective => unannotated_term_grad(pa, a, object, fs, mask, cfg),
                }
            }
        })
        .collect())
}
