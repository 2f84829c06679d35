//! Batch retrieval strategies over a chunk source, with Reed-Solomon
//! recovery where the strategy permits, plus the Monte-Carlo experiment
//! runner.
//!
//! Latency is simulated time, aggregated analytically from the per-request
//! samples a source reports: sequential requests add, a parallel wave costs
//! its slowest member, and a race completing on the i-th arrival costs the
//! i-th order statistic. `max_inflight` is carried for real network
//! backends; it does not enter the simulated-time model, which treats a
//! wave as fully parallel.

use serde::{Deserialize, Serialize};

use crate::chunk::{proximity_order, Address, Chunk, Reference, SocChunk, SPAN_SIZE};
use crate::plan::{replica_depth, ParityPlan, SecurityLevel};
use crate::replica::{probe_order, validate_soc_replica};
use crate::rs::Codec;
use crate::store::{ChunkSource, SimConfig, SimStore};
use crate::tree::payload_len_for_span;
use crate::{Error, Result};

/// The four prefetching strategies.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    /// Direct, no prefetching, no recovery; parities ignored. Frugal.
    None,
    /// Prefetch all data references in parallel, no recovery. Cheap.
    Data,
    /// Fetch the `i` references closest to this node first, falling back
    /// outward through the ranking on failures, then reconstruct. Cheap.
    Prox,
    /// Request everything, proceed on the first `i` arrivals, reconstruct.
    /// Latency-optimal at bandwidth cost.
    Race,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 4] = [
        StrategyKind::None,
        StrategyKind::Data,
        StrategyKind::Prox,
        StrategyKind::Race,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::None => "none",
            StrategyKind::Data => "data",
            StrategyKind::Prox => "prox",
            StrategyKind::Race => "race",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        let lower = name.to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|s| s.name() == lower)
            .ok_or_else(|| Error::Domain(format!("unknown strategy '{name}'")))
    }

    /// Whether the strategy reconstructs from parities.
    pub fn recovers(self) -> bool {
        matches!(self, StrategyKind::Prox | StrategyKind::Race)
    }
}

impl std::fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Strategy plus the context it needs.
#[derive(Clone, Copy, Debug)]
pub struct RetrievalStrategy {
    pub kind: StrategyKind,
    /// This node's overlay address; required by PROX, used by singleton
    /// probing to order replicas when present.
    pub node_overlay: Option<Address>,
    /// Concurrency cap for real backends. Simulated latency ignores it.
    pub max_inflight: usize,
}

impl RetrievalStrategy {
    pub fn new(kind: StrategyKind) -> Self {
        RetrievalStrategy {
            kind,
            node_overlay: None,
            max_inflight: 32,
        }
    }

    pub fn with_overlay(mut self, overlay: Address) -> Self {
        self.node_overlay = Some(overlay);
        self
    }
}

/// Cost accounting for one batch retrieval.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BatchOutcome {
    /// Whether Reed-Solomon reconstruction was needed.
    pub recovered: bool,
    pub requests_issued: u32,
    /// Chunks the decoder consumed (the batch's data count).
    pub chunks_used: u32,
    pub wall_latency_ms: f64,
    /// Bytes delivered by the network, stragglers included.
    pub bytes_fetched: u64,
}

/// One fetched-and-verified chunk, or a miss. Address mismatches are
/// corruption, not loss, and abort the batch.
fn fetch_verified(
    source: &impl ChunkSource,
    reference: &Reference,
) -> Result<(Option<(Chunk, usize)>, f64)> {
    let fetch = source.get(&reference.address);
    match fetch.data {
        None => Ok((None, fetch.latency_ms)),
        Some(bytes) => {
            let chunk = Chunk::from_bytes(&bytes)?;
            let actual = chunk.address();
            if actual != reference.address {
                return Err(Error::AddressMismatch {
                    expected: reference.address,
                    actual,
                });
            }
            let size = bytes.len();
            Ok((Some((chunk, size)), fetch.latency_ms))
        }
    }
}

/// Retrieve the `i` data chunks of one PAC batch. Returns them in reference
/// order, in storage form (still encrypted for encrypted trees).
pub fn retrieve_batch(
    data_refs: &[Reference],
    parity_refs: &[Reference],
    plan: &ParityPlan,
    strategy: &RetrievalStrategy,
    source: &impl ChunkSource,
) -> Result<(Vec<Chunk>, BatchOutcome)> {
    let data_count = data_refs.len();
    if data_count == 0 {
        return Err(Error::Domain("empty batch".into()));
    }
    let mut outcome = BatchOutcome {
        chunks_used: data_count as u32,
        ..Default::default()
    };

    match strategy.kind {
        StrategyKind::None => {
            let mut chunks = Vec::with_capacity(data_count);
            for reference in data_refs {
                let (hit, latency) = fetch_verified(source, reference)?;
                outcome.requests_issued += 1;
                outcome.wall_latency_ms += latency;
                match hit {
                    Some((chunk, size)) => {
                        outcome.bytes_fetched += size as u64;
                        chunks.push(chunk);
                    }
                    None => return Err(Error::NotFound(reference.address)),
                }
            }
            Ok((chunks, outcome))
        }
        StrategyKind::Data => {
            let mut chunks = Vec::with_capacity(data_count);
            let mut missing = None;
            for reference in data_refs {
                let (hit, latency) = fetch_verified(source, reference)?;
                outcome.requests_issued += 1;
                outcome.wall_latency_ms = outcome.wall_latency_ms.max(latency);
                match hit {
                    Some((chunk, size)) => {
                        outcome.bytes_fetched += size as u64;
                        chunks.push(chunk);
                    }
                    None => missing = missing.or(Some(reference.address)),
                }
            }
            match missing {
                Some(addr) => Err(Error::NotFound(addr)),
                None => Ok((chunks, outcome)),
            }
        }
        StrategyKind::Prox => {
            let node = strategy
                .node_overlay
                .ok_or_else(|| Error::Domain("PROX requires a node overlay address".into()))?;
            let all: Vec<&Reference> = data_refs.iter().chain(parity_refs.iter()).collect();
            let mut ranked: Vec<usize> = (0..all.len()).collect();
            ranked.sort_by(|&a, &b| {
                proximity_order(&node, &all[b].address)
                    .cmp(&proximity_order(&node, &all[a].address))
                    .then(a.cmp(&b))
            });

            let mut slots: Vec<Option<(Chunk, usize)>> = vec![None; all.len()];
            let mut successes = 0usize;
            let mut cursor = 0usize;
            while successes < data_count && cursor < ranked.len() {
                let wave_len = (data_count - successes).min(ranked.len() - cursor);
                let wave = &ranked[cursor..cursor + wave_len];
                cursor += wave_len;
                let mut wave_latency = 0.0f64;
                for &idx in wave {
                    let (hit, latency) = fetch_verified(source, all[idx])?;
                    outcome.requests_issued += 1;
                    wave_latency = wave_latency.max(latency);
                    if let Some((chunk, size)) = hit {
                        outcome.bytes_fetched += size as u64;
                        slots[idx] = Some((chunk, size));
                        successes += 1;
                    }
                }
                outcome.wall_latency_ms += wave_latency;
            }
            if successes < data_count {
                return Err(Error::UnrecoverableBatch {
                    available: successes,
                    needed: data_count,
                });
            }
            assemble_data(data_refs, parity_refs, plan, slots, &mut outcome)
        }
        StrategyKind::Race => {
            let all: Vec<&Reference> = data_refs.iter().chain(parity_refs.iter()).collect();
            let mut arrivals: Vec<(f64, usize, Chunk, usize)> = Vec::new();
            outcome.requests_issued = all.len() as u32;
            let mut slowest = 0.0f64;
            for (idx, reference) in all.iter().enumerate() {
                let (hit, latency) = fetch_verified(source, reference)?;
                slowest = slowest.max(latency);
                if let Some((chunk, size)) = hit {
                    outcome.bytes_fetched += size as u64;
                    arrivals.push((latency, idx, chunk, size));
                }
            }
            if arrivals.len() < data_count {
                return Err(Error::UnrecoverableBatch {
                    available: arrivals.len(),
                    needed: data_count,
                });
            }
            arrivals.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            // the race ends on the i-th arrival; stragglers are ignored
            // (their bytes were still served)
            arrivals.truncate(data_count);
            outcome.wall_latency_ms = arrivals.last().map_or(slowest, |a| a.0);

            let mut slots: Vec<Option<(Chunk, usize)>> = vec![None; all.len()];
            for (_, idx, chunk, size) in arrivals {
                slots[idx] = Some((chunk, size));
            }
            assemble_data(data_refs, parity_refs, plan, slots, &mut outcome)
        }
    }
}

/// Produce the ordered data chunks from whichever slots got filled,
/// reconstructing the missing ones. Recovered chunks are trimmed via their
/// embedded span and verified against their reference address.
fn assemble_data(
    data_refs: &[Reference],
    parity_refs: &[Reference],
    plan: &ParityPlan,
    slots: Vec<Option<(Chunk, usize)>>,
    outcome: &mut BatchOutcome,
) -> Result<(Vec<Chunk>, BatchOutcome)> {
    let data_count = data_refs.len();
    let total = data_count + parity_refs.len();
    debug_assert_eq!(slots.len(), total);

    let mut chunks: Vec<Option<Chunk>> = vec![None; data_count];
    let mut missing_data = false;
    for (idx, slot) in slots.iter().enumerate().take(data_count) {
        match slot {
            Some((chunk, _)) => chunks[idx] = Some(chunk.clone()),
            None => missing_data = true,
        }
    }

    if missing_data {
        let shard_len = slots
            .iter()
            .flatten()
            .map(|(c, _)| SPAN_SIZE + c.payload().len())
            .max()
            .expect("at least data_count slots are filled");
        let mut shards: Vec<Option<Vec<u8>>> = slots
            .iter()
            .map(|slot| {
                slot.as_ref().map(|(chunk, _)| {
                    let mut bytes = chunk.to_bytes();
                    bytes.resize(shard_len, 0);
                    bytes
                })
            })
            .collect();
        let codec = Codec::new(data_count, parity_refs.len())?;
        codec.reconstruct_data(&mut shards)?;

        for (idx, chunk_slot) in chunks.iter_mut().enumerate() {
            if chunk_slot.is_some() {
                continue;
            }
            let bytes = shards[idx].take().expect("reconstruct filled data slots");
            let mut span_bytes = [0u8; SPAN_SIZE];
            span_bytes.copy_from_slice(&bytes[..SPAN_SIZE]);
            let span = u64::from_le_bytes(span_bytes);
            let payload_len = payload_len_for_span(span, plan).map_err(|_| {
                Error::MalformedChunk(format!("recovered shard has impossible span {span}"))
            })?;
            if SPAN_SIZE + payload_len > bytes.len() {
                return Err(Error::MalformedChunk(format!(
                    "recovered shard of {} bytes cannot hold a {payload_len}-byte payload",
                    bytes.len()
                )));
            }
            let chunk = Chunk::from_bytes(&bytes[..SPAN_SIZE + payload_len])?;
            let actual = chunk.address();
            if actual != data_refs[idx].address {
                return Err(Error::AddressMismatch {
                    expected: data_refs[idx].address,
                    actual,
                });
            }
            *chunk_slot = Some(chunk);
        }
        outcome.recovered = true;
    }

    let chunks = chunks
        .into_iter()
        .map(|c| c.expect("every data slot resolved"))
        .collect();
    Ok((chunks, *outcome))
}

/// Cost accounting for a singleton (root) retrieval.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SingletonOutcome {
    pub requests: u32,
    pub wall_latency_ms: f64,
    pub bytes_fetched: u64,
    pub via_replica: bool,
}

/// Retrieve a singleton chunk: the original address first, then the mined
/// SOC replica candidates the level implies, nearest bin first when the
/// strategy knows this node's overlay.
pub fn retrieve_singleton(
    reference: &Reference,
    level: SecurityLevel,
    strategy: &RetrievalStrategy,
    source: &impl ChunkSource,
) -> Result<(Chunk, SingletonOutcome)> {
    let mut outcome = SingletonOutcome::default();

    let (hit, latency) = fetch_verified(source, reference)?;
    outcome.requests += 1;
    outcome.wall_latency_ms += latency;
    if let Some((chunk, size)) = hit {
        outcome.bytes_fetched += size as u64;
        return Ok((chunk, outcome));
    }

    let depth = replica_depth(level);
    if crate::plan::replica_count(level) == 0 {
        return Err(Error::NotFound(reference.address));
    }

    for slot in probe_order(&reference.address, depth, strategy.node_overlay.as_ref()) {
        let fetch = source.get(&slot.address);
        outcome.requests += 1;
        outcome.wall_latency_ms += fetch.latency_ms;
        let Some(bytes) = fetch.data else { continue };
        outcome.bytes_fetched += bytes.len() as u64;
        let soc = SocChunk::from_bytes(&bytes)?;
        if soc.address() != slot.address || !validate_soc_replica(&soc) {
            return Err(Error::MalformedChunk(format!(
                "invalid replica at {}",
                slot.address
            )));
        }
        let actual = soc.wrapped.address();
        if actual != reference.address {
            return Err(Error::AddressMismatch {
                expected: reference.address,
                actual,
            });
        }
        outcome.via_replica = true;
        return Ok((soc.wrapped, outcome));
    }
    Err(Error::NotFound(reference.address))
}

/// A Monte-Carlo experiment: one file, one strategy, many seeded trials
/// against the fault simulator.
#[derive(Clone, Debug)]
pub struct ExperimentSpec {
    pub file_size: u64,
    pub level: SecurityLevel,
    pub encrypted: bool,
    pub strategy: RetrievalStrategy,
    pub trials: u32,
    pub sim: SimConfig,
    /// Seed for the generated file content and the encryption key stream.
    pub content_seed: u64,
}

/// Aggregated experiment results; one CSV row.
#[derive(Clone, Debug, PartialEq)]
pub struct StatsReport {
    pub strategy: StrategyKind,
    pub level: SecurityLevel,
    pub eps: f64,
    pub trials: u32,
    pub successes: u32,
    /// Latency statistics over successful trials.
    pub mean_latency_ms: f64,
    pub p95_latency_ms: f64,
    /// Mean requests and network bytes per successful trial.
    pub requests: f64,
    pub bytes: f64,
}

impl StatsReport {
    pub const CSV_HEADER: &'static str =
        "strategy,level,eps,trials,successes,mean_latency_ms,p95_latency_ms,requests,bytes";

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{:.3},{:.3},{:.1},{:.1}",
            self.strategy,
            self.level,
            self.eps,
            self.trials,
            self.successes,
            self.mean_latency_ms,
            self.p95_latency_ms,
            self.requests,
            self.bytes
        )
    }

    pub fn success_rate(&self) -> f64 {
        if self.trials == 0 {
            0.0
        } else {
            self.successes as f64 / self.trials as f64
        }
    }
}

/// Deterministic filler for experiment file content.
pub fn pseudo_random_bytes(len: usize, seed: u64) -> Vec<u8> {
    let mut out = Vec::with_capacity(len);
    let mut state = seed ^ 0x6a09e667f3bcc908;
    while out.len() < len {
        state = state
            .wrapping_add(0x9e3779b97f4a7c15)
            .rotate_left(27)
            .wrapping_mul(0x2545f4914f6cdd1d);
        out.extend_from_slice(&state.to_le_bytes());
    }
    out.truncate(len);
    out
}

/// Run the experiment: encode once into a base store (with dispersed
/// replicas for the root), then decode through a freshly seeded simulator
/// view per trial and compare against the plaintext.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<StatsReport> {
    use crate::replica::mine_replicas;
    use crate::store::MemStore;

    spec.sim.validate()?;
    let data = pseudo_random_bytes(spec.file_size as usize, spec.content_seed);
    let base = MemStore::new();
    let (_, root) = crate::tree::encode_to_store(
        &data,
        spec.level,
        spec.encrypted,
        spec.content_seed,
        &base,
    )?;

    let depth = replica_depth(spec.level);
    if crate::plan::replica_count(spec.level) > 0 {
        let stored_root = base.get_chunk(&root.address)?;
        let set = mine_replicas(&stored_root, depth);
        for soc in set.slots.iter().flatten() {
            base.put_soc(soc);
        }
    }

    let mut successes = 0u32;
    let mut walls: Vec<f64> = Vec::new();
    let mut requests_total = 0u64;
    let mut bytes_total = 0u64;

    for trial in 0..spec.trials {
        let mut cfg = spec.sim.clone();
        cfg.seed = trial_seed(spec.sim.seed, trial);
        let sim = SimStore::new(&base, cfg)?;
        match crate::tree::decode_stream(&root, spec.level, &spec.strategy, &sim) {
            Ok((bytes, report)) if bytes == data => {
                successes += 1;
                walls.push(report.wall_ms);
                requests_total += report.requests;
                bytes_total += report.bytes_fetched;
            }
            Ok(_) | Err(_) => {}
        }
    }

    walls.sort_by(f64::total_cmp);
    let mean = if walls.is_empty() {
        0.0
    } else {
        walls.iter().sum::<f64>() / walls.len() as f64
    };
    let p95 = if walls.is_empty() {
        0.0
    } else {
        walls[((walls.len() as f64 * 0.95).ceil() as usize - 1).min(walls.len() - 1)]
    };
    let denom = successes.max(1) as f64;
    Ok(StatsReport {
        strategy: spec.strategy.kind,
        level: spec.level,
        eps: spec.sim.eps,
        trials: spec.trials,
        successes,
        mean_latency_ms: mean,
        p95_latency_ms: p95,
        requests: requests_total as f64 / denom,
        bytes: bytes_total as f64 / denom,
    })
}

/// Per-trial simulator seed, decorrelated from the base seed.
pub fn trial_seed(base: u64, trial: u32) -> u64 {
    let mut z = base ^ (trial as u64).wrapping_mul(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}
