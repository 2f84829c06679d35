//! The chunker and joiner: building erasure-coded hash trees from a byte
//! stream and reassembling them, with recovery, from a root reference.
//!
//! Leaves are consecutive 4 KiB segments. Consecutive references pack into
//! intermediate chunks (PACs); each batch of up to `m` children carries `k`
//! Reed-Solomon parities computed over the serialized child chunks, with
//! shorter children zero-padded to the batch maximum. Parity references are
//! appended after the data references, address-only. A lone trailing
//! reference is never wrapped alone: it is promoted to the first higher
//! level with an open batch.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::chunk::{encrypt_chunk, keccak256, Address, Chunk, Reference, MAX_PAYLOAD};
use crate::plan::{parities_for_partial_batch, plan_for_level, ParityPlan, SecurityLevel};
use crate::retrieve::{retrieve_batch, retrieve_singleton, RetrievalStrategy};
use crate::rs::Codec;
use crate::store::{ChunkSource, DiskStore};
use crate::{Error, Result};

/// Reference layout of one PAC batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BatchLayout {
    pub data_refs: usize,
    pub parity_refs: usize,
    /// Byte offset of the first parity reference within the payload.
    pub parity_offset: usize,
    pub payload_bytes: usize,
}

/// Reference arithmetic for a PAC holding `i` data references under `plan`.
/// Encrypted data references take 64 bytes, parity references always 32.
pub fn batch_layout(i: usize, plan: &ParityPlan) -> Result<BatchLayout> {
    if i < 2 || i > plan.m {
        return Err(Error::Domain(format!(
            "batch of {i} data references outside 2..={}",
            plan.m
        )));
    }
    let parity_refs = parities_for_partial_batch(i, plan.level, plan.encrypted)?;
    let parity_offset = i * plan.data_ref_size();
    let payload_bytes = parity_offset + parity_refs * 32;
    debug_assert!(payload_bytes <= MAX_PAYLOAD);
    Ok(BatchLayout {
        data_refs: i,
        parity_refs,
        parity_offset,
        payload_bytes,
    })
}

/// Number of data references a PAC with the given span packs: all children
/// but the last are full subtrees, so the count follows from the largest
/// full-subtree capacity below the span.
pub(crate) fn data_refs_for_span(span: u64, plan: &ParityPlan) -> usize {
    debug_assert!(span > MAX_PAYLOAD as u64);
    let mut cap = MAX_PAYLOAD as u128;
    let m = plan.m as u128;
    while cap * m < span as u128 {
        cap *= m;
    }
    (span as u128).div_ceil(cap) as usize
}

/// True payload length of a chunk from its span alone, used to trim
/// zero-padded reconstructed shards.
pub(crate) fn payload_len_for_span(span: u64, plan: &ParityPlan) -> Result<usize> {
    if span <= MAX_PAYLOAD as u64 {
        return Ok(span as usize);
    }
    let layout = batch_layout(data_refs_for_span(span, plan), plan)?;
    Ok(layout.payload_bytes)
}

/// Chunk counts on one tree level. Parity counts live on the level of the
/// shards they protect.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelCounts {
    pub data_chunks: u64,
    pub parity_chunks: u64,
}

/// Sidecar describing an encoded tree: everything a decoder needs except
/// the decryption key, which stays inside the root reference.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeManifest {
    pub root: Address,
    pub level: SecurityLevel,
    pub encrypted: bool,
    pub seed: u64,
    pub total_span: u64,
    pub levels: Vec<LevelCounts>,
}

impl TreeManifest {
    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    pub fn plan(&self) -> ParityPlan {
        plan_for_level(self.level, self.encrypted)
    }

    pub fn total_chunks(&self) -> u64 {
        self.levels
            .iter()
            .map(|l| l.data_chunks + l.parity_chunks)
            .sum()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        Ok(serde_json::from_str(json)?)
    }

    pub fn save(&self, store: &DiskStore) -> Result<std::path::PathBuf> {
        let path = store.manifest_path(&self.root);
        std::fs::write(&path, self.to_json()?)?;
        Ok(path)
    }

    pub fn load(store: &DiskStore, root: &Address) -> Result<Self> {
        let path = store.manifest_path(root);
        let json = std::fs::read_to_string(&path)
            .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        Self::from_json(&json)
    }
}

/// Everything an encode produces: the manifest and every chunk (data,
/// parity, all levels) in storage form.
pub struct EncodeOutput {
    pub manifest: TreeManifest,
    pub root_ref: Reference,
    pub chunks: Vec<Chunk>,
}

/// Deterministic per-chunk key derivation for encrypted trees:
/// `Keccak256(seed_le8 || level_le4 || index_le8)`.
struct KeyStream {
    seed: u64,
}

impl KeyStream {
    fn key(&self, level: u32, index: u64) -> [u8; 32] {
        keccak256(&[
            &self.seed.to_le_bytes(),
            &level.to_le_bytes(),
            &index.to_le_bytes(),
        ])
    }
}

struct EncodedItem {
    reference: Reference,
    /// Serialized storage form (encrypted when the tree is), the RS shard.
    stored: Vec<u8>,
    span: u64,
}

struct Encoder {
    plan: ParityPlan,
    keys: KeyStream,
    encrypted: bool,
    chunks: Vec<Chunk>,
    levels: Vec<LevelCounts>,
    codecs: HashMap<(usize, usize), Codec>,
}

impl Encoder {
    fn store_item(&mut self, chunk: Chunk, level: u32, index: u64) -> EncodedItem {
        let span = chunk.span();
        let (stored_chunk, reference) = if self.encrypted {
            let key = self.keys.key(level, index);
            let stored = encrypt_chunk(&chunk, &key);
            let reference = Reference::encrypted(stored.address(), key);
            (stored, reference)
        } else {
            let reference = Reference::plain(chunk.address());
            (chunk, reference)
        };
        let stored = stored_chunk.to_bytes();
        self.chunks.push(stored_chunk);
        EncodedItem {
            reference,
            stored,
            span,
        }
    }

    fn codec(&mut self, m: usize, k: usize) -> Result<&Codec> {
        if let std::collections::hash_map::Entry::Vacant(e) = self.codecs.entry((m, k)) {
            e.insert(Codec::new(m, k)?);
        }
        Ok(&self.codecs[&(m, k)])
    }

    fn build_pac(&mut self, batch: &[EncodedItem], level: u32, index: u64) -> Result<EncodedItem> {
        let i = batch.len();
        let k = parities_for_partial_batch(i, self.plan.level, self.plan.encrypted)?;

        let mut payload =
            Vec::with_capacity(i * self.plan.data_ref_size() + k * 32);
        for item in batch {
            payload.extend_from_slice(&item.reference.to_bytes());
        }

        if k > 0 {
            let shard_len = batch.iter().map(|it| it.stored.len()).max().unwrap();
            let shards: Vec<Vec<u8>> = batch
                .iter()
                .map(|it| {
                    let mut s = Vec::with_capacity(shard_len);
                    s.extend_from_slice(&it.stored);
                    s.resize(shard_len, 0);
                    s
                })
                .collect();
            let parities = self.codec(i, k)?.encode(&shards)?;
            for parity in parities {
                // a parity shard is stored verbatim as a chunk: its first
                // eight bytes land in the span field, the rest is payload
                let parity_chunk = Chunk::from_bytes(&parity)?;
                payload.extend_from_slice(parity_chunk.address().as_bytes());
                self.chunks.push(parity_chunk);
            }
            self.levels[level as usize - 1].parity_chunks += k as u64;
        }

        let span = batch.iter().map(|it| it.span).sum();
        let pac = Chunk::new(span, payload)?;
        self.levels[level as usize].data_chunks += 1;
        Ok(self.store_item(pac, level, index))
    }
}

/// Chunk, erasure-code and pack `data` into a hash tree.
///
/// `seed` drives per-chunk key derivation when `encrypted` is set; the same
/// input and seed always produce a byte-identical chunk set and root.
pub fn encode_stream(
    data: &[u8],
    level: SecurityLevel,
    encrypted: bool,
    seed: u64,
) -> Result<EncodeOutput> {
    let plan = plan_for_level(level, encrypted);
    let mut enc = Encoder {
        plan,
        keys: KeyStream { seed },
        encrypted,
        chunks: Vec::new(),
        levels: vec![LevelCounts::default()],
        codecs: HashMap::new(),
    };

    let mut current: Vec<EncodedItem> = if data.is_empty() {
        vec![enc.store_item(Chunk::leaf(Vec::new())?, 0, 0)]
    } else {
        data.chunks(MAX_PAYLOAD)
            .enumerate()
            .map(|(idx, segment)| {
                let leaf = Chunk::leaf(segment.to_vec())?;
                Ok(enc.store_item(leaf, 0, idx as u64))
            })
            .collect::<Result<_>>()?
    };
    enc.levels[0].data_chunks = current.len() as u64;

    let mut level_idx: u32 = 0;
    while current.len() > 1 {
        level_idx += 1;
        if enc.levels.len() <= level_idx as usize {
            enc.levels.push(LevelCounts::default());
        }
        let mut next: Vec<EncodedItem> = Vec::new();
        let mut pac_index: u64 = 0;
        let batches: Vec<&[EncodedItem]> = current.chunks(plan.m).collect();
        for batch in batches {
            if batch.len() == 1 {
                // dangling reference: promote instead of wrapping alone
                next.push(EncodedItem {
                    reference: batch[0].reference,
                    stored: batch[0].stored.clone(),
                    span: batch[0].span,
                });
            } else {
                next.push(enc.build_pac(batch, level_idx, pac_index)?);
                pac_index += 1;
            }
        }
        current = next;
    }

    let root = current.remove(0);
    let manifest = TreeManifest {
        root: root.reference.address,
        level,
        encrypted,
        seed,
        total_span: data.len() as u64,
        levels: enc.levels,
    };
    Ok(EncodeOutput {
        manifest,
        root_ref: root.reference,
        chunks: enc.chunks,
    })
}

/// Encode and put every produced chunk into `store`.
pub fn encode_to_store(
    data: &[u8],
    level: SecurityLevel,
    encrypted: bool,
    seed: u64,
    store: &impl ChunkSource,
) -> Result<(TreeManifest, Reference)> {
    let output = encode_stream(data, level, encrypted, seed)?;
    for chunk in &output.chunks {
        store.put_chunk(chunk);
    }
    Ok((output.manifest, output.root_ref))
}

/// Costs accumulated over a whole decode.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RetrieveReport {
    pub batches: u64,
    pub recovered_batches: u64,
    pub requests: u64,
    pub chunks_used: u64,
    pub bytes_fetched: u64,
    /// Simulated wall time: singleton probe plus every batch, traversed
    /// depth-first.
    pub wall_ms: f64,
    pub root_via_replica: bool,
}

/// Decrypt the stored form when the reference carries a key.
fn open_chunk(stored: Chunk, reference: &Reference) -> Chunk {
    match &reference.key {
        Some(key) => encrypt_chunk(&stored, key),
        None => stored,
    }
}

fn parse_pac_refs(chunk: &Chunk, plan: &ParityPlan) -> Result<(Vec<Reference>, Vec<Reference>)> {
    let payload = chunk.payload();
    let i = data_refs_for_span(chunk.span(), plan);
    let layout = batch_layout(i, plan)?;
    if payload.len() != layout.payload_bytes {
        return Err(Error::MalformedChunk(format!(
            "PAC with span {} should pack {} bytes of references, found {}",
            chunk.span(),
            layout.payload_bytes,
            payload.len()
        )));
    }
    let ref_size = plan.data_ref_size();
    let data_refs = payload[..layout.parity_offset]
        .chunks(ref_size)
        .map(Reference::from_bytes)
        .collect::<Result<Vec<_>>>()?;
    let parity_refs = payload[layout.parity_offset..]
        .chunks(32)
        .map(Reference::from_bytes)
        .collect::<Result<Vec<_>>>()?;
    Ok((data_refs, parity_refs))
}

fn walk(
    plain: &Chunk,
    plan: &ParityPlan,
    strategy: &RetrievalStrategy,
    source: &impl ChunkSource,
    out: &mut Vec<u8>,
    report: &mut RetrieveReport,
) -> Result<()> {
    if !plain.is_pac() {
        if plain.payload().len() as u64 != plain.span() {
            return Err(Error::MalformedChunk(format!(
                "leaf span {} disagrees with payload length {}",
                plain.span(),
                plain.payload().len()
            )));
        }
        out.extend_from_slice(plain.payload());
        return Ok(());
    }

    let (data_refs, parity_refs) = parse_pac_refs(plain, plan)?;
    let (children, outcome) = retrieve_batch(&data_refs, &parity_refs, plan, strategy, source)?;
    report.batches += 1;
    report.recovered_batches += u64::from(outcome.recovered);
    report.requests += outcome.requests_issued as u64;
    report.chunks_used += outcome.chunks_used as u64;
    report.bytes_fetched += outcome.bytes_fetched;
    report.wall_ms += outcome.wall_latency_ms;

    for (reference, stored) in data_refs.iter().zip(children) {
        let plain_child = open_chunk(stored, reference);
        walk(&plain_child, plan, strategy, source, out, report)?;
    }
    Ok(())
}

/// Reassemble the byte stream behind `root`, recovering missing chunks when
/// the strategy permits. Every consumed chunk is verified against its
/// reference address, including Reed-Solomon-recovered ones.
pub fn decode_stream(
    root: &Reference,
    level: SecurityLevel,
    strategy: &RetrievalStrategy,
    source: &impl ChunkSource,
) -> Result<(Vec<u8>, RetrieveReport)> {
    let plan = plan_for_level(level, root.key.is_some());
    let mut report = RetrieveReport::default();

    let (stored_root, singleton) = retrieve_singleton(root, level, strategy, source)?;
    report.requests += singleton.requests as u64;
    report.bytes_fetched += singleton.bytes_fetched;
    report.wall_ms += singleton.wall_latency_ms;
    report.chunks_used += 1;
    report.root_via_replica = singleton.via_replica;

    let plain_root = open_chunk(stored_root, root);
    let mut out = Vec::with_capacity(plain_root.span() as usize);
    walk(&plain_root, &plan, strategy, source, &mut out, &mut report)?;

    if out.len() as u64 != plain_root.span() {
        return Err(Error::MalformedChunk(format!(
            "decoded {} bytes for a root span of {}",
            out.len(),
            plain_root.span()
        )));
    }
    Ok((out, report))
}
