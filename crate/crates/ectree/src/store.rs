//! Chunk stores: an abstract source, in-memory and on-disk backends, and a
//! deterministic fault-injecting simulator standing in for the network.
//!
//! Simulator determinism: every random decision is keyed on
//! `(seed, domain, address, call#)` through a SplitMix64 chain (the fold of
//! the address's four little-endian words, then the per-address call
//! counter), so outcomes depend only on the call sequence per address and
//! never on cross-address interleaving. The generator identity is part of
//! the reproducibility contract: seeds produce the same failures and
//! latencies on every platform.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Mutex, RwLock};

use crate::chunk::{Address, Chunk, SocChunk};
use crate::{Error, Result};

/// Outcome of a single get: delivered bytes (or a loss) plus the simulated
/// latency the request took. Plain stores report zero latency.
#[derive(Debug, Clone)]
pub struct Fetch {
    pub data: Option<Vec<u8>>,
    pub latency_ms: f64,
}

impl Fetch {
    fn hit(data: Vec<u8>, latency_ms: f64) -> Self {
        Fetch {
            data: Some(data),
            latency_ms,
        }
    }

    fn miss(latency_ms: f64) -> Self {
        Fetch {
            data: None,
            latency_ms,
        }
    }
}

/// Abstract chunk source. Implementations must be safe for concurrent
/// calls; the simulator keys its randomness per address so completion
/// order cannot change any outcome.
pub trait ChunkSource: Sync {
    fn get(&self, addr: &Address) -> Fetch;
    fn put(&self, addr: Address, bytes: Vec<u8>);

    /// Store a content chunk under its content address.
    fn put_chunk(&self, chunk: &Chunk) -> Address {
        let addr = chunk.address();
        self.put(addr, chunk.to_bytes());
        addr
    }

    /// Store a single-owner chunk under its SOC address.
    fn put_soc(&self, soc: &SocChunk) -> Address {
        let addr = soc.address();
        self.put(addr, soc.to_bytes());
        addr
    }

    /// Fetch and parse a content chunk, verifying its address.
    fn get_chunk(&self, addr: &Address) -> Result<Chunk> {
        let fetch = self.get(addr);
        let bytes = fetch.data.ok_or(Error::NotFound(*addr))?;
        let chunk = Chunk::from_bytes(&bytes)?;
        let actual = chunk.address();
        if actual != *addr {
            return Err(Error::AddressMismatch {
                expected: *addr,
                actual,
            });
        }
        Ok(chunk)
    }
}

/// Plain in-memory store keyed by address; puts are idempotent.
#[derive(Default)]
pub struct MemStore {
    map: RwLock<HashMap<Address, Vec<u8>>>,
}

impl MemStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.map.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, addr: &Address) -> bool {
        self.map.read().unwrap().contains_key(addr)
    }

    pub fn remove(&self, addr: &Address) -> bool {
        self.map.write().unwrap().remove(addr).is_some()
    }

    pub fn addresses(&self) -> Vec<Address> {
        self.map.read().unwrap().keys().copied().collect()
    }
}

impl ChunkSource for MemStore {
    fn get(&self, addr: &Address) -> Fetch {
        match self.map.read().unwrap().get(addr) {
            Some(bytes) => Fetch::hit(bytes.clone(), 0.0),
            None => Fetch::miss(0.0),
        }
    }

    fn put(&self, addr: Address, bytes: Vec<u8>) {
        self.map.write().unwrap().insert(addr, bytes);
    }
}

/// On-disk store: one file per chunk under `<root>/chunks/<hex-address>`.
pub struct DiskStore {
    root: PathBuf,
}

impl DiskStore {
    /// Open (creating directories as needed) a store rooted at `root`.
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(root.join("chunks"))?;
        fs::create_dir_all(root.join("manifests"))?;
        Ok(DiskStore { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn chunk_path(&self, addr: &Address) -> PathBuf {
        self.root.join("chunks").join(addr.to_hex())
    }

    pub fn manifest_path(&self, root_address: &Address) -> PathBuf {
        self.root
            .join("manifests")
            .join(format!("{}.json", root_address.to_hex()))
    }
}

impl ChunkSource for DiskStore {
    fn get(&self, addr: &Address) -> Fetch {
        match fs::read(self.chunk_path(addr)) {
            Ok(bytes) => Fetch::hit(bytes, 0.0),
            Err(_) => Fetch::miss(0.0),
        }
    }

    fn put(&self, addr: Address, bytes: Vec<u8>) {
        // content-addressed: an existing file already holds these bytes
        let path = self.chunk_path(&addr);
        if !path.exists() {
            let _ = fs::write(path, bytes);
        }
    }
}

/// Latency distribution for simulated gets, in milliseconds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LatencyModel {
    Constant(f64),
    Uniform { lo: f64, hi: f64 },
    LogNormal { mu: f64, sigma: f64 },
}

impl Default for LatencyModel {
    fn default() -> Self {
        LatencyModel::Constant(0.0)
    }
}

impl LatencyModel {
    /// Parse `constant:MS`, `uniform:LO,HI` or `lognormal:MU,SIGMA`.
    pub fn parse(spec: &str) -> Result<Self> {
        let bad = || Error::Domain(format!("bad latency spec '{spec}'"));
        let (kind, args) = spec.split_once(':').ok_or_else(bad)?;
        let nums: Vec<f64> = args
            .split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        match (kind, nums.as_slice()) {
            ("constant", [ms]) => Ok(LatencyModel::Constant(*ms)),
            ("uniform", [lo, hi]) if lo <= hi => Ok(LatencyModel::Uniform { lo: *lo, hi: *hi }),
            ("lognormal", [mu, sigma]) if *sigma >= 0.0 => Ok(LatencyModel::LogNormal {
                mu: *mu,
                sigma: *sigma,
            }),
            _ => Err(bad()),
        }
    }
}

/// Whether failures are re-rolled per request or decided once per address.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum FailureMode {
    /// A seeded coin per address marks the chunk lost for the whole run —
    /// erasure semantics, the default for availability experiments.
    #[default]
    PerChunkPermanent,
    /// Every get fails independently — contention semantics for latency
    /// and race experiments.
    PerGetTransient,
}

impl FailureMode {
    pub fn parse(spec: &str) -> Result<Self> {
        match spec {
            "permanent" | "per-chunk" => Ok(FailureMode::PerChunkPermanent),
            "transient" | "per-get" => Ok(FailureMode::PerGetTransient),
            other => Err(Error::Domain(format!("bad failure mode '{other}'"))),
        }
    }
}

/// A neighbourhood that always fails: addresses whose leading `depth` bits
/// equal `bits`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DeadPrefix {
    pub bits: u32,
    pub depth: u32,
}

impl DeadPrefix {
    /// Parse a binary prefix string such as `"00"` or `"1011"`.
    pub fn parse(spec: &str) -> Result<Self> {
        let depth = spec.len() as u32;
        if depth == 0 || depth > 32 || !spec.bytes().all(|b| b == b'0' || b == b'1') {
            return Err(Error::Domain(format!("bad prefix '{spec}'")));
        }
        let bits = u32::from_str_radix(spec, 2).expect("validated binary digits");
        Ok(DeadPrefix { bits, depth })
    }

    pub fn matches(&self, addr: &Address) -> bool {
        addr.prefix_bits(self.depth) == self.bits
    }
}

/// Simulator configuration.
#[derive(Clone, Debug, Default)]
pub struct SimConfig {
    pub seed: u64,
    /// Per-get (or per-chunk) failure probability in `[0, 1]`.
    pub eps: f64,
    pub latency: LatencyModel,
    pub failure_mode: FailureMode,
    pub dead_prefixes: Vec<DeadPrefix>,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.eps) || self.eps.is_nan() {
            return Err(Error::Domain(format!("eps {} outside [0,1]", self.eps)));
        }
        Ok(())
    }
}

const DOMAIN_FAILURE: u64 = 0x464c;
const DOMAIN_LATENCY: u64 = 0x4c54;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn mix(parts: &[u64]) -> u64 {
    let mut x = 0x9e3779b97f4a7c15u64;
    for &p in parts {
        x = splitmix64(x ^ p);
    }
    x
}

fn fold_address(addr: &Address) -> u64 {
    let bytes = addr.as_bytes();
    let mut x = 0u64;
    for word in bytes.chunks(8) {
        let mut le = [0u8; 8];
        le.copy_from_slice(word);
        x = splitmix64(x ^ u64::from_le_bytes(le));
    }
    x
}

/// Uniform draw in `[0, 1)` from the top 53 bits.
#[inline]
fn unit(x: u64) -> f64 {
    (x >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Fault-injecting view over an inner source. Stored data lives in the
/// inner store; this wrapper only decides losses and latencies.
pub struct SimStore<'a, S: ChunkSource> {
    inner: &'a S,
    cfg: SimConfig,
    calls: Mutex<HashMap<Address, u64>>,
    requests: AtomicU64,
}

impl<'a, S: ChunkSource> SimStore<'a, S> {
    pub fn new(inner: &'a S, cfg: SimConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(SimStore {
            inner,
            cfg,
            calls: Mutex::new(HashMap::new()),
            requests: AtomicU64::new(0),
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    /// Total gets issued against this view.
    pub fn request_count(&self) -> u64 {
        self.requests.load(Ordering::Relaxed)
    }

    fn next_call(&self, addr: &Address) -> u64 {
        let mut calls = self.calls.lock().unwrap();
        let counter = calls.entry(*addr).or_insert(0);
        let current = *counter;
        *counter += 1;
        current
    }

    fn fails(&self, addr: &Address, call: u64) -> bool {
        if self.cfg.dead_prefixes.iter().any(|p| p.matches(addr)) {
            return true;
        }
        if self.cfg.eps <= 0.0 {
            return false;
        }
        let fold = fold_address(addr);
        let key = match self.cfg.failure_mode {
            FailureMode::PerChunkPermanent => mix(&[self.cfg.seed, DOMAIN_FAILURE, fold]),
            FailureMode::PerGetTransient => mix(&[self.cfg.seed, DOMAIN_FAILURE, fold, call]),
        };
        unit(key) < self.cfg.eps
    }

    fn latency(&self, addr: &Address, call: u64) -> f64 {
        let key = mix(&[self.cfg.seed, DOMAIN_LATENCY, fold_address(addr), call]);
        match self.cfg.latency {
            LatencyModel::Constant(ms) => ms,
            LatencyModel::Uniform { lo, hi } => lo + unit(key) * (hi - lo),
            LatencyModel::LogNormal { mu, sigma } => {
                // Box-Muller from two independent draws off the same key
                let u1 = unit(key).max(f64::MIN_POSITIVE);
                let u2 = unit(splitmix64(key ^ 0x5ca1ab1e));
                let z = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
                (mu + sigma * z).exp()
            }
        }
    }
}

impl<S: ChunkSource> ChunkSource for SimStore<'_, S> {
    fn get(&self, addr: &Address) -> Fetch {
        self.requests.fetch_add(1, Ordering::Relaxed);
        let call = self.next_call(addr);
        let latency = self.latency(addr, call);
        if self.fails(addr, call) {
            return Fetch::miss(latency);
        }
        match self.inner.get(addr).data {
            Some(bytes) => Fetch::hit(bytes, latency),
            None => Fetch::miss(latency),
        }
    }

    fn put(&self, addr: Address, bytes: Vec<u8>) {
        self.inner.put(addr, bytes);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chunk::keccak256;

    fn addr(n: u64) -> Address {
        Address(keccak256(&[&n.to_le_bytes()]))
    }

    fn store_with(n: u64) -> MemStore {
        let store = MemStore::new();
        for i in 0..n {
            store.put(addr(i), i.to_le_bytes().to_vec());
        }
        store
    }

    #[test]
    fn put_is_idempotent_and_typed() {
        let store = MemStore::new();
        let chunk = Chunk::leaf(b"dedup me".to_vec()).unwrap();
        let a1 = store.put_chunk(&chunk);
        let a2 = store.put_chunk(&chunk);
        assert_eq!(a1, a2);
        assert_eq!(store.len(), 1);
        assert_eq!(store.get_chunk(&a1).unwrap(), chunk);

        // SOC of the same payload stores separately
        let mut id = *chunk.address().as_bytes();
        id[31] = 0;
        let soc = SocChunk {
            id,
            owner: crate::chunk::REPLICA_OWNER,
            wrapped: chunk,
        };
        let soc_addr = store.put_soc(&soc);
        assert_ne!(soc_addr, a1);
        assert_eq!(store.len(), 2);
    }

    #[test]
    fn sim_eps_zero_and_one() {
        let inner = store_with(16);
        let clean = SimStore::new(
            &inner,
            SimConfig {
                seed: 1,
                eps: 0.0,
                ..Default::default()
            },
        )
        .unwrap();
        for i in 0..16 {
            assert!(clean.get(&addr(i)).data.is_some());
        }

        let dead = SimStore::new(
            &inner,
            SimConfig {
                seed: 1,
                eps: 1.0,
                ..Default::default()
            },
        )
        .unwrap();
        for i in 0..16 {
            assert!(dead.get(&addr(i)).data.is_none());
        }
    }

    #[test]
    fn transient_failure_rate_within_3_sigma() {
        let inner = store_with(1000);
        let sim = SimStore::new(
            &inner,
            SimConfig {
                seed: 99,
                eps: 0.1,
                failure_mode: FailureMode::PerGetTransient,
                ..Default::default()
            },
        )
        .unwrap();
        let mut failures = 0u64;
        let trials = 100_000u64;
        for call in 0..trials {
            if sim.get(&addr(call % 1000)).data.is_none() {
                failures += 1;
            }
        }
        let rate = failures as f64 / trials as f64;
        assert!((rate - 0.1).abs() < 0.005, "failure rate {rate}");
        assert_eq!(sim.request_count(), trials);
    }

    #[test]
    fn permanent_mode_is_stable_per_address() {
        let inner = store_with(400);
        let sim = SimStore::new(
            &inner,
            SimConfig {
                seed: 7,
                eps: 0.3,
                failure_mode: FailureMode::PerChunkPermanent,
                ..Default::default()
            },
        )
        .unwrap();
        for i in 0..400 {
            let first = sim.get(&addr(i)).data.is_some();
            for _ in 0..4 {
                assert_eq!(sim.get(&addr(i)).data.is_some(), first);
            }
        }
    }

    #[test]
    fn determinism_under_seed() {
        let inner = store_with(64);
        let run = |seed: u64| -> (Vec<bool>, Vec<f64>) {
            let sim = SimStore::new(
                &inner,
                SimConfig {
                    seed,
                    eps: 0.2,
                    latency: LatencyModel::Uniform { lo: 5.0, hi: 50.0 },
                    failure_mode: FailureMode::PerGetTransient,
                    ..Default::default()
                },
            )
            .unwrap();
            let mut hits = Vec::new();
            let mut lats = Vec::new();
            for round in 0..3 {
                for i in 0..64 {
                    let f = sim.get(&addr((i + round) % 64));
                    hits.push(f.data.is_some());
                    lats.push(f.latency_ms);
                }
            }
            (hits, lats)
        };
        assert_eq!(run(42), run(42));
        assert_ne!(run(42).0, run(43).0);
    }

    #[test]
    fn per_address_keying_ignores_interleaving() {
        let inner = store_with(2);
        let trace = |order: &[u64]| -> Vec<(u64, bool)> {
            let sim = SimStore::new(
                &inner,
                SimConfig {
                    seed: 5,
                    eps: 0.5,
                    failure_mode: FailureMode::PerGetTransient,
                    ..Default::default()
                },
            )
            .unwrap();
            order
                .iter()
                .map(|&i| (i, sim.get(&addr(i)).data.is_some()))
                .collect()
        };
        // per-address outcome sequences are identical however calls interleave
        let a = trace(&[0, 0, 1, 1, 0, 1]);
        let b = trace(&[0, 1, 0, 1, 1, 0]);
        let seq = |t: &[(u64, bool)], which: u64| -> Vec<bool> {
            t.iter().filter(|(i, _)| *i == which).map(|(_, h)| *h).collect()
        };
        assert_eq!(seq(&a, 0), seq(&b, 0));
        assert_eq!(seq(&a, 1), seq(&b, 1));
    }

    #[test]
    fn failures_uncorrelated_across_addresses() {
        let inner = store_with(2000);
        let sim = SimStore::new(
            &inner,
            SimConfig {
                seed: 11,
                eps: 0.5,
                failure_mode: FailureMode::PerChunkPermanent,
                ..Default::default()
            },
        )
        .unwrap();
        let outcomes: Vec<f64> = (0..2000)
            .map(|i| if sim.get(&addr(i)).data.is_some() { 1.0 } else { 0.0 })
            .collect();
        let mean = outcomes.iter().sum::<f64>() / outcomes.len() as f64;
        let mut cov = 0.0;
        let mut var = 0.0;
        for w in outcomes.windows(2) {
            cov += (w[0] - mean) * (w[1] - mean);
        }
        for o in &outcomes {
            var += (o - mean) * (o - mean);
        }
        let corr = cov / var;
        assert!(corr.abs() < 0.08, "lag-1 correlation {corr}");
    }

    #[test]
    fn dead_prefix_kills_neighbourhood() {
        let inner = store_with(512);
        let sim = SimStore::new(
            &inner,
            SimConfig {
                seed: 3,
                eps: 0.0,
                dead_prefixes: vec![DeadPrefix::parse("00").unwrap()],
                ..Default::default()
            },
        )
        .unwrap();
        let mut dead = 0;
        for i in 0..512 {
            let a = addr(i);
            let got = sim.get(&a).data.is_some();
            if a.prefix_bits(2) == 0 {
                assert!(!got, "address in dead prefix served");
                dead += 1;
            } else {
                assert!(got, "address outside dead prefix failed");
            }
        }
        assert!(dead > 64, "expected roughly a quarter dead, got {dead}");
    }

    #[test]
    fn latency_models_sample_in_range() {
        let inner = store_with(1);
        let sim = SimStore::new(
            &inner,
            SimConfig {
                seed: 8,
                latency: LatencyModel::Uniform { lo: 10.0, hi: 100.0 },
                ..Default::default()
            },
        )
        .unwrap();
        let mut sum = 0.0;
        for _ in 0..10_000 {
            let l = sim.get(&addr(0)).latency_ms;
            assert!((10.0..100.0).contains(&l));
            sum += l;
        }
        let mean = sum / 10_000.0;
        assert!((mean - 55.0).abs() < 1.5, "uniform mean {mean}");

        assert_eq!(LatencyModel::parse("constant:5").unwrap(), LatencyModel::Constant(5.0));
        assert_eq!(
            LatencyModel::parse("uniform:10,100").unwrap(),
            LatencyModel::Uniform { lo: 10.0, hi: 100.0 }
        );
        assert!(LatencyModel::parse("uniform:100,10").is_err());
        assert!(LatencyModel::parse("gamma:1").is_err());
    }

    #[test]
    fn concurrent_gets_are_safe() {
        let inner = store_with(64);
        let sim = SimStore::new(
            &inner,
            SimConfig {
                seed: 21,
                eps: 0.2,
                failure_mode: FailureMode::PerGetTransient,
                ..Default::default()
            },
        )
        .unwrap();
        std::thread::scope(|scope| {
            for t in 0..8 {
                let sim = &sim;
                scope.spawn(move || {
                    for i in 0..64 {
                        sim.get(&addr((i + t) % 64));
                    }
                });
            }
        });
        assert_eq!(sim.request_count(), 8 * 64);
    }

    #[test]
    fn disk_store_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let store = DiskStore::open(dir.path()).unwrap();
        let chunk = Chunk::leaf(b"on disk".to_vec()).unwrap();
        let a = store.put_chunk(&chunk);
        assert_eq!(store.get_chunk(&a).unwrap(), chunk);
        assert!(store.chunk_path(&a).exists());
        assert!(store.get(&addr(1)).data.is_none());
    }
}
