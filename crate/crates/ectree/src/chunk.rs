//! Chunks, addresses, references and the single-owner chunk layout.
//!
//! A chunk is the unit of storage: an 8-byte little-endian span (the number
//! of data bytes subsumed under the chunk) followed by a payload of at most
//! 4096 bytes. Its content address is `Keccak256(span_le8 || payload)`.
//! References point at chunks with either a bare 32-byte address or, for
//! encrypted content, an address plus a 32-byte decryption key.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha3::{Digest, Keccak256};

use crate::{Error, Result};

/// Maximum chunk payload size in bytes.
pub const MAX_PAYLOAD: usize = 4096;

/// Serialized size of the span prefix.
pub const SPAN_SIZE: usize = 8;

/// Size of an address / hash segment.
pub const ADDRESS_SIZE: usize = 32;

/// Size of an owner (Ethereum-style) address.
pub const OWNER_SIZE: usize = 20;

/// Fixed owner of all dispersed-replica SOCs. The private key behind this
/// address is public by convention, so anyone can recreate the replicas.
pub const REPLICA_OWNER: [u8; OWNER_SIZE] = [
    0xdc, 0x5b, 0x20, 0x84, 0x7f, 0x43, 0xd6, 0x79, 0x28, 0xf4, 0x9c, 0xd4, 0xf8, 0x5d, 0x69,
    0x6b, 0x5a, 0x76, 0x17, 0xb5,
];

/// Keccak256 digest helper used for all addressing in this crate.
pub fn keccak256(parts: &[&[u8]]) -> [u8; 32] {
    let mut hasher = Keccak256::new();
    for p in parts {
        hasher.update(p);
    }
    hasher.finalize().into()
}

/// A 32-byte chunk or overlay address.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Address(pub [u8; ADDRESS_SIZE]);

impl Address {
    pub fn from_slice(bytes: &[u8]) -> Result<Self> {
        if bytes.len() != ADDRESS_SIZE {
            return Err(Error::BadLength {
                what: "address",
                expected: ADDRESS_SIZE,
                got: bytes.len(),
            });
        }
        let mut a = [0u8; ADDRESS_SIZE];
        a.copy_from_slice(bytes);
        Ok(Address(a))
    }

    pub fn from_hex(s: &str) -> Result<Self> {
        let bytes = hex::decode(s.trim().trim_start_matches("0x"))
            .map_err(|e| Error::BadHex(e.to_string()))?;
        Self::from_slice(&bytes)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn as_bytes(&self) -> &[u8; ADDRESS_SIZE] {
        &self.0
    }

    /// The `depth` leading bits as a big-endian integer, `depth <= 32`.
    pub fn prefix_bits(&self, depth: u32) -> u32 {
        assert!(depth <= 32);
        if depth == 0 {
            return 0;
        }
        let word = u32::from_be_bytes([self.0[0], self.0[1], self.0[2], self.0[3]]);
        word >> (32 - depth)
    }
}

impl fmt::Debug for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Address({})", self.to_hex())
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// Shared leading bits of two addresses, big-endian bit order; 256 iff equal.
pub fn proximity_order(a: &Address, b: &Address) -> u32 {
    for (idx, (x, y)) in a.0.iter().zip(b.0.iter()).enumerate() {
        let diff = x ^ y;
        if diff != 0 {
            return idx as u32 * 8 + diff.leading_zeros();
        }
    }
    256
}

/// A span-prefixed chunk.
#[derive(Clone, PartialEq, Eq)]
pub struct Chunk {
    span: u64,
    payload: Vec<u8>,
}

impl Chunk {
    /// Build a chunk with an explicit span. The span is not required to
    /// relate to the payload (parity chunks carry arbitrary span bytes);
    /// only the payload bound is enforced.
    pub fn new(span: u64, payload: Vec<u8>) -> Result<Self> {
        if payload.len() > MAX_PAYLOAD {
            return Err(Error::PayloadTooLarge(payload.len()));
        }
        Ok(Chunk { span, payload })
    }

    /// A leaf chunk: span equals the payload length.
    pub fn leaf(payload: Vec<u8>) -> Result<Self> {
        let span = payload.len() as u64;
        Chunk::new(span, payload)
    }

    pub fn span(&self) -> u64 {
        self.span
    }

    pub fn payload(&self) -> &[u8] {
        &self.payload
    }

    pub fn is_pac(&self) -> bool {
        self.span > MAX_PAYLOAD as u64
    }

    /// Serialize as `span_le8 || payload`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(SPAN_SIZE + self.payload.len());
        out.extend_from_slice(&self.span.to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < SPAN_SIZE {
            return Err(Error::BadLength {
                what: "chunk",
                expected: SPAN_SIZE,
                got: bytes.len(),
            });
        }
        let mut span_bytes = [0u8; SPAN_SIZE];
        span_bytes.copy_from_slice(&bytes[..SPAN_SIZE]);
        Chunk::new(u64::from_le_bytes(span_bytes), bytes[SPAN_SIZE..].to_vec())
    }

    pub fn address(&self) -> Address {
        content_address(self)
    }
}

impl fmt::Debug for Chunk {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Chunk(span={}, payload={}B)", self.span, self.payload.len())
    }
}

/// Content address of a chunk: `Keccak256(span_le8 || payload)`.
pub fn content_address(chunk: &Chunk) -> Address {
    Address(keccak256(&[&chunk.span.to_le_bytes(), chunk.payload()]))
}

/// Counter-mode XOR keystream keyed through Keccak256. Involutive: applying
/// it twice with the same key restores the original chunk. The span stays
/// in plaintext so a reconstructed chunk can be trimmed from its own bytes.
pub fn encrypt_chunk(chunk: &Chunk, key: &[u8; 32]) -> Chunk {
    let mut payload = chunk.payload().to_vec();
    for (block_idx, block) in payload.chunks_mut(32).enumerate() {
        let stream = keccak256(&[key, &(block_idx as u32).to_le_bytes()]);
        for (b, s) in block.iter_mut().zip(stream.iter()) {
            *b ^= s;
        }
    }
    Chunk {
        span: chunk.span,
        payload,
    }
}

/// SOC address: `Keccak256(id || owner)`.
pub fn soc_address(id: &[u8; 32], owner: &[u8; OWNER_SIZE]) -> Address {
    Address(keccak256(&[id, owner]))
}

/// A single-owner chunk wrapping a replicated content chunk. The first 31
/// bytes of the id must equal the wrapped chunk's content address; byte 31
/// is the mining nonce that disperses the SOC address.
#[derive(Clone, PartialEq, Eq)]
pub struct SocChunk {
    pub id: [u8; 32],
    pub owner: [u8; OWNER_SIZE],
    pub wrapped: Chunk,
}

impl SocChunk {
    pub fn address(&self) -> Address {
        soc_address(&self.id, &self.owner)
    }

    /// `id (32) || owner (20) || wrapped chunk serialization`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let wrapped = self.wrapped.to_bytes();
        let mut out = Vec::with_capacity(32 + OWNER_SIZE + wrapped.len());
        out.extend_from_slice(&self.id);
        out.extend_from_slice(&self.owner);
        out.extend_from_slice(&wrapped);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let header = 32 + OWNER_SIZE;
        if bytes.len() < header + SPAN_SIZE {
            return Err(Error::BadLength {
                what: "soc chunk",
                expected: header + SPAN_SIZE,
                got: bytes.len(),
            });
        }
        let mut id = [0u8; 32];
        id.copy_from_slice(&bytes[..32]);
        let mut owner = [0u8; OWNER_SIZE];
        owner.copy_from_slice(&bytes[32..header]);
        Ok(SocChunk {
            id,
            owner,
            wrapped: Chunk::from_bytes(&bytes[header..])?,
        })
    }
}

impl fmt::Debug for SocChunk {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SocChunk(addr={}, {:?})", self.address(), self.wrapped)
    }
}

/// Pointer to a chunk: bare address, or address plus decryption key.
/// Serializes to 32 or 64 bytes. Parity chunk references never carry a key.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Reference {
    pub address: Address,
    pub key: Option<[u8; 32]>,
}

impl Reference {
    pub fn plain(address: Address) -> Self {
        Reference { address, key: None }
    }

    pub fn encrypted(address: Address, key: [u8; 32]) -> Self {
        Reference {
            address,
            key: Some(key),
        }
    }

    pub fn serialized_len(&self) -> usize {
        match self.key {
            Some(_) => 64,
            None => 32,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.serialized_len());
        out.extend_from_slice(&self.address.0);
        if let Some(key) = &self.key {
            out.extend_from_slice(key);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        match bytes.len() {
            32 => Ok(Reference::plain(Address::from_slice(bytes)?)),
            64 => {
                let mut key = [0u8; 32];
                key.copy_from_slice(&bytes[32..]);
                Ok(Reference::encrypted(Address::from_slice(&bytes[..32])?, key))
            }
            n => Err(Error::BadLength {
                what: "reference",
                expected: 32,
                got: n,
            }),
        }
    }

    pub fn from_hex(s: &str) -> Result<Self> {
        let bytes = hex::decode(s.trim().trim_start_matches("0x"))
            .map_err(|e| Error::BadHex(e.to_string()))?;
        Self::from_bytes(&bytes)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.to_bytes())
    }
}

impl fmt::Display for Reference {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    // Keccak-256 (not SHA3-256): pins the padding variant.
    #[test]
    fn keccak_known_vectors() {
        assert_eq!(
            hex::encode(keccak256(&[b""])),
            "c5d2460186f7233c927e7db2dcc703c0e500b653ca82273b7bfad8045d85a470"
        );
        assert_eq!(
            hex::encode(keccak256(&[b"abc"])),
            "4e03657aea45a94fc7d47ba826c8d667c0d1e6e33a64a036ec44f58fa12d6c45"
        );
    }

    #[test]
    fn content_address_golden() {
        let chunk = Chunk::leaf(b"hello".to_vec()).unwrap();
        assert_eq!(chunk.span(), 5);
        assert_eq!(
            chunk.address().to_hex(),
            "0a7cefb6cd9edbc5315f17e76b31ee7b229b15469fae985b8757da433da5841e"
        );
        let empty = Chunk::leaf(Vec::new()).unwrap();
        assert_eq!(
            empty.address().to_hex(),
            "011b4d03dd8c01f1049143cf9c4c817e4b167f1d1b83e5c6f0f10d89ba1e7bce"
        );
    }

    #[test]
    fn content_address_deterministic_and_sensitive() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(7);
        for _ in 0..1000 {
            let len = rng.gen_range(1..=256);
            let payload: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
            let a = Chunk::leaf(payload.clone()).unwrap();
            let b = Chunk::leaf(payload.clone()).unwrap();
            assert_eq!(a.address(), b.address());

            let mut flipped = payload.clone();
            let pos = rng.gen_range(0..len);
            flipped[pos] ^= 1 << rng.gen_range(0..8);
            let c = Chunk::leaf(flipped).unwrap();
            assert_ne!(a.address(), c.address());
        }
    }

    #[test]
    fn payload_bound_enforced() {
        assert!(Chunk::new(0, vec![0u8; MAX_PAYLOAD]).is_ok());
        assert!(matches!(
            Chunk::new(0, vec![0u8; MAX_PAYLOAD + 1]),
            Err(Error::PayloadTooLarge(_))
        ));
    }

    #[test]
    fn serialization_round_trip() {
        let chunk = Chunk::new(4097, vec![7u8; 160]).unwrap();
        let bytes = chunk.to_bytes();
        assert_eq!(bytes.len(), SPAN_SIZE + 160);
        assert_eq!(Chunk::from_bytes(&bytes).unwrap(), chunk);
    }

    #[test]
    fn proximity_order_basics() {
        let a = Address([0u8; 32]);
        assert_eq!(proximity_order(&a, &a), 256);

        let mut b = Address([0u8; 32]);
        b.0[0] = 0x80;
        assert_eq!(proximity_order(&a, &b), 0);

        let mut x = Address([0u8; 32]);
        x.0[0] = 0xf0;
        let mut y = Address([0u8; 32]);
        y.0[0] = 0xf8;
        assert_eq!(proximity_order(&x, &y), 4);
    }

    #[test]
    fn proximity_order_symmetry_and_flip() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(11);
        for _ in 0..200 {
            let mut a = [0u8; 32];
            let mut b = [0u8; 32];
            rng.fill(&mut a);
            rng.fill(&mut b);
            let (a, b) = (Address(a), Address(b));
            let po = proximity_order(&a, &b);
            assert_eq!(po, proximity_order(&b, &a));
            if po < 256 {
                // flipping the first differing bit in b extends the shared prefix
                let mut c = b;
                c.0[(po / 8) as usize] ^= 0x80 >> (po % 8);
                assert!(proximity_order(&a, &c) > po);
            }
        }
    }

    #[test]
    fn encryption_involution_and_keys_differ() {
        let chunk = Chunk::leaf(b"some leaf data".to_vec()).unwrap();
        let zero = [0u8; 32];
        let ones = [0xffu8; 32];

        let enc = encrypt_chunk(&chunk, &zero);
        assert_ne!(enc.payload(), chunk.payload());
        assert_eq!(enc.span(), chunk.span());
        assert_eq!(encrypt_chunk(&enc, &zero), chunk);

        let enc_ones = encrypt_chunk(&chunk, &ones);
        assert_ne!(enc.payload(), enc_ones.payload());
    }

    #[test]
    fn encryption_round_trip_random() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(23);
        for _ in 0..5000 {
            let len = rng.gen_range(0..=200);
            let payload: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
            let mut key = [0u8; 32];
            rng.fill(&mut key);
            let chunk = Chunk::leaf(payload).unwrap();
            assert_eq!(encrypt_chunk(&encrypt_chunk(&chunk, &key), &key), chunk);
        }
    }

    #[test]
    fn soc_address_golden() {
        let mut id = [0u8; 32];
        for (i, b) in id.iter_mut().enumerate() {
            *b = i as u8;
        }
        assert_eq!(
            soc_address(&id, &REPLICA_OWNER).to_hex(),
            "2dbe3017cdb0d4b72e2b052ab0fdfd3a9573462f6ecc7b6ce92a2899c01f731c"
        );

        let mut id2 = id;
        id2[31] ^= 1;
        assert_ne!(soc_address(&id, &REPLICA_OWNER), soc_address(&id2, &REPLICA_OWNER));

        let other_owner = [0xabu8; OWNER_SIZE];
        assert_ne!(soc_address(&id, &REPLICA_OWNER), soc_address(&id, &other_owner));
    }

    #[test]
    fn soc_serialization_round_trip() {
        let wrapped = Chunk::leaf(b"root".to_vec()).unwrap();
        let mut id = *wrapped.address().as_bytes();
        id[31] = 9;
        let soc = SocChunk {
            id,
            owner: REPLICA_OWNER,
            wrapped,
        };
        let bytes = soc.to_bytes();
        assert_eq!(SocChunk::from_bytes(&bytes).unwrap(), soc);
    }

    #[test]
    fn reference_round_trip() {
        let addr = Address([3u8; 32]);
        let plain = Reference::plain(addr);
        assert_eq!(plain.to_bytes().len(), 32);
        assert_eq!(Reference::from_bytes(&plain.to_bytes()).unwrap(), plain);

        let enc = Reference::encrypted(addr, [5u8; 32]);
        assert_eq!(enc.to_bytes().len(), 64);
        assert_eq!(Reference::from_bytes(&enc.to_bytes()).unwrap(), enc);
        assert_eq!(Reference::from_hex(&enc.to_hex()).unwrap(), enc);

        assert!(Reference::from_bytes(&[0u8; 40]).is_err());
    }
}
