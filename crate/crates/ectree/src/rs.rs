//! Systematic Reed-Solomon erasure codec over GF(2^8).
//!
//! Format note (frozen): the field uses the primitive polynomial
//! `x^8 + x^4 + x^3 + x^2 + 1` (0x11d) with generator element 2. The
//! encoding matrix is the Vandermonde matrix `V[r][c] = r^c` for rows
//! `0..m+k`, normalized by the inverse of its top `m x m` block so the code
//! is systematic. Parity bytes — and therefore parity chunk addresses —
//! depend on this exact construction and must not change.
//!
//! Up to 128 total shards are supported, matching the reference branching
//! factor of a packed address chunk.

use crate::{Error, Result};

/// Maximum total shard count (data + parity).
pub const MAX_SHARDS: usize = 128;

const PRIM_POLY: u16 = 0x11d;

// exp table doubled so products of two logs index without a mod.
static GF_TABLES: ([u8; 256], [u8; 510]) = build_tables();

const fn build_tables() -> ([u8; 256], [u8; 510]) {
    let mut log = [0u8; 256];
    let mut exp = [0u8; 510];
    let mut x: u16 = 1;
    let mut i = 0;
    while i < 255 {
        exp[i] = x as u8;
        exp[i + 255] = x as u8;
        log[x as usize] = i as u8;
        x <<= 1;
        if x & 0x100 != 0 {
            x ^= PRIM_POLY;
        }
        i += 1;
    }
    (log, exp)
}

#[inline]
fn gf_mul(a: u8, b: u8) -> u8 {
    if a == 0 || b == 0 {
        return 0;
    }
    let (log, exp) = (&GF_TABLES.0, &GF_TABLES.1);
    exp[log[a as usize] as usize + log[b as usize] as usize]
}

#[inline]
fn gf_inv(a: u8) -> u8 {
    debug_assert!(a != 0);
    let (log, exp) = (&GF_TABLES.0, &GF_TABLES.1);
    exp[255 - log[a as usize] as usize]
}

#[inline]
fn gf_pow(base: u8, mut power: usize) -> u8 {
    let mut acc = 1u8;
    let mut b = base;
    while power > 0 {
        if power & 1 == 1 {
            acc = gf_mul(acc, b);
        }
        b = gf_mul(b, b);
        power >>= 1;
    }
    acc
}

/// Row-major square matrix inversion by Gauss-Jordan elimination.
/// Vandermonde submatrices over distinct points are always invertible,
/// so a singular input signals corrupted shard bookkeeping.
fn invert(matrix: &[Vec<u8>]) -> Result<Vec<Vec<u8>>> {
    let n = matrix.len();
    let mut work: Vec<Vec<u8>> = matrix
        .iter()
        .enumerate()
        .map(|(r, row)| {
            debug_assert_eq!(row.len(), n);
            let mut w = vec![0u8; 2 * n];
            w[..n].copy_from_slice(row);
            w[n + r] = 1;
            w
        })
        .collect();

    for col in 0..n {
        let pivot = (col..n)
            .find(|&r| work[r][col] != 0)
            .ok_or(Error::SingularMatrix)?;
        work.swap(col, pivot);
        let inv = gf_inv(work[col][col]);
        for v in work[col].iter_mut() {
            *v = gf_mul(*v, inv);
        }
        for row in 0..n {
            if row == col || work[row][col] == 0 {
                continue;
            }
            let factor = work[row][col];
            let (pivot_row, target_row) = if row < col {
                let (a, b) = work.split_at_mut(col);
                (&b[0], &mut a[row])
            } else {
                let (a, b) = work.split_at_mut(row);
                (&a[col], &mut b[0])
            };
            for (t, p) in target_row.iter_mut().zip(pivot_row.iter()) {
                *t ^= gf_mul(factor, *p);
            }
        }
    }
    Ok(work.into_iter().map(|row| row[n..].to_vec()).collect())
}

fn mat_mul(a: &[Vec<u8>], b: &[Vec<u8>]) -> Vec<Vec<u8>> {
    let rows = a.len();
    let inner = b.len();
    let cols = b[0].len();
    let mut out = vec![vec![0u8; cols]; rows];
    for r in 0..rows {
        for i in 0..inner {
            let coeff = a[r][i];
            if coeff == 0 {
                continue;
            }
            for c in 0..cols {
                out[r][c] ^= gf_mul(coeff, b[i][c]);
            }
        }
    }
    out
}

/// Codeword row `out ^= coeff * shard`, the inner loop of encode/decode.
fn accumulate(out: &mut [u8], coeff: u8, shard: &[u8]) {
    if coeff == 0 {
        return;
    }
    if coeff == 1 {
        for (o, s) in out.iter_mut().zip(shard.iter()) {
            *o ^= s;
        }
        return;
    }
    let (log, exp) = (&GF_TABLES.0, &GF_TABLES.1);
    let lc = log[coeff as usize] as usize;
    for (o, s) in out.iter_mut().zip(shard.iter()) {
        if *s != 0 {
            *o ^= exp[lc + log[*s as usize] as usize];
        }
    }
}

/// A systematic encoder/decoder for a fixed `(m, k)` geometry.
pub struct Codec {
    data_shards: usize,
    parity_shards: usize,
    /// `(m+k) x m` encoding matrix; top `m` rows are the identity.
    rows: Vec<Vec<u8>>,
}

impl Codec {
    pub fn new(data_shards: usize, parity_shards: usize) -> Result<Self> {
        if data_shards == 0 {
            return Err(Error::ShardGeometry("at least one data shard required".into()));
        }
        let total = data_shards + parity_shards;
        if total > MAX_SHARDS {
            return Err(Error::ShardGeometry(format!(
                "{data_shards}+{parity_shards} shards exceed the {MAX_SHARDS} limit"
            )));
        }
        let vandermonde: Vec<Vec<u8>> = (0..total)
            .map(|r| (0..data_shards).map(|c| gf_pow(r as u8, c)).collect())
            .collect();
        let top_inv = invert(&vandermonde[..data_shards])?;
        let rows = mat_mul(&vandermonde, &top_inv);
        debug_assert!(rows[..data_shards]
            .iter()
            .enumerate()
            .all(|(r, row)| row.iter().enumerate().all(|(c, &v)| v == u8::from(r == c))));
        Ok(Codec {
            data_shards,
            parity_shards,
            rows,
        })
    }

    pub fn data_shards(&self) -> usize {
        self.data_shards
    }

    pub fn parity_shards(&self) -> usize {
        self.parity_shards
    }

    pub fn total_shards(&self) -> usize {
        self.data_shards + self.parity_shards
    }

    /// Compute the `k` parity shards for `m` equal-length data shards.
    /// Data shards are not modified.
    pub fn encode(&self, data: &[impl AsRef<[u8]>]) -> Result<Vec<Vec<u8>>> {
        if data.len() != self.data_shards {
            return Err(Error::ShardGeometry(format!(
                "expected {} data shards, got {}",
                self.data_shards,
                data.len()
            )));
        }
        let len = data[0].as_ref().len();
        if data.iter().any(|d| d.as_ref().len() != len) {
            return Err(Error::ShardLengthMismatch);
        }
        let mut parities = vec![vec![0u8; len]; self.parity_shards];
        for (p, out) in parities.iter_mut().enumerate() {
            let row = &self.rows[self.data_shards + p];
            for (c, shard) in data.iter().enumerate() {
                accumulate(out, row[c], shard.as_ref());
            }
        }
        Ok(parities)
    }

    /// Fill every missing slot of an `m+k` shard array in place. Requires at
    /// least `m` present shards; present shards are left untouched.
    pub fn reconstruct(&self, shards: &mut [Option<Vec<u8>>]) -> Result<()> {
        self.reconstruct_impl(shards, true)
    }

    /// As `reconstruct`, but only fills the data slots.
    pub fn reconstruct_data(&self, shards: &mut [Option<Vec<u8>>]) -> Result<()> {
        self.reconstruct_impl(shards, false)
    }

    fn reconstruct_impl(&self, shards: &mut [Option<Vec<u8>>], fill_parity: bool) -> Result<()> {
        let total = self.total_shards();
        if shards.len() != total {
            return Err(Error::ShardGeometry(format!(
                "expected {} shard slots, got {}",
                total,
                shards.len()
            )));
        }
        let present: Vec<usize> = (0..total).filter(|&i| shards[i].is_some()).collect();
        if present.len() < self.data_shards {
            return Err(Error::UnrecoverableBatch {
                available: present.len(),
                needed: self.data_shards,
            });
        }
        let len = shards[present[0]].as_ref().unwrap().len();
        if present
            .iter()
            .any(|&i| shards[i].as_ref().unwrap().len() != len)
        {
            return Err(Error::ShardLengthMismatch);
        }

        let missing_data: Vec<usize> =
            (0..self.data_shards).filter(|&i| shards[i].is_none()).collect();
        if !missing_data.is_empty() {
            // Data rows come first in `present`, keeping most of the selected
            // matrix an identity block.
            let selected = &present[..self.data_shards];
            let sub: Vec<Vec<u8>> = selected.iter().map(|&i| self.rows[i].clone()).collect();
            let decode = invert(&sub)?;
            for &target in &missing_data {
                let mut out = vec![0u8; len];
                for (j, &src) in selected.iter().enumerate() {
                    accumulate(&mut out, decode[target][j], shards[src].as_ref().unwrap());
                }
                shards[target] = Some(out);
            }
        }

        if fill_parity {
            for p in self.data_shards..total {
                if shards[p].is_some() {
                    continue;
                }
                let mut out = vec![0u8; len];
                for (c, shard) in shards[..self.data_shards].iter().enumerate() {
                    accumulate(&mut out, self.rows[p][c], shard.as_ref().unwrap());
                }
                shards[p] = Some(out);
            }
        }
        Ok(())
    }
}

/// An `m+k` shard array with explicit geometry, the in-memory unit the
/// hash-tree codec hands to the erasure coder.
pub struct ShardSet {
    codec: Codec,
    pub shards: Vec<Option<Vec<u8>>>,
}

impl ShardSet {
    /// Start from complete data shards; parity slots begin empty.
    pub fn from_data(data: Vec<Vec<u8>>, parity_shards: usize) -> Result<Self> {
        let codec = Codec::new(data.len(), parity_shards)?;
        let mut shards: Vec<Option<Vec<u8>>> = data.into_iter().map(Some).collect();
        shards.resize(codec.total_shards(), None);
        Ok(ShardSet { codec, shards })
    }

    /// Start from a partially filled slot array.
    pub fn from_slots(
        shards: Vec<Option<Vec<u8>>>,
        data_shards: usize,
        parity_shards: usize,
    ) -> Result<Self> {
        if shards.len() != data_shards + parity_shards {
            return Err(Error::ShardGeometry(format!(
                "slot count {} does not match {}+{}",
                shards.len(),
                data_shards,
                parity_shards
            )));
        }
        let codec = Codec::new(data_shards, parity_shards)?;
        Ok(ShardSet { codec, shards })
    }

    pub fn codec(&self) -> &Codec {
        &self.codec
    }

    /// Generate parities into the parity slots and return them.
    pub fn encode(&mut self) -> Result<Vec<Vec<u8>>> {
        let data: Vec<&[u8]> = self.shards[..self.codec.data_shards()]
            .iter()
            .map(|s| s.as_deref().ok_or(Error::ShardLengthMismatch))
            .collect::<Result<_>>()?;
        let parities = self.codec.encode(&data)?;
        for (slot, parity) in self.shards[self.codec.data_shards()..]
            .iter_mut()
            .zip(parities.iter())
        {
            *slot = Some(parity.clone());
        }
        Ok(parities)
    }

    pub fn reconstruct(&mut self) -> Result<()> {
        self.codec.reconstruct(&mut self.shards)
    }
}

/// One-shot systematic encode: `k` parity buffers for the given data buffers.
pub fn rs_encode(data: &[impl AsRef<[u8]>], parity_shards: usize) -> Result<Vec<Vec<u8>>> {
    if parity_shards == 0 {
        if data.is_empty() || data.len() > MAX_SHARDS {
            return Err(Error::ShardGeometry(format!("{} data shards", data.len())));
        }
        return Ok(Vec::new());
    }
    Codec::new(data.len(), parity_shards)?.encode(data)
}

/// One-shot reconstruction of a full `m+k` slot array.
pub fn rs_reconstruct(
    shards: &mut [Option<Vec<u8>>],
    data_shards: usize,
    parity_shards: usize,
) -> Result<()> {
    Codec::new(data_shards, parity_shards)?.reconstruct(shards)
}
