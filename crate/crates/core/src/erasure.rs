//! Systematic Reed-Solomon erasure code over GF(2^16).
//!
//! A share is read as a sequence of big-endian 16-bit symbols ("lanes"); each
//! lane is coded independently. The `k` data symbols are the values of a
//! polynomial of degree `< k` at the points `0..k`; the parity symbols are its
//! values at `k..2k`. Any `k` of the `2k` symbols determine the rest, by
//! Lagrange interpolation.

use std::sync::OnceLock;

use thiserror::Error;

pub const MAX_K: usize = 16384;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ErasureError {
    #[error("k = {0} outside 1..={MAX_K}")]
    KOutOfRange(usize),
    #[error("expected {expected} shares, got {got}")]
    WrongShareCount { expected: usize, got: usize },
    #[error("shares have unequal lengths")]
    UnequalLengths,
    #[error("share length {0} is not a whole number of 16-bit symbols")]
    OddLength(usize),
    #[error("position {0} outside the codeword")]
    PositionOutOfRange(usize),
    #[error("position {0} given twice")]
    DuplicatePosition(usize),
    #[error("unrecoverable: {present} of {needed} required symbols present")]
    Unrecoverable { present: usize, needed: usize },
}

/// Arithmetic in GF(2^16) modulo x^16 + x^12 + x^3 + x + 1.
pub mod gf {
    use std::sync::OnceLock;

    pub const POLY: u32 = 0x1100B;
    pub const ORDER: usize = 65535;

    pub(crate) struct Tables {
        pub exp: Vec<u16>,
        pub log: Vec<u32>,
    }

    pub(crate) fn tables() -> &'static Tables {
        static T: OnceLock<Tables> = OnceLock::new();
        T.get_or_init(|| {
            let mut exp = vec![0u16; 2 * ORDER];
            let mut log = vec![0u32; ORDER + 1];
            let mut x: u32 = 1;
            for i in 0..ORDER {
                exp[i] = x as u16;
                log[x as usize] = i as u32;
                x <<= 1;
                if x & 0x10000 != 0 {
                    x ^= POLY;
                }
            }
            for i in ORDER..2 * ORDER {
                exp[i] = exp[i - ORDER];
            }
            Tables { exp, log }
        })
    }

    #[inline]
    pub fn mul(a: u16, b: u16) -> u16 {
        if a == 0 || b == 0 {
            return 0;
        }
        let t = tables();
        t.exp[(t.log[a as usize] + t.log[b as usize]) as usize]
    }

    pub fn inv(a: u16) -> u16 {
        assert!(a != 0, "zero has no inverse");
        let t = tables();
        t.exp[ORDER - t.log[a as usize] as usize]
    }

    pub fn div(a: u16, b: u16) -> u16 {
        mul(a, inv(b))
    }

    /// Schoolbook carry-less multiply and reduce, independent of the tables.
    pub fn mul_slow(a: u16, b: u16) -> u16 {
        let mut acc: u32 = 0;
        for i in 0..16 {
            if b >> i & 1 == 1 {
                acc ^= (a as u32) << i;
            }
        }
        for i in (16..32).rev() {
            if acc >> i & 1 == 1 {
                acc ^= POLY << (i - 16);
            }
        }
        acc as u16
    }
}

/// `dst ^= c * src`, lane by lane.
fn mul_acc(dst: &mut [u8], src: &[u8], c: u16) {
    if c == 0 {
        return;
    }
    let t = gf::tables();
    let log_c = t.log[c as usize];
    for (d, s) in dst.chunks_exact_mut(2).zip(src.chunks_exact(2)) {
        let sym = u16::from_be_bytes([s[0], s[1]]);
        if sym != 0 {
            let p = t.exp[(t.log[sym as usize] + log_c) as usize];
            let cur = u16::from_be_bytes([d[0], d[1]]);
            d.copy_from_slice(&(cur ^ p).to_be_bytes());
        }
    }
}

/// Lagrange basis values `L_i(target)` for interpolation points `xs`.
/// `target` must not be one of the points.
fn lagrange_row(xs: &[u16], weights: &[u16], target: u16) -> Vec<u16> {
    let ell = xs.iter().fold(1u16, |acc, &x| gf::mul(acc, target ^ x));
    xs.iter()
        .zip(weights)
        .map(|(&x, &w)| gf::mul(gf::mul(w, ell), gf::inv(target ^ x)))
        .collect()
}

/// Barycentric weights `1 / prod_{m != i} (x_i - x_m)`.
fn barycentric_weights(xs: &[u16]) -> Vec<u16> {
    xs.iter()
        .enumerate()
        .map(|(i, &xi)| {
            let d = xs
                .iter()
                .enumerate()
                .filter(|&(m, _)| m != i)
                .fold(1u16, |acc, (_, &xm)| gf::mul(acc, xi ^ xm));
            gf::inv(d)
        })
        .collect()
}

fn check_shares<T: AsRef<[u8]>>(shares: &[T]) -> Result<usize, ErasureError> {
    let len = shares.first().map(|s| s.as_ref().len()).unwrap_or(0);
    if shares.iter().any(|s| s.as_ref().len() != len) {
        return Err(ErasureError::UnequalLengths);
    }
    if !len.is_multiple_of(2) {
        return Err(ErasureError::OddLength(len));
    }
    Ok(len)
}

/// A codec for one value of `k`, with the parity coefficients precomputed.
#[derive(Clone, Debug)]
pub struct ReedSolomon {
    k: usize,
    // parity[j * k + i] = L_i(k + j) over the points 0..k
    parity: Vec<u16>,
}

impl ReedSolomon {
    pub fn new(k: usize) -> Result<Self, ErasureError> {
        if !(1..=MAX_K).contains(&k) {
            return Err(ErasureError::KOutOfRange(k));
        }
        let xs: Vec<u16> = (0..k as u16).collect();
        let w = barycentric_weights(&xs);
        let parity = (k..2 * k)
            .flat_map(|t| lagrange_row(&xs, &w, t as u16))
            .collect();
        Ok(ReedSolomon { k, parity })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Extends `k` data shares to the `2k`-share codeword.
    pub fn encode<T: AsRef<[u8]>>(&self, data: &[T]) -> Result<Vec<Vec<u8>>, ErasureError> {
        if data.len() != self.k {
            return Err(ErasureError::WrongShareCount {
                expected: self.k,
                got: data.len(),
            });
        }
        let len = check_shares(data)?;
        let mut out: Vec<Vec<u8>> = data.iter().map(|d| d.as_ref().to_vec()).collect();
        for j in 0..self.k {
            let mut p = vec![0u8; len];
            let row = &self.parity[j * self.k..(j + 1) * self.k];
            for (d, &c) in data.iter().zip(row) {
                mul_acc(&mut p, d.as_ref(), c);
            }
            out.push(p);
        }
        Ok(out)
    }

    /// Rebuilds the whole codeword from any `k` symbols. Uses the `k`
    /// lowest positions given; every output symbol, including those supplied
    /// beyond the first `k`, is re-derived from them.
    pub fn decode(&self, present: &[(usize, &[u8])]) -> Result<Vec<Vec<u8>>, ErasureError> {
        let n = 2 * self.k;
        let mut seen = vec![false; n];
        for &(pos, _) in present {
            if pos >= n {
                return Err(ErasureError::PositionOutOfRange(pos));
            }
            if std::mem::replace(&mut seen[pos], true) {
                return Err(ErasureError::DuplicatePosition(pos));
            }
        }
        if present.len() < self.k {
            return Err(ErasureError::Unrecoverable {
                present: present.len(),
                needed: self.k,
            });
        }
        let mut chosen: Vec<(usize, &[u8])> = present.to_vec();
        chosen.sort_by_key(|&(p, _)| p);
        chosen.truncate(self.k);
        let symbols: Vec<&[u8]> = chosen.iter().map(|&(_, s)| s).collect();
        let len = check_shares(&symbols)?;

        if chosen.iter().enumerate().all(|(i, &(p, _))| i == p) {
            return self.encode(&symbols);
        }
        let xs: Vec<u16> = chosen.iter().map(|&(p, _)| p as u16).collect();
        let w = barycentric_weights(&xs);
        let mut slot: Vec<Option<usize>> = vec![None; n];
        for (i, &(p, _)) in chosen.iter().enumerate() {
            slot[p] = Some(i);
        }
        let data: Vec<Vec<u8>> = (0..self.k)
            .map(|t| match slot[t] {
                Some(i) => symbols[i].to_vec(),
                None => {
                    let mut acc = vec![0u8; len];
                    for (s, c) in symbols.iter().zip(lagrange_row(&xs, &w, t as u16)) {
                        mul_acc(&mut acc, s, c);
                    }
                    acc
                }
            })
            .collect();
        self.encode(&data)
    }
}

fn codec_cache(k: usize) -> Result<std::sync::Arc<ReedSolomon>, ErasureError> {
    use std::collections::HashMap;
    use std::sync::{Arc, Mutex};
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<ReedSolomon>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    if let Some(c) = cache.lock().unwrap().get(&k) {
        return Ok(c.clone());
    }
    let codec = Arc::new(ReedSolomon::new(k)?);
    cache.lock().unwrap().insert(k, codec.clone());
    Ok(codec)
}

/// Shared codec for `k`, built on first use.
pub fn codec(k: usize) -> Result<std::sync::Arc<ReedSolomon>, ErasureError> {
    codec_cache(k)
}

pub fn rs_encode<T: AsRef<[u8]>>(data: &[T]) -> Result<Vec<Vec<u8>>, ErasureError> {
    if data.is_empty() {
        return Err(ErasureError::KOutOfRange(0));
    }
    codec(data.len())?.encode(data)
}

pub fn rs_decode(present: &[(usize, &[u8])], k: usize) -> Result<Vec<Vec<u8>>, ErasureError> {
    codec(k)?.decode(present)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sym(v: u16) -> Vec<u8> {
        v.to_be_bytes().to_vec()
    }

    #[test]
    fn field_tables_are_a_full_cycle() {
        let t = gf::tables();
        let mut seen = vec![false; 65536];
        for &e in &t.exp[..gf::ORDER] {
            assert!(!seen[e as usize]);
            seen[e as usize] = true;
        }
        assert!(!seen[0]);
        for (a, b) in [(3u16, 7u16), (0x8000, 2), (0xffff, 0xffff), (1234, 0), (0x1100, 0xbeef)] {
            assert_eq!(gf::mul(a, b), gf::mul_slow(a, b));
        }
        for a in [1u16, 2, 3, 0x8001, 0xffff] {
            assert_eq!(gf::mul(a, gf::inv(a)), 1);
        }
    }

    #[test]
    fn k1_repeats_the_share() {
        let d = vec![0xab, 0xcd, 0x01, 0x02];
        assert_eq!(rs_encode(std::slice::from_ref(&d)).unwrap(), vec![d.clone(), d]);
    }

    #[test]
    fn k2_parity_is_linear_extrapolation() {
        // P(x) = a + (b - a) x over GF(2^16), so P(2) = a + (a ^ b) * 2 and
        // P(3) = a + (a ^ b) * 3, with + being xor.
        let (a, b) = (0x1234u16, 0xbeefu16);
        let out = rs_encode(&[sym(a), sym(b)]).unwrap();
        let slope = a ^ b;
        assert_eq!(out[2], sym(a ^ gf::mul_slow(slope, 2)));
        assert_eq!(out[3], sym(a ^ gf::mul_slow(slope, 3)));
    }

    fn data(k: usize, len: usize, seed: u8) -> Vec<Vec<u8>> {
        (0..k)
            .map(|i| (0..len).map(|j| (i * 31 + j * 7) as u8 ^ seed).collect())
            .collect()
    }

    #[test]
    fn every_k_subset_decodes_for_small_k() {
        for k in 1..=8usize {
            let d = data(k, 6, k as u8);
            let cw = rs_encode(&d).unwrap();
            let n = 2 * k;
            for mask in 0u32..(1 << n) {
                let present: Vec<(usize, &[u8])> = (0..n)
                    .filter(|i| mask >> i & 1 == 1)
                    .map(|i| (i, cw[i].as_slice()))
                    .collect();
                let res = rs_decode(&present, k);
                if present.len() >= k {
                    assert_eq!(res.unwrap(), cw, "k={k} mask={mask:b}");
                } else {
                    assert_eq!(
                        res,
                        Err(ErasureError::Unrecoverable {
                            present: present.len(),
                            needed: k
                        })
                    );
                }
            }
        }
    }

    #[test]
    fn corruption_shows_up_after_reencode() {
        let k = 4;
        let cw = rs_encode(&data(k, 8, 3)).unwrap();
        for bad in 0..2 * k {
            let mut received = cw.clone();
            received[bad][1] ^= 0x40;
            let present: Vec<(usize, &[u8])> =
                received.iter().enumerate().map(|(i, s)| (i, s.as_slice())).collect();
            let decoded = rs_decode(&present, k).unwrap();
            assert_ne!(decoded, received);
        }
    }

    #[test]
    fn input_validation() {
        assert_eq!(rs_encode::<Vec<u8>>(&[]), Err(ErasureError::KOutOfRange(0)));
        assert_eq!(
            rs_encode(&[vec![1, 2], vec![3]]),
            Err(ErasureError::UnequalLengths)
        );
        assert_eq!(rs_encode(&[vec![1, 2, 3]]), Err(ErasureError::OddLength(3)));
        let s = [0u8, 1];
        assert_eq!(
            rs_decode(&[(0, &s[..]), (0, &s[..])], 1),
            Err(ErasureError::DuplicatePosition(0))
        );
        assert_eq!(
            rs_decode(&[(4, &s[..])], 2),
            Err(ErasureError::PositionOutOfRange(4))
        );
    }

    proptest! {
        #[test]
        fn encoding_is_additive(
            k in 1usize..12,
            a in proptest::collection::vec(any::<u8>(), 24),
            b in proptest::collection::vec(any::<u8>(), 24),
        ) {
            let split = |v: &[u8]| -> Vec<Vec<u8>> {
                (0..k).map(|i| v.iter().cycle().skip(i * 2).take(4).copied().collect()).collect()
            };
            let (da, db) = (split(&a), split(&b));
            let dx: Vec<Vec<u8>> = da.iter().zip(&db)
                .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p ^ q).collect())
                .collect();
            let (ea, eb, ex) = (rs_encode(&da).unwrap(), rs_encode(&db).unwrap(), rs_encode(&dx).unwrap());
            for i in 0..2 * k {
                let sum: Vec<u8> = ea[i].iter().zip(&eb[i]).map(|(p, q)| p ^ q).collect();
                prop_assert_eq!(&ex[i], &sum);
            }
        }
    }
}
