//! Sparse Merkle tree over 256-bit keys.
//!
//! Every one of the 2^256 leaves exists conceptually. An absent key holds the
//! empty value, whose leaf digest is all zeroes; a present key's leaf is
//! `H(0x00 || key || value)`. Interior nodes use the same node hash as
//! [`crate::merkle`], so the default digest one level up is `H(0, 0)`, the
//! next `H(L1, L1)` and so on up to the empty root.
//!
//! Bit `d` of the key (most significant first) picks the child at depth `d`;
//! a set bit goes right.

use std::collections::{BTreeMap, HashMap};
use std::sync::OnceLock;

use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::merkle::{node_hash, Digest, DIGEST_LEN, LEAF_PREFIX};

pub const DEPTH: usize = 256;
pub const KEY_LEN: usize = 32;

pub type Key = [u8; KEY_LEN];

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum SmtError {
    #[error("key must be {KEY_LEN} bytes, got {0}")]
    KeyLength(usize),
    #[error("proof for key {0} does not verify against the root")]
    InvalidProof(String),
    #[error("key {0} is not covered by the witness")]
    NotInWitness(String),
    #[error("duplicate key {0} in witness")]
    DuplicateKey(String),
    #[error("malformed sparse proof encoding")]
    Malformed,
}

pub fn key_from_slice(bytes: &[u8]) -> Result<Key, SmtError> {
    bytes.try_into().map_err(|_| SmtError::KeyLength(bytes.len()))
}

/// Default digest of an empty subtree rooted at each depth (index 256 is the leaf level).
pub fn default_digests() -> &'static [Digest; DEPTH + 1] {
    static DEFAULTS: OnceLock<[Digest; DEPTH + 1]> = OnceLock::new();
    DEFAULTS.get_or_init(|| {
        let mut d = [Digest::ZERO; DEPTH + 1];
        for depth in (0..DEPTH).rev() {
            d[depth] = node_hash(&d[depth + 1], &d[depth + 1]);
        }
        d
    })
}

pub fn empty_root() -> Digest {
    default_digests()[0]
}

pub fn leaf_digest(key: &Key, value: &[u8]) -> Digest {
    if value.is_empty() {
        return Digest::ZERO;
    }
    let mut h = Sha256::new();
    h.update([LEAF_PREFIX]);
    h.update(key);
    h.update(value);
    Digest(h.finalize().into())
}

fn bit(key: &Key, depth: usize) -> bool {
    key[depth / 8] >> (7 - depth % 8) & 1 == 1
}

/// Node identifier: depth plus the key prefix of that length (remaining bits cleared).
type NodeId = (u16, Key);

fn node_id(key: &Key, depth: usize) -> NodeId {
    let mut p = [0u8; KEY_LEN];
    let full = depth / 8;
    p[..full].copy_from_slice(&key[..full]);
    if !depth.is_multiple_of(8) {
        p[full] = key[full] & (0xffu8 << (8 - depth % 8));
    }
    (depth as u16, p)
}

fn sibling_id(key: &Key, depth: usize) -> NodeId {
    let (d, mut p) = node_id(key, depth);
    let b = depth - 1;
    p[b / 8] ^= 1 << (7 - b % 8);
    (d, p)
}

/// Walks from the leaf to the root, returning the new node digests along the
/// path (leaf first, root last) and the number of hash invocations.
fn recompute_path(
    key: &Key,
    leaf: Digest,
    mut sibling: impl FnMut(NodeId) -> Option<Digest>,
) -> Option<(Vec<(NodeId, Digest)>, u64)> {
    let defaults = default_digests();
    let mut path = Vec::with_capacity(DEPTH + 1);
    let mut acc = leaf;
    let mut hashes = 0;
    path.push((node_id(key, DEPTH), acc));
    for depth in (1..=DEPTH).rev() {
        let sib = sibling(sibling_id(key, depth))?;
        let (l, r) = if bit(key, depth - 1) { (sib, acc) } else { (acc, sib) };
        acc = if l == defaults[depth] && r == defaults[depth] {
            defaults[depth - 1]
        } else {
            hashes += 1;
            node_hash(&l, &r)
        };
        path.push((node_id(key, depth - 1), acc));
    }
    Some((path, hashes))
}

/// A membership or non-membership proof with default siblings elided.
///
/// Bit `i` of `bitmap` (byte `i / 8`, mask `1 << (i % 8)`) is set when the
/// sibling at height `i` above the leaf is not the default digest; `siblings`
/// lists exactly those, bottom-up.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SparseProof {
    pub key: Key,
    pub value: Vec<u8>,
    pub bitmap: [u8; 32],
    pub siblings: Vec<Digest>,
}

impl SparseProof {
    fn compress(key: Key, value: Vec<u8>, full: &[Digest]) -> Self {
        let defaults = default_digests();
        let mut bitmap = [0u8; 32];
        let mut siblings = Vec::new();
        for (height, sib) in full.iter().enumerate() {
            if *sib != defaults[DEPTH - height] {
                bitmap[height / 8] |= 1 << (height % 8);
                siblings.push(*sib);
            }
        }
        SparseProof {
            key,
            value,
            bitmap,
            siblings,
        }
    }

    /// All 256 siblings, bottom-up. `None` if the bitmap and sibling list disagree.
    pub fn decompress(&self) -> Option<Vec<Digest>> {
        let defaults = default_digests();
        let mut it = self.siblings.iter();
        let mut out = Vec::with_capacity(DEPTH);
        for height in 0..DEPTH {
            if self.bitmap[height / 8] >> (height % 8) & 1 == 1 {
                out.push(*it.next()?);
            } else {
                out.push(defaults[DEPTH - height]);
            }
        }
        it.next().is_none().then_some(out)
    }

    /// Root implied by this proof for `(key, value)`.
    pub fn compute_root(&self, key: &Key, value: &[u8]) -> Option<Digest> {
        let full = self.decompress()?;
        let sib = |(depth, _): NodeId| Some(full[DEPTH - depth as usize]);
        recompute_path(key, leaf_digest(key, value), sib).map(|(p, _)| p.last().unwrap().1)
    }

    /// Wire format: 32-byte bitmap followed by the included siblings bottom-up.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + self.siblings.len() * DIGEST_LEN);
        out.extend_from_slice(&self.bitmap);
        for s in &self.siblings {
            out.extend_from_slice(&s.0);
        }
        out
    }

    /// Decodes the proof body for a known key and value; returns bytes consumed.
    pub fn from_bytes(key: Key, value: Vec<u8>, bytes: &[u8]) -> Result<(Self, usize), SmtError> {
        let bitmap: [u8; 32] = bytes.get(..32).ok_or(SmtError::Malformed)?.try_into().unwrap();
        let count: usize = bitmap.iter().map(|b| b.count_ones() as usize).sum();
        let end = 32 + count * DIGEST_LEN;
        let body = bytes.get(32..end).ok_or(SmtError::Malformed)?;
        let siblings = body
            .chunks_exact(DIGEST_LEN)
            .map(|c| Digest(c.try_into().unwrap()))
            .collect();
        Ok((
            SparseProof {
                key,
                value,
                bitmap,
                siblings,
            },
            end,
        ))
    }
}

/// `true` iff `proof` shows `key` maps to `value` (empty meaning absent) under `root`.
pub fn smt_verify(key: &Key, value: &[u8], proof: &SparseProof, root: &Digest) -> bool {
    proof.key == *key
        && proof.value == value
        && proof.compute_root(key, value).as_ref() == Some(root)
}

/// The full state tree. Only non-default nodes are stored.
#[derive(Clone, Debug)]
pub struct SparseMerkleTree {
    values: BTreeMap<Key, Vec<u8>>,
    nodes: HashMap<NodeId, Digest>,
    root: Digest,
    last_update_hashes: u64,
}

impl Default for SparseMerkleTree {
    fn default() -> Self {
        Self::new()
    }
}

impl SparseMerkleTree {
    pub fn new() -> Self {
        SparseMerkleTree {
            values: BTreeMap::new(),
            nodes: HashMap::new(),
            root: empty_root(),
            last_update_hashes: 0,
        }
    }

    pub fn root(&self) -> Digest {
        self.root
    }

    pub fn get(&self, key: &Key) -> &[u8] {
        self.values.get(key).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Key, &Vec<u8>)> {
        self.values.iter()
    }

    /// Hash invocations spent by the most recent [`Self::update`].
    pub fn last_update_hashes(&self) -> u64 {
        self.last_update_hashes
    }

    /// Sets `key` to `value`; an empty value deletes. Returns the new root.
    pub fn update(&mut self, key: &Key, value: &[u8]) -> Digest {
        let defaults = default_digests();
        let leaf = leaf_digest(key, value);
        let leaf_hashes = u64::from(!value.is_empty());
        let nodes = &self.nodes;
        let (path, hashes) = recompute_path(key, leaf, |id| {
            Some(nodes.get(&id).copied().unwrap_or(defaults[id.0 as usize]))
        })
        .expect("full tree always supplies siblings");
        for (id, digest) in path {
            if digest == defaults[id.0 as usize] {
                self.nodes.remove(&id);
            } else {
                self.nodes.insert(id, digest);
            }
        }
        if value.is_empty() {
            self.values.remove(key);
        } else {
            self.values.insert(*key, value.to_vec());
        }
        self.last_update_hashes = hashes + leaf_hashes;
        self.root = self.nodes.get(&node_id(key, 0)).copied().unwrap_or(defaults[0]);
        self.root
    }

    pub fn prove(&self, key: &Key) -> SparseProof {
        let defaults = default_digests();
        let full: Vec<Digest> = (1..=DEPTH)
            .rev()
            .map(|depth| {
                self.nodes
                    .get(&sibling_id(key, depth))
                    .copied()
                    .unwrap_or(defaults[depth])
            })
            .collect();
        SparseProof::compress(*key, self.get(key).to_vec(), &full)
    }
}

/// The sub-tree of a state tree revealed by a set of proofs against one root.
/// Supports reads and writes of the covered keys only.
#[derive(Clone, Debug)]
pub struct PartialTree {
    values: BTreeMap<Key, Vec<u8>>,
    nodes: HashMap<NodeId, Digest>,
    root: Digest,
}

impl PartialTree {
    pub fn from_proofs<'a>(
        root: Digest,
        proofs: impl IntoIterator<Item = &'a SparseProof>,
    ) -> Result<Self, SmtError> {
        let mut tree = PartialTree {
            values: BTreeMap::new(),
            nodes: HashMap::new(),
            root,
        };
        for proof in proofs {
            let name = hex::encode(proof.key);
            if tree.values.contains_key(&proof.key) {
                return Err(SmtError::DuplicateKey(name));
            }
            let full = proof.decompress().ok_or(SmtError::Malformed)?;
            let sib = |(depth, _): NodeId| Some(full[DEPTH - depth as usize]);
            let (path, _) = recompute_path(&proof.key, leaf_digest(&proof.key, &proof.value), sib)
                .ok_or(SmtError::Malformed)?;
            if path.last().unwrap().1 != root {
                return Err(SmtError::InvalidProof(name));
            }
            for (height, s) in full.iter().enumerate() {
                tree.nodes.insert(sibling_id(&proof.key, DEPTH - height), *s);
            }
            tree.nodes.extend(path);
            tree.values.insert(proof.key, proof.value.clone());
        }
        Ok(tree)
    }

    pub fn root(&self) -> Digest {
        self.root
    }

    pub fn get(&self, key: &Key) -> Result<&[u8], SmtError> {
        self.values
            .get(key)
            .map(Vec::as_slice)
            .ok_or_else(|| SmtError::NotInWitness(hex::encode(key)))
    }

    pub fn update(&mut self, key: &Key, value: &[u8]) -> Result<Digest, SmtError> {
        if !self.values.contains_key(key) {
            return Err(SmtError::NotInWitness(hex::encode(key)));
        }
        let nodes = &self.nodes;
        let (path, _) = recompute_path(key, leaf_digest(key, value), |id| nodes.get(&id).copied())
            .ok_or_else(|| SmtError::NotInWitness(hex::encode(key)))?;
        self.root = path.last().unwrap().1;
        self.nodes.extend(path);
        self.values.insert(*key, value.to_vec());
        Ok(self.root)
    }
}
