//! Binary Merkle trees over an arbitrary number of leaves.
//!
//! Leaves are hashed as `H(0x00 || leaf)` and internal nodes as
//! `H(0x01 || left || right)`. Trees with a leaf count that is not a power of
//! two use the left-heavy split: the left subtree holds the largest power of
//! two strictly smaller than the leaf count. Built bottom-up, this is the same
//! as promoting the trailing odd node of every layer unchanged.
//!
//! Proofs carry the tree size and the leaf index. The verifier derives the
//! shape of the authentication path from `(tree_size, index)`, so a proof for
//! one position never verifies at another.

use std::fmt;

use sha2::{Digest as _, Sha256};
use thiserror::Error;

pub const DIGEST_LEN: usize = 32;

pub const LEAF_PREFIX: u8 = 0x00;
pub const NODE_PREFIX: u8 = 0x01;

/// A SHA-256 output.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Digest(pub [u8; DIGEST_LEN]);

impl Digest {
    pub const ZERO: Digest = Digest([0u8; DIGEST_LEN]);

    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.0
    }

    pub fn from_slice(bytes: &[u8]) -> Option<Self> {
        bytes.try_into().ok().map(Digest)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", &self.to_hex()[..16])
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl AsRef<[u8]> for Digest {
    fn as_ref(&self) -> &[u8] {
        &self.0
    }
}

/// Plain SHA-256 of `data`.
pub fn hash(data: &[u8]) -> Digest {
    Digest(Sha256::digest(data).into())
}

pub fn leaf_hash(data: &[u8]) -> Digest {
    let mut h = Sha256::new();
    h.update([LEAF_PREFIX]);
    h.update(data);
    Digest(h.finalize().into())
}

pub fn node_hash(left: &Digest, right: &Digest) -> Digest {
    let mut h = Sha256::new();
    h.update([NODE_PREFIX]);
    h.update(left.0);
    h.update(right.0);
    Digest(h.finalize().into())
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MerkleError {
    #[error("empty tree")]
    EmptyTree,
    #[error("leaf index {index} out of range for tree of {size} leaves")]
    IndexOutOfRange { index: usize, size: usize },
    #[error("malformed proof encoding")]
    MalformedProof,
}

/// An authentication path from a leaf to the root, siblings ordered leaf to root.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MerkleProof {
    pub siblings: Vec<Digest>,
    pub leaf_index: u64,
    pub tree_size: u64,
}

impl MerkleProof {
    /// `treeSize (u64 BE) || leafIndex (u64 BE) || count (u16 BE) || siblings`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(18 + self.siblings.len() * DIGEST_LEN);
        out.extend_from_slice(&self.tree_size.to_be_bytes());
        out.extend_from_slice(&self.leaf_index.to_be_bytes());
        out.extend_from_slice(&(self.siblings.len() as u16).to_be_bytes());
        for s in &self.siblings {
            out.extend_from_slice(&s.0);
        }
        out
    }

    /// Decodes a proof, returning it with the number of bytes consumed.
    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, usize), MerkleError> {
        if bytes.len() < 18 {
            return Err(MerkleError::MalformedProof);
        }
        let tree_size = u64::from_be_bytes(bytes[0..8].try_into().unwrap());
        let leaf_index = u64::from_be_bytes(bytes[8..16].try_into().unwrap());
        let count = u16::from_be_bytes(bytes[16..18].try_into().unwrap()) as usize;
        let end = 18 + count * DIGEST_LEN;
        if bytes.len() < end {
            return Err(MerkleError::MalformedProof);
        }
        let siblings = bytes[18..end]
            .chunks_exact(DIGEST_LEN)
            .map(|c| Digest(c.try_into().unwrap()))
            .collect();
        Ok((
            MerkleProof {
                siblings,
                leaf_index,
                tree_size,
            },
            end,
        ))
    }

    pub fn encoded_len(&self) -> usize {
        18 + self.siblings.len() * DIGEST_LEN
    }
}

/// A fully materialised tree, kept layer by layer so proofs are `O(log n)`.
#[derive(Clone, Debug)]
pub struct MerkleTree {
    layers: Vec<Vec<Digest>>,
}

impl MerkleTree {
    pub fn new<T: AsRef<[u8]>>(leaves: &[T]) -> Result<Self, MerkleError> {
        Self::from_leaf_hashes(leaves.iter().map(|l| leaf_hash(l.as_ref())).collect())
    }

    pub fn from_leaf_hashes(leaf_hashes: Vec<Digest>) -> Result<Self, MerkleError> {
        if leaf_hashes.is_empty() {
            return Err(MerkleError::EmptyTree);
        }
        let mut layers = vec![leaf_hashes];
        while layers.last().unwrap().len() > 1 {
            let below = layers.last().unwrap();
            let above = below
                .chunks(2)
                .map(|pair| match pair {
                    [l, r] => node_hash(l, r),
                    [single] => *single,
                    _ => unreachable!(),
                })
                .collect();
            layers.push(above);
        }
        Ok(MerkleTree { layers })
    }

    pub fn root(&self) -> Digest {
        self.layers.last().unwrap()[0]
    }

    pub fn leaf_count(&self) -> usize {
        self.layers[0].len()
    }

    pub fn prove(&self, index: usize) -> Result<MerkleProof, MerkleError> {
        let size = self.leaf_count();
        if index >= size {
            return Err(MerkleError::IndexOutOfRange { index, size });
        }
        let mut siblings = Vec::new();
        let mut i = index;
        for layer in &self.layers[..self.layers.len() - 1] {
            let sibling = i ^ 1;
            if sibling < layer.len() {
                siblings.push(layer[sibling]);
            }
            i >>= 1;
        }
        Ok(MerkleProof {
            siblings,
            leaf_index: index as u64,
            tree_size: size as u64,
        })
    }
}

/// Merkle root of `leaves`.
pub fn root<T: AsRef<[u8]>>(leaves: &[T]) -> Result<Digest, MerkleError> {
    Ok(MerkleTree::new(leaves)?.root())
}

/// Proof that `leaves[index]` is at position `index`.
pub fn prove<T: AsRef<[u8]>>(leaves: &[T], index: usize) -> Result<MerkleProof, MerkleError> {
    MerkleTree::new(leaves)?.prove(index)
}

/// Number of siblings on the path of leaf `index` in a tree of `size` leaves.
pub fn path_len(size: u64, index: u64) -> usize {
    let (mut width, mut i, mut len) = (size, index, 0);
    while width > 1 {
        if i ^ 1 < width {
            len += 1;
        }
        i >>= 1;
        width = width.div_ceil(2);
    }
    len
}

/// Recomputes the root for a leaf digest at `index` in a tree of `size`
/// leaves. `None` when the sibling count does not match the path shape.
pub fn root_from_path(leaf: Digest, siblings: &[Digest], size: u64, index: u64) -> Option<Digest> {
    if size == 0 || index >= size {
        return None;
    }
    let mut acc = leaf;
    let mut used = 0;
    let (mut width, mut i) = (size, index);
    while width > 1 {
        if i ^ 1 < width {
            let sib = siblings.get(used)?;
            used += 1;
            acc = if i & 1 == 1 {
                node_hash(sib, &acc)
            } else {
                node_hash(&acc, sib)
            };
        }
        i >>= 1;
        width = width.div_ceil(2);
    }
    (used == siblings.len()).then_some(acc)
}

/// True iff `element` is leaf `index` of the `size`-leaf tree committed to by `root`.
pub fn verify_merkle_proof(
    element: &[u8],
    proof: &MerkleProof,
    root: &Digest,
    size: u64,
    index: u64,
) -> bool {
    if proof.tree_size != size || proof.leaf_index != index {
        return false;
    }
    root_from_path(leaf_hash(element), &proof.siblings, size, index).as_ref() == Some(root)
}
