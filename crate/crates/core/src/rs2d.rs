//! Two-dimensional Reed-Solomon extension of a `k x k` share grid, with a
//! Merkle tree over every row and column and one root over all of those.
//!
//! Cells are addressed `(x, y)`: row `x`, column `y`, both 0-based. A share can
//! be proven against its row tree (origin [`Axis::Row`], leaf index `y`) or
//! its column tree (origin [`Axis::Column`], leaf index `x`).

use thiserror::Error;

use crate::erasure::{self, ErasureError};
use crate::merkle::{self, Digest, MerkleError, MerkleProof, MerkleTree};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Axis {
    Row = 0,
    Column = 1,
}

impl Axis {
    pub fn from_u8(v: u8) -> Option<Axis> {
        match v {
            0 => Some(Axis::Row),
            1 => Some(Axis::Column),
            _ => None,
        }
    }

    pub fn other(self) -> Axis {
        match self {
            Axis::Row => Axis::Column,
            Axis::Column => Axis::Row,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum Rs2dError {
    #[error("{len} bytes exceed the capacity of {capacity} for this k")]
    DataTooLarge { len: usize, capacity: usize },
    #[error("expected {expected} shares, got {got}")]
    WrongShareCount { expected: usize, got: usize },
    #[error("share size {0} must be a positive even number")]
    BadShareSize(usize),
    #[error("index out of range")]
    IndexOutOfRange,
    #[error("cell ({0}, {1}) is absent")]
    AbsentCell(usize, usize),
    #[error("cell ({0}, {1}) does not verify against its axis root")]
    InvalidCell(usize, usize),
    #[error("data length {0} does not describe a square extended matrix")]
    BadDataLength(u64),
    #[error("unrecoverable: {missing} cells still absent")]
    Unrecoverable { missing: usize },
    #[error(transparent)]
    Erasure(#[from] ErasureError),
    #[error(transparent)]
    Merkle(#[from] MerkleError),
}

/// Leaf position of an axis root in the tree committed to by `dataRoot`.
pub fn axis_root_index(axis: Axis, j: usize, width: usize) -> usize {
    match axis {
        Axis::Row => j,
        Axis::Column => width + j,
    }
}

/// Global index of a share given the axis it is examined in (`axis`, index
/// `j`, position `pos`) and the tree its proof comes from (`origin`).
///
/// Row-origin shares are numbered `0..w^2` in row-major order; column-origin
/// shares follow, numbered `w^2..2w^2` in column-major order.
pub fn share_index(
    axis: Axis,
    j: u64,
    pos: u64,
    origin: Axis,
    matrix_width: u64,
    data_length: u64,
) -> Result<u64, Rs2dError> {
    let w = matrix_width;
    if j >= w || pos >= w || data_length != 2 * w * w {
        return Err(Rs2dError::IndexOutOfRange);
    }
    let half = data_length / 2;
    Ok(match (axis, origin) {
        (Axis::Row, Axis::Row) => j * w + pos,
        (Axis::Column, Axis::Row) => pos * w + j,
        (Axis::Column, Axis::Column) => half + j * w + pos,
        (Axis::Row, Axis::Column) => half + pos * w + j,
    })
}

/// `dataRoot` and the length it covers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DataCommitment {
    pub data_root: Digest,
    pub data_length: u64,
}

impl DataCommitment {
    pub fn from_roots(row_roots: &[Digest], column_roots: &[Digest]) -> Result<Self, Rs2dError> {
        if row_roots.len() != column_roots.len() || row_roots.is_empty() {
            return Err(Rs2dError::WrongShareCount {
                expected: row_roots.len(),
                got: column_roots.len(),
            });
        }
        let w = row_roots.len() as u64;
        let leaves: Vec<Digest> = row_roots.iter().chain(column_roots).copied().collect();
        Ok(DataCommitment {
            data_root: merkle::root(&leaves)?,
            data_length: 2 * w * w,
        })
    }

    pub fn matrix_width(&self) -> Result<usize, Rs2dError> {
        matrix_width(self.data_length)
    }
}

/// `sqrt(dataLength / 2)`, for lengths of the form `2 (2k)^2`.
pub fn matrix_width(data_length: u64) -> Result<usize, Rs2dError> {
    let half = data_length / 2;
    let w = (half as f64).sqrt().round() as u64;
    if !data_length.is_multiple_of(2) || w == 0 || !w.is_multiple_of(2) || w * w != half {
        return Err(Rs2dError::BadDataLength(data_length));
    }
    Ok(w as usize)
}

/// Proof of one share all the way up to `dataRoot`: the path inside its axis
/// tree, then the path from that axis root to `dataRoot`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShareProof {
    pub origin: Axis,
    pub axis_index: u32,
    pub axis_root: Digest,
    pub axis_proof: MerkleProof,
    pub root_proof: MerkleProof,
}

impl ShareProof {
    /// Cell coordinates the proof is for.
    pub fn cell(&self) -> (usize, usize) {
        let pos = self.axis_proof.leaf_index as usize;
        let j = self.axis_index as usize;
        match self.origin {
            Axis::Row => (j, pos),
            Axis::Column => (pos, j),
        }
    }

    pub fn verify(&self, share: &[u8], data_root: &Digest, width: usize) -> bool {
        let w = width as u64;
        let idx = axis_root_index(self.origin, self.axis_index as usize, width) as u64;
        (self.axis_index as u64) < w
            && merkle::verify_merkle_proof(
                share,
                &self.axis_proof,
                &self.axis_root,
                w,
                self.axis_proof.leaf_index,
            )
            && merkle::verify_merkle_proof(
                self.axis_root.as_bytes(),
                &self.root_proof,
                data_root,
                2 * w,
                idx,
            )
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![self.origin as u8];
        out.extend_from_slice(&self.axis_index.to_be_bytes());
        out.extend_from_slice(self.axis_root.as_bytes());
        out.extend(self.axis_proof.to_bytes());
        out.extend(self.root_proof.to_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, usize), Rs2dError> {
        if bytes.len() < 37 {
            return Err(MerkleError::MalformedProof.into());
        }
        let origin = Axis::from_u8(bytes[0]).ok_or(MerkleError::MalformedProof)?;
        let axis_index = u32::from_be_bytes(bytes[1..5].try_into().unwrap());
        let axis_root = Digest::from_slice(&bytes[5..37]).unwrap();
        let (axis_proof, a) = MerkleProof::from_bytes(&bytes[37..])?;
        let (root_proof, b) = MerkleProof::from_bytes(&bytes[37 + a..])?;
        Ok((
            ShareProof {
                origin,
                axis_index,
                axis_root,
                axis_proof,
                root_proof,
            },
            37 + a + b,
        ))
    }
}

/// Verifies a share proof against the global share index the share must
/// occupy (see [`share_index`]).
pub fn verify_share_merkle_proof(
    share: &[u8],
    proof: &ShareProof,
    data_root: &Digest,
    data_length: u64,
    index: u64,
) -> bool {
    let Ok(w) = matrix_width(data_length) else {
        return false;
    };
    let (w64, half) = (w as u64, data_length / 2);
    if index >= data_length {
        return false;
    }
    let (origin, rest) = if index < half {
        (Axis::Row, index)
    } else {
        (Axis::Column, index - half)
    };
    proof.origin == origin
        && proof.axis_index as u64 == rest / w64
        && proof.axis_proof.leaf_index == rest % w64
        && proof.verify(share, data_root, w)
}

/// A fully populated `2k x 2k` matrix with its axis trees.
#[derive(Clone, Debug)]
pub struct ExtendedMatrix {
    k: usize,
    share_size: usize,
    cells: Vec<Vec<u8>>,
    row_trees: Vec<MerkleTree>,
    column_trees: Vec<MerkleTree>,
    root_tree: MerkleTree,
}

impl PartialEq for ExtendedMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.k == other.k && self.cells == other.cells
    }
}

impl Eq for ExtendedMatrix {}

/// Splits `raw` into `shareSize`-byte shares, zero padding the tail up to
/// `k^2` shares, and extends them.
pub fn extend(raw: &[u8], k: usize, share_size: usize) -> Result<ExtendedMatrix, Rs2dError> {
    if share_size == 0 || !share_size.is_multiple_of(2) {
        return Err(Rs2dError::BadShareSize(share_size));
    }
    let capacity = k * k * share_size;
    if raw.len() > capacity {
        return Err(Rs2dError::DataTooLarge {
            len: raw.len(),
            capacity,
        });
    }
    let mut padded = raw.to_vec();
    padded.resize(capacity, 0);
    let shares: Vec<&[u8]> = padded.chunks_exact(share_size).collect();
    extend_shares(&shares, k)
}

/// Extends exactly `k^2` equal-sized shares, given in row-major order.
pub fn extend_shares<T: AsRef<[u8]>>(shares: &[T], k: usize) -> Result<ExtendedMatrix, Rs2dError> {
    if k == 0 || shares.len() != k * k {
        return Err(Rs2dError::WrongShareCount {
            expected: k * k,
            got: shares.len(),
        });
    }
    let share_size = shares[0].as_ref().len();
    if share_size == 0 || share_size % 2 != 0 {
        return Err(Rs2dError::BadShareSize(share_size));
    }
    let rs = erasure::codec(k)?;
    let w = 2 * k;
    let mut cells = vec![Vec::new(); w * w];

    for r in 0..k {
        let ext = rs.encode(&shares[r * k..(r + 1) * k])?;
        for (c, s) in ext.into_iter().enumerate() {
            cells[r * w + c] = s;
        }
    }
    for c in 0..k {
        let col: Vec<&[u8]> = (0..k).map(|r| cells[r * w + c].as_slice()).collect();
        let ext = rs.encode(&col)?;
        for (r, s) in ext.into_iter().enumerate().skip(k) {
            cells[r * w + c] = s;
        }
    }
    for r in k..w {
        let ext = rs.encode(&cells[r * w..r * w + k])?;
        for (c, s) in ext.into_iter().enumerate().skip(k) {
            cells[r * w + c] = s;
        }
    }
    ExtendedMatrix::from_cells(k, cells)
}

impl ExtendedMatrix {
    /// Commits to an arbitrary `2k x 2k` grid without checking that it is a
    /// codeword. Honest code goes through [`extend`]; this is for building
    /// malformed blocks.
    pub fn from_cells(k: usize, cells: Vec<Vec<u8>>) -> Result<Self, Rs2dError> {
        let w = 2 * k;
        if k == 0 || cells.len() != w * w {
            return Err(Rs2dError::WrongShareCount {
                expected: w * w,
                got: cells.len(),
            });
        }
        let share_size = cells[0].len();
        if share_size == 0 || !share_size.is_multiple_of(2) || cells.iter().any(|c| c.len() != share_size) {
            return Err(Rs2dError::BadShareSize(share_size));
        }
        let row_trees = (0..w)
            .map(|r| MerkleTree::new(&cells[r * w..(r + 1) * w]))
            .collect::<Result<Vec<_>, _>>()?;
        let column_trees = (0..w)
            .map(|c| {
                let col: Vec<&[u8]> = (0..w).map(|r| cells[r * w + c].as_slice()).collect();
                MerkleTree::new(&col)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let roots: Vec<Digest> = row_trees
            .iter()
            .chain(&column_trees)
            .map(|t| t.root())
            .collect();
        let root_tree = MerkleTree::new(&roots)?;
        Ok(ExtendedMatrix {
            k,
            share_size,
            cells,
            row_trees,
            column_trees,
            root_tree,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn width(&self) -> usize {
        2 * self.k
    }

    pub fn share_size(&self) -> usize {
        self.share_size
    }

    pub fn cell(&self, x: usize, y: usize) -> &[u8] {
        &self.cells[x * self.width() + y]
    }

    pub fn cells(&self) -> &[Vec<u8>] {
        &self.cells
    }

    pub fn row(&self, x: usize) -> Vec<&[u8]> {
        let w = self.width();
        self.cells[x * w..(x + 1) * w].iter().map(|c| c.as_slice()).collect()
    }

    pub fn column(&self, y: usize) -> Vec<&[u8]> {
        (0..self.width()).map(|x| self.cell(x, y)).collect()
    }

    /// The `k^2` original shares, row-major.
    pub fn original_shares(&self) -> Vec<&[u8]> {
        (0..self.k)
            .flat_map(|x| (0..self.k).map(move |y| (x, y)))
            .map(|(x, y)| self.cell(x, y))
            .collect()
    }

    pub fn row_roots(&self) -> Vec<Digest> {
        self.row_trees.iter().map(|t| t.root()).collect()
    }

    pub fn column_roots(&self) -> Vec<Digest> {
        self.column_trees.iter().map(|t| t.root()).collect()
    }

    pub fn axis_root(&self, axis: Axis, j: usize) -> Digest {
        match axis {
            Axis::Row => self.row_trees[j].root(),
            Axis::Column => self.column_trees[j].root(),
        }
    }

    pub fn commitment(&self) -> DataCommitment {
        let w = self.width() as u64;
        DataCommitment {
            data_root: self.root_tree.root(),
            data_length: 2 * w * w,
        }
    }

    /// Path for an axis root inside the `dataRoot` tree.
    pub fn axis_root_proof(&self, axis: Axis, j: usize) -> MerkleProof {
        self.root_tree
            .prove(axis_root_index(axis, j, self.width()))
            .expect("axis index in range")
    }

    /// The share at `(x, y)` with its proof in the row or column tree.
    pub fn prove_share(
        &self,
        x: usize,
        y: usize,
        origin: Axis,
    ) -> Result<(Vec<u8>, MerkleProof), Rs2dError> {
        let w = self.width();
        if x >= w || y >= w {
            return Err(Rs2dError::AbsentCell(x, y));
        }
        let proof = match origin {
            Axis::Row => self.row_trees[x].prove(y)?,
            Axis::Column => self.column_trees[y].prove(x)?,
        };
        Ok((self.cell(x, y).to_vec(), proof))
    }

    /// The share at `(x, y)` with a proof reaching `dataRoot`.
    pub fn share_proof(&self, x: usize, y: usize, origin: Axis) -> Result<(Vec<u8>, ShareProof), Rs2dError> {
        let (share, axis_proof) = self.prove_share(x, y, origin)?;
        let j = match origin {
            Axis::Row => x,
            Axis::Column => y,
        };
        Ok((
            share,
            ShareProof {
                origin,
                axis_index: j as u32,
                axis_root: self.axis_root(origin, j),
                axis_proof,
                root_proof: self.axis_root_proof(origin, j),
            },
        ))
    }
}

pub fn commit(matrix: &ExtendedMatrix) -> DataCommitment {
    matrix.commitment()
}

pub fn verify_share(
    share: &[u8],
    proof: &MerkleProof,
    axis_root: &Digest,
    matrix_width: u64,
    index: u64,
) -> bool {
    merkle::verify_merkle_proof(share, proof, axis_root, matrix_width, index)
}

/// A verified share held by a partial matrix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Cell {
    pub share: Vec<u8>,
    pub origin: Axis,
    pub proof: MerkleProof,
}

/// Some of the cells of a committed matrix, each checked against its axis root.
#[derive(Clone, Debug)]
pub struct PartialMatrix {
    k: usize,
    share_size: usize,
    row_roots: Vec<Digest>,
    column_roots: Vec<Digest>,
    cells: Vec<Option<Cell>>,
}

impl PartialMatrix {
    pub fn new(
        k: usize,
        share_size: usize,
        row_roots: Vec<Digest>,
        column_roots: Vec<Digest>,
    ) -> Result<Self, Rs2dError> {
        let w = 2 * k;
        if k == 0 || row_roots.len() != w || column_roots.len() != w {
            return Err(Rs2dError::IndexOutOfRange);
        }
        Ok(PartialMatrix {
            k,
            share_size,
            row_roots,
            column_roots,
            cells: vec![None; w * w],
        })
    }

    /// An empty partial matrix expecting the same roots as `m`.
    pub fn for_matrix(m: &ExtendedMatrix) -> Self {
        PartialMatrix::new(m.k(), m.share_size(), m.row_roots(), m.column_roots())
            .expect("matrix dimensions are consistent")
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn width(&self) -> usize {
        2 * self.k
    }

    pub fn row_roots(&self) -> &[Digest] {
        &self.row_roots
    }

    pub fn column_roots(&self) -> &[Digest] {
        &self.column_roots
    }

    pub fn axis_root(&self, axis: Axis, j: usize) -> Digest {
        match axis {
            Axis::Row => self.row_roots[j],
            Axis::Column => self.column_roots[j],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> Option<&Cell> {
        self.cells.get(x * self.width() + y)?.as_ref()
    }

    pub fn present(&self) -> usize {
        self.cells.iter().filter(|c| c.is_some()).count()
    }

    /// Adds a share after checking its proof. A cell already present is left
    /// as it is.
    pub fn insert(
        &mut self,
        x: usize,
        y: usize,
        share: Vec<u8>,
        origin: Axis,
        proof: MerkleProof,
    ) -> Result<(), Rs2dError> {
        let w = self.width();
        if x >= w || y >= w {
            return Err(Rs2dError::IndexOutOfRange);
        }
        let (root, index) = match origin {
            Axis::Row => (self.row_roots[x], y),
            Axis::Column => (self.column_roots[y], x),
        };
        if share.len() != self.share_size
            || !verify_share(&share, &proof, &root, w as u64, index as u64)
        {
            return Err(Rs2dError::InvalidCell(x, y));
        }
        let slot = &mut self.cells[x * w + y];
        if slot.is_none() {
            *slot = Some(Cell {
                share,
                origin,
                proof,
            });
        }
        Ok(())
    }

    /// Copies cell `(x, y)` out of `m` with the requested proof.
    pub fn insert_from(&mut self, m: &ExtendedMatrix, x: usize, y: usize, origin: Axis) -> Result<(), Rs2dError> {
        let (share, proof) = m.prove_share(x, y, origin)?;
        self.insert(x, y, share, origin, proof)
    }
}

/// One input share of a codec fault, located by its position in the faulty axis.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FaultShare {
    pub pos: u32,
    pub share: Vec<u8>,
    pub origin: Axis,
    pub proof: MerkleProof,
}

/// An axis whose committed root disagrees with the decoding of `k` of its
/// authenticated shares.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CodecFault {
    pub axis: Axis,
    pub index: u32,
    pub axis_root: Digest,
    pub shares: Vec<FaultShare>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RecoveryOutcome {
    Recovered(ExtendedMatrix),
    Fault(CodecFault),
}

fn coords(axis: Axis, j: usize, pos: usize) -> (usize, usize) {
    match axis {
        Axis::Row => (j, pos),
        Axis::Column => (pos, j),
    }
}

struct Recovery<'a> {
    pm: &'a PartialMatrix,
    cells: Vec<Option<Cell>>,
    rs: std::sync::Arc<erasure::ReedSolomon>,
}

impl Recovery<'_> {
    fn w(&self) -> usize {
        self.pm.width()
    }

    fn at(&self, axis: Axis, j: usize, pos: usize) -> Option<&Cell> {
        let (x, y) = coords(axis, j, pos);
        self.cells[x * self.w() + y].as_ref()
    }

    fn fault(&self, axis: Axis, j: usize, positions: &[usize]) -> CodecFault {
        CodecFault {
            axis,
            index: j as u32,
            axis_root: self.pm.axis_root(axis, j),
            shares: positions
                .iter()
                .map(|&p| {
                    let c = self.at(axis, j, p).expect("position present");
                    FaultShare {
                        pos: p as u32,
                        share: c.share.clone(),
                        origin: c.origin,
                        proof: c.proof.clone(),
                    }
                })
                .collect(),
        }
    }

    /// Decodes an axis from the given positions and returns the codeword and
    /// its tree, or `None` when the tree root is not the committed one.
    fn decode(&self, axis: Axis, j: usize, positions: &[usize]) -> Result<Option<(Vec<Vec<u8>>, MerkleTree)>, Rs2dError> {
        let present: Vec<(usize, &[u8])> = positions
            .iter()
            .map(|&p| (p, self.at(axis, j, p).unwrap().share.as_slice()))
            .collect();
        let full = self.rs.decode(&present)?;
        let tree = MerkleTree::new(&full)?;
        Ok((tree.root() == self.pm.axis_root(axis, j)).then_some((full, tree)))
    }

    fn peel(&mut self) -> Result<Option<CodecFault>, Rs2dError> {
        let (k, w) = (self.pm.k, self.w());
        loop {
            let mut progress = false;
            for axis in [Axis::Row, Axis::Column] {
                for j in 0..w {
                    let have: Vec<usize> = (0..w).filter(|&p| self.at(axis, j, p).is_some()).collect();
                    if have.len() < k || have.len() == w {
                        continue;
                    }
                    let chosen = &have[..k];
                    let Some((full, tree)) = self.decode(axis, j, chosen)? else {
                        return Ok(Some(self.fault(axis, j, chosen)));
                    };
                    for (p, share) in full.into_iter().enumerate() {
                        let (x, y) = coords(axis, j, p);
                        let slot = &mut self.cells[x * w + y];
                        if slot.is_none() {
                            *slot = Some(Cell {
                                share,
                                origin: axis,
                                proof: tree.prove(p)?,
                            });
                        }
                    }
                    progress = true;
                }
            }
            if !progress {
                return Ok(None);
            }
        }
    }

    /// Checks every complete axis against its root, cell by cell.
    fn validate(&self) -> Result<Option<CodecFault>, Rs2dError> {
        let (k, w) = (self.pm.k, self.w());
        for axis in [Axis::Row, Axis::Column] {
            for j in 0..w {
                if (0..w).any(|p| self.at(axis, j, p).is_none()) {
                    continue;
                }
                let first: Vec<usize> = (0..k).collect();
                let Some((full, _)) = self.decode(axis, j, &first)? else {
                    return Ok(Some(self.fault(axis, j, &first)));
                };
                for p in k..w {
                    if self.at(axis, j, p).unwrap().share != full[p] {
                        let mut picked: Vec<usize> = (0..k - 1).collect();
                        picked.push(p);
                        if self.decode(axis, j, &picked)?.is_none() {
                            return Ok(Some(self.fault(axis, j, &picked)));
                        }
                    }
                }
            }
        }
        Ok(None)
    }
}

/// Rebuilds the full matrix by repeatedly decoding any row or column with at
/// least `k` known cells. A decoded axis whose root differs from the committed
/// one, or a complete axis that is not a codeword, yields a [`CodecFault`].
pub fn recover_matrix(partial: &PartialMatrix) -> Result<RecoveryOutcome, Rs2dError> {
    let mut r = Recovery {
        pm: partial,
        cells: partial.cells.clone(),
        rs: erasure::codec(partial.k)?,
    };
    if let Some(f) = r.peel()? {
        return Ok(RecoveryOutcome::Fault(f));
    }
    if let Some(f) = r.validate()? {
        return Ok(RecoveryOutcome::Fault(f));
    }
    let missing = r.cells.iter().filter(|c| c.is_none()).count();
    if missing > 0 {
        return Err(Rs2dError::Unrecoverable { missing });
    }
    let cells = r.cells.into_iter().map(|c| c.unwrap().share).collect();
    Ok(RecoveryOutcome::Recovered(ExtendedMatrix::from_cells(partial.k, cells)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(k: usize, share_size: usize, seed: u8) -> ExtendedMatrix {
        let raw: Vec<u8> = (0..k * k * share_size)
            .map(|i| (i as u8).wrapping_mul(37).wrapping_add(seed))
            .collect();
        extend(&raw, k, share_size).unwrap()
    }

    fn q4_by_columns(m: &ExtendedMatrix) -> Vec<Vec<u8>> {
        let (k, w) = (m.k(), m.width());
        let rs = erasure::codec(k).unwrap();
        let mut out = vec![Vec::new(); k * k];
        for c in k..w {
            let top: Vec<&[u8]> = (0..k).map(|r| m.cell(r, c)).collect();
            for (r, s) in rs.encode(&top).unwrap().into_iter().enumerate().skip(k) {
                out[(r - k) * k + (c - k)] = s;
            }
        }
        out
    }

    fn q4(m: &ExtendedMatrix) -> Vec<Vec<u8>> {
        let (k, w) = (m.k(), m.width());
        (k..w).flat_map(|r| (k..w).map(move |c| (r, c))).map(|(r, c)| m.cell(r, c).to_vec()).collect()
    }

    #[test]
    fn k1_is_four_copies() {
        let m = extend(&[7, 9], 1, 4).unwrap();
        for (x, y) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            assert_eq!(m.cell(x, y), &[7, 9, 0, 0]);
        }
        let r = m.row_roots();
        let c = m.column_roots();
        assert!(r[0] == r[1] && r[1] == c[0] && c[0] == c[1]);
    }

    #[test]
    fn q4_same_either_way() {
        let m = sample(2, 4, 1);
        assert_eq!(q4(&m), q4_by_columns(&m));
    }

    #[test]
    fn all_axes_are_codewords() {
        let m = sample(3, 6, 5);
        let rs = erasure::codec(3).unwrap();
        for i in 0..6 {
            let row = m.row(i);
            assert_eq!(rs.encode(&row[..3]).unwrap(), row);
            let col = m.column(i);
            assert_eq!(rs.encode(&col[..3]).unwrap(), col);
        }
    }

    #[test]
    fn extend_capacity_and_sizes() {
        assert!(matches!(
            extend(&[0; 17], 2, 4),
            Err(Rs2dError::DataTooLarge { len: 17, capacity: 16 })
        ));
        assert!(matches!(extend(&[0; 4], 1, 3), Err(Rs2dError::BadShareSize(3))));
        let m = extend(&[0xaa; 5], 2, 4).unwrap();
        assert_eq!(m.cell(0, 0), &[0xaa; 4]);
        assert_eq!(m.cell(0, 1), &[0xaa, 0, 0, 0]);
    }

    #[test]
    fn data_length_and_width() {
        let w = 64u64;
        assert_eq!(2 * w * w, 8192);
        assert_eq!(matrix_width(8192).unwrap(), 64);
        assert!(matrix_width(8190).is_err());
        assert!(matrix_width(2 * 9).is_err());
        assert_eq!(sample(2, 2, 0).commitment().data_length, 32);
    }

    #[test]
    fn commitment_from_transported_roots() {
        let m = sample(2, 4, 9);
        let c = DataCommitment::from_roots(&m.row_roots(), &m.column_roots()).unwrap();
        assert_eq!(c, commit(&m));
    }

    #[test]
    fn one_cell_change_moves_its_roots() {
        let m = sample(2, 4, 3);
        let mut cells = m.cells().to_vec();
        cells[2 * 4 + 3][0] ^= 1;
        let m2 = ExtendedMatrix::from_cells(2, cells).unwrap();
        for j in 0..4 {
            assert_eq!(m.row_roots()[j] == m2.row_roots()[j], j != 2);
            assert_eq!(m.column_roots()[j] == m2.column_roots()[j], j != 3);
        }
        assert_ne!(commit(&m).data_root, commit(&m2).data_root);
    }

    #[test]
    fn share_index_cases() {
        assert_eq!(share_index(Axis::Row, 1, 2, Axis::Row, 4, 32).unwrap(), 6);
        assert_eq!(share_index(Axis::Column, 1, 2, Axis::Column, 4, 32).unwrap(), 22);
        assert_eq!(share_index(Axis::Column, 3, 0, Axis::Row, 4, 32).unwrap(), 3);
        assert_eq!(share_index(Axis::Row, 3, 0, Axis::Column, 4, 32).unwrap(), 16 + 3);
        assert!(share_index(Axis::Row, 4, 0, Axis::Row, 4, 32).is_err());
        assert!(share_index(Axis::Row, 0, 0, Axis::Row, 4, 30).is_err());
    }

    #[test]
    fn share_index_is_a_bijection_per_origin() {
        let w = 4u64;
        for origin in [Axis::Row, Axis::Column] {
            let mut seen = std::collections::BTreeSet::new();
            for x in 0..w {
                for y in 0..w {
                    // The same cell examined along its row or its column.
                    let a = share_index(Axis::Row, x, y, origin, w, 2 * w * w).unwrap();
                    let b = share_index(Axis::Column, y, x, origin, w, 2 * w * w).unwrap();
                    assert_eq!(a, b);
                    seen.insert(a);
                }
            }
            assert_eq!(seen.len(), 16);
        }
    }

    #[test]
    fn share_proofs_exhaustive_k2() {
        let m = sample(2, 4, 11);
        let w = 4u64;
        let data_root = commit(&m).data_root;
        for x in 0..4 {
            for y in 0..4 {
                let (s, p) = m.prove_share(x, y, Axis::Row).unwrap();
                assert!(verify_share(&s, &p, &m.row_roots()[x], w, y as u64));
                assert!(!verify_share(&s, &p, &m.row_roots()[x], w, (y as u64 + 1) % w));
                assert!(!verify_share(&s, &p, &m.row_roots()[(x + 1) % 4], w, y as u64));
                let (s, p) = m.prove_share(x, y, Axis::Column).unwrap();
                assert!(verify_share(&s, &p, &m.column_roots()[y], w, x as u64));
                assert!(!verify_share(&s, &p, &m.column_roots()[(y + 1) % 4], w, x as u64));
                for origin in [Axis::Row, Axis::Column] {
                    let (s, sp) = m.share_proof(x, y, origin).unwrap();
                    assert_eq!(sp.cell(), (x, y));
                    assert!(sp.verify(&s, &data_root, 4));
                    let (back, n) = ShareProof::from_bytes(&sp.to_bytes()).unwrap();
                    assert_eq!(n, sp.to_bytes().len());
                    assert_eq!(back, sp);
                    let mut bad = s.clone();
                    bad[0] ^= 1;
                    assert!(!sp.verify(&bad, &data_root, 4));
                }
            }
        }
        assert!(m.prove_share(4, 0, Axis::Row).is_err());
    }

    fn partial_without(m: &ExtendedMatrix, absent: &[usize]) -> PartialMatrix {
        let w = m.width();
        let mut pm = PartialMatrix::for_matrix(m);
        for i in 0..w * w {
            if !absent.contains(&i) {
                let origin = if i % 3 == 0 { Axis::Column } else { Axis::Row };
                pm.insert_from(m, i / w, i % w, origin).unwrap();
            }
        }
        pm
    }

    #[test]
    fn insert_rejects_bad_cells() {
        let m = sample(2, 4, 2);
        let mut pm = PartialMatrix::for_matrix(&m);
        let (s, p) = m.prove_share(1, 1, Axis::Row).unwrap();
        assert_eq!(pm.insert(1, 2, s.clone(), Axis::Row, p.clone()), Err(Rs2dError::InvalidCell(1, 2)));
        assert_eq!(pm.insert(1, 1, s.clone(), Axis::Column, p.clone()), Err(Rs2dError::InvalidCell(1, 1)));
        assert!(pm.insert(1, 1, s, Axis::Row, p).is_ok());
        assert_eq!(pm.present(), 1);
    }

    #[test]
    fn complete_matrix_recovers_to_itself() {
        let m = sample(2, 4, 4);
        let pm = partial_without(&m, &[]);
        assert_eq!(recover_matrix(&pm).unwrap(), RecoveryOutcome::Recovered(m));
    }

    #[test]
    fn every_pattern_below_threshold_recovers_k2() {
        let m = sample(2, 4, 6);
        let mut count = 0;
        for mask in 0u32..(1 << 16) {
            let absent: Vec<usize> = (0..16).filter(|i| mask >> i & 1 == 1).collect();
            if absent.len() > 8 {
                continue;
            }
            let out = recover_matrix(&partial_without(&m, &absent)).unwrap();
            match out {
                RecoveryOutcome::Recovered(r) => {
                    assert_eq!(commit(&r), commit(&m));
                    assert_eq!(r, m);
                }
                RecoveryOutcome::Fault(f) => panic!("honest matrix faulted: {f:?}"),
            }
            count += 1;
        }
        // sum of C(16, i) for i <= 8
        assert_eq!(count, 39203);
    }

    #[test]
    fn three_by_three_hole_is_unrecoverable() {
        let m = sample(2, 4, 8);
        let absent: Vec<usize> = (0..3).flat_map(|x| (0..3).map(move |y| x * 4 + y)).collect();
        assert_eq!(
            recover_matrix(&partial_without(&m, &absent)),
            Err(Rs2dError::Unrecoverable { missing: 9 })
        );
    }

    fn corrupt_parity(m: &ExtendedMatrix) -> ExtendedMatrix {
        let k = m.k();
        let mut cells = m.cells().to_vec();
        cells[k][0] ^= 0x5a;
        ExtendedMatrix::from_cells(k, cells).unwrap()
    }

    #[test]
    fn corrupted_parity_gives_a_fault() {
        let bad = corrupt_parity(&sample(2, 4, 12));
        // Withhold the rest of row 0 so it has to be decoded.
        let absent = [0, 1, 3];
        let RecoveryOutcome::Fault(f) = recover_matrix(&partial_without(&bad, &absent)).unwrap() else {
            panic!("expected a fault");
        };
        assert!(f.shares.len() == 2);
        assert_eq!(f.axis_root, bad.axis_root(f.axis, f.index as usize));
        let touches_bad_cell = match f.axis {
            Axis::Row => f.index == 0,
            Axis::Column => f.index == 2,
        };
        assert!(touches_bad_cell, "{f:?}");
    }

    #[test]
    fn corrupted_parity_found_in_complete_matrix() {
        let bad = corrupt_parity(&sample(3, 4, 1));
        let out = recover_matrix(&partial_without(&bad, &[])).unwrap();
        assert!(matches!(out, RecoveryOutcome::Fault(_)));
    }

    #[test]
    fn cross_axis_mismatch_is_a_fault() {
        // Row roots from one matrix, column roots from another: each axis is
        // a codeword on its own but the two views of a cell disagree.
        let a = sample(2, 4, 1);
        let b = sample(2, 4, 2);
        let mut pm = PartialMatrix::new(2, 4, a.row_roots(), b.column_roots()).unwrap();
        for y in 0..4 {
            let (s, p) = a.prove_share(0, y, Axis::Row).unwrap();
            pm.insert(0, y, s, Axis::Row, p).unwrap();
        }
        for x in 1..4 {
            let (s, p) = b.prove_share(x, 0, Axis::Column).unwrap();
            pm.insert(x, 0, s, Axis::Column, p).unwrap();
        }
        let RecoveryOutcome::Fault(f) = recover_matrix(&pm).unwrap() else {
            panic!("expected a fault");
        };
        assert_eq!((f.axis, f.index), (Axis::Column, 0));
        assert!(f.shares.iter().any(|s| s.origin == Axis::Row));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn product_code_commutes(k in 1usize..6, seed in any::<u8>()) {
            let m = sample(k, 4, seed);
            prop_assert_eq!(q4(&m), q4_by_columns(&m));
        }
    }
}
