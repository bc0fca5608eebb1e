//! Fraud proofs: invalid state transitions (for share-based blocks and for
//! the double-tree layout) and incorrectly extended data.

use std::collections::{HashMap, HashSet};

use thiserror::Error;

use crate::block::{self, Block, BlockError, BlockHeader, DtBlock, DtHeader, Message, OFFSET_LEN};
use crate::erasure;
use crate::merkle::{self, Digest, MerkleProof, MerkleTree};
use crate::rs2d::{self, Axis, CodecFault, PartialMatrix, RecoveryOutcome, ShareProof};
use crate::state::{self, State, StateWitness, Transaction, TransitionError};

pub const KIND_TRANSITION: u8 = 1;
pub const KIND_CODEC: u8 = 2;
pub const KIND_TRANSITION_DT: u8 = 3;

/// Header fields the verifiers need, for both block layouts.
pub trait ChainHeader {
    fn hash(&self) -> Digest;
    fn prev_hash(&self) -> Digest;
    fn state_root(&self) -> Digest;
}

impl ChainHeader for BlockHeader {
    fn hash(&self) -> Digest {
        BlockHeader::hash(self)
    }
    fn prev_hash(&self) -> Digest {
        self.prev_hash
    }
    fn state_root(&self) -> Digest {
        self.state_root
    }
}

impl ChainHeader for DtHeader {
    fn hash(&self) -> Digest {
        DtHeader::hash(self)
    }
    fn prev_hash(&self) -> Digest {
        self.prev_hash
    }
    fn state_root(&self) -> Digest {
        self.state_root
    }
}

/// Headers a client has downloaded, the chain's period length, and the set
/// of headers it has rejected for good.
#[derive(Clone, Debug)]
pub struct HeaderStore<H = BlockHeader> {
    period: usize,
    headers: HashMap<Digest, H>,
    rejected: HashSet<Digest>,
}

impl<H: ChainHeader> HeaderStore<H> {
    pub fn new(period: usize) -> Self {
        HeaderStore {
            period,
            headers: HashMap::new(),
            rejected: HashSet::new(),
        }
    }

    pub fn period(&self) -> usize {
        self.period
    }

    pub fn insert(&mut self, h: H) -> Digest {
        let id = h.hash();
        self.headers.insert(id, h);
        id
    }

    pub fn get(&self, hash: &Digest) -> Option<&H> {
        self.headers.get(hash)
    }

    fn parent(&self, h: &H) -> Option<&H> {
        self.headers.get(&h.prev_hash())
    }

    pub fn reject(&mut self, hash: Digest) {
        self.rejected.insert(hash);
    }

    pub fn is_rejected(&self, hash: &Digest) -> bool {
        self.rejected.contains(hash)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FraudError {
    #[error("malformed proof encoding")]
    Malformed,
    #[error("unknown proof kind {0}")]
    UnknownKind(u8),
    #[error("block data does not parse: {0}")]
    Unparseable(BlockError),
    #[error("faulty period starting at trace {0} shares its first share with an earlier trace")]
    Unprovable(usize),
}

/// Length-prefixed binary encoding helpers.
mod wire {
    use super::FraudError;
    use crate::merkle::Digest;

    #[derive(Default)]
    pub struct Writer(pub Vec<u8>);

    impl Writer {
        pub fn u8(&mut self, v: u8) -> &mut Self {
            self.0.push(v);
            self
        }
        pub fn u16(&mut self, v: usize) -> &mut Self {
            self.0.extend_from_slice(&(v as u16).to_be_bytes());
            self
        }
        pub fn u32(&mut self, v: u32) -> &mut Self {
            self.0.extend_from_slice(&v.to_be_bytes());
            self
        }
        pub fn u64(&mut self, v: u64) -> &mut Self {
            self.0.extend_from_slice(&v.to_be_bytes());
            self
        }
        pub fn digest(&mut self, d: &Digest) -> &mut Self {
            self.0.extend_from_slice(d.as_bytes());
            self
        }
        /// `u16` length, then the bytes.
        pub fn bytes(&mut self, b: &[u8]) -> &mut Self {
            self.u16(b.len());
            self.0.extend_from_slice(b);
            self
        }
    }

    pub struct Reader<'a> {
        buf: &'a [u8],
        at: usize,
    }

    impl<'a> Reader<'a> {
        pub fn new(buf: &'a [u8]) -> Self {
            Reader { buf, at: 0 }
        }
        fn take(&mut self, n: usize) -> Result<&'a [u8], FraudError> {
            let s = self.buf.get(self.at..self.at + n).ok_or(FraudError::Malformed)?;
            self.at += n;
            Ok(s)
        }
        pub fn u8(&mut self) -> Result<u8, FraudError> {
            Ok(self.take(1)?[0])
        }
        pub fn u16(&mut self) -> Result<usize, FraudError> {
            Ok(u16::from_be_bytes(self.take(2)?.try_into().unwrap()) as usize)
        }
        pub fn u32(&mut self) -> Result<u32, FraudError> {
            Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
        }
        pub fn u64(&mut self) -> Result<u64, FraudError> {
            Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
        }
        pub fn digest(&mut self) -> Result<Digest, FraudError> {
            Ok(Digest::from_slice(self.take(32)?).unwrap())
        }
        pub fn bytes(&mut self) -> Result<&'a [u8], FraudError> {
            let n = self.u16()?;
            self.take(n)
        }
        pub fn finish(&self) -> Result<(), FraudError> {
            if self.at == self.buf.len() {
                Ok(())
            } else {
                Err(FraudError::Malformed)
            }
        }
    }
}

use wire::{Reader, Writer};

fn whole<T>(r: Result<(T, usize), impl Sized>, len: usize) -> Result<T, FraudError> {
    match r {
        Ok((v, n)) if n == len => Ok(v),
        _ => Err(FraudError::Malformed),
    }
}

/// A run of data shares holding one period, with the witnesses needed to
/// replay it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TransitionFraudProof {
    pub block_hash: Digest,
    /// Data share number of the first share.
    pub y: u64,
    pub shares: Vec<Vec<u8>>,
    pub share_proofs: Vec<ShareProof>,
    pub witnesses: Vec<StateWitness>,
}

impl TransitionFraudProof {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.u8(KIND_TRANSITION).digest(&self.block_hash).u64(self.y).u16(self.shares.len());
        for s in &self.shares {
            w.bytes(s);
        }
        for p in &self.share_proofs {
            w.bytes(&p.to_bytes());
        }
        w.u16(self.witnesses.len());
        for x in &self.witnesses {
            w.bytes(&x.to_bytes());
        }
        w.0
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, FraudError> {
        let mut r = Reader::new(b);
        if r.u8()? != KIND_TRANSITION {
            return Err(FraudError::Malformed);
        }
        let block_hash = r.digest()?;
        let y = r.u64()?;
        let n = r.u16()?;
        let shares = (0..n).map(|_| r.bytes().map(<[u8]>::to_vec)).collect::<Result<Vec<_>, _>>()?;
        let share_proofs = (0..n)
            .map(|_| {
                let raw = r.bytes()?;
                whole(ShareProof::from_bytes(raw), raw.len())
            })
            .collect::<Result<Vec<_>, _>>()?;
        let nw = r.u16()?;
        let witnesses = (0..nw)
            .map(|_| {
                let raw = r.bytes()?;
                whole(StateWitness::from_bytes(raw), raw.len())
            })
            .collect::<Result<Vec<_>, _>>()?;
        r.finish()?;
        Ok(TransitionFraudProof {
            block_hash,
            y,
            shares,
            share_proofs,
            witnesses,
        })
    }
}

/// Replays `txs` from `base`; `None` when a witness is unusable, otherwise
/// whether the replay ends somewhere other than `expected`.
fn replay_mismatch(base: Digest, txs: &[Transaction], witnesses: &[StateWitness], expected: Digest) -> Option<bool> {
    let mut inter = base;
    for (i, tx) in txs.iter().enumerate() {
        let w = witnesses.get(i)?;
        match state::root_transition(&inter, tx, w) {
            Ok(r) => inter = r,
            Err(TransitionError::Witness(_)) => return None,
            Err(TransitionError::Invalid(_)) => return Some(true),
        }
    }
    Some(inter != expected)
}

/// True iff the proof shows that the block's period does not lead from its
/// pre-state root to its post-state root.
pub fn verify_transition_fraud_proof(proof: &TransitionFraudProof, store: &HeaderStore) -> bool {
    let Some(header) = store.get(&proof.block_hash) else {
        return false;
    };
    let Ok(w) = rs2d::matrix_width(header.data_length) else {
        return false;
    };
    let k = (w / 2) as u64;
    if proof.shares.is_empty() || proof.shares.len() != proof.share_proofs.len() {
        return false;
    }
    for (a, (share, sp)) in proof.shares.iter().zip(&proof.share_proofs).enumerate() {
        let j = proof.y + a as u64;
        if j >= k * k {
            return false;
        }
        let index = (j / k) * w as u64 + j % k;
        if !rs2d::verify_share_merkle_proof(share, sp, &header.data_root, header.data_length, index) {
            return false;
        }
    }
    let Ok(run) = block::parse_run(&proof.shares) else {
        return false;
    };
    let Ok(slice) = block::parse_period(&run.messages, proof.y == 0, run.reached_end, store.period()) else {
        return false;
    };
    let base = match slice.pre_root {
        Some(r) => r,
        None => match store.parent(header) {
            Some(prev) => prev.state_root,
            None => return false,
        },
    };
    let expected = slice.post_root.unwrap_or(header.state_root);
    replay_mismatch(base, &slice.txs, &proof.witnesses, expected).unwrap_or(false)
}

struct Framed {
    start: usize,
    end: usize,
}

/// Byte ranges of each message and the end tag within the payload stream.
fn layout(messages: &[Message]) -> (Vec<Framed>, usize) {
    let mut at = 0;
    let spans = messages
        .iter()
        .map(|m| {
            let f = Framed {
                start: at,
                end: at + m.encoded_len(),
            };
            at = f.end;
            f
        })
        .collect();
    (spans, at)
}

/// Proof for the first period of `block` that does not replay from its
/// pre-state to its post-state, or `None` if every period (and the header
/// state root) checks out.
pub fn generate_transition_fraud_proof(
    block: &Block,
    prev_state: &State,
) -> Result<Option<TransitionFraudProof>, FraudError> {
    let n = block.data_share_count();
    let shares: Vec<&[u8]> = (0..n).map(|j| block.data_share(j)).collect();
    let run = block::parse_run(&shares).map_err(FraudError::Unparseable)?;
    if !run.reached_end {
        return Err(FraudError::Unparseable(BlockError::IncompletePeriod));
    }
    let payload = block.matrix.share_size() - OFFSET_LEN;
    let (spans, end_tag) = layout(&run.messages);

    let mut state = prev_state.clone();
    let mut pre: Option<usize> = None;
    let mut witnesses = Vec::new();
    let mut trace_no = 0;
    let mut i = 0;
    loop {
        let post = run.messages[i..].iter().position(|m| matches!(m, Message::Trace(_))).map(|p| p + i);
        let stop = post.unwrap_or(run.messages.len());
        let mut faulty = false;
        for m in &run.messages[i..stop] {
            let Message::Tx(tx) = m else { unreachable!() };
            witnesses.push(state.witness(tx));
            if state.apply(tx).is_err() {
                faulty = true;
                break;
            }
        }
        let expected = match post {
            Some(p) => match run.messages[p] {
                Message::Trace(d) => d,
                Message::Tx(_) => unreachable!(),
            },
            None => block.header.state_root,
        };
        if faulty || state.root() != expected {
            let y = pre.map_or(0, |p| spans[p].start / payload);
            let last = post.map_or(end_tag, |p| spans[p].end - 1) / payload;
            let proof = TransitionFraudProof {
                block_hash: block.hash(),
                y: y as u64,
                shares: shares[y..=last].iter().map(|s| s.to_vec()).collect(),
                share_proofs: (y..=last)
                    .map(|j| {
                        let (x, c) = block.data_cell(j);
                        block.matrix.share_proof(x, c, Axis::Row).expect("cell in range").1
                    })
                    .collect(),
                witnesses,
            };
            // The verifier takes the first trace in the slice as the pre-state.
            let check = block::parse_run(&proof.shares)
                .ok()
                .and_then(|r| block::parse_period(&r.messages, y == 0, r.reached_end, block.period).ok());
            let pre_root = pre.map(|p| match run.messages[p] {
                Message::Trace(d) => d,
                Message::Tx(_) => unreachable!(),
            });
            return match check {
                Some(s) if s.pre_root == pre_root => Ok(Some(proof)),
                _ => Err(FraudError::Unprovable(trace_no)),
            };
        }
        match post {
            Some(p) => {
                pre = Some(p);
                witnesses = Vec::new();
                trace_no += 1;
                i = p + 1;
            }
            None => return Ok(None),
        }
    }
}

/// One share of a codec fraud proof: its position along the faulty axis and
/// the tree its proof comes from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CodecShare {
    pub share: Vec<u8>,
    pub pos: u32,
    pub origin: Axis,
    pub proof: ShareProof,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CodecFraudProof {
    pub block_hash: Digest,
    pub axis_root: Digest,
    pub axis_root_proof: MerkleProof,
    pub j: u32,
    pub axis: Axis,
    pub shares: Vec<CodecShare>,
}

impl CodecFraudProof {
    /// Wraps a fault found during recovery with proofs up to `dataRoot`.
    pub fn from_fault(block_hash: Digest, fault: &CodecFault, row_roots: &[Digest], column_roots: &[Digest]) -> Self {
        let roots: Vec<Digest> = row_roots.iter().chain(column_roots).copied().collect();
        let w = row_roots.len();
        let tree = MerkleTree::new(&roots).expect("non-empty roots");
        let root_proof = |axis: Axis, j: usize| tree.prove(rs2d::axis_root_index(axis, j, w)).expect("in range");
        let axis_root_of = |axis: Axis, j: usize| match axis {
            Axis::Row => row_roots[j],
            Axis::Column => column_roots[j],
        };
        let j = fault.index as usize;
        let shares = fault
            .shares
            .iter()
            .map(|s| {
                let axis_index = if s.origin == fault.axis { j } else { s.pos as usize };
                CodecShare {
                    share: s.share.clone(),
                    pos: s.pos,
                    origin: s.origin,
                    proof: ShareProof {
                        origin: s.origin,
                        axis_index: axis_index as u32,
                        axis_root: axis_root_of(s.origin, axis_index),
                        axis_proof: s.proof.clone(),
                        root_proof: root_proof(s.origin, axis_index),
                    },
                }
            })
            .collect();
        CodecFraudProof {
            block_hash,
            axis_root: fault.axis_root,
            axis_root_proof: root_proof(fault.axis, j),
            j: fault.index,
            axis: fault.axis,
            shares,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.u8(KIND_CODEC)
            .digest(&self.block_hash)
            .digest(&self.axis_root)
            .bytes(&self.axis_root_proof.to_bytes())
            .u32(self.j)
            .u8(self.axis as u8)
            .u16(self.shares.len());
        for s in &self.shares {
            w.bytes(&s.share).u32(s.pos).u8(s.origin as u8);
        }
        for s in &self.shares {
            w.bytes(&s.proof.to_bytes());
        }
        w.0
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, FraudError> {
        let mut r = Reader::new(b);
        if r.u8()? != KIND_CODEC {
            return Err(FraudError::Malformed);
        }
        let block_hash = r.digest()?;
        let axis_root = r.digest()?;
        let raw = r.bytes()?;
        let axis_root_proof = whole(MerkleProof::from_bytes(raw), raw.len())?;
        let j = r.u32()?;
        let axis = Axis::from_u8(r.u8()?).ok_or(FraudError::Malformed)?;
        let n = r.u16()?;
        let mut heads = Vec::with_capacity(n);
        for _ in 0..n {
            let share = r.bytes()?.to_vec();
            let pos = r.u32()?;
            let origin = Axis::from_u8(r.u8()?).ok_or(FraudError::Malformed)?;
            heads.push((share, pos, origin));
        }
        let mut shares = Vec::with_capacity(n);
        for (share, pos, origin) in heads {
            let raw = r.bytes()?;
            let proof = whole(ShareProof::from_bytes(raw), raw.len())?;
            shares.push(CodecShare {
                share,
                pos,
                origin,
                proof,
            });
        }
        r.finish()?;
        Ok(CodecFraudProof {
            block_hash,
            axis_root,
            axis_root_proof,
            j,
            axis,
            shares,
        })
    }
}

/// True iff the proof's shares all lie on the claimed row or column and
/// decoding them does not reproduce that axis's committed root.
pub fn verify_codec_fraud_proof(proof: &CodecFraudProof, store: &HeaderStore) -> bool {
    let Some(header) = store.get(&proof.block_hash) else {
        return false;
    };
    let Ok(w) = rs2d::matrix_width(header.data_length) else {
        return false;
    };
    let (k, j) = (w / 2, proof.j as usize);
    if j >= w {
        return false;
    }
    let root_index = rs2d::axis_root_index(proof.axis, j, w) as u64;
    if !merkle::verify_merkle_proof(
        proof.axis_root.as_bytes(),
        &proof.axis_root_proof,
        &header.data_root,
        2 * w as u64,
        root_index,
    ) {
        return false;
    }
    if proof.shares.len() < k {
        return false;
    }
    let mut seen = HashSet::new();
    for s in &proof.shares {
        let Ok(index) = rs2d::share_index(proof.axis, j as u64, s.pos as u64, s.origin, w as u64, header.data_length)
        else {
            return false;
        };
        if !seen.insert(s.pos)
            || !rs2d::verify_share_merkle_proof(&s.share, &s.proof, &header.data_root, header.data_length, index)
        {
            return false;
        }
    }
    let present: Vec<(usize, &[u8])> = proof.shares.iter().map(|s| (s.pos as usize, s.share.as_slice())).collect();
    let Ok(codec) = erasure::codec(k) else {
        return false;
    };
    match codec.decode(&present) {
        Ok(full) => merkle::root(&full).is_ok_and(|r| r != proof.axis_root),
        Err(_) => false,
    }
}

/// Recovers the block from whatever cells `partial` holds and, if the
/// encoding is inconsistent, returns the proof of it.
pub fn codec_proof_from_partial(block_hash: Digest, partial: &PartialMatrix) -> Option<CodecFraudProof> {
    match rs2d::recover_matrix(partial) {
        Ok(RecoveryOutcome::Fault(f)) => Some(CodecFraudProof::from_fault(
            block_hash,
            &f,
            partial.row_roots(),
            partial.column_roots(),
        )),
        _ => None,
    }
}

/// Codec proof for a block whose full data is at hand.
pub fn generate_codec_fraud_proof(block: &Block) -> Option<CodecFraudProof> {
    let mut pm = PartialMatrix::for_matrix(&block.matrix);
    let w = block.matrix.width();
    for x in 0..w {
        for y in 0..w {
            pm.insert_from(&block.matrix, x, y, Axis::Row).expect("own cells verify");
        }
    }
    codec_proof_from_partial(block.hash(), &pm)
}

/// Transition proof for the double-tree layout.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DtFraudProof {
    pub block_hash: Digest,
    /// Pre-state trace, its proof and its index `x`.
    pub pre: Option<(Digest, MerkleProof, u64)>,
    pub post: Option<(Digest, MerkleProof)>,
    pub y: u64,
    pub txs: Vec<Transaction>,
    pub tx_proofs: Vec<MerkleProof>,
    pub witnesses: Vec<StateWitness>,
}

impl DtFraudProof {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.u8(KIND_TRANSITION_DT).digest(&self.block_hash);
        match &self.pre {
            Some((d, p, x)) => {
                w.u8(1).digest(d).bytes(&p.to_bytes()).u64(*x);
            }
            None => {
                w.u8(0);
            }
        }
        match &self.post {
            Some((d, p)) => {
                w.u8(1).digest(d).bytes(&p.to_bytes());
            }
            None => {
                w.u8(0);
            }
        }
        w.u16(self.txs.len());
        for t in &self.txs {
            w.bytes(&t.to_bytes());
        }
        w.u64(self.y);
        for p in &self.tx_proofs {
            w.bytes(&p.to_bytes());
        }
        w.u16(self.witnesses.len());
        for x in &self.witnesses {
            w.bytes(&x.to_bytes());
        }
        w.0
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, FraudError> {
        let mut r = Reader::new(b);
        if r.u8()? != KIND_TRANSITION_DT {
            return Err(FraudError::Malformed);
        }
        let block_hash = r.digest()?;
        let merkle_proof = |r: &mut Reader| -> Result<MerkleProof, FraudError> {
            let raw = r.bytes()?;
            whole(MerkleProof::from_bytes(raw), raw.len())
        };
        let pre = match r.u8()? {
            0 => None,
            1 => Some((r.digest()?, merkle_proof(&mut r)?, r.u64()?)),
            _ => return Err(FraudError::Malformed),
        };
        let post = match r.u8()? {
            0 => None,
            1 => Some((r.digest()?, merkle_proof(&mut r)?)),
            _ => return Err(FraudError::Malformed),
        };
        let n = r.u16()?;
        let txs = (0..n)
            .map(|_| r.bytes().and_then(|b| Transaction::from_bytes(b).ok_or(FraudError::Malformed)))
            .collect::<Result<Vec<_>, _>>()?;
        let y = r.u64()?;
        let tx_proofs = (0..n).map(|_| merkle_proof(&mut r)).collect::<Result<Vec<_>, _>>()?;
        let nw = r.u16()?;
        let witnesses = (0..nw)
            .map(|_| {
                let raw = r.bytes()?;
                whole(StateWitness::from_bytes(raw), raw.len())
            })
            .collect::<Result<Vec<_>, _>>()?;
        r.finish()?;
        Ok(DtFraudProof {
            block_hash,
            pre,
            post,
            y,
            txs,
            tx_proofs,
            witnesses,
        })
    }
}

/// Double-tree verifier. Besides the membership and period-mapping checks it
/// requires the proof to carry the whole period: starting at its first
/// transaction and running to the period's last one (or the block's).
pub fn verify_dt_fraud_proof(proof: &DtFraudProof, store: &HeaderStore<DtHeader>) -> bool {
    let Some(header) = store.get(&proof.block_hash) else {
        return false;
    };
    let p = store.period() as u64;
    let n = proof.txs.len() as u64;
    if p == 0 || proof.tx_proofs.len() != proof.txs.len() {
        return false;
    }
    let x: i64 = match &proof.pre {
        Some((d, mp, x)) => {
            if !merkle::verify_merkle_proof(d.as_bytes(), mp, &header.trace_root, header.trace_length, *x) {
                return false;
            }
            *x as i64
        }
        None => -1,
    };
    if let Some((d, mp)) = &proof.post {
        let next = (x + 1) as u64;
        if !merkle::verify_merkle_proof(d.as_bytes(), mp, &header.trace_root, header.trace_length, next) {
            return false;
        }
    }
    // Period mapping for every transaction.
    if proof.pre.is_none() && proof.y != 0 {
        return false;
    }
    if (0..n).any(|a| block::period(proof.y + a, p) != x) {
        return false;
    }
    // The whole period must be present.
    let start = ((x + 1) as u64) * p;
    if proof.y != start || start > header.tx_length || n != (start + p).min(header.tx_length) - start {
        return false;
    }
    for (a, (t, mp)) in proof.txs.iter().zip(&proof.tx_proofs).enumerate() {
        if !merkle::verify_merkle_proof(&t.to_bytes(), mp, &header.tx_root, header.tx_length, proof.y + a as u64) {
            return false;
        }
    }
    let base = match &proof.pre {
        Some((d, _, _)) => *d,
        None => match store.parent(header) {
            Some(prev) => prev.state_root,
            None => return false,
        },
    };
    let expected = match &proof.post {
        Some((d, _)) => *d,
        None => {
            if proof.y + n != header.tx_length || (x + 1) as u64 != header.trace_length {
                return false;
            }
            header.state_root
        }
    };
    replay_mismatch(base, &proof.txs, &proof.witnesses, expected).unwrap_or(false)
}

/// First faulty period of a double-tree block, if any.
pub fn generate_dt_fraud_proof(block: &DtBlock, prev_state: &State) -> Option<DtFraudProof> {
    let p = block.period;
    let leaves = block.tx_leaves();
    let tx_tree = MerkleTree::new(&leaves).ok();
    let trace_tree = MerkleTree::new(&block.traces).ok();
    let mut state = prev_state.clone();
    let periods = block.txs.len() / p + 1;
    for q in 0..periods {
        let x = q as i64 - 1;
        let start = q * p;
        let end = (start + p).min(block.txs.len());
        let mut witnesses = Vec::new();
        let mut faulty = false;
        for t in &block.txs[start..end] {
            witnesses.push(state.witness(t));
            if state.apply(t).is_err() {
                faulty = true;
                break;
            }
        }
        let post_trace = block.traces.get(q).copied();
        let expected = post_trace.unwrap_or(block.header.state_root);
        if faulty || state.root() != expected {
            let trace_proof = |i: usize| trace_tree.as_ref().unwrap().prove(i).unwrap();
            return Some(DtFraudProof {
                block_hash: block.header.hash(),
                pre: (x >= 0).then(|| (block.traces[x as usize], trace_proof(x as usize), x as u64)),
                post: post_trace.map(|d| (d, trace_proof(q))),
                y: start as u64,
                txs: block.txs[start..end].to_vec(),
                tx_proofs: (start..end).map(|i| tx_tree.as_ref().unwrap().prove(i).unwrap()).collect(),
                witnesses,
            });
        }
        if end == block.txs.len() && post_trace.is_none() {
            break;
        }
    }
    None
}

/// Either proof kind for share-based blocks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FraudProof {
    Transition(TransitionFraudProof),
    Codec(CodecFraudProof),
}

impl FraudProof {
    pub fn block_hash(&self) -> Digest {
        match self {
            FraudProof::Transition(p) => p.block_hash,
            FraudProof::Codec(p) => p.block_hash,
        }
    }

    pub fn verify(&self, store: &HeaderStore) -> bool {
        match self {
            FraudProof::Transition(p) => verify_transition_fraud_proof(p, store),
            FraudProof::Codec(p) => verify_codec_fraud_proof(p, store),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        match self {
            FraudProof::Transition(p) => p.to_bytes(),
            FraudProof::Codec(p) => p.to_bytes(),
        }
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, FraudError> {
        match b.first() {
            Some(&KIND_TRANSITION) => TransitionFraudProof::from_bytes(b).map(FraudProof::Transition),
            Some(&KIND_CODEC) => CodecFraudProof::from_bytes(b).map(FraudProof::Codec),
            Some(&k) => Err(FraudError::UnknownKind(k)),
            None => Err(FraudError::Malformed),
        }
    }

    pub fn encoded_len(&self) -> usize {
        self.to_bytes().len()
    }
}

impl HeaderStore {
    /// Verifies `proof` and, if it holds, rejects its block for good.
    pub fn apply_fraud_proof(&mut self, proof: &FraudProof) -> bool {
        let ok = proof.verify(self);
        if ok {
            self.reject(proof.block_hash());
        }
        ok
    }
}
