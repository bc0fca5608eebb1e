//! Blocks: headers, the share framing of transactions and intermediate state
//! roots ("traces"), period parsing, and block production in honest and
//! deliberately broken flavours.
//!
//! Share layout: a 2-byte big-endian offset field, then `shareSize - 2`
//! payload bytes. The offset is the 1-based position in the payload where the
//! first message starting in this share begins, or 0 if none does. Messages
//! are `tag (1) || length (2) || body` and run on across share boundaries; a
//! zero tag ends the block data.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::merkle::{self, Digest, DIGEST_LEN};
use crate::rs2d::{self, ExtendedMatrix, Rs2dError};
use crate::smt::Key;
use crate::state::{State, Transaction, TX_LEN};

pub const OFFSET_LEN: usize = 2;
pub const TAG_END: u8 = 0;
pub const TAG_TX: u8 = 1;
pub const TAG_TRACE: u8 = 2;
pub const MIN_SHARE_SIZE: usize = 34;
pub const MAX_SHARE_SIZE: usize = u16::MAX as usize + 1;
pub const DEFAULT_PERIOD: usize = 10;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BlockError {
    #[error("share size {0} outside {MIN_SHARE_SIZE}..={MAX_SHARE_SIZE} or odd")]
    BadShareSize(usize),
    #[error("unknown message tag {0}")]
    BadTag(u8),
    #[error("message body of {len} bytes invalid for tag {tag}")]
    BadLength { tag: u8, len: usize },
    #[error("share {0} has an offset field inconsistent with its contents")]
    BadOffset(usize),
    #[error("period criterion violated: {count} transactions with p = {p}")]
    PeriodCriterion { count: usize, p: usize },
    #[error("no trace in a slice that does not start the block")]
    NoTrace,
    #[error("slice ends inside a period")]
    IncompletePeriod,
    #[error("block data needs {needed} shares, capacity is {capacity}")]
    DataTooLarge { needed: usize, capacity: usize },
    #[error("malformed header")]
    MalformedHeader,
    #[error(transparent)]
    Rs2d(#[from] Rs2dError),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockHeader {
    pub prev_hash: Digest,
    pub data_root: Digest,
    pub state_root: Digest,
    pub data_length: u64,
    pub additional_data: Vec<u8>,
}

impl BlockHeader {
    /// Header of a block with no data, fixing the starting state.
    pub fn genesis(state_root: Digest) -> Self {
        BlockHeader {
            prev_hash: Digest::ZERO,
            data_root: Digest::ZERO,
            state_root,
            data_length: 0,
            additional_data: Vec::new(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(106 + self.additional_data.len());
        out.extend_from_slice(self.prev_hash.as_bytes());
        out.extend_from_slice(self.data_root.as_bytes());
        out.extend_from_slice(self.state_root.as_bytes());
        out.extend_from_slice(&self.data_length.to_be_bytes());
        out.extend_from_slice(&(self.additional_data.len() as u16).to_be_bytes());
        out.extend_from_slice(&self.additional_data);
        out
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, BlockError> {
        if b.len() < 106 {
            return Err(BlockError::MalformedHeader);
        }
        let n = u16::from_be_bytes([b[104], b[105]]) as usize;
        if b.len() != 106 + n {
            return Err(BlockError::MalformedHeader);
        }
        Ok(BlockHeader {
            prev_hash: Digest::from_slice(&b[0..32]).unwrap(),
            data_root: Digest::from_slice(&b[32..64]).unwrap(),
            state_root: Digest::from_slice(&b[64..96]).unwrap(),
            data_length: u64::from_be_bytes(b[96..104].try_into().unwrap()),
            additional_data: b[106..].to_vec(),
        })
    }

    pub fn hash(&self) -> Digest {
        merkle::hash(&self.to_bytes())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Message {
    Tx(Transaction),
    Trace(Digest),
}

impl Message {
    fn tag(&self) -> u8 {
        match self {
            Message::Tx(_) => TAG_TX,
            Message::Trace(_) => TAG_TRACE,
        }
    }

    fn body(&self) -> Vec<u8> {
        match self {
            Message::Tx(t) => t.to_bytes().to_vec(),
            Message::Trace(d) => d.as_bytes().to_vec(),
        }
    }

    pub fn encoded_len(&self) -> usize {
        3 + match self {
            Message::Tx(_) => TX_LEN,
            Message::Trace(_) => DIGEST_LEN,
        }
    }
}

fn check_share_size(share_size: usize) -> Result<usize, BlockError> {
    if !(MIN_SHARE_SIZE..=MAX_SHARE_SIZE).contains(&share_size) || !share_size.is_multiple_of(2) {
        return Err(BlockError::BadShareSize(share_size));
    }
    Ok(share_size - OFFSET_LEN)
}

/// Packs messages into shares, always leaving room for the end tag.
pub fn serialize_shares(messages: &[Message], share_size: usize) -> Result<Vec<Vec<u8>>, BlockError> {
    let payload = check_share_size(share_size)?;
    let mut stream = Vec::new();
    let mut starts = Vec::with_capacity(messages.len());
    for m in messages {
        starts.push(stream.len());
        let body = m.body();
        stream.push(m.tag());
        stream.extend_from_slice(&(body.len() as u16).to_be_bytes());
        stream.extend_from_slice(&body);
    }
    // The end tag counts as a message start for the offset fields, so the
    // share holding it can be recognised on its own.
    starts.push(stream.len());
    stream.push(TAG_END);
    let count = stream.len().div_ceil(payload);
    stream.resize(count * payload, 0);

    let mut first_start = vec![0u16; count];
    for &s in starts.iter().rev() {
        first_start[s / payload] = (s % payload + 1) as u16;
    }
    Ok(stream
        .chunks_exact(payload)
        .zip(first_start)
        .map(|(chunk, off)| {
            let mut share = off.to_be_bytes().to_vec();
            share.extend_from_slice(chunk);
            share
        })
        .collect())
}

/// Messages parsed from a run of shares.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParsedRun {
    pub messages: Vec<Message>,
    /// Whether the end tag was reached inside the run.
    pub reached_end: bool,
}

/// Parses a contiguous run of shares. Parsing begins at the first message
/// start the offset fields point to, so a run taken from the middle of a
/// block skips the tail of a message begun earlier; a message cut off at the
/// end of the run is dropped.
pub fn parse_run<T: AsRef<[u8]>>(shares: &[T]) -> Result<ParsedRun, BlockError> {
    let mut empty = ParsedRun {
        messages: Vec::new(),
        reached_end: false,
    };
    let Some(first_len) = shares.first().map(|s| s.as_ref().len()) else {
        return Ok(empty);
    };
    let payload = check_share_size(first_len)?;
    if shares.iter().any(|s| s.as_ref().len() != first_len) {
        return Err(BlockError::BadShareSize(first_len));
    }
    let offset = |s: &T| u16::from_be_bytes([s.as_ref()[0], s.as_ref()[1]]) as usize;
    let Some(first) = shares.iter().position(|s| offset(s) != 0) else {
        return Ok(empty);
    };
    let stream: Vec<u8> = shares[first..]
        .iter()
        .flat_map(|s| s.as_ref()[OFFSET_LEN..].iter().copied())
        .collect();
    let mut pos = offset(&shares[first]) - 1;
    if pos >= payload {
        return Err(BlockError::BadOffset(first));
    }
    let mut starts = Vec::new();
    let mut messages = Vec::new();
    let mut reached_end = false;
    while pos + 3 <= stream.len() || (pos < stream.len() && stream[pos] == TAG_END) {
        let tag = stream[pos];
        if tag == TAG_END {
            reached_end = true;
            break;
        }
        let len = u16::from_be_bytes([stream[pos + 1], stream[pos + 2]]) as usize;
        let want = match tag {
            TAG_TX => TX_LEN,
            TAG_TRACE => DIGEST_LEN,
            _ => return Err(BlockError::BadTag(tag)),
        };
        if len != want {
            return Err(BlockError::BadLength { tag, len });
        }
        if pos + 3 + len > stream.len() {
            break;
        }
        let body = &stream[pos + 3..pos + 3 + len];
        starts.push(pos);
        messages.push(match tag {
            TAG_TX => Message::Tx(Transaction::from_bytes(body).unwrap()),
            _ => Message::Trace(Digest::from_slice(body).unwrap()),
        });
        pos += 3 + len;
    }

    if reached_end {
        starts.push(pos);
    }
    // Offsets of shares that were parsed through must match the messages found.
    let parsed_to = pos.min(stream.len());
    let mut expected = vec![0usize; stream.len() / payload];
    for &s in starts.iter().rev() {
        expected[s / payload] = s % payload + 1;
    }
    for (i, want) in expected.iter().enumerate() {
        if (i + 1) * payload > parsed_to {
            break;
        }
        if offset(&shares[first + i]) != *want {
            return Err(BlockError::BadOffset(first + i));
        }
    }
    empty.messages = messages;
    empty.reached_end = reached_end;
    Ok(empty)
}

pub fn parse_shares<T: AsRef<[u8]>>(shares: &[T]) -> Result<Vec<Message>, BlockError> {
    Ok(parse_run(shares)?.messages)
}

/// One period: transactions between two traces. A missing pre-root means the
/// period starts the block; a missing post-root means it ends it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PeriodSlice {
    pub pre_root: Option<Digest>,
    pub post_root: Option<Digest>,
    pub txs: Vec<Transaction>,
}

/// Extracts the first complete period from `messages`.
///
/// Unless `at_block_start`, transactions before the first trace belong to an
/// earlier period and are skipped, and that trace is the pre-root. The period
/// runs to the next trace, or to the end of the block data when `reached_end`
/// says the run contains it. Anything after the post-root is ignored.
pub fn parse_period(
    messages: &[Message],
    at_block_start: bool,
    reached_end: bool,
    p: usize,
) -> Result<PeriodSlice, BlockError> {
    let mut it = messages.iter();
    let pre_root = if at_block_start {
        None
    } else {
        loop {
            match it.next() {
                Some(Message::Trace(d)) => break Some(*d),
                Some(Message::Tx(_)) => continue,
                None => return Err(BlockError::NoTrace),
            }
        }
    };
    let mut txs = Vec::new();
    let mut post_root = None;
    for m in it {
        match m {
            Message::Tx(t) => txs.push(*t),
            Message::Trace(d) => {
                post_root = Some(*d);
                break;
            }
        }
    }
    if txs.len() > p {
        return Err(BlockError::PeriodCriterion { count: txs.len(), p });
    }
    if post_root.is_none() && !reached_end {
        return Err(BlockError::IncompletePeriod);
    }
    Ok(PeriodSlice {
        pre_root,
        post_root,
        txs,
    })
}

/// `floor(txIndex / p) - 1`: the trace holding the pre-state of a transaction
/// in the double-tree layout, or -1 for the previous block's state root.
pub fn period(tx_index: u64, p: u64) -> i64 {
    (tx_index / p) as i64 - 1
}

/// Cells a producer refuses to serve.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub enum Withholding {
    #[default]
    None,
    All,
    Cells(BTreeSet<(usize, usize)>),
}

impl Withholding {
    /// The top-left `(k+1) x (k+1)` block: the smallest unrecoverable set.
    pub fn submatrix(k: usize) -> Self {
        Withholding::Cells(
            (0..=k)
                .flat_map(|x| (0..=k).map(move |y| (x, y)))
                .collect(),
        )
    }

    pub fn withholds(&self, x: usize, y: usize) -> bool {
        match self {
            Withholding::None => false,
            Withholding::All => true,
            Withholding::Cells(c) => c.contains(&(x, y)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BuildMode {
    Honest,
    /// Replace trace number `i` (0-based) with a wrong root; falls back to the
    /// header state root when the block has fewer traces.
    InvalidTrace(usize),
    InvalidStateRoot,
    /// Include one overdrawing transaction in the middle of the block.
    InvalidTransaction,
    /// Replace the parity cell at `(0, k)` before committing.
    InvalidCode,
    Withhold(Withholding),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockConfig {
    pub k: usize,
    pub share_size: usize,
    pub period: usize,
}

impl Default for BlockConfig {
    fn default() -> Self {
        BlockConfig {
            k: 16,
            share_size: 256,
            period: DEFAULT_PERIOD,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Block {
    pub header: BlockHeader,
    pub matrix: ExtendedMatrix,
    pub messages: Vec<Message>,
    pub withheld: Withholding,
    pub period: usize,
}

impl Block {
    pub fn hash(&self) -> Digest {
        self.header.hash()
    }

    pub fn k(&self) -> usize {
        self.matrix.k()
    }

    /// Cell of data share `j`; data shares fill the top-left quadrant row by row.
    pub fn data_cell(&self, j: usize) -> (usize, usize) {
        (j / self.k(), j % self.k())
    }

    pub fn data_share(&self, j: usize) -> &[u8] {
        let (x, y) = self.data_cell(j);
        self.matrix.cell(x, y)
    }

    pub fn data_share_count(&self) -> usize {
        self.k() * self.k()
    }

    pub fn is_served(&self, x: usize, y: usize) -> bool {
        !self.withheld.withholds(x, y)
    }

    pub fn transactions(&self) -> impl Iterator<Item = &Transaction> {
        self.messages.iter().filter_map(|m| match m {
            Message::Tx(t) => Some(t),
            Message::Trace(_) => None,
        })
    }
}

fn wrong_root(seed: &Digest) -> Digest {
    merkle::hash(&[b"not-the-root".as_slice(), seed.as_bytes()].concat())
}

fn overdraft_tx() -> Transaction {
    Transaction {
        from: merkle::hash(b"empty account").0,
        to: merkle::hash(b"anyone").0,
        amount: 1,
        fee: 0,
        nonce: 0,
    }
}

/// Executes `txs` on `prev_state` the way an honest producer would: invalid
/// transactions are left out, fees are collected by `producer` at the end,
/// and a trace follows every `p` included transactions. Returns the message
/// list and the post-state.
pub fn honest_messages(
    prev_state: &State,
    txs: &[Transaction],
    producer: Key,
    p: usize,
) -> (Vec<Message>, State) {
    let mut state = prev_state.clone();
    let mut included = Vec::new();
    for t in txs {
        if state.apply(t).is_ok() {
            included.push(*t);
        }
    }
    if let Some(c) = state.clone().collect_fees(producer) {
        included.push(c);
    }
    let mut replay = prev_state.clone();
    let mut messages = Vec::with_capacity(included.len() + included.len() / p.max(1) + 1);
    for (i, t) in included.iter().enumerate() {
        replay.apply(t).expect("included transactions replay");
        messages.push(Message::Tx(*t));
        if (i + 1) % p == 0 {
            messages.push(Message::Trace(replay.root()));
        }
    }
    (messages, replay)
}

/// Builds the block on top of `prev` and returns it with the correct
/// post-state (which the header disagrees with in the invalid modes).
pub fn build_block(
    prev: &BlockHeader,
    prev_state: &State,
    txs: &[Transaction],
    producer: Key,
    mode: BuildMode,
    cfg: BlockConfig,
) -> Result<(Block, State), BlockError> {
    let (mut messages, post) = honest_messages(prev_state, txs, producer, cfg.period);
    let mut state_root = post.root();
    match mode {
        BuildMode::InvalidTrace(i) => {
            let target = messages
                .iter_mut()
                .filter_map(|m| match m {
                    Message::Trace(d) => Some(d),
                    Message::Tx(_) => None,
                })
                .nth(i);
            match target {
                Some(d) => *d = wrong_root(d),
                None => state_root = wrong_root(&state_root),
            }
        }
        BuildMode::InvalidStateRoot => state_root = wrong_root(&state_root),
        BuildMode::InvalidTransaction => {
            // Swap out the first transaction of the second period (or of the
            // first, for a short block) so the period sizes do not change.
            let after_trace = messages
                .iter()
                .position(|m| matches!(m, Message::Trace(_)))
                .map_or(0, |i| i + 1);
            let at = messages[after_trace..]
                .iter()
                .position(|m| matches!(m, Message::Tx(_)))
                .map(|i| i + after_trace)
                .or_else(|| messages.iter().position(|m| matches!(m, Message::Tx(_))));
            match at {
                Some(i) => messages[i] = Message::Tx(overdraft_tx()),
                None => messages.insert(0, Message::Tx(overdraft_tx())),
            }
        }
        _ => {}
    }

    let mut shares = serialize_shares(&messages, cfg.share_size)?;
    let capacity = cfg.k * cfg.k;
    if shares.len() > capacity {
        return Err(BlockError::DataTooLarge {
            needed: shares.len(),
            capacity,
        });
    }
    shares.resize(capacity, vec![0u8; cfg.share_size]);
    let mut matrix = rs2d::extend_shares(&shares, cfg.k)?;
    if mode == BuildMode::InvalidCode {
        let mut cells = matrix.cells().to_vec();
        let bad = &mut cells[cfg.k];
        let replacement = merkle::hash(bad);
        for (b, r) in bad.iter_mut().zip(replacement.as_bytes().iter().cycle()) {
            *b ^= r | 1;
        }
        matrix = ExtendedMatrix::from_cells(cfg.k, cells)?;
    }
    let withheld = match mode {
        BuildMode::Withhold(w) => w,
        _ => Withholding::None,
    };
    let commitment = matrix.commitment();
    let header = BlockHeader {
        prev_hash: prev.hash(),
        data_root: commitment.data_root,
        state_root,
        data_length: commitment.data_length,
        additional_data: Vec::new(),
    };
    Ok((
        Block {
            header,
            matrix,
            messages,
            withheld,
            period: cfg.period,
        },
        post,
    ))
}

/// Header of the double-tree layout: transactions and traces committed in
/// two separate Merkle trees instead of shares.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DtHeader {
    pub prev_hash: Digest,
    pub tx_root: Digest,
    pub tx_length: u64,
    pub trace_root: Digest,
    pub trace_length: u64,
    pub state_root: Digest,
}

impl DtHeader {
    pub fn genesis(state_root: Digest) -> Self {
        DtHeader {
            prev_hash: Digest::ZERO,
            tx_root: Digest::ZERO,
            tx_length: 0,
            trace_root: Digest::ZERO,
            trace_length: 0,
            state_root,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(144);
        out.extend_from_slice(self.prev_hash.as_bytes());
        out.extend_from_slice(self.tx_root.as_bytes());
        out.extend_from_slice(&self.tx_length.to_be_bytes());
        out.extend_from_slice(self.trace_root.as_bytes());
        out.extend_from_slice(&self.trace_length.to_be_bytes());
        out.extend_from_slice(self.state_root.as_bytes());
        out
    }

    pub fn hash(&self) -> Digest {
        merkle::hash(&self.to_bytes())
    }
}

#[derive(Clone, Debug)]
pub struct DtBlock {
    pub header: DtHeader,
    pub txs: Vec<Transaction>,
    pub traces: Vec<Digest>,
    pub period: usize,
}

fn root_or_zero<T: AsRef<[u8]>>(leaves: &[T]) -> Digest {
    merkle::root(leaves).unwrap_or(Digest::ZERO)
}

impl DtBlock {
    pub fn tx_leaves(&self) -> Vec<[u8; TX_LEN]> {
        self.txs.iter().map(Transaction::to_bytes).collect()
    }
}

/// Double-tree block: trace `x` is the state root after the first
/// `(x + 1) p` transactions. `corrupt` replaces one trace (or, past the end,
/// the state root) with a wrong value.
pub fn build_dt_block(
    prev: &DtHeader,
    prev_state: &State,
    txs: &[Transaction],
    producer: Key,
    p: usize,
    corrupt: Option<usize>,
) -> (DtBlock, State) {
    let (messages, post) = honest_messages(prev_state, txs, producer, p);
    let txs: Vec<Transaction> = messages
        .iter()
        .filter_map(|m| match m {
            Message::Tx(t) => Some(*t),
            _ => None,
        })
        .collect();
    let mut traces: Vec<Digest> = messages
        .iter()
        .filter_map(|m| match m {
            Message::Trace(d) => Some(*d),
            _ => None,
        })
        .collect();
    let mut state_root = post.root();
    match corrupt {
        Some(i) if i < traces.len() => traces[i] = wrong_root(&traces[i]),
        Some(_) => state_root = wrong_root(&state_root),
        None => {}
    }
    let tx_bytes: Vec<[u8; TX_LEN]> = txs.iter().map(Transaction::to_bytes).collect();
    let header = DtHeader {
        prev_hash: prev.hash(),
        tx_root: root_or_zero(&tx_bytes),
        tx_length: txs.len() as u64,
        trace_root: root_or_zero(&traces),
        trace_length: traces.len() as u64,
        state_root,
    };
    (
        DtBlock {
            header,
            txs,
            traces,
            period: p,
        },
        post,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn acct(i: u64) -> Key {
        merkle::hash(&i.to_be_bytes()).0
    }

    fn random_messages(rng: &mut ChaCha8Rng, n: usize) -> Vec<Message> {
        (0..n)
            .map(|_| {
                if rng.gen_bool(0.2) {
                    Message::Trace(Digest(rng.gen()))
                } else {
                    Message::Tx(Transaction {
                        from: rng.gen(),
                        to: rng.gen(),
                        amount: rng.gen(),
                        fee: rng.gen(),
                        nonce: rng.gen(),
                    })
                }
            })
            .collect()
    }

    #[test]
    fn one_tx_one_share() {
        let t = Message::Tx(Transaction {
            from: acct(1),
            to: acct(2),
            amount: 1,
            fee: 0,
            nonce: 0,
        });
        let s = serialize_shares(&[t], 256).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(&s[0][..2], &[0, 1]);
        assert_eq!(s[0][2 + 91], TAG_END);
    }

    #[test]
    fn continuation_share_has_zero_offset() {
        // 91-byte tx frames in 62-byte payloads: txs start at bytes 0, 91
        // and 182, the end tag sits at 273. Share 3 covers 186..248 and
        // holds only the middle of the third tx.
        let t = Message::Tx(Transaction {
            from: acct(1),
            to: acct(2),
            amount: 1,
            fee: 0,
            nonce: 0,
        });
        let s = serialize_shares(&[t, t, t], 64).unwrap();
        let offsets: Vec<u16> = s.iter().map(|x| u16::from_be_bytes([x[0], x[1]])).collect();
        assert_eq!(offsets, vec![1, 30, 59, 0, 26]);
    }

    #[test]
    fn round_trip_random_lists() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let n = rng.gen_range(0..40);
            let msgs = random_messages(&mut rng, n);
            let size = [34usize, 64, 100, 256][rng.gen_range(0..4)];
            let shares = serialize_shares(&msgs, size).unwrap();
            let run = parse_run(&shares).unwrap();
            assert_eq!(run.messages, msgs);
            assert!(run.reached_end);
        }
    }

    #[test]
    fn empty_payload() {
        assert_eq!(parse_shares::<Vec<u8>>(&[]).unwrap(), vec![]);
        let s = serialize_shares(&[], 64).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(parse_shares(&s).unwrap(), vec![]);
        assert_eq!(parse_shares(&[vec![0u8; 64]]).unwrap(), vec![]);
    }

    #[test]
    fn mid_block_slices_start_at_the_offset() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let msgs = random_messages(&mut rng, 60);
        let shares = serialize_shares(&msgs, 100).unwrap();
        let payload = 98;
        let mut starts = Vec::new();
        let mut at = 0;
        for m in &msgs {
            starts.push(at);
            at += m.encoded_len();
        }
        for from in 0..shares.len() {
            for to in from + 1..=shares.len() {
                let run = parse_run(&shares[from..to]).unwrap();
                // Oracle: messages that start at or after share `from` and
                // end within share `to`.
                let want: Vec<Message> = msgs
                    .iter()
                    .zip(&starts)
                    .filter(|(m, &s)| s >= from * payload && s + m.encoded_len() <= to * payload)
                    .map(|(m, _)| *m)
                    .collect();
                assert_eq!(run.messages, want, "slice {from}..{to}");
                assert_eq!(run.reached_end, to == shares.len());
            }
        }
    }

    #[test]
    fn malformed_framing() {
        let mut s = serialize_shares(&[Message::Trace(Digest::ZERO)], 64).unwrap();
        s[0][2] = 9;
        assert_eq!(parse_shares(&s), Err(BlockError::BadTag(9)));
        let mut s = serialize_shares(&[Message::Trace(Digest::ZERO)], 64).unwrap();
        s[0][4] = 31;
        assert!(matches!(parse_shares(&s), Err(BlockError::BadLength { .. })));
        assert_eq!(serialize_shares(&[], 33), Err(BlockError::BadShareSize(33)));
        let msgs = vec![Message::Trace(Digest::ZERO); 4];
        let mut s = serialize_shares(&msgs, 64).unwrap();
        s[1][1] ^= 1;
        assert!(matches!(parse_shares(&s), Err(BlockError::BadOffset(1))));
    }

    fn t(n: u64) -> Message {
        Message::Tx(Transaction {
            from: acct(n),
            to: acct(n + 1),
            amount: 0,
            fee: 0,
            nonce: 0,
        })
    }

    #[test]
    fn period_rules() {
        let (a, b) = (Digest([1; 32]), Digest([2; 32]));
        let msgs = [Message::Trace(a), t(1), t(2), Message::Trace(b)];
        let p = parse_period(&msgs, false, false, 10).unwrap();
        assert_eq!(p.pre_root, Some(a));
        assert_eq!(p.post_root, Some(b));
        assert_eq!(p.txs.len(), 2);

        let mut long = vec![Message::Trace(a)];
        long.extend((0..11).map(t));
        long.push(Message::Trace(b));
        assert_eq!(
            parse_period(&long, false, false, 10),
            Err(BlockError::PeriodCriterion { count: 11, p: 10 })
        );

        let start = [t(1), Message::Trace(a)];
        let p = parse_period(&start, true, false, 10).unwrap();
        assert_eq!((p.pre_root, p.post_root), (None, Some(a)));

        // Leading transactions of a previous period are skipped.
        let mid = [t(1), Message::Trace(a), t(2), Message::Trace(b), t(3)];
        let p = parse_period(&mid, false, false, 10).unwrap();
        assert_eq!((p.pre_root, p.post_root, p.txs.len()), (Some(a), Some(b), 1));

        let tail = [Message::Trace(a), t(2)];
        assert_eq!(parse_period(&tail, false, false, 10), Err(BlockError::IncompletePeriod));
        assert_eq!(parse_period(&tail, false, true, 10).unwrap().post_root, None);
        assert_eq!(parse_period(&[t(1)], false, true, 10), Err(BlockError::NoTrace));
    }

    #[test]
    fn period_index() {
        assert_eq!(period(0, 10), -1);
        assert_eq!(period(9, 10), -1);
        assert_eq!(period(10, 10), 0);
        assert_eq!(period(25, 10), 1);
    }

    #[test]
    fn header_round_trip() {
        let h = BlockHeader {
            prev_hash: Digest([1; 32]),
            data_root: Digest([2; 32]),
            state_root: Digest([3; 32]),
            data_length: 8192,
            additional_data: vec![9, 9],
        };
        let b = h.to_bytes();
        assert_eq!(b.len(), 108);
        assert_eq!(BlockHeader::from_bytes(&b).unwrap(), h);
        assert!(BlockHeader::from_bytes(&b[..107]).is_err());
    }

    fn funded(n: u64) -> State {
        State::genesis(&(0..n).map(|i| (acct(i), 1_000)).collect::<Vec<_>>())
    }

    fn transfers(n: u64, accounts: u64) -> Vec<Transaction> {
        (0..n)
            .map(|i| Transaction {
                from: acct(i % accounts),
                to: acct((i + 1) % accounts),
                amount: 3,
                fee: 0,
                nonce: i / accounts,
            })
            .collect()
    }

    #[test]
    fn honest_block_of_ten() {
        let s = funded(5);
        let prev = BlockHeader::genesis(s.root());
        let cfg = BlockConfig { k: 4, share_size: 256, period: 10 };
        let (b, post) = build_block(&prev, &s, &transfers(10, 5), acct(99), BuildMode::Honest, cfg).unwrap();
        let traces: Vec<_> = b.messages.iter().filter(|m| matches!(m, Message::Trace(_))).collect();
        assert_eq!(traces.len(), 1);
        assert_eq!(b.messages.last(), Some(&Message::Trace(post.root())));
        assert_eq!(b.header.state_root, post.root());
        assert_eq!(b.header.prev_hash, prev.hash());
        assert_eq!(b.header.data_length, 2 * 8 * 8);
    }

    #[test]
    fn honest_replay_reproduces_every_trace() {
        let s = funded(7);
        let mut txs = transfers(53, 7);
        for t in txs.iter_mut().step_by(4) {
            t.fee = 2;
        }
        txs.insert(5, overdraft_tx());
        let cfg = BlockConfig { k: 8, share_size: 128, period: 10 };
        let (b, post) = build_block(&BlockHeader::genesis(s.root()), &s, &txs, acct(50), BuildMode::Honest, cfg).unwrap();
        assert_eq!(post.fees(), 0);
        assert_eq!(post.total_balance(), s.total_balance());
        let shares: Vec<&[u8]> = (0..b.data_share_count()).map(|j| b.data_share(j)).collect();
        let run = parse_run(&shares).unwrap();
        assert_eq!(run.messages, b.messages);
        let mut replay = s.clone();
        let mut since = 0;
        for m in &run.messages {
            match m {
                Message::Tx(t) => {
                    replay.apply(t).unwrap();
                    since += 1;
                }
                Message::Trace(d) => {
                    assert_eq!(*d, replay.root());
                    assert!(since <= cfg.period);
                    since = 0;
                }
            }
        }
        assert!(since <= cfg.period);
        assert_eq!(replay.root(), b.header.state_root);
        // The overdraft was dropped, 53 transfers plus the collection remain.
        assert_eq!(b.transactions().count(), 54);
    }

    #[test]
    fn invalid_modes_differ_from_honest() {
        let s = funded(5);
        let prev = BlockHeader::genesis(s.root());
        let cfg = BlockConfig { k: 4, share_size: 256, period: 4 };
        let txs = transfers(9, 5);
        let build = |m| build_block(&prev, &s, &txs, acct(9), m, cfg).unwrap().0;
        let honest = build(BuildMode::Honest);
        let bad_trace = build(BuildMode::InvalidTrace(1));
        assert_eq!(bad_trace.header.state_root, honest.header.state_root);
        assert_ne!(bad_trace.header.data_root, honest.header.data_root);
        let past_end = build(BuildMode::InvalidTrace(7));
        assert_ne!(past_end.header.state_root, honest.header.state_root);
        let bad_code = build(BuildMode::InvalidCode);
        assert_ne!(bad_code.matrix.cell(0, 4), honest.matrix.cell(0, 4));
        assert_eq!(bad_code.matrix.cell(0, 0), honest.matrix.cell(0, 0));
        let bad_tx = build(BuildMode::InvalidTransaction);
        let mut st = s.clone();
        let err = bad_tx.transactions().map(|t| st.apply(t)).find(|r| r.is_err());
        assert!(err.is_some());
        let w = build(BuildMode::Withhold(Withholding::submatrix(4)));
        assert!(!w.is_served(4, 4) && w.is_served(5, 0));
    }

    #[test]
    fn block_too_large() {
        let s = funded(5);
        let cfg = BlockConfig { k: 2, share_size: 64, period: 10 };
        let r = build_block(&BlockHeader::genesis(s.root()), &s, &transfers(10, 5), acct(9), BuildMode::Honest, cfg);
        assert!(matches!(r, Err(BlockError::DataTooLarge { capacity: 4, .. })));
    }

    #[test]
    fn dt_block_traces() {
        let s = funded(5);
        let (b, post) = build_dt_block(&DtHeader::genesis(s.root()), &s, &transfers(25, 5), acct(9), 10, None);
        assert_eq!(b.traces.len(), 2);
        assert_eq!(b.header.tx_length, 25);
        assert_eq!(b.header.state_root, post.root());
        let mut replay = s.clone();
        for (i, t) in b.txs.iter().enumerate() {
            replay.apply(t).unwrap();
            if (i + 1) % 10 == 0 {
                assert_eq!(b.traces[period(i as u64 + 1, 10) as usize], replay.root());
            }
        }
    }
}
