//! Oracles and fixtures shared by the integration tests.

#![allow(dead_code)]

use da_core::block::{self, Block, BlockConfig, BlockHeader, BuildMode, DtBlock, DtHeader, Message};
use da_core::fraud::{CodecFraudProof, DtFraudProof, TransitionFraudProof};
use da_core::merkle::{self, MerkleTree};
use da_core::rs2d::{Axis, CodecFault, FaultShare};
use da_core::smt::Key;
use da_core::state::{State, Transaction};
use rand::Rng;

pub fn account(i: u64) -> Key {
    merkle::hash(&[b"fixture".as_slice(), &i.to_be_bytes()].concat()).0
}

pub const ACCOUNTS: u64 = 12;

pub fn genesis_state() -> State {
    State::genesis(&(0..ACCOUNTS).map(|i| (account(i), 5_000_000)).collect::<Vec<_>>())
}

/// `n` valid transfers in round-robin over the fixture accounts.
pub fn transfers(n: u64) -> Vec<Transaction> {
    (0..n)
        .map(|i| Transaction {
            from: account(i % ACCOUNTS),
            to: account((i * 5 + 3) % ACCOUNTS),
            amount: 10 + i % 97,
            fee: i % 4,
            nonce: i / ACCOUNTS,
        })
        .collect()
}

pub struct Fixture {
    pub genesis: BlockHeader,
    pub prev: State,
    pub block: Block,
}

pub fn fixture(n_tx: u64, mode: BuildMode, cfg: BlockConfig) -> Fixture {
    let prev = genesis_state();
    let genesis = BlockHeader::genesis(prev.root());
    let (block, _) = block::build_block(&genesis, &prev, &transfers(n_tx), account(999), mode, cfg).unwrap();
    Fixture { genesis, prev, block }
}

pub struct DtFixture {
    pub genesis: DtHeader,
    pub prev: State,
    pub block: DtBlock,
}

pub fn dt_fixture(n_tx: u64, p: usize, corrupt: Option<usize>) -> DtFixture {
    let prev = genesis_state();
    let genesis = DtHeader::genesis(prev.root());
    let (block, _) = block::build_dt_block(&genesis, &prev, &transfers(n_tx), account(999), p, corrupt);
    DtFixture { genesis, prev, block }
}

/// Probability that `c` draws of `s` distinct items out of `n` cover at
/// least `n - lambda` items, by a Markov chain over the distinct count.
pub fn pe_markov(n: usize, s: usize, c: usize, lambda: usize) -> f64 {
    // Binomials as plain f64 products; every value used here stays far below
    // the f64 range and keeps close to full relative precision.
    let binom = |a: usize, b: usize| -> f64 {
        if b > a {
            return 0.0;
        }
        let b = b.min(a - b);
        (0..b).fold(1.0, |acc, i| acc * (a - i) as f64 / (i + 1) as f64)
    };
    let total = binom(n, s);
    // step[d][j]: probability that a draw adds j new items when d are known.
    let step: Vec<Vec<f64>> = (0..=n)
        .map(|d| {
            (0..=s)
                .map(|j| {
                    if j > n - d || s - j > d {
                        0.0
                    } else {
                        binom(d, s - j) * binom(n - d, j) / total
                    }
                })
                .collect()
        })
        .collect();
    let mut dist = vec![0.0f64; n + 1];
    dist[0] = 1.0;
    for _ in 0..c {
        let mut next = vec![0.0f64; n + 1];
        for d in 0..=n {
            if dist[d] == 0.0 {
                continue;
            }
            for (j, p) in step[d].iter().enumerate() {
                if *p > 0.0 {
                    next[d + j] += dist[d] * p;
                }
            }
        }
        dist = next;
    }
    dist[n.saturating_sub(lambda)..].iter().sum()
}

/// Byte offset of each message within the payload stream, plus the offset
/// of the end tag.
fn spans(messages: &[Message]) -> (Vec<(usize, usize)>, usize) {
    let mut at = 0;
    let v = messages
        .iter()
        .map(|m| {
            let s = (at, at + m.encoded_len());
            at = s.1;
            s
        })
        .collect();
    (v, at)
}

/// A transition proof for period `q` of `block`, built the way the
/// generator would build it whether or not the period is faulty.
pub fn transition_candidate(block: &Block, prev: &State, q: usize) -> Option<TransitionFraudProof> {
    let traces: Vec<usize> = block
        .messages
        .iter()
        .enumerate()
        .filter(|(_, m)| matches!(m, Message::Trace(_)))
        .map(|(i, _)| i)
        .collect();
    if q > traces.len() {
        return None;
    }
    let pre = if q == 0 { None } else { Some(traces[q - 1]) };
    let post = traces.get(q).copied();
    let begin = pre.map_or(0, |p| p + 1);
    let stop = post.unwrap_or(block.messages.len());
    let mut state = prev.clone();
    let mut witnesses = Vec::new();
    for (i, m) in block.messages.iter().enumerate().take(stop) {
        if let Message::Tx(t) = m {
            if i >= begin {
                witnesses.push(state.witness(t));
            }
            let _ = state.apply(t);
        }
    }
    let payload = block.matrix.share_size() - block::OFFSET_LEN;
    let (sp, end_tag) = spans(&block.messages);
    let y = pre.map_or(0, |p| sp[p].0 / payload);
    let last = post.map_or(end_tag, |p| sp[p].1 - 1) / payload;
    Some(TransitionFraudProof {
        block_hash: block.hash(),
        y: y as u64,
        shares: (y..=last).map(|j| block.data_share(j).to_vec()).collect(),
        share_proofs: (y..=last)
            .map(|j| {
                let (x, c) = block.data_cell(j);
                block.matrix.share_proof(x, c, Axis::Row).unwrap().1
            })
            .collect(),
        witnesses,
    })
}

/// A codec proof claiming that axis `j` decodes to a different root, built
/// from its first `k` cells.
pub fn codec_candidate(block: &Block, axis: Axis, j: usize) -> CodecFraudProof {
    let m = &block.matrix;
    let shares = (0..m.k())
        .map(|pos| {
            let (x, y) = match axis {
                Axis::Row => (j, pos),
                Axis::Column => (pos, j),
            };
            let (share, proof) = m.prove_share(x, y, axis).unwrap();
            FaultShare { pos: pos as u32, share, origin: axis, proof }
        })
        .collect();
    let fault = CodecFault { axis, index: j as u32, axis_root: m.axis_root(axis, j), shares };
    CodecFraudProof::from_fault(block.hash(), &fault, &m.row_roots(), &m.column_roots())
}

/// Double-tree proof for period `q`, faulty or not.
pub fn dt_candidate(block: &DtBlock, prev: &State, q: usize) -> DtFraudProof {
    let p = block.period;
    let tx_tree = MerkleTree::new(&block.tx_leaves()).unwrap();
    let trace_tree = MerkleTree::new(&block.traces).unwrap();
    let start = q * p;
    let end = (start + p).min(block.txs.len());
    let mut state = prev.clone();
    for t in &block.txs[..start] {
        let _ = state.apply(t);
    }
    let witnesses = block.txs[start..end]
        .iter()
        .map(|t| {
            let w = state.witness(t);
            let _ = state.apply(t);
            w
        })
        .collect();
    let x = q as i64 - 1;
    DtFraudProof {
        block_hash: block.header.hash(),
        pre: (x >= 0).then(|| (block.traces[x as usize], trace_tree.prove(x as usize).unwrap(), x as u64)),
        post: block.traces.get(q).map(|d| (*d, trace_tree.prove(q).unwrap())),
        y: start as u64,
        txs: block.txs[start..end].to_vec(),
        tx_proofs: (start..end).map(|i| tx_tree.prove(i).unwrap()).collect(),
        witnesses,
    }
}

/// One random corruption of an encoded proof: bit flip, byte overwrite,
/// truncation, extension, or a copied block of bytes.
pub fn mutate<R: Rng>(rng: &mut R, bytes: &[u8]) -> Vec<u8> {
    let mut b = bytes.to_vec();
    let n = b.len();
    match rng.gen_range(0..6) {
        0 | 1 => {
            let i = rng.gen_range(0..n);
            b[i] ^= 1 << rng.gen_range(0..8);
        }
        2 => {
            for _ in 0..rng.gen_range(1..8) {
                let i = rng.gen_range(0..n);
                b[i] = rng.gen();
            }
        }
        3 => b.truncate(rng.gen_range(0..n)),
        4 => {
            let extra: Vec<u8> = (0..rng.gen_range(1..64)).map(|_| rng.gen()).collect();
            let at = rng.gen_range(0..=n);
            b.splice(at..at, extra);
        }
        _ => {
            let len = rng.gen_range(1..=32.min(n));
            let from = rng.gen_range(0..=n - len);
            let to = rng.gen_range(0..=n - len);
            let chunk = b[from..from + len].to_vec();
            b[to..to + len].copy_from_slice(&chunk);
        }
    }
    if b == bytes {
        // Guarantee a change.
        let i = rng.gen_range(0..n);
        b[i] ^= 0x80;
    }
    b
}
