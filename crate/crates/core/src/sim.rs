//! Discrete-event simulation of the sampling protocol.
//!
//! One block producer (the possible adversary) publishes a header and then
//! answers share requests. Honest full nodes download what they are served,
//! pick up shares gossiped by light clients, try to recover the matrix and
//! broadcast fraud proofs. Light clients sample `s` distinct cells, verify
//! the answers, gossip them to their full nodes and accept once a fraud-proof
//! window has passed without a valid proof.
//!
//! Time is counted in integer ticks. Each hop takes a uniformly random delay
//! in `[1, delta/2]`, so any two honest parties exchange data within `delta`.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, HashMap, HashSet};
use std::fmt;
use std::rc::Rc;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::block::{self, Block, BlockConfig, BlockError, BlockHeader, BuildMode, Withholding};
use crate::fraud::{self, CodecFraudProof, FraudProof, HeaderStore};
use crate::merkle::{self, Digest};
use crate::prob::{self, trial_rng};
use crate::rs2d::{self, Axis, DataCommitment, PartialMatrix, RecoveryOutcome, ShareProof};
use crate::smt::Key;
use crate::state::{State, Transaction};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("block construction failed: {0}")]
    Block(#[from] BlockError),
}

fn config_err(msg: impl Into<String>) -> SimError {
    SimError::Config(msg.into())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum NetworkModel {
    /// Requests reach the producer in order and can be linked to clients.
    #[default]
    Standard,
    /// Per-share requests of all clients are pooled and shuffled before the
    /// producer sees them, with no client identity attached.
    Enhanced,
}

impl FromStr for NetworkModel {
    type Err = SimError;
    fn from_str(s: &str) -> Result<Self, SimError> {
        match s {
            "standard" => Ok(NetworkModel::Standard),
            "enhanced" => Ok(NetworkModel::Enhanced),
            _ => Err(config_err(format!("unknown network model {s:?}"))),
        }
    }
}

impl fmt::Display for NetworkModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NetworkModel::Standard => "standard",
            NetworkModel::Enhanced => "enhanced",
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub enum Adversary {
    #[default]
    Honest,
    Withhold(Withholding),
    /// Serve light clients only, releasing at most `limit` distinct cells
    /// (default `k(3k-2) - 1`) and never a recoverable set.
    Selective { limit: Option<usize> },
    InvalidTransition,
    InvalidCode,
}

impl Adversary {
    fn build_mode(&self) -> BuildMode {
        match self {
            Adversary::InvalidTransition => BuildMode::InvalidTransaction,
            Adversary::InvalidCode => BuildMode::InvalidCode,
            _ => BuildMode::Honest,
        }
    }

    fn serves_full_nodes(&self, x: usize, y: usize) -> bool {
        match self {
            Adversary::Withhold(w) => !w.withholds(x, y),
            Adversary::Selective { .. } => false,
            _ => true,
        }
    }
}

/// Accepted spellings: `honest`, `withhold` (everything), `withhold-submatrix`,
/// `selective`, `selective:N`, `invalid-transition`, `invalid-code`. The
/// submatrix size is filled in by [`SimConfig`] once `k` is known.
impl FromStr for Adversary {
    type Err = SimError;
    fn from_str(s: &str) -> Result<Self, SimError> {
        Ok(match s {
            "honest" => Adversary::Honest,
            "withhold" | "withhold-all" => Adversary::Withhold(Withholding::All),
            "withhold-submatrix" => Adversary::Withhold(Withholding::Cells(BTreeSet::new())),
            "selective" => Adversary::Selective { limit: None },
            "invalid-transition" => Adversary::InvalidTransition,
            "invalid-code" => Adversary::InvalidCode,
            _ => match s.strip_prefix("selective:") {
                Some(n) => Adversary::Selective {
                    limit: Some(n.parse().map_err(|_| config_err(format!("bad limit in {s:?}")))?),
                },
                None => return Err(config_err(format!("unknown adversary {s:?}"))),
            },
        })
    }
}

impl fmt::Display for Adversary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Adversary::Honest => f.write_str("honest"),
            Adversary::Withhold(Withholding::None) => f.write_str("honest"),
            Adversary::Withhold(Withholding::All) => f.write_str("withhold"),
            Adversary::Withhold(Withholding::Cells(_)) => f.write_str("withhold-submatrix"),
            Adversary::Selective { limit: None } => f.write_str("selective"),
            Adversary::Selective { limit: Some(n) } => write!(f, "selective:{n}"),
            Adversary::InvalidTransition => f.write_str("invalid-transition"),
            Adversary::InvalidCode => f.write_str("invalid-code"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SimConfig {
    pub k: usize,
    pub share_size: usize,
    pub s: usize,
    pub period: usize,
    pub full_nodes: usize,
    pub light_clients: usize,
    /// The last `super_light` clients skip the row and column roots.
    pub super_light: usize,
    /// Full nodes each light client is connected to.
    pub links: usize,
    pub delta: u64,
    pub response_window_factor: u64,
    pub model: NetworkModel,
    pub adversary: Adversary,
    /// Transactions offered to the producer.
    pub txs: usize,
    pub seed: u64,
    pub record_events: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            k: 8,
            share_size: 256,
            s: 10,
            period: block::DEFAULT_PERIOD,
            full_nodes: 3,
            light_clients: 20,
            super_light: 0,
            links: 1,
            delta: 10,
            response_window_factor: 2,
            model: NetworkModel::Standard,
            adversary: Adversary::Honest,
            txs: 40,
            seed: 0,
            record_events: true,
        }
    }
}

impl SimConfig {
    pub fn width(&self) -> usize {
        2 * self.k
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.k == 0 {
            return Err(config_err("k must be positive"));
        }
        if self.full_nodes == 0 {
            return Err(config_err("at least one honest full node is required"));
        }
        if self.links == 0 || self.links > self.full_nodes {
            return Err(config_err("links must be between 1 and the number of full nodes"));
        }
        if self.s == 0 || self.s > self.width() * self.width() {
            return Err(config_err("s must be between 1 and the number of cells"));
        }
        if self.super_light > self.light_clients {
            return Err(config_err("more super-light clients than clients"));
        }
        if self.delta < 2 {
            return Err(config_err("delta must be at least 2 ticks"));
        }
        if self.response_window_factor == 0 {
            return Err(config_err("response window factor must be positive"));
        }
        if self.period == 0 {
            return Err(config_err("period must be positive"));
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment. Unknown keys are
    /// errors, missing keys keep their defaults.
    pub fn from_kv(text: &str) -> Result<Self, SimError> {
        let mut c = SimConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| config_err(format!("line {}: expected key = value", n + 1)))?;
            c.set(key.trim(), value.trim())?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), SimError> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T, SimError> {
            v.parse().map_err(|_| config_err(format!("bad value {v:?} for {key}")))
        }
        match key {
            "k" => self.k = num(key, value)?,
            "share_size" => self.share_size = num(key, value)?,
            "s" => self.s = num(key, value)?,
            "period" => self.period = num(key, value)?,
            "full_nodes" => self.full_nodes = num(key, value)?,
            "light_clients" => self.light_clients = num(key, value)?,
            "super_light" => self.super_light = num(key, value)?,
            "links" => self.links = num(key, value)?,
            "delta" => self.delta = num(key, value)?,
            "response_window_factor" => self.response_window_factor = num(key, value)?,
            "model" => self.model = value.parse()?,
            "adversary" => self.adversary = value.parse()?,
            "txs" => self.txs = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "record_events" => self.record_events = num(key, value)?,
            _ => return Err(config_err(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn to_kv(&self) -> String {
        format!(
            "k = {}\nshare_size = {}\ns = {}\nperiod = {}\nfull_nodes = {}\nlight_clients = {}\n\
             super_light = {}\nlinks = {}\ndelta = {}\nresponse_window_factor = {}\nmodel = {}\n\
             adversary = {}\ntxs = {}\nseed = {}\nrecord_events = {}\n",
            self.k,
            self.share_size,
            self.s,
            self.period,
            self.full_nodes,
            self.light_clients,
            self.super_light,
            self.links,
            self.delta,
            self.response_window_factor,
            self.model,
            self.adversary,
            self.txs,
            self.seed,
            self.record_events,
        )
    }

    fn adversary_resolved(&self) -> Adversary {
        match &self.adversary {
            Adversary::Withhold(Withholding::Cells(c)) if c.is_empty() => {
                Adversary::Withhold(Withholding::submatrix(self.k))
            }
            a => a.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Accept,
    RejectUnavailable,
    RejectFraudProof,
}

impl Outcome {
    pub fn is_accept(self) -> bool {
        self == Outcome::Accept
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Accept => "accept",
            Outcome::RejectUnavailable => "reject-unavailable",
            Outcome::RejectFraudProof => "reject-fraudproof",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClientVerdict {
    pub outcome: Outcome,
    pub tick: u64,
    pub super_light: bool,
    pub samples: Vec<(usize, usize)>,
    /// Tick at which the client sent its sample requests.
    pub requested_at: u64,
    /// Tick at which the client had verified all of its samples.
    pub sampled_at: Option<u64>,
    pub denied: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EventRecord {
    pub tick: u64,
    pub seq: u64,
    pub kind: &'static str,
    pub actor: String,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SimVerdict {
    pub clients: Vec<ClientVerdict>,
    /// First tick at which some honest full node held the whole matrix.
    pub recovered_by_full_node: Option<u64>,
    /// First tick at which some honest full node produced a fraud proof.
    pub fraud_proof_at: Option<u64>,
    pub block_valid: bool,
    pub soundness_holds: bool,
    pub agreement_holds: bool,
    /// Clients in the order their request batches reached the producer
    /// (standard model only).
    pub request_order: Vec<usize>,
    pub released_cells: usize,
    pub denied_requests: usize,
    pub events: Vec<EventRecord>,
}

impl SimVerdict {
    pub fn accepted(&self) -> usize {
        self.clients.iter().filter(|c| c.outcome.is_accept()).count()
    }

    pub fn all(&self, o: Outcome) -> bool {
        self.clients.iter().all(|c| c.outcome == o)
    }

    pub fn verdict_csv(&self) -> String {
        let mut out = String::from("client,outcome,tick,super_light,requested_at,sampled_at,denied\n");
        for (i, c) in self.clients.iter().enumerate() {
            out += &format!(
                "{i},{},{},{},{},{},{}\n",
                c.outcome,
                c.tick,
                c.super_light,
                c.requested_at,
                c.sampled_at.map_or(String::new(), |t| t.to_string()),
                c.denied
            );
        }
        out
    }

    pub fn summary(&self) -> String {
        let opt = |t: Option<u64>| t.map_or("none".to_string(), |t| t.to_string());
        format!(
            "clients = {}\naccepted = {}\nrejected_unavailable = {}\nrejected_fraudproof = {}\n\
             block_valid = {}\nrecovered_by_full_node = {}\nfraud_proof_at = {}\n\
             soundness_holds = {}\nagreement_holds = {}\nreleased_cells = {}\ndenied_requests = {}\n",
            self.clients.len(),
            self.accepted(),
            self.clients.iter().filter(|c| c.outcome == Outcome::RejectUnavailable).count(),
            self.clients.iter().filter(|c| c.outcome == Outcome::RejectFraudProof).count(),
            self.block_valid,
            opt(self.recovered_by_full_node),
            opt(self.fraud_proof_at),
            self.soundness_holds,
            self.agreement_holds,
            self.released_cells,
            self.denied_requests,
        )
    }
}

pub fn events_csv(events: &[EventRecord]) -> String {
    let mut out = String::from("tick,seq,kind,actor,detail\n");
    for e in events {
        out += &format!("{},{},{},{},{}\n", e.tick, e.seq, e.kind, e.actor, e.detail);
    }
    out
}

/// A genesis state, a block built on it, and the header store every honest
/// party starts from.
pub struct Scenario {
    pub genesis: BlockHeader,
    pub prev_state: State,
    pub block: Block,
    pub post_state: State,
}

fn account(i: u64) -> Key {
    merkle::hash(&[b"account".as_slice(), &i.to_be_bytes()].concat()).0
}

/// Builds a block of random transfers between a handful of funded accounts.
pub fn scenario(cfg: BlockConfig, txs: usize, mode: BuildMode, seed: u64) -> Result<Scenario, BlockError> {
    const ACCOUNTS: u64 = 16;
    let mut rng = trial_rng(seed, u64::MAX);
    let prev_state = State::genesis(&(0..ACCOUNTS).map(|i| (account(i), 1_000_000)).collect::<Vec<_>>());
    let mut nonces = [0u64; ACCOUNTS as usize];
    let list: Vec<Transaction> = (0..txs)
        .map(|_| {
            let from = rng.gen_range(0..ACCOUNTS);
            let to = rng.gen_range(0..ACCOUNTS);
            let nonce = nonces[from as usize];
            nonces[from as usize] += 1;
            Transaction {
                from: account(from),
                to: account(to),
                amount: rng.gen_range(1..1000),
                fee: rng.gen_range(0..5),
                nonce,
            }
        })
        .collect();
    let genesis = BlockHeader::genesis(prev_state.root());
    let (block, post_state) = block::build_block(&genesis, &prev_state, &list, account(ACCOUNTS), mode, cfg)?;
    Ok(Scenario { genesis, prev_state, block, post_state })
}

/// Whether the known cells of a `2k x 2k` matrix determine all others,
/// by repeatedly completing rows and columns with at least `k` known cells.
pub fn pattern_recoverable(k: usize, known: &[bool]) -> bool {
    let w = 2 * k;
    let mut grid = known.to_vec();
    loop {
        let mut changed = false;
        for axis in [Axis::Row, Axis::Column] {
            for j in 0..w {
                let at = |p: usize| match axis {
                    Axis::Row => j * w + p,
                    Axis::Column => p * w + j,
                };
                let n = (0..w).filter(|&p| grid[at(p)]).count();
                if n >= k && n < w {
                    for p in 0..w {
                        grid[at(p)] = true;
                    }
                    changed = true;
                }
            }
        }
        if !changed {
            return grid.iter().all(|&b| b);
        }
    }
}

/// Fraction of `runs` in which `c` clients drawing `s` distinct cells each
/// collectively hit at least `k(3k-2)` distinct cells.
pub fn recovery_experiment(k: u64, s: u64, c: u64, runs: u64, seed: u64) -> f64 {
    if runs == 0 {
        return 0.0;
    }
    let n = prob::total_shares(k) as usize;
    let goal = prob::gamma(k) as usize;
    let mut hits = 0;
    for r in 0..runs {
        let mut rng = trial_rng(seed, r);
        let mut seen = vec![false; n];
        let mut distinct = 0;
        for _ in 0..c {
            for i in index::sample(&mut rng, n, s as usize) {
                if !seen[i] {
                    seen[i] = true;
                    distinct += 1;
                }
            }
        }
        if distinct >= goal {
            hits += 1;
        }
    }
    hits as f64 / runs as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Party {
    Full(usize),
    Client(usize),
}

impl fmt::Display for Party {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Party::Full(i) => write!(f, "full{i}"),
            Party::Client(i) => write!(f, "client{i}"),
        }
    }
}

#[derive(Debug)]
struct Sample {
    x: usize,
    y: usize,
    share: Vec<u8>,
    proof: ShareProof,
}

enum Event {
    Header(Party),
    FullRequest(usize),
    CellsToFull { node: usize, cells: Vec<Rc<Sample>>, gossip: bool },
    ClientRequest(usize),
    MixFlush,
    SampleToClient { client: usize, sample: Rc<Sample> },
    Deadline(usize),
    AcceptCheck(usize),
    ProofToFull { node: usize, proof: Rc<FraudProof> },
    ProofToClient { client: usize, proof: Rc<FraudProof> },
}

struct FullNode {
    partial: Option<PartialMatrix>,
    pending: Vec<Rc<Sample>>,
    done: bool,
    has_proof: bool,
}

struct Client {
    super_light: bool,
    roots: bool,
    samples: Vec<(usize, usize, Axis)>,
    verified: HashSet<(usize, usize)>,
    received: Vec<Rc<Sample>>,
    requested_at: u64,
    sampled_at: Option<u64>,
    denied: usize,
    outcome: Option<(Outcome, u64)>,
}

struct Sim<'a> {
    cfg: &'a SimConfig,
    adversary: Adversary,
    rng: ChaCha8Rng,
    now: u64,
    seq: u64,
    queue: BinaryHeap<Reverse<(u64, u64)>>,
    pending: HashMap<u64, Event>,
    events: Vec<EventRecord>,
    block: Block,
    prev_state: State,
    store: HeaderStore,
    commitment: DataCommitment,
    row_roots: Vec<Digest>,
    column_roots: Vec<Digest>,
    full: Vec<FullNode>,
    clients: Vec<Client>,
    released: HashSet<(usize, usize)>,
    stopped: bool,
    pool: Vec<(usize, usize, usize, Axis)>,
    request_order: Vec<usize>,
    denied_requests: usize,
    recovered_at: Option<u64>,
    proof_at: Option<u64>,
}

/// Runs the full protocol once and reports every client's verdict.
pub fn run_sampling(cfg: &SimConfig) -> Result<SimVerdict, SimError> {
    cfg.validate()?;
    let adversary = cfg.adversary_resolved();
    let bc = BlockConfig { k: cfg.k, share_size: cfg.share_size, period: cfg.period };
    let sc = scenario(bc, cfg.txs, adversary.build_mode(), cfg.seed)?;
    let mut store = HeaderStore::new(cfg.period);
    store.insert(sc.genesis.clone());
    store.insert(sc.block.header.clone());
    let row_roots = sc.block.matrix.row_roots();
    let column_roots = sc.block.matrix.column_roots();
    let mut sim = Sim {
        cfg,
        rng: trial_rng(cfg.seed, 0),
        now: 0,
        seq: 0,
        queue: BinaryHeap::new(),
        pending: HashMap::new(),
        events: Vec::new(),
        commitment: sc.block.matrix.commitment(),
        row_roots,
        column_roots,
        block: sc.block,
        prev_state: sc.prev_state,
        store,
        full: (0..cfg.full_nodes)
            .map(|_| FullNode { partial: None, pending: Vec::new(), done: false, has_proof: false })
            .collect(),
        clients: (0..cfg.light_clients)
            .map(|i| Client {
                super_light: i >= cfg.light_clients - cfg.super_light,
                roots: false,
                samples: Vec::new(),
                verified: HashSet::new(),
                received: Vec::new(),
                requested_at: 0,
                sampled_at: None,
                denied: 0,
                outcome: None,
            })
            .collect(),
        adversary,
        released: HashSet::new(),
        stopped: false,
        pool: Vec::new(),
        request_order: Vec::new(),
        denied_requests: 0,
        recovered_at: None,
        proof_at: None,
    };
    sim.run();
    Ok(sim.verdict())
}

impl Sim<'_> {
    fn hop(&mut self) -> u64 {
        self.rng.gen_range(1..=(self.cfg.delta / 2).max(1))
    }

    fn schedule(&mut self, at: u64, ev: Event) {
        let seq = self.seq;
        self.seq += 1;
        self.queue.push(Reverse((at, seq)));
        self.pending.insert(seq, ev);
    }

    fn send(&mut self, ev: Event) {
        let at = self.now + self.hop();
        self.schedule(at, ev);
    }

    fn log(&mut self, kind: &'static str, actor: impl fmt::Display, detail: impl Into<String>) {
        if self.cfg.record_events {
            self.events.push(EventRecord {
                tick: self.now,
                seq: self.seq,
                kind,
                actor: actor.to_string(),
                detail: detail.into(),
            });
        }
    }

    fn client_links(&self, client: usize) -> Vec<usize> {
        (0..self.cfg.links).map(|j| (client + j) % self.cfg.full_nodes).collect()
    }

    fn node_clients(&self, node: usize) -> Vec<usize> {
        (0..self.cfg.light_clients)
            .filter(|&c| self.client_links(c).contains(&node))
            .collect()
    }

    fn run(&mut self) {
        self.log("publish", "producer", self.block.hash().to_hex());
        for i in 0..self.cfg.full_nodes {
            self.send(Event::Header(Party::Full(i)));
        }
        for i in 0..self.cfg.light_clients {
            self.send(Event::Header(Party::Client(i)));
        }
        if self.cfg.model == NetworkModel::Enhanced {
            // Every header lands by delta/2 and every request by delta.
            self.schedule(self.cfg.delta + 1, Event::MixFlush);
        }
        while let Some(Reverse((tick, seq))) = self.queue.pop() {
            self.now = tick;
            let ev = self.pending.remove(&seq).expect("scheduled event");
            self.handle(ev);
        }
    }

    fn handle(&mut self, ev: Event) {
        match ev {
            Event::Header(Party::Full(i)) => self.full_header(i),
            Event::Header(Party::Client(i)) => self.client_header(i),
            Event::FullRequest(i) => self.serve_full(i),
            Event::CellsToFull { node, cells, gossip } => self.full_cells(node, cells, gossip),
            Event::ClientRequest(c) => self.serve_client(c),
            Event::MixFlush => self.flush_mix(),
            Event::SampleToClient { client, sample } => self.client_sample(client, sample),
            Event::Deadline(c) => self.client_deadline(c),
            Event::AcceptCheck(c) => self.client_accept(c),
            Event::ProofToFull { node, proof } => self.full_proof(node, proof),
            Event::ProofToClient { client, proof } => self.client_proof(client, proof),
        }
    }

    fn sample_for(&self, x: usize, y: usize, origin: Axis) -> Rc<Sample> {
        let (share, proof) = self.block.matrix.share_proof(x, y, origin).expect("cell in range");
        Rc::new(Sample { x, y, share, proof })
    }

    // Producer

    fn serve_full(&mut self, node: usize) {
        let w = self.cfg.width();
        let mut cells = Vec::new();
        for x in 0..w {
            for y in 0..w {
                if self.adversary.serves_full_nodes(x, y) {
                    cells.push(self.sample_for(x, y, Axis::Row));
                }
            }
        }
        self.log("serve-full", "producer", format!("node={node} cells={}", cells.len()));
        if !cells.is_empty() {
            self.send(Event::CellsToFull { node, cells, gossip: false });
        }
    }

    fn release_allowed(&self, extra: &[(usize, usize)]) -> bool {
        let limit = match self.adversary {
            Adversary::Selective { limit } => limit.unwrap_or(prob::gamma(self.cfg.k as u64) as usize - 1),
            _ => return true,
        };
        let mut union = self.released.clone();
        union.extend(extra.iter().copied());
        if union.len() > limit {
            return false;
        }
        let w = self.cfg.width();
        let mut known = vec![false; w * w];
        for (x, y) in union {
            known[x * w + y] = true;
        }
        !pattern_recoverable(self.cfg.k, &known)
    }

    fn serve_client(&mut self, client: usize) {
        if self.cfg.model == NetworkModel::Enhanced {
            let reqs: Vec<_> = self.clients[client].samples.iter().map(|&(x, y, o)| (client, x, y, o)).collect();
            self.pool.extend(reqs);
            return;
        }
        self.request_order.push(client);
        let samples = self.clients[client].samples.clone();
        let serve = match &self.adversary {
            Adversary::Withhold(_) => None,
            Adversary::Selective { .. } => {
                let cells: Vec<_> = samples.iter().map(|&(x, y, _)| (x, y)).collect();
                let ok = !self.stopped && self.release_allowed(&cells);
                if ok {
                    self.released.extend(cells);
                } else {
                    self.stopped = true;
                }
                Some(ok)
            }
            _ => Some(true),
        };
        let mut denied = 0;
        for (x, y, origin) in samples {
            let ok = match serve {
                Some(ok) => ok,
                None => self.adversary.serves_full_nodes(x, y),
            };
            if ok {
                let sample = self.sample_for(x, y, origin);
                self.send(Event::SampleToClient { client, sample });
            } else {
                denied += 1;
            }
        }
        self.denied_requests += denied;
        self.clients[client].denied += denied;
        self.log("serve-client", "producer", format!("client={client} denied={denied}"));
    }

    fn flush_mix(&mut self) {
        let mut pool = std::mem::take(&mut self.pool);
        pool.shuffle(&mut self.rng);
        self.log("mix-flush", "producer", format!("requests={}", pool.len()));
        for (client, x, y, origin) in pool {
            let ok = match &self.adversary {
                Adversary::Withhold(w) => !w.withholds(x, y),
                Adversary::Selective { .. } => {
                    if self.released.contains(&(x, y)) {
                        true
                    } else if self.release_allowed(&[(x, y)]) {
                        self.released.insert((x, y));
                        true
                    } else {
                        false
                    }
                }
                _ => true,
            };
            if ok {
                let sample = self.sample_for(x, y, origin);
                self.send(Event::SampleToClient { client, sample });
            } else {
                self.denied_requests += 1;
                self.clients[client].denied += 1;
            }
        }
    }

    // Full nodes

    fn full_header(&mut self, node: usize) {
        let pm = PartialMatrix::new(
            self.cfg.k,
            self.cfg.share_size,
            self.row_roots.clone(),
            self.column_roots.clone(),
        )
        .expect("roots from a valid matrix");
        self.full[node].partial = Some(pm);
        self.log("header", Party::Full(node), "");
        self.send(Event::FullRequest(node));
        let buffered = std::mem::take(&mut self.full[node].pending);
        if !buffered.is_empty() {
            self.full_cells(node, buffered, true);
        }
    }

    fn full_cells(&mut self, node: usize, cells: Vec<Rc<Sample>>, gossip: bool) {
        let Some(pm) = self.full[node].partial.as_mut() else {
            self.full[node].pending.extend(cells);
            return;
        };
        let mut fresh = Vec::new();
        for c in cells {
            if pm.get(c.x, c.y).is_some() {
                continue;
            }
            let ok = pm
                .insert(c.x, c.y, c.share.clone(), c.proof.origin, c.proof.axis_proof.clone())
                .is_ok();
            if ok {
                fresh.push(c);
            }
        }
        if fresh.is_empty() {
            return;
        }
        self.log("cells", Party::Full(node), format!("new={} gossip={gossip}", fresh.len()));
        for peer in 0..self.cfg.full_nodes {
            if peer != node {
                self.send(Event::CellsToFull { node: peer, cells: fresh.clone(), gossip: true });
            }
        }
        self.try_recover(node);
    }

    fn try_recover(&mut self, node: usize) {
        if self.full[node].done {
            return;
        }
        let k = self.cfg.k;
        let w = self.cfg.width();
        let pm = self.full[node].partial.as_ref().expect("header seen");
        if pm.present() < k * k {
            return;
        }
        let known: Vec<bool> = (0..w * w).map(|i| pm.get(i / w, i % w).is_some()).collect();
        if !pattern_recoverable(k, &known) {
            return;
        }
        let hash = self.block.hash();
        let proof = match rs2d::recover_matrix(pm) {
            Ok(RecoveryOutcome::Recovered(m)) => {
                self.recovered_at.get_or_insert(self.now);
                self.log("recovered", Party::Full(node), "");
                let messages = block::parse_shares(&m.original_shares()).unwrap_or_default();
                let rebuilt = Block {
                    header: self.block.header.clone(),
                    matrix: m,
                    messages,
                    withheld: Withholding::None,
                    period: self.cfg.period,
                };
                match fraud::generate_transition_fraud_proof(&rebuilt, &self.prev_state) {
                    Ok(Some(p)) => Some(FraudProof::Transition(p)),
                    _ => None,
                }
            }
            Ok(RecoveryOutcome::Fault(f)) => {
                let pm = self.full[node].partial.as_ref().expect("header seen");
                Some(FraudProof::Codec(CodecFraudProof::from_fault(
                    hash,
                    &f,
                    pm.row_roots(),
                    pm.column_roots(),
                )))
            }
            Err(_) => return,
        };
        self.full[node].done = true;
        if let Some(p) = proof {
            self.proof_at.get_or_insert(self.now);
            self.log("fraud-proof", Party::Full(node), format!("bytes={}", p.encoded_len()));
            self.full_proof(node, Rc::new(p));
        }
    }

    fn full_proof(&mut self, node: usize, proof: Rc<FraudProof>) {
        if self.full[node].has_proof || !proof.verify(&self.store) {
            return;
        }
        self.full[node].has_proof = true;
        self.log("proof", Party::Full(node), "valid");
        for peer in 0..self.cfg.full_nodes {
            if peer != node {
                self.send(Event::ProofToFull { node: peer, proof: proof.clone() });
            }
        }
        for client in self.node_clients(node) {
            self.send(Event::ProofToClient { client, proof: proof.clone() });
        }
    }

    // Light clients

    fn decide(&mut self, client: usize, o: Outcome) {
        if self.clients[client].outcome.is_none() {
            self.clients[client].outcome = Some((o, self.now));
            self.log("verdict", Party::Client(client), o.to_string());
        }
    }

    fn client_header(&mut self, client: usize) {
        self.log("header", Party::Client(client), "");
        if !self.clients[client].super_light {
            let ok = DataCommitment::from_roots(&self.row_roots, &self.column_roots)
                .is_ok_and(|d| d == self.commitment && d.data_root == self.block.header.data_root);
            if !ok {
                self.decide(client, Outcome::RejectUnavailable);
                return;
            }
            self.clients[client].roots = true;
        }
        let w = self.cfg.width();
        let picks = index::sample(&mut self.rng, w * w, self.cfg.s).into_vec();
        let samples: Vec<_> = picks
            .into_iter()
            .map(|i| {
                let origin = if self.rng.gen::<bool>() { Axis::Row } else { Axis::Column };
                (i / w, i % w, origin)
            })
            .collect();
        let c = &mut self.clients[client];
        c.samples = samples;
        c.requested_at = self.now;
        self.send(Event::ClientRequest(client));
        let deadline = self.now + self.cfg.response_window_factor * self.cfg.delta;
        self.schedule(deadline, Event::Deadline(client));
    }

    fn client_sample(&mut self, client: usize, sample: Rc<Sample>) {
        let w = self.cfg.width();
        let c = &self.clients[client];
        let wanted = c.samples.iter().any(|&(x, y, _)| (x, y) == (sample.x, sample.y));
        let mut ok = wanted
            && sample.proof.cell() == (sample.x, sample.y)
            && sample.proof.verify(&sample.share, &self.block.header.data_root, w);
        if ok && c.roots {
            let j = sample.proof.axis_index as usize;
            let expect = match sample.proof.origin {
                Axis::Row => self.row_roots[j],
                Axis::Column => self.column_roots[j],
            };
            ok = expect == sample.proof.axis_root;
        }
        if !ok {
            return;
        }
        let c = &mut self.clients[client];
        if !c.verified.insert((sample.x, sample.y)) {
            return;
        }
        c.received.push(sample.clone());
        let complete = c.verified.len() == c.samples.len();
        for node in self.client_links(client) {
            self.send(Event::CellsToFull { node, cells: vec![sample.clone()], gossip: true });
        }
        if complete && self.clients[client].outcome.is_none() {
            self.clients[client].sampled_at = Some(self.now);
            let at = self.now + self.cfg.response_window_factor * self.cfg.delta;
            self.schedule(at, Event::AcceptCheck(client));
        }
    }

    fn client_deadline(&mut self, client: usize) {
        if self.clients[client].sampled_at.is_none() {
            self.decide(client, Outcome::RejectUnavailable);
        }
    }

    fn client_accept(&mut self, client: usize) {
        self.decide(client, Outcome::Accept);
    }

    fn client_proof(&mut self, client: usize, proof: Rc<FraudProof>) {
        if self.clients[client].outcome.is_some() {
            return;
        }
        // Codec proofs carry their own axis-root proofs, so super-light
        // clients check both kinds against the header alone.
        if proof.verify(&self.store) {
            self.decide(client, Outcome::RejectFraudProof);
        }
    }

    fn verdict(self) -> SimVerdict {
        let block_valid = matches!(self.adversary, Adversary::Honest | Adversary::Withhold(_) | Adversary::Selective { .. });
        let clients: Vec<ClientVerdict> = self
            .clients
            .into_iter()
            .map(|c| {
                let (outcome, tick) = c.outcome.expect("every client decides");
                ClientVerdict {
                    outcome,
                    tick,
                    super_light: c.super_light,
                    samples: c.samples.iter().map(|&(x, y, _)| (x, y)).collect(),
                    requested_at: c.requested_at,
                    sampled_at: c.sampled_at,
                    denied: c.denied,
                }
            })
            .collect();
        let available = self.recovered_at.is_some();
        let soundness_holds = clients.iter().all(|c| !c.outcome.is_accept() || (block_valid && available));
        let agreement_holds = clients.windows(2).all(|p| p[0].outcome.is_accept() == p[1].outcome.is_accept());
        SimVerdict {
            clients,
            recovered_by_full_node: self.recovered_at,
            fraud_proof_at: self.proof_at,
            block_valid,
            soundness_holds,
            agreement_holds,
            request_order: self.request_order,
            released_cells: self.released.len(),
            denied_requests: self.denied_requests,
            events: self.events,
        }
    }
}

/// Runs the selective-disclosure attack; the configuration's adversary is
/// replaced by a selective one with the given limit.
pub fn selective_disclosure_run(cfg: &SimConfig, limit: Option<usize>) -> Result<SimVerdict, SimError> {
    let cfg = SimConfig { adversary: Adversary::Selective { limit }, ..cfg.clone() };
    run_sampling(&cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(adversary: Adversary) -> SimConfig {
        SimConfig {
            k: 4,
            share_size: 128,
            s: 6,
            full_nodes: 3,
            light_clients: 12,
            txs: 10,
            period: 4,
            adversary,
            seed: 11,
            ..SimConfig::default()
        }
    }

    #[test]
    fn honest_run_accepts() {
        let v = run_sampling(&cfg(Adversary::Honest)).unwrap();
        assert!(v.all(Outcome::Accept));
        assert!(v.soundness_holds && v.agreement_holds);
        assert!(v.recovered_by_full_node.is_some());
        assert!(v.fraud_proof_at.is_none());
    }

    #[test]
    fn deterministic() {
        let a = run_sampling(&cfg(Adversary::InvalidCode)).unwrap();
        let b = run_sampling(&cfg(Adversary::InvalidCode)).unwrap();
        assert_eq!(a, b);
        let c = run_sampling(&SimConfig { seed: 12, ..cfg(Adversary::InvalidCode) }).unwrap();
        assert_ne!(a.events, c.events);
    }

    #[test]
    fn withhold_all_rejects() {
        let v = run_sampling(&cfg(Adversary::Withhold(Withholding::All))).unwrap();
        assert!(v.all(Outcome::RejectUnavailable));
        assert!(v.soundness_holds && v.agreement_holds);
        assert!(v.recovered_by_full_node.is_none());
    }

    #[test]
    fn invalid_code_rejected_by_proof() {
        let v = run_sampling(&SimConfig { super_light: 4, ..cfg(Adversary::InvalidCode) }).unwrap();
        assert!(v.all(Outcome::RejectFraudProof));
        assert!(v.fraud_proof_at.is_some());
        assert!(v.soundness_holds && v.agreement_holds);
    }

    #[test]
    fn invalid_transition_rejected_by_proof() {
        let v = run_sampling(&cfg(Adversary::InvalidTransition)).unwrap();
        assert!(v.all(Outcome::RejectFraudProof), "{}", v.summary());
    }

    #[test]
    fn selective_budget_zero_rejects_all() {
        let v = selective_disclosure_run(&cfg(Adversary::Honest), Some(0)).unwrap();
        assert!(v.all(Outcome::RejectUnavailable));
        assert_eq!(v.released_cells, 0);
    }

    #[test]
    fn selective_never_releases_recoverable_set() {
        let v = selective_disclosure_run(&SimConfig { light_clients: 40, ..cfg(Adversary::Honest) }, None).unwrap();
        assert!(v.recovered_by_full_node.is_none());
        assert!(v.accepted() > 0);
        assert!(!v.soundness_holds);
    }

    #[test]
    fn submatrix_pattern_is_unrecoverable() {
        let k = 3;
        let w = 2 * k;
        let mut known = vec![true; w * w];
        assert!(pattern_recoverable(k, &known));
        for x in 0..=k {
            for y in 0..=k {
                known[x * w + y] = false;
            }
        }
        assert!(!pattern_recoverable(k, &known));
        known[0] = true;
        assert!(pattern_recoverable(k, &known));
    }

    #[test]
    fn recovery_experiment_pigeonhole() {
        assert_eq!(recovery_experiment(4, 2, 10, 50, 1), 0.0);
        assert_eq!(recovery_experiment(2, 16, 1, 5, 1), 1.0);
    }

    #[test]
    fn kv_round_trip() {
        let c = SimConfig {
            adversary: Adversary::Selective { limit: Some(30) },
            model: NetworkModel::Enhanced,
            ..cfg(Adversary::Honest)
        };
        let parsed = SimConfig::from_kv(&c.to_kv()).unwrap();
        assert_eq!(parsed, c);
        assert!(SimConfig::from_kv("k = 4\nbogus = 1\n").is_err());
        assert!(SimConfig::from_kv("full_nodes = 0").is_err());
        let sub = SimConfig::from_kv("adversary = withhold-submatrix # top-left block").unwrap();
        assert_eq!(sub.adversary_resolved(), Adversary::Withhold(Withholding::submatrix(sub.k)));
    }

    #[test]
    fn events_csv_has_header_and_rows() {
        let v = run_sampling(&cfg(Adversary::Honest)).unwrap();
        let csv = events_csv(&v.events);
        assert!(csv.starts_with("tick,seq,kind,actor,detail\n"));
        assert!(csv.lines().count() > v.clients.len());
        assert_eq!(v.verdict_csv().lines().count(), v.clients.len() + 1);
    }
}
