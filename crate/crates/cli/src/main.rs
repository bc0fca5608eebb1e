//! `da`: encode blocks, build test chains, generate and check fraud proofs,
//! print probability tables and run the sampling simulator.
//!
//! Exit status is 0 on success (or a proof that verifies), 1 when a proof
//! does not verify or no fraud was found, and 2 on usage or input errors.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use da_core::block::{self, Block, BlockConfig, BlockHeader, BuildMode, Withholding};
use da_core::fraud::{self, FraudProof, HeaderStore};
use da_core::prob;
use da_core::rs2d::{self, ExtendedMatrix};
use da_core::sim::{self, Adversary, NetworkModel, SimConfig};
use da_core::smt::Key;
use da_core::state::{AccountValue, State};

#[derive(Parser)]
#[command(name = "da", version, about = "Data availability and fraud proof toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extend a file into a 2k x 2k matrix and write its commitment.
    Encode(EncodeArgs),
    /// Build test blocks.
    #[command(subcommand)]
    Block(BlockCommand),
    /// Generate or verify fraud proofs.
    #[command(subcommand)]
    Fraud(FraudCommand),
    /// Sampling probability tables as CSV.
    #[command(subcommand)]
    Prob(ProbCommand),
    /// Run the network simulator.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 16)]
    k: usize,
    #[arg(long, default_value_t = 256)]
    share_size: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum BlockCommand {
    /// Build a block of random transfers on a fresh genesis state.
    Gen(BlockGenArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Honest,
    InvalidTrace,
    InvalidStateRoot,
    InvalidTransaction,
    InvalidCode,
}

#[derive(Args)]
struct BlockGenArgs {
    #[arg(long, default_value_t = 16)]
    k: usize,
    #[arg(long, default_value_t = 256)]
    share_size: usize,
    #[arg(long, default_value_t = block::DEFAULT_PERIOD)]
    period: usize,
    #[arg(long, default_value_t = 100)]
    txs: usize,
    #[arg(long, value_enum, default_value = "honest")]
    mode: Mode,
    #[arg(long, env = "DA_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum FraudCommand {
    /// Look for fraud in a block directory and write a proof.
    Gen {
        #[arg(long)]
        block: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a proof against the headers of a block directory.
    Verify {
        #[arg(long)]
        block: PathBuf,
        #[arg(long)]
        proof: PathBuf,
    },
}

#[derive(Subcommand)]
enum ProbCommand {
    /// One row per (k, s) with p1, pc, pe and px.
    Grid(GridArgs),
    /// Smallest client counts reaching the recovery target.
    MinClients(MinClientsArgs),
}

#[derive(Args)]
struct GridArgs {
    /// Comma-separated values or an inclusive range `a..b`.
    #[arg(long, default_value = "16")]
    k: String,
    #[arg(long, default_value = "1..20")]
    s: String,
    #[arg(long, default_value_t = 100)]
    clients: u64,
    #[arg(long, default_value_t = 0)]
    c_hat: u64,
    #[arg(long, default_value_t = 0)]
    d: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MinClientsArgs {
    #[arg(long, default_value = "16")]
    k: String,
    #[arg(long, default_value = "2")]
    s: String,
    #[arg(long, default_value_t = 0.99)]
    target: f64,
    #[arg(long, env = "DA_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Standard,
    Enhanced,
}


#[derive(Args)]
struct SimulateArgs {
    /// Flat `key = value` configuration; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    share_size: Option<usize>,
    #[arg(long)]
    s: Option<usize>,
    #[arg(long)]
    clients: Option<usize>,
    #[arg(long, env = "DA_SEED")]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    model: Option<ModelArg>,
    /// honest, withhold, withhold-all, selective, selective:N,
    /// invalid-transition or invalid-code.
    #[arg(long)]
    adversary: Option<Adversary>,
    #[arg(long)]
    out: PathBuf,
}

/// A failure together with the exit status it maps to.
struct Failure {
    code: u8,
    msg: String,
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure { code: 2, msg: msg.into() }
}

fn falsity(msg: impl Into<String>) -> Failure {
    Failure { code: 1, msg: msg.into() }
}

type Res<T> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Encode(a) => encode(a),
        Command::Block(BlockCommand::Gen(a)) => block_gen(a),
        Command::Fraud(FraudCommand::Gen { block, out }) => fraud_gen(&block, &out),
        Command::Fraud(FraudCommand::Verify { block, proof }) => fraud_verify(&block, &proof),
        Command::Prob(ProbCommand::Grid(a)) => prob_grid(a),
        Command::Prob(ProbCommand::MinClients(a)) => min_clients(a),
        Command::Simulate(a) => simulate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("da: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}

fn read(path: &Path) -> Res<Vec<u8>> {
    fs::read(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))
}

fn write(path: &Path, data: impl AsRef<[u8]>) -> Res<()> {
    fs::write(path, data).map_err(|e| usage(format!("cannot write {}: {e}", path.display())))
}

fn make_dir(dir: &Path) -> Res<()> {
    fs::create_dir_all(dir).map_err(|e| usage(format!("cannot create {}: {e}", dir.display())))
}

fn manifest(dir: &Path, subcommand: &str, config: Option<&Path>, seed: Option<u64>, params: &[(&str, String)]) -> Res<()> {
    let mut m = format!("subcommand = {subcommand}\n");
    if let Some(c) = config {
        writeln!(m, "config = {}", c.display()).unwrap();
    }
    if let Some(s) = seed {
        writeln!(m, "seed = {s}").unwrap();
    }
    writeln!(m, "out = {}", dir.display()).unwrap();
    for (k, v) in params {
        writeln!(m, "{k} = {v}").unwrap();
    }
    write(&dir.join("manifest.txt"), m)
}

fn encode(a: EncodeArgs) -> Res<()> {
    let raw = read(&a.input)?;
    let m = rs2d::extend(&raw, a.k, a.share_size).map_err(|e| usage(format!("cannot encode: {e}")))?;
    make_dir(&a.out)?;
    write(&a.out.join("matrix.bin"), matrix_bytes(&m))?;
    let c = m.commitment();
    let mut roots = String::new();
    for (i, r) in m.row_roots().iter().enumerate() {
        writeln!(roots, "row {i} {}", r.to_hex()).unwrap();
    }
    for (i, r) in m.column_roots().iter().enumerate() {
        writeln!(roots, "column {i} {}", r.to_hex()).unwrap();
    }
    write(&a.out.join("roots.txt"), roots)?;
    write(
        &a.out.join("commitment.txt"),
        format!("data_root = {}\ndata_length = {}\n", c.data_root.to_hex(), c.data_length),
    )?;
    manifest(
        &a.out,
        "encode",
        None,
        None,
        &[
            ("input", a.input.display().to_string()),
            ("k", a.k.to_string()),
            ("share_size", a.share_size.to_string()),
        ],
    )?;
    println!("{}", c.data_root.to_hex());
    Ok(())
}

/// `k` and share size as two big-endian u16 values, then every cell row by row.
fn matrix_bytes(m: &ExtendedMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + m.cells().len() * m.share_size());
    out.extend_from_slice(&(m.k() as u16).to_be_bytes());
    out.extend_from_slice(&(m.share_size() as u16).to_be_bytes());
    for c in m.cells() {
        out.extend_from_slice(c);
    }
    out
}

fn matrix_from_bytes(b: &[u8]) -> Res<ExtendedMatrix> {
    let bad = || usage("malformed matrix file");
    if b.len() < 4 {
        return Err(bad());
    }
    let k = u16::from_be_bytes([b[0], b[1]]) as usize;
    let size = u16::from_be_bytes([b[2], b[3]]) as usize;
    let body = &b[4..];
    if size == 0 || body.len() != 4 * k * k * size {
        return Err(bad());
    }
    let cells = body.chunks(size).map(<[u8]>::to_vec).collect();
    ExtendedMatrix::from_cells(k, cells).map_err(|e| usage(format!("malformed matrix file: {e}")))
}

fn state_bytes(s: &State) -> Vec<u8> {
    let mut out = Vec::new();
    for (key, value) in s.tree().iter() {
        out.extend_from_slice(key);
        out.extend_from_slice(value);
    }
    out
}

fn state_from_bytes(b: &[u8]) -> Res<State> {
    let rec = 32 + da_core::state::ACCOUNT_LEN;
    if !b.len().is_multiple_of(rec) {
        return Err(usage("malformed state file"));
    }
    let mut s = State::new();
    for chunk in b.chunks(rec) {
        let key: Key = chunk[..32].try_into().expect("32 bytes");
        let v = AccountValue::decode(&chunk[32..]).ok_or_else(|| usage("malformed account in state file"))?;
        s.set_account(&key, v);
    }
    Ok(s)
}

fn block_gen(a: BlockGenArgs) -> Res<()> {
    let mode = match a.mode {
        Mode::Honest => BuildMode::Honest,
        Mode::InvalidTrace => BuildMode::InvalidTrace(0),
        Mode::InvalidStateRoot => BuildMode::InvalidStateRoot,
        Mode::InvalidTransaction => BuildMode::InvalidTransaction,
        Mode::InvalidCode => BuildMode::InvalidCode,
    };
    let cfg = BlockConfig { k: a.k, share_size: a.share_size, period: a.period };
    let sc = sim::scenario(cfg, a.txs, mode, a.seed).map_err(|e| usage(format!("cannot build block: {e}")))?;
    make_dir(&a.out)?;
    write(&a.out.join("genesis.hdr"), sc.genesis.to_bytes())?;
    write(&a.out.join("block.hdr"), sc.block.header.to_bytes())?;
    write(&a.out.join("matrix.bin"), matrix_bytes(&sc.block.matrix))?;
    write(&a.out.join("prev_state.bin"), state_bytes(&sc.prev_state))?;
    write(&a.out.join("period.txt"), format!("{}\n", a.period))?;
    let mode_name = a.mode.to_possible_value().map(|v| v.get_name().to_string()).unwrap_or_default();
    manifest(
        &a.out,
        "block gen",
        None,
        Some(a.seed),
        &[
            ("k", a.k.to_string()),
            ("share_size", a.share_size.to_string()),
            ("period", a.period.to_string()),
            ("txs", a.txs.to_string()),
            ("mode", mode_name),
        ],
    )?;
    println!("{}", sc.block.hash().to_hex());
    Ok(())
}

struct BlockDir {
    genesis: BlockHeader,
    block: Block,
    prev_state: State,
}

fn load_block_dir(dir: &Path) -> Res<BlockDir> {
    let header = |name: &str| -> Res<BlockHeader> {
        BlockHeader::from_bytes(&read(&dir.join(name))?).map_err(|e| usage(format!("cannot parse {name}: {e}")))
    };
    let genesis = header("genesis.hdr")?;
    let head = header("block.hdr")?;
    let matrix = matrix_from_bytes(&read(&dir.join("matrix.bin"))?)?;
    let prev_state = state_from_bytes(&read(&dir.join("prev_state.bin"))?)?;
    let period: usize = String::from_utf8_lossy(&read(&dir.join("period.txt"))?)
        .trim()
        .parse()
        .map_err(|_| usage("cannot parse period.txt"))?;
    let messages = block::parse_shares(&matrix.original_shares()).unwrap_or_default();
    let block = Block { header: head, matrix, messages, withheld: Withholding::None, period };
    Ok(BlockDir { genesis, block, prev_state })
}

fn fraud_gen(dir: &Path, out: &Path) -> Res<()> {
    let bd = load_block_dir(dir)?;
    let proof = match fraud::generate_codec_fraud_proof(&bd.block) {
        Some(p) => FraudProof::Codec(p),
        None => match fraud::generate_transition_fraud_proof(&bd.block, &bd.prev_state) {
            Ok(Some(p)) => FraudProof::Transition(p),
            Ok(None) => return Err(falsity("no fraud found in block")),
            Err(e) => return Err(falsity(format!("block is faulty but no proof can be built: {e}"))),
        },
    };
    write(out, proof.to_bytes())?;
    let kind = match proof {
        FraudProof::Codec(_) => "codec",
        FraudProof::Transition(_) => "transition",
    };
    println!("{kind} proof, {} bytes", proof.encoded_len());
    Ok(())
}

fn fraud_verify(dir: &Path, proof_path: &Path) -> Res<()> {
    let bd = load_block_dir(dir)?;
    let bytes = read(proof_path)?;
    let proof = FraudProof::from_bytes(&bytes).map_err(|e| usage(format!("cannot parse proof: {e}")))?;
    let mut store = HeaderStore::new(bd.block.period);
    store.insert(bd.genesis);
    store.insert(bd.block.header);
    if proof.verify(&store) {
        println!("valid");
        Ok(())
    } else {
        Err(falsity("proof does not verify"))
    }
}

fn parse_list(text: &str) -> Res<Vec<u64>> {
    let bad = || usage(format!("bad list {text:?}"));
    if let Some((a, b)) = text.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        return Ok((a..=b).collect());
    }
    text.split(',').map(|v| v.trim().parse().map_err(|_| bad())).collect()
}

fn emit_csv(out: Option<&Path>, name: &str, csv: &str, subcommand: &str, seed: Option<u64>, params: &[(&str, String)]) -> Res<()> {
    match out {
        Some(dir) => {
            make_dir(dir)?;
            write(&dir.join(name), csv)?;
            manifest(dir, subcommand, None, seed, params)
        }
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn fmt_prob(r: Result<f64, prob::ProbError>) -> String {
    r.map(|v| format!("{v:.12}")).unwrap_or_default()
}

fn prob_grid(a: GridArgs) -> Res<()> {
    let mut csv = String::from("k,s,c,c_hat,d,p1,pc,pc_from_one,pe,px\n");
    for k in parse_list(&a.k)? {
        for s in parse_list(&a.s)? {
            let p = prob::SamplingParams {
                k,
                s,
                c: a.clients,
                c_hat: a.c_hat,
                q: prob::min_withheld(k),
                d: a.d,
            };
            p.validate().map_err(|e| usage(e.to_string()))?;
            writeln!(
                csv,
                "{k},{s},{},{},{},{},{},{},{},{}",
                a.clients,
                a.c_hat,
                a.d,
                fmt_prob(p.p1()),
                fmt_prob(p.pc()),
                fmt_prob(prob::pc_from_one(k, s, a.clients, a.c_hat)),
                fmt_prob(p.pe()),
                fmt_prob(p.px()),
            )
            .unwrap();
        }
    }
    let params = [
        ("k", a.k.clone()),
        ("s", a.s.clone()),
        ("clients", a.clients.to_string()),
        ("c_hat", a.c_hat.to_string()),
        ("d", a.d.to_string()),
    ];
    emit_csv(a.out.as_deref(), "grid.csv", &csv, "prob grid", None, &params)
}

fn min_clients(a: MinClientsArgs) -> Res<()> {
    let mut csv = String::from("k,s,c,method\n");
    for k in parse_list(&a.k)? {
        for s in parse_list(&a.s)? {
            let r = prob::min_clients(k, s, a.target, a.seed).map_err(|e| usage(e.to_string()))?;
            let method = match r.method {
                prob::Method::Exact => "exact".to_string(),
                prob::Method::MonteCarlo { trials } => format!("monte-carlo-{trials}"),
            };
            writeln!(csv, "{k},{s},{},{method}", r.c).unwrap();
        }
    }
    let params = [("k", a.k.clone()), ("s", a.s.clone()), ("target", a.target.to_string())];
    emit_csv(a.out.as_deref(), "min_clients.csv", &csv, "prob min-clients", Some(a.seed), &params)
}

fn simulate(a: SimulateArgs) -> Res<()> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = String::from_utf8(read(p)?).map_err(|_| usage("config is not UTF-8"))?;
            SimConfig::from_kv(&text).map_err(|e| usage(e.to_string()))?
        }
        None => SimConfig::default(),
    };
    if let Some(v) = a.k {
        cfg.k = v;
    }
    if let Some(v) = a.share_size {
        cfg.share_size = v;
    }
    if let Some(v) = a.s {
        cfg.s = v;
    }
    if let Some(v) = a.clients {
        cfg.light_clients = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(m) = a.model {
        cfg.model = match m {
            ModelArg::Standard => NetworkModel::Standard,
            ModelArg::Enhanced => NetworkModel::Enhanced,
        };
    }
    if let Some(adv) = a.adversary {
        cfg.adversary = adv;
    }
    let v = sim::run_sampling(&cfg).map_err(|e| usage(e.to_string()))?;
    make_dir(&a.out)?;
    write(&a.out.join("config.txt"), cfg.to_kv())?;
    write(&a.out.join("verdict.csv"), v.verdict_csv())?;
    write(&a.out.join("events.csv"), sim::events_csv(&v.events))?;
    write(&a.out.join("summary.txt"), v.summary())?;
    manifest(&a.out, "simulate", a.config.as_deref(), Some(cfg.seed), &[("resolved_config", "config.txt".into())])?;
    print!("{}", v.summary());
    Ok(())
}
