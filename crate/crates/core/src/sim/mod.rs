//! Deterministic discrete-time network of validating nodes.
//!
//! Nodes exchange whole chains over simulated links with per-pair latency and
//! scheduled partitions. Every received chain is fully replayed and verified
//! before fork choice runs against the local chain. Scripted miners do a
//! bounded number of real nonce trials per tick, starting from a nonce drawn
//! from the seeded RNG, so runs are reproducible bit for bit.
//!
//! A step at tick `t` runs, in order: partition heals (nodes on healed links
//! re-announce their chains), scripted actions, message delivery, miners.
//! The tick then advances.

mod scenario;

pub use scenario::{parse_scenario, Scenario, ScenarioError};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::block::{Block, NonceSearch, MAX_DIFFICULTY_BITS};
use crate::chain::{fork_choice_index, Chain};
use crate::digest::Digest;
use crate::tx::Transaction;

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    /// Active for `from_tick <= t < to_tick`.
    pub from_tick: u64,
    pub to_tick: u64,
    /// Unordered node pairs whose link is cut.
    pub cut: BTreeSet<(NodeId, NodeId)>,
}

impl Partition {
    /// Cuts every link between the two groups.
    pub fn between(a: &[NodeId], b: &[NodeId], from_tick: u64, to_tick: u64) -> Self {
        let cut = a
            .iter()
            .flat_map(|&x| b.iter().map(move |&y| ordered(x, y)))
            .collect();
        Self {
            from_tick,
            to_tick,
            cut,
        }
    }

    fn active_at(&self, tick: u64) -> bool {
        self.from_tick <= tick && tick < self.to_tick
    }
}

fn ordered(a: NodeId, b: NodeId) -> (NodeId, NodeId) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimConfig {
    pub n_nodes: usize,
    pub difficulty_bits: u8,
    pub default_latency: u64,
    /// Per-pair overrides, keyed by unordered pair.
    pub latency: BTreeMap<(NodeId, NodeId), u64>,
    pub partition_schedule: Vec<Partition>,
    pub rng_seed: u64,
    pub trials_per_tick: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_nodes: 1,
            difficulty_bits: 8,
            default_latency: 1,
            latency: BTreeMap::new(),
            partition_schedule: Vec::new(),
            rng_seed: 0,
            trials_per_tick: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("bad config: {0}")]
    BadConfig(String),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("invalid transaction: {0}")]
    InvalidTx(String),
    #[error("not quiescent after {ticks} ticks")]
    NotQuiescent { ticks: u64 },
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::BadConfig(m));
        if self.n_nodes == 0 {
            return bad("n_nodes must be >= 1".into());
        }
        if self.difficulty_bits > MAX_DIFFICULTY_BITS {
            return bad(format!(
                "difficulty {} outside 0..=32",
                self.difficulty_bits
            ));
        }
        if self.default_latency == 0 {
            return bad("latency must be >= 1 tick".into());
        }
        if self.trials_per_tick == 0 {
            return bad("trials per tick must be >= 1".into());
        }
        for (&(a, b), &l) in &self.latency {
            if l == 0 {
                return bad(format!("latency {a}-{b} must be >= 1 tick"));
            }
            if a >= self.n_nodes || b >= self.n_nodes || a == b {
                return bad(format!("latency pair {a}-{b} invalid"));
            }
        }
        for p in &self.partition_schedule {
            if p.from_tick >= p.to_tick {
                return bad(format!(
                    "partition interval {}..{} is empty",
                    p.from_tick, p.to_tick
                ));
            }
            if p.cut
                .iter()
                .any(|&(a, b)| a >= self.n_nodes || b >= self.n_nodes || a == b)
            {
                return bad("partition names an invalid node pair".into());
            }
        }
        Ok(())
    }

    pub fn latency_between(&self, a: NodeId, b: NodeId) -> u64 {
        *self
            .latency
            .get(&ordered(a, b))
            .unwrap_or(&self.default_latency)
    }

    fn is_cut(&self, a: NodeId, b: NodeId, tick: u64) -> bool {
        let pair = ordered(a, b);
        self.partition_schedule
            .iter()
            .any(|p| p.active_at(tick) && p.cut.contains(&pair))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SimEvent {
    MinedBlock {
        height: u64,
        digest: Digest,
    },
    ReceivedBlock {
        from: NodeId,
        height: u64,
        digest: Digest,
    },
    RejectedBlock {
        from: NodeId,
        reason: String,
    },
    Reorged {
        from_len: usize,
        to_len: usize,
    },
    TxSubmitted {
        tx_id: Digest,
    },
}

impl SimEvent {
    pub fn name(&self) -> &'static str {
        match self {
            SimEvent::MinedBlock { .. } => "MinedBlock",
            SimEvent::ReceivedBlock { .. } => "ReceivedBlock",
            SimEvent::RejectedBlock { .. } => "RejectedBlock",
            SimEvent::Reorged { .. } => "Reorged",
            SimEvent::TxSubmitted { .. } => "TxSubmitted",
        }
    }

    pub fn detail(&self) -> String {
        match self {
            SimEvent::MinedBlock { height, digest } => format!("height={height} tip={digest}"),
            SimEvent::ReceivedBlock {
                from,
                height,
                digest,
            } => format!("from={from} height={height} tip={digest}"),
            SimEvent::RejectedBlock { from, reason } => format!("from={from} reason={reason}"),
            SimEvent::Reorged { from_len, to_len } => {
                format!("from_len={from_len} to_len={to_len}")
            }
            SimEvent::TxSubmitted { tx_id } => format!("tx={tx_id}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogEntry {
    pub tick: u64,
    pub node_id: NodeId,
    pub event: SimEvent,
}

impl fmt::Display for LogEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "tick={} node={} {} {}",
            self.tick,
            self.node_id,
            self.event.name(),
            self.event.detail()
        )
    }
}

/// Append-only event log.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SimEventLog {
    pub entries: Vec<LogEntry>,
}

impl SimEventLog {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&e.to_string());
            out.push('\n');
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("tick,node,event,detail\n");
        for e in &self.entries {
            out.push_str(&format!(
                "{},{},{},{}\n",
                e.tick,
                e.node_id,
                e.event.name(),
                e.event.detail()
            ));
        }
        out
    }

    pub fn count(&self, name: &str) -> usize {
        self.entries
            .iter()
            .filter(|e| e.event.name() == name)
            .count()
    }
}

#[derive(Debug, Clone)]
pub enum Message {
    Chain {
        from: NodeId,
        blocks: Arc<Vec<Block>>,
    },
    Tx {
        from: NodeId,
        tx: Transaction,
    },
}

#[derive(Debug, Clone)]
struct InFlight {
    deliver_at: u64,
    seq: u64,
    msg: Message,
}

#[derive(Debug, Clone)]
struct Miner {
    parent: Digest,
    search: NonceSearch,
}

#[derive(Debug, Clone)]
pub struct SimNode {
    pub node_id: NodeId,
    pub chain: Chain,
    pub pending: Vec<Transaction>,
    inbox: Vec<InFlight>,
    /// Blocks still to mine for scripted `mine` directives.
    mine_orders: u32,
    miner: Option<Miner>,
}

impl SimNode {
    fn in_pool_or_chain(&self, tx_id: &Digest) -> bool {
        self.chain.state().contains_tx(tx_id) || self.pending.iter().any(|t| t.tx_id == *tx_id)
    }

    pub fn inbox_len(&self) -> usize {
        self.inbox.len()
    }

    pub fn is_mining(&self) -> bool {
        self.mine_orders > 0
    }
}

#[derive(Debug, Clone)]
pub enum ScriptAction {
    Mine {
        node: NodeId,
    },
    SubmitTx {
        node: NodeId,
        tx: Transaction,
    },
    /// Delivers `blocks` to `node` as if sent by a peer. Used to model
    /// invalid-block injection.
    Inject {
        node: NodeId,
        blocks: Vec<Block>,
    },
}

#[derive(Debug, Clone)]
pub struct SimWorld {
    config: SimConfig,
    pub nodes: Vec<SimNode>,
    tick: u64,
    rng: ChaCha8Rng,
    script: BTreeMap<u64, Vec<ScriptAction>>,
    log: SimEventLog,
    seq: u64,
}

/// Builds a world with every node at genesis and `tick = 0`.
pub fn spawn_network(config: SimConfig) -> Result<SimWorld, SimError> {
    config.validate()?;
    let nodes = (0..config.n_nodes)
        .map(|node_id| SimNode {
            node_id,
            chain: Chain::new(config.difficulty_bits),
            pending: Vec::new(),
            inbox: Vec::new(),
            mine_orders: 0,
            miner: None,
        })
        .collect();
    Ok(SimWorld {
        rng: ChaCha8Rng::seed_from_u64(config.rng_seed),
        config,
        nodes,
        tick: 0,
        script: BTreeMap::new(),
        log: SimEventLog::default(),
        seq: 0,
    })
}

impl SimWorld {
    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn log(&self) -> &SimEventLog {
        &self.log
    }

    pub fn node(&self, id: NodeId) -> Result<&SimNode, SimError> {
        self.nodes.get(id).ok_or(SimError::UnknownNode(id))
    }

    /// Queues a scripted action for `tick` (or the current tick if earlier).
    pub fn schedule(&mut self, tick: u64, action: ScriptAction) {
        self.script
            .entry(tick.max(self.tick))
            .or_default()
            .push(action);
    }

    fn push(&mut self, node_id: NodeId, event: SimEvent) -> LogEntry {
        let entry = LogEntry {
            tick: self.tick,
            node_id,
            event,
        };
        self.log.entries.push(entry.clone());
        entry
    }

    /// Adds `tx` to the node's pool and floods it to reachable peers.
    /// Duplicate ids are ignored and return `Ok(false)`.
    pub fn submit_tx(&mut self, node_id: NodeId, tx: Transaction) -> Result<bool, SimError> {
        let mut delta = Vec::new();
        self.submit_tx_logged(node_id, tx, &mut delta)
    }

    fn submit_tx_logged(
        &mut self,
        node_id: NodeId,
        tx: Transaction,
        delta: &mut Vec<LogEntry>,
    ) -> Result<bool, SimError> {
        let node = self
            .nodes
            .get(node_id)
            .ok_or(SimError::UnknownNode(node_id))?;
        tx.check().map_err(|f| SimError::InvalidTx(f.to_string()))?;
        if node.in_pool_or_chain(&tx.tx_id) {
            return Ok(false);
        }
        let tx_id = tx.tx_id;
        self.nodes[node_id].pending.push(tx.clone());
        delta.push(self.push(node_id, SimEvent::TxSubmitted { tx_id }));
        self.broadcast(node_id, None, |from| Message::Tx {
            from,
            tx: tx.clone(),
        });
        Ok(true)
    }

    fn send(&mut self, from: NodeId, to: NodeId, msg: Message) {
        if self.config.is_cut(from, to, self.tick) {
            return;
        }
        let deliver_at = self.tick + self.config.latency_between(from, to);
        self.seq += 1;
        let seq = self.seq;
        self.nodes[to].inbox.push(InFlight {
            deliver_at,
            seq,
            msg,
        });
    }

    fn broadcast(
        &mut self,
        from: NodeId,
        except: Option<NodeId>,
        make: impl Fn(NodeId) -> Message,
    ) {
        for to in 0..self.nodes.len() {
            if to != from && Some(to) != except {
                self.send(from, to, make(from));
            }
        }
    }

    fn announce_chain(&mut self, from: NodeId, except: Option<NodeId>) {
        let blocks = Arc::new(self.nodes[from].chain.blocks().to_vec());
        self.broadcast(from, except, |f| Message::Chain {
            from: f,
            blocks: blocks.clone(),
        });
    }

    /// Advances one tick and returns the events it produced.
    pub fn step(&mut self) -> Vec<LogEntry> {
        let mut delta = Vec::new();
        let tick = self.tick;

        // Links that reopen this tick: both ends re-announce.
        let healed: BTreeSet<(NodeId, NodeId)> = self
            .config
            .partition_schedule
            .iter()
            .filter(|p| p.to_tick == tick)
            .flat_map(|p| p.cut.iter().copied())
            .filter(|&(a, b)| !self.config.is_cut(a, b, tick))
            .collect();
        for (a, b) in healed {
            let chain_a = Arc::new(self.nodes[a].chain.blocks().to_vec());
            let chain_b = Arc::new(self.nodes[b].chain.blocks().to_vec());
            self.send(
                a,
                b,
                Message::Chain {
                    from: a,
                    blocks: chain_a,
                },
            );
            self.send(
                b,
                a,
                Message::Chain {
                    from: b,
                    blocks: chain_b,
                },
            );
        }

        if let Some(actions) = self.script.remove(&tick) {
            for action in actions {
                match action {
                    ScriptAction::Mine { node } => {
                        if let Some(n) = self.nodes.get_mut(node) {
                            n.mine_orders += 1;
                        }
                    }
                    ScriptAction::SubmitTx { node, tx } => {
                        // Invalid scripted transactions are dropped; the
                        // scenario parser only produces signed ones.
                        let _ = self.submit_tx_logged(node, tx, &mut delta);
                    }
                    ScriptAction::Inject { node, blocks } => {
                        if node < self.nodes.len() {
                            self.nodes[node].inbox.push(InFlight {
                                deliver_at: tick,
                                seq: 0,
                                msg: Message::Chain {
                                    from: node,
                                    blocks: Arc::new(blocks),
                                },
                            });
                        }
                    }
                }
            }
        }

        for id in 0..self.nodes.len() {
            let inbox = std::mem::take(&mut self.nodes[id].inbox);
            let (mut due, later): (Vec<_>, Vec<_>) =
                inbox.into_iter().partition(|m| m.deliver_at <= tick);
            self.nodes[id].inbox = later;
            due.sort_by_key(|m| (m.deliver_at, m.seq));
            for m in due {
                self.deliver(id, m.msg, &mut delta);
            }
        }

        for id in 0..self.nodes.len() {
            self.run_miner(id, &mut delta);
        }

        self.tick += 1;
        delta
    }

    fn deliver(&mut self, id: NodeId, msg: Message, delta: &mut Vec<LogEntry>) {
        match msg {
            Message::Tx { tx, .. } => {
                let node = &mut self.nodes[id];
                if tx.check().is_ok() && !node.in_pool_or_chain(&tx.tx_id) {
                    node.pending.push(tx);
                }
            }
            Message::Chain { from, blocks } => {
                let tip = blocks.last().map(|b| (b.header.index, b.digest()));
                if let Some((height, digest)) = tip {
                    delta.push(self.push(
                        id,
                        SimEvent::ReceivedBlock {
                            from,
                            height,
                            digest,
                        },
                    ));
                }
                let received =
                    match Chain::replay(blocks.as_ref().clone(), self.config.difficulty_bits) {
                        Ok(c) => c,
                        Err((index, err)) => {
                            let reason = format!("block {index}: {err}");
                            delta.push(self.push(id, SimEvent::RejectedBlock { from, reason }));
                            return;
                        }
                    };
                let local = self.nodes[id].chain.clone();
                if received.tip_digest() == local.tip_digest() {
                    return;
                }
                let candidates = [local, received];
                let winner = fork_choice_index(&candidates).expect("same genesis");
                if winner == 0 {
                    return;
                }
                let [local, received] = candidates;
                if !local.is_prefix_of(&received) {
                    delta.push(self.push(
                        id,
                        SimEvent::Reorged {
                            from_len: local.len(),
                            to_len: received.len(),
                        },
                    ));
                }
                self.adopt(id, &local, received);
                self.announce_chain(id, Some(from));
            }
        }
    }

    fn adopt(&mut self, id: NodeId, old: &Chain, new: Chain) {
        let node = &mut self.nodes[id];
        let shared = old.common_prefix_len(&new);
        // Transactions from abandoned blocks go back to the pool.
        let orphaned: Vec<Transaction> = old.blocks()[shared..]
            .iter()
            .flat_map(|b| b.transactions.iter().cloned())
            .collect();
        node.chain = new;
        let mut pool = std::mem::take(&mut node.pending);
        pool.extend(orphaned);
        let mut seen = BTreeSet::new();
        node.pending = pool
            .into_iter()
            .filter(|tx| !node.chain.state().contains_tx(&tx.tx_id) && seen.insert(tx.tx_id))
            .collect();
        node.miner = None;
    }

    fn run_miner(&mut self, id: NodeId, delta: &mut Vec<LogEntry>) {
        if self.nodes[id].mine_orders == 0 {
            return;
        }
        let tip = self.nodes[id].chain.tip_digest();
        let stale = self.nodes[id]
            .miner
            .as_ref()
            .is_none_or(|m| m.parent != tip);
        if stale {
            let txs = self.admissible_pending(id);
            if txs.is_empty() {
                self.nodes[id].miner = None;
                return;
            }
            let nonce_start: u64 = self.rng.gen();
            let node = &self.nodes[id];
            let search = NonceSearch::new(
                node.chain.tip_header(),
                txs,
                self.config.difficulty_bits,
                self.tick,
                nonce_start,
            )
            .expect("difficulty validated");
            self.nodes[id].miner = Some(Miner {
                parent: tip,
                search,
            });
        }
        let trials = self.config.trials_per_tick;
        let miner = self.nodes[id].miner.as_mut().expect("set above");
        let Ok(Some(mined)) = miner.search.advance(trials) else {
            return;
        };
        let node = &mut self.nodes[id];
        node.miner = None;
        match node.chain.append_block(mined.block) {
            Ok(next) => {
                node.chain = next;
                node.mine_orders -= 1;
                let included = node.chain.state();
                node.pending.retain(|tx| !included.contains_tx(&tx.tx_id));
                let height = node.chain.tip_header().index;
                let digest = node.chain.tip_digest();
                delta.push(self.push(id, SimEvent::MinedBlock { height, digest }));
                self.announce_chain(id, None);
            }
            Err(e) => {
                // Only reachable if the pool changed under the miner; retry next tick.
                let reason = format!("own block: {e}");
                delta.push(self.push(id, SimEvent::RejectedBlock { from: id, reason }));
            }
        }
    }

    /// Pending transactions admissible on top of the node's chain, in pool order.
    fn admissible_pending(&self, id: NodeId) -> Vec<Transaction> {
        let node = &self.nodes[id];
        let mut state = node.chain.state().clone();
        node.pending
            .iter()
            .filter(|tx| state.admit_tx(tx, self.tick).is_ok())
            .cloned()
            .collect()
    }

    /// No messages in flight, no miner with outstanding orders and something
    /// to mine, no scripted action or partition boundary still ahead. A mine
    /// order whose pool was drained by a peer's block stays dormant.
    pub fn is_quiescent(&self) -> bool {
        let in_flight = self.nodes.iter().any(|n| !n.inbox.is_empty());
        let mining = (0..self.nodes.len())
            .any(|id| self.nodes[id].is_mining() && !self.admissible_pending(id).is_empty());
        let scripted = self.script.keys().any(|&t| t >= self.tick);
        let boundaries = self
            .config
            .partition_schedule
            .iter()
            .any(|p| p.to_tick >= self.tick || p.from_tick >= self.tick);
        !(in_flight || mining || scripted || boundaries)
    }

    /// Steps until quiescent. `max_ticks` bounds the number of steps.
    pub fn run_until_quiescent(&mut self, max_ticks: u64) -> Result<&SimEventLog, SimError> {
        if max_ticks == 0 {
            return Err(SimError::BadConfig("max_ticks must be > 0".into()));
        }
        for _ in 0..max_ticks {
            self.step();
            if self.is_quiescent() {
                return Ok(&self.log);
            }
        }
        Err(SimError::NotQuiescent { ticks: max_ticks })
    }

    /// True iff every node holds the same chain (same length and tip).
    pub fn converged(&self) -> bool {
        let first = &self.nodes[0].chain;
        self.nodes
            .iter()
            .all(|n| n.chain.len() == first.len() && n.chain.tip_digest() == first.tip_digest())
    }

    /// Shortest common prefix length across all node chains.
    pub fn common_prefix_len(&self) -> usize {
        let first = &self.nodes[0].chain;
        self.nodes
            .iter()
            .map(|n| n.chain.common_prefix_len(first))
            .min()
            .unwrap_or(0)
    }

    /// One-line run summary used by the CLI.
    pub fn summary(&self) -> String {
        let tip = &self.nodes[0].chain;
        format!(
            "converged={} nodes={} height={} tip={} ticks={} events={}",
            self.converged(),
            self.nodes.len(),
            tip.tip_header().index,
            tip.tip_digest(),
            self.tick,
            self.log.entries.len()
        )
    }
}
