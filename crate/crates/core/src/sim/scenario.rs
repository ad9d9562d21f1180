//! Line-oriented scenario files.
//!
//! ```text
//! # comments and blank lines are ignored
//! nodes 5
//! difficulty 8
//! seed 42
//! trials 64                     # nonce trials per miner per tick
//! latency 2                     # default link latency in ticks
//! latency 0 1 3                 # per-pair override
//! partition 0,1 2,3,4 from 1 to 40
//! tx 0 alice patient 7          # self-registration submitted at node 0
//! node 0 mine                   # node 0 mines one block
//! at 12 node 2 mine             # any action may be delayed with `at T`
//! at 30 inject 3                # deliver a forged chain to node 3
//! max_ticks 500
//! ```
//!
//! Partition groups are comma-separated node lists; every link between the
//! two groups is cut for ticks `from <= t < to`.

use std::collections::BTreeMap;

use thiserror::Error;

use super::{spawn_network, NodeId, Partition, ScriptAction, SimConfig, SimError, SimWorld};
use crate::block::{genesis_block, mine_block};
use crate::keys::{KeyPair, Role};
use crate::policy::make_self_registration;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct ScenarioError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Directive {
    Mine {
        node: NodeId,
    },
    Tx {
        node: NodeId,
        name: String,
        role: Role,
        patient_id: Option<u64>,
    },
    Inject {
        node: NodeId,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scenario {
    pub config: SimConfig,
    pub max_ticks: u64,
    actions: Vec<(u64, Directive)>,
}

pub const DEFAULT_MAX_TICKS: u64 = 10_000;

fn err(line: usize, message: impl Into<String>) -> ScenarioError {
    ScenarioError {
        line,
        message: message.into(),
    }
}

fn num<T: std::str::FromStr>(
    line: usize,
    tok: Option<&str>,
    what: &str,
) -> Result<T, ScenarioError> {
    let tok = tok.ok_or_else(|| err(line, format!("missing {what}")))?;
    tok.parse()
        .map_err(|_| err(line, format!("invalid {what} {tok:?}")))
}

fn group(line: usize, tok: Option<&str>) -> Result<Vec<NodeId>, ScenarioError> {
    let tok = tok.ok_or_else(|| err(line, "missing node group"))?;
    tok.split(',')
        .map(|n| {
            n.parse()
                .map_err(|_| err(line, format!("invalid node {n:?}")))
        })
        .collect()
}

fn expect(line: usize, tok: Option<&str>, word: &str) -> Result<(), ScenarioError> {
    match tok {
        Some(t) if t == word => Ok(()),
        Some(t) => Err(err(line, format!("expected {word:?}, found {t:?}"))),
        None => Err(err(line, format!("expected {word:?}"))),
    }
}

pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let mut config = SimConfig::default();
    let mut max_ticks = DEFAULT_MAX_TICKS;
    let mut actions = Vec::new();
    let mut latency: BTreeMap<(NodeId, NodeId), u64> = BTreeMap::new();

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut toks = content.split_whitespace().peekable();
        let mut at = 0u64;
        if toks.peek() == Some(&"at") {
            toks.next();
            at = num(line, toks.next(), "tick")?;
        }
        let word = toks.next().expect("non-empty line");
        let scheduled_only = |at: u64| {
            if at != 0 {
                Err(err(line, format!("`at` cannot prefix {word:?}")))
            } else {
                Ok(())
            }
        };
        match word {
            "nodes" => {
                scheduled_only(at)?;
                config.n_nodes = num(line, toks.next(), "node count")?;
            }
            "difficulty" => {
                scheduled_only(at)?;
                config.difficulty_bits = num(line, toks.next(), "difficulty")?;
            }
            "seed" => {
                scheduled_only(at)?;
                config.rng_seed = num(line, toks.next(), "seed")?;
            }
            "trials" => {
                scheduled_only(at)?;
                config.trials_per_tick = num(line, toks.next(), "trial count")?;
            }
            "max_ticks" => {
                scheduled_only(at)?;
                max_ticks = num(line, toks.next(), "tick count")?;
            }
            "latency" => {
                scheduled_only(at)?;
                let rest: Vec<&str> = toks.by_ref().collect();
                match rest.as_slice() {
                    [l] => config.default_latency = num(line, Some(l), "latency")?,
                    [a, b, l] => {
                        let a: NodeId = num(line, Some(a), "node")?;
                        let b: NodeId = num(line, Some(b), "node")?;
                        latency.insert((a.min(b), a.max(b)), num(line, Some(l), "latency")?);
                    }
                    _ => return Err(err(line, "usage: latency L | latency A B L")),
                }
            }
            "partition" => {
                scheduled_only(at)?;
                let a = group(line, toks.next())?;
                let b = group(line, toks.next())?;
                expect(line, toks.next(), "from")?;
                let from = num(line, toks.next(), "tick")?;
                expect(line, toks.next(), "to")?;
                let to = match toks.next() {
                    Some("forever") => u64::MAX,
                    t => num(line, t, "tick")?,
                };
                config
                    .partition_schedule
                    .push(Partition::between(&a, &b, from, to));
            }
            "node" => {
                let node = num(line, toks.next(), "node")?;
                expect(line, toks.next(), "mine")?;
                actions.push((at, Directive::Mine { node }));
            }
            "tx" => {
                let node = num(line, toks.next(), "node")?;
                let name = toks
                    .next()
                    .ok_or_else(|| err(line, "missing identity name"))?
                    .to_string();
                let role: Role = toks
                    .next()
                    .ok_or_else(|| err(line, "missing role"))?
                    .parse()
                    .map_err(|e: crate::keys::ParseRoleError| err(line, e.to_string()))?;
                let patient_id = match toks.next() {
                    Some(t) => Some(num(line, Some(t), "patient id")?),
                    None => None,
                };
                actions.push((
                    at,
                    Directive::Tx {
                        node,
                        name,
                        role,
                        patient_id,
                    },
                ));
            }
            "inject" => {
                let node = num(line, toks.next(), "node")?;
                actions.push((at, Directive::Inject { node }));
            }
            other => return Err(err(line, format!("unknown directive {other:?}"))),
        }
        if let Some(extra) = toks.next() {
            return Err(err(line, format!("unexpected token {extra:?}")));
        }
    }
    config.latency = latency;
    Ok(Scenario {
        config,
        max_ticks,
        actions,
    })
}

impl Scenario {
    /// Builds the world with every scripted action queued. `seed`
    /// overrides the scenario's own seed.
    pub fn into_world(self, seed: Option<u64>) -> Result<SimWorld, SimError> {
        let mut config = self.config;
        if let Some(s) = seed {
            config.rng_seed = s;
        }
        let difficulty = config.difficulty_bits;
        let n = config.n_nodes;
        let mut world = spawn_network(config)?;
        for (at, directive) in self.actions {
            let action = match directive {
                Directive::Mine { node } => ScriptAction::Mine { node },
                Directive::Tx {
                    node,
                    name,
                    role,
                    patient_id,
                } => {
                    let key = KeyPair::from_label(&format!("sim:{name}"), role, name);
                    ScriptAction::SubmitTx {
                        node,
                        tx: make_self_registration(&key, patient_id, at),
                    }
                }
                Directive::Inject { node } => ScriptAction::Inject {
                    node,
                    blocks: forged_chain(difficulty, at),
                },
            };
            let node = match &action {
                ScriptAction::Mine { node }
                | ScriptAction::SubmitTx { node, .. }
                | ScriptAction::Inject { node, .. } => *node,
            };
            if node >= n {
                return Err(SimError::UnknownNode(node));
            }
            world.schedule(at, action);
        }
        Ok(world)
    }
}

/// A long chain whose proof of work is valid but whose single transaction
/// carries a broken signature. Honest nodes must reject it.
pub fn forged_chain(difficulty_bits: u8, salt: u64) -> Vec<crate::block::Block> {
    let key = KeyPair::from_label("sim:forger", Role::Provider, "forger");
    let mut blocks = vec![genesis_block()];
    for i in 0..8u64 {
        let mut tx = make_self_registration(&key, None, salt * 100 + i);
        tx.signature.0[0] ^= 0xff;
        let parent = &blocks.last().unwrap().header;
        let mined = mine_block(parent, vec![tx], difficulty_bits, salt, 0).expect("mines");
        blocks.push(mined.block);
    }
    blocks
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_all_directives() {
        let text = "nodes 3\ndifficulty 4\nseed 9\ntrials 16\nlatency 2\nlatency 0 2 5\n\
                    partition 0 1,2 from 1 to 9\ntx 0 alice patient 7\nnode 0 mine\n\
                    at 4 node 1 mine  # later\nat 5 inject 2\nmax_ticks 50\n";
        let s = parse_scenario(text).unwrap();
        assert_eq!(s.config.n_nodes, 3);
        assert_eq!(s.config.difficulty_bits, 4);
        assert_eq!(s.config.rng_seed, 9);
        assert_eq!(s.config.trials_per_tick, 16);
        assert_eq!(s.config.latency_between(2, 0), 5);
        assert_eq!(s.config.latency_between(0, 1), 2);
        assert_eq!(s.config.partition_schedule[0].cut.len(), 2);
        assert_eq!(s.max_ticks, 50);
        assert_eq!(s.actions.len(), 4);
        assert_eq!(s.actions[2], (4, Directive::Mine { node: 1 }));
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = parse_scenario("nodes 2\n\nnode 0 dance\n").unwrap_err();
        assert_eq!(e.line, 3);
        let e = parse_scenario("nodes 2\nfly 1\n").unwrap_err();
        assert_eq!(e.line, 2);
        assert!(e.message.contains("unknown directive"));
        let e = parse_scenario("partition 0 1 from 3\n").unwrap_err();
        assert_eq!(e.line, 1);
        let e = parse_scenario("tx 0 bob nurse\n").unwrap_err();
        assert_eq!(e.line, 1);
        let e = parse_scenario("nodes 2 3\n").unwrap_err();
        assert!(e.message.contains("unexpected token"));
    }

    #[test]
    fn unknown_node_rejected_when_building() {
        let s = parse_scenario("nodes 2\nnode 5 mine\n").unwrap();
        assert!(matches!(s.into_world(None), Err(SimError::UnknownNode(5))));
    }
}
