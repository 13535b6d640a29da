//! Deterministic bulk-synchronous message bus between areas.
//!
//! Each round every node consumes the messages delivered to it in the
//! previous round and produces outgoing messages. Nothing sent during a round
//! is visible before the round ends, so results do not depend on the order in
//! which nodes execute.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Tag {
    Factor,
    FlowTerm,
    QTerm,
}

impl Tag {
    pub fn as_str(self) -> &'static str {
        match self {
            Tag::Factor => "factor",
            Tag::FlowTerm => "flow-term",
            Tag::QTerm => "q-term",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Message {
    pub from: usize,
    pub to: usize,
    pub tag: Tag,
    pub payload: Vec<f64>,
}

/// An outgoing message as produced by a node.
#[derive(Clone, Debug, PartialEq)]
pub struct Outgoing {
    pub to: usize,
    pub tag: Tag,
    pub payload: Vec<f64>,
}

impl Outgoing {
    pub fn new(to: usize, tag: Tag, payload: Vec<f64>) -> Self {
        Self { to, tag, payload }
    }
}

/// Order in which node closures are executed within a round.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Schedule {
    #[default]
    InOrder,
    /// A fresh random permutation every round.
    Permuted { seed: u64 },
    /// One scoped thread per node.
    Parallel,
}

/// Real numbers exchanged per unordered area pair, iteration and tag.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CommLedger {
    pairs: BTreeSet<(usize, usize)>,
    counts: BTreeMap<((usize, usize), usize, Tag), usize>,
}

fn pair_key(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

/// Measured traffic for one pair and iteration next to two reference values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CommCount {
    pub measured: usize,
    /// n_l + n_j + m·r.
    pub nominal_formula: usize,
    /// Exact count of the estimator's exchange protocol.
    pub protocol_formula: usize,
}

/// Sizes entering the ADMM exchange for one area pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExchangeSizes {
    pub m: usize,
    pub r: usize,
    pub time_steps: usize,
    pub n_l: usize,
    pub n_j: usize,
}

impl ExchangeSizes {
    /// Every ADMM iteration sends U (m·r) both ways, one flow term E_jl and
    /// one q term per direction (3T real entries per receiving phase each).
    pub fn protocol_count(&self) -> usize {
        2 * self.m * self.r + 2 * 3 * self.time_steps * (self.n_l + self.n_j)
    }

    pub fn nominal_count(&self) -> usize {
        self.n_l + self.n_j + self.m * self.r
    }

    /// Volume of shipping both areas' full data columns, (n_l + n_j)·m.
    pub fn full_data_count(&self) -> usize {
        (self.n_l + self.n_j) * self.m
    }
}

impl CommLedger {
    pub fn new(pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        Self {
            pairs: pairs.into_iter().map(|(a, b)| pair_key(a, b)).collect(),
            counts: BTreeMap::new(),
        }
    }

    pub fn record(&mut self, a: usize, b: usize, iteration: usize, tag: Tag, count: usize) {
        let key = pair_key(a, b);
        self.pairs.insert(key);
        *self.counts.entry((key, iteration, tag)).or_insert(0) += count;
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.pairs.iter().copied()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn iterations(&self) -> BTreeSet<usize> {
        self.counts.keys().map(|(_, it, _)| *it).collect()
    }

    pub fn count(&self, a: usize, b: usize, iteration: usize) -> usize {
        let key = pair_key(a, b);
        self.counts
            .range((key, iteration, Tag::Factor)..=(key, iteration, Tag::QTerm))
            .map(|(_, c)| c)
            .sum()
    }

    pub fn count_tag(&self, a: usize, b: usize, iteration: usize, tag: Tag) -> usize {
        self.counts
            .get(&(pair_key(a, b), iteration, tag))
            .copied()
            .unwrap_or(0)
    }

    /// Total over iterations 0..=`iteration`.
    pub fn cumulative(&self, a: usize, b: usize, iteration: usize) -> usize {
        let key = pair_key(a, b);
        self.counts
            .iter()
            .filter(|((k, it, _), _)| *k == key && *it <= iteration)
            .map(|(_, c)| c)
            .sum()
    }

    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    /// Rows `area_a,area_b,iteration,tag,count`, areas 1-based.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["area_a", "area_b", "iteration", "tag", "count"])?;
        for (((a, b), it, tag), count) in &self.counts {
            w.write_record([
                (a + 1).to_string(),
                (b + 1).to_string(),
                it.to_string(),
                tag.as_str().to_string(),
                count.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<ledger>", e))?;
        Ok(())
    }
}

/// Compare the measured count for `pair` at `iteration` with both formulas.
pub fn comm_count(
    ledger: &CommLedger,
    pair: (usize, usize),
    iteration: usize,
    sizes: &ExchangeSizes,
) -> Result<CommCount> {
    let key = pair_key(pair.0, pair.1);
    if !ledger.pairs.contains(&key) {
        return Err(Error::InvalidArgument(format!(
            "pair ({}, {}) is not part of the simulated topology",
            pair.0 + 1,
            pair.1 + 1
        )));
    }
    Ok(CommCount {
        measured: ledger.count(key.0, key.1, iteration),
        nominal_formula: sizes.nominal_count(),
        protocol_formula: sizes.protocol_count(),
    })
}

pub struct MessageBus {
    neighbors: Vec<BTreeSet<usize>>,
    inboxes: Vec<Vec<Message>>,
    ledger: CommLedger,
    schedule: Schedule,
    rounds: u64,
}

impl MessageBus {
    /// A bus over `n_nodes` nodes where messages may only travel along
    /// `edges` (unordered, 0-based).
    pub fn new(n_nodes: usize, edges: impl IntoIterator<Item = (usize, usize)>, schedule: Schedule) -> Result<Self> {
        let mut neighbors = vec![BTreeSet::new(); n_nodes];
        let mut pairs = Vec::new();
        for (a, b) in edges {
            if a >= n_nodes || b >= n_nodes || a == b {
                return Err(Error::InvalidArgument(format!("invalid bus edge ({a}, {b})")));
            }
            neighbors[a].insert(b);
            neighbors[b].insert(a);
            pairs.push((a, b));
        }
        Ok(Self {
            neighbors,
            inboxes: vec![Vec::new(); n_nodes],
            ledger: CommLedger::new(pairs),
            schedule,
            rounds: 0,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        self.neighbors[node].iter().copied()
    }

    pub fn ledger(&self) -> &CommLedger {
        &self.ledger
    }

    pub fn into_ledger(self) -> CommLedger {
        self.ledger
    }

    /// Execute one bulk-synchronous round. Every node sees exactly the
    /// messages sent to it during the previous round, sorted by sender and
    /// tag; its outgoing messages are delivered at the end of this round and
    /// counted in the ledger under `iteration`.
    pub fn run_round<S, F>(&mut self, iteration: usize, states: &mut [S], node: F) -> Result<()>
    where
        S: Send,
        F: Fn(usize, &mut S, &[Message]) -> Result<Vec<Outgoing>> + Sync,
    {
        let n = self.n_nodes();
        if states.len() != n {
            return Err(Error::Dimension(format!("{} node states for {n} nodes", states.len())));
        }
        let inboxes = std::mem::replace(&mut self.inboxes, vec![Vec::new(); n]);
        let mut outputs: Vec<Option<Result<Vec<Outgoing>>>> = (0..n).map(|_| None).collect();

        match self.schedule {
            Schedule::InOrder | Schedule::Permuted { .. } => {
                let mut order: Vec<usize> = (0..n).collect();
                if let Schedule::Permuted { seed } = self.schedule {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ self.rounds.wrapping_mul(0x9E37_79B9_7F4A_7C15));
                    order.shuffle(&mut rng);
                }
                let mut slots: Vec<Option<&mut S>> = states.iter_mut().map(Some).collect();
                for id in order {
                    let state = slots[id].take().expect("each node runs once per round");
                    outputs[id] = Some(node(id, state, &inboxes[id]));
                }
            }
            Schedule::Parallel => {
                let node = &node;
                let inboxes = &inboxes;
                std::thread::scope(|scope| {
                    let handles: Vec<_> = states
                        .iter_mut()
                        .enumerate()
                        .map(|(id, state)| scope.spawn(move || node(id, state, &inboxes[id])))
                        .collect();
                    for (id, h) in handles.into_iter().enumerate() {
                        outputs[id] = Some(h.join().expect("node worker panicked"));
                    }
                });
            }
        }
        self.rounds += 1;

        for (from, out) in outputs.into_iter().enumerate() {
            for msg in out.expect("every node produced output")? {
                if !self.neighbors[from].contains(&msg.to) {
                    return Err(Error::Protocol { from, to: msg.to });
                }
                self.ledger
                    .record(from, msg.to, iteration, msg.tag, msg.payload.len());
                self.inboxes[msg.to].push(Message {
                    from,
                    to: msg.to,
                    tag: msg.tag,
                    payload: msg.payload,
                });
            }
        }
        for inbox in &mut self.inboxes {
            inbox.sort_by_key(|m| (m.from, m.tag));
        }
        Ok(())
    }

    /// Messages waiting for `node` in the next round.
    pub fn pending(&self, node: usize) -> &[Message] {
        &self.inboxes[node]
    }

    /// Hand the pending messages to the caller, emptying all inboxes.
    pub fn drain(&mut self) -> Vec<Vec<Message>> {
        let n = self.n_nodes();
        std::mem::replace(&mut self.inboxes, vec![Vec::new(); n])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_node_round_leaves_ledger_empty() {
        let mut bus = MessageBus::new(1, [], Schedule::InOrder).unwrap();
        let mut states = vec![41];
        bus.run_round(0, &mut states, |_, s, inbox| {
            assert!(inbox.is_empty());
            *s += 1;
            Ok(vec![])
        })
        .unwrap();
        assert_eq!(states, vec![42]);
        assert!(bus.ledger().is_empty());
    }

    #[test]
    fn two_nodes_echo() {
        let mut bus = MessageBus::new(2, [(0, 1)], Schedule::InOrder).unwrap();
        let mut states = vec![vec![1.0, 2.0], vec![3.0]];
        bus.run_round(0, &mut states, |id, s, _| Ok(vec![Outgoing::new(1 - id, Tag::Factor, s.clone())]))
            .unwrap();
        bus.run_round(1, &mut states, |_, s, inbox| {
            *s = inbox[0].payload.clone();
            Ok(vec![])
        })
        .unwrap();
        assert_eq!(states, vec![vec![3.0], vec![1.0, 2.0]]);
        assert_eq!(bus.ledger().count(0, 1, 0), 3);
        assert_eq!(bus.ledger().count(1, 0, 1), 0);
    }

    #[test]
    fn non_neighbor_is_a_protocol_violation() {
        let mut bus = MessageBus::new(3, [(0, 1), (1, 2)], Schedule::InOrder).unwrap();
        let mut states = vec![(); 3];
        let err = bus
            .run_round(0, &mut states, |id, _, _| {
                Ok(if id == 0 { vec![Outgoing::new(2, Tag::QTerm, vec![1.0])] } else { vec![] })
            })
            .unwrap_err();
        assert!(matches!(err, Error::Protocol { from: 0, to: 2 }));
    }

    #[test]
    fn comm_count_reports_formulas() {
        let ledger = CommLedger::new([(0, 1)]);
        let sizes = ExchangeSizes { m: 25, r: 5, time_steps: 5, n_l: 40, n_j: 60 };
        let c = comm_count(&ledger, (1, 0), 0, &sizes).unwrap();
        assert_eq!(c.measured, 0);
        assert_eq!(c.nominal_formula, 225);
        assert_eq!(c.protocol_formula, 2 * 125 + 30 * 100);
        assert!(comm_count(&ledger, (0, 2), 0, &sizes).is_err());
    }

    #[test]
    fn ledger_csv_has_one_row_per_key() {
        let mut ledger = CommLedger::default();
        ledger.record(1, 0, 0, Tag::Factor, 10);
        ledger.record(0, 1, 0, Tag::Factor, 10);
        ledger.record(0, 1, 1, Tag::QTerm, 4);
        let mut buf = Vec::new();
        ledger.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "area_a,area_b,iteration,tag,count\n1,2,0,factor,20\n1,2,1,q-term,4\n");
        assert_eq!(ledger.cumulative(0, 1, 0), 20);
        assert_eq!(ledger.cumulative(0, 1, 1), 24);
    }
}
