//! In-process cluster: logical nodes that each own a copy of their examples,
//! scheduled on a worker pool, with communication accounting.
//!
//! A *pass* is one transfer of a feature-dimension vector. Scalar exchanges
//! are counted separately and never count as passes. Reductions have
//! all-reduce semantics: every node ends up with the result.

use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rayon::ThreadPool;

use crate::data::{Dataset, PartitionPlan};
use crate::error::{Error, Result};
use crate::exact::{ExactSum, ExactVec};
use crate::loss::{check_dim, MarginCache};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Phase {
    BroadcastW,
    ReduceG,
    ReduceD,
    LineSearch,
    InitMix,
}

impl Phase {
    pub const ALL: [Phase; 5] = [
        Phase::BroadcastW,
        Phase::ReduceG,
        Phase::ReduceD,
        Phase::LineSearch,
        Phase::InitMix,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Phase::BroadcastW => "broadcast-w",
            Phase::ReduceG => "reduce-g",
            Phase::ReduceD => "reduce-d",
            Phase::LineSearch => "line-search",
            Phase::InitMix => "init-mix",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CommLedger {
    passes: [u64; 5],
    scalar_msgs: u64,
}

impl CommLedger {
    pub fn passes(&self) -> u64 {
        self.passes.iter().sum()
    }

    pub fn phase_passes(&self, phase: Phase) -> u64 {
        self.passes[phase.index()]
    }

    pub fn scalar_msgs(&self) -> u64 {
        self.scalar_msgs
    }

    pub fn record_pass(&mut self, phase: Phase) {
        self.passes[phase.index()] += 1;
    }

    pub fn record_scalar(&mut self) {
        self.scalar_msgs += 1;
    }
}

impl fmt::Display for CommLedger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "passes={}", self.passes())?;
        for phase in Phase::ALL {
            write!(f, " {}={}", phase.name(), self.phase_passes(phase))?;
        }
        write!(f, " scalar_msgs={}", self.scalar_msgs)
    }
}

/// State private to one logical node.
#[derive(Debug)]
pub struct NodeContext {
    pub id: usize,
    /// Copies of the node's own examples, in ascending global order.
    pub data: Dataset,
    /// Global indices of `data`'s rows.
    pub members: Vec<usize>,
    pub rng: ChaCha8Rng,
    /// Margins at the last broadcast point (and along the last direction).
    pub cache: Option<MarginCache>,
    /// Node's loss gradient at the last broadcast point.
    pub local_grad: Vec<f64>,
}

pub struct Cluster {
    nodes: Vec<NodeContext>,
    pool: ThreadPool,
    ledger: CommLedger,
    dim: usize,
}

impl fmt::Debug for Cluster {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Cluster")
            .field("nodes", &self.nodes.len())
            .field("workers", &self.pool.current_num_threads())
            .field("ledger", &self.ledger)
            .finish()
    }
}

impl Cluster {
    /// Distributes `ds` according to `plan`. Node `p` draws from a generator
    /// seeded with `seed ^ p`. `workers = None` uses one thread per core.
    pub fn new(
        ds: &Dataset,
        plan: &PartitionPlan,
        seed: u64,
        workers: Option<usize>,
    ) -> Result<Self> {
        if plan.assignment().len() != ds.len() {
            return Err(Error::InvalidPartition(format!(
                "plan covers {} examples, dataset has {}",
                plan.assignment().len(),
                ds.len()
            )));
        }
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(w) = workers {
            if w == 0 {
                return Err(Error::Config("worker count must be positive".into()));
            }
            builder = builder.num_threads(w);
        }
        let pool = builder
            .build()
            .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
        let nodes = (0..plan.nodes())
            .map(|p| {
                let members = plan.members(p)?.to_vec();
                Ok(NodeContext {
                    id: p,
                    data: ds.subset(&members)?,
                    members,
                    rng: ChaCha8Rng::seed_from_u64(seed ^ p as u64),
                    cache: None,
                    local_grad: Vec::new(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            nodes,
            pool,
            ledger: CommLedger::default(),
            dim: ds.dim(),
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn workers(&self) -> usize {
        self.pool.current_num_threads()
    }

    pub fn nodes(&self) -> &[NodeContext] {
        &self.nodes
    }

    pub fn node(&self, p: usize) -> Result<&NodeContext> {
        self.nodes.get(p).ok_or(Error::InvalidNode {
            node: p,
            nodes: self.nodes.len(),
        })
    }

    pub fn ledger(&self) -> &CommLedger {
        &self.ledger
    }

    /// Sends `v` to every node; one pass.
    pub fn broadcast(&mut self, v: &[f64], phase: Phase) -> Result<Arc<[f64]>> {
        check_dim(self.dim, v.len())?;
        self.ledger.record_pass(phase);
        Ok(Arc::from(v))
    }

    /// Exact sum of per-node vectors, in node order; one pass.
    pub fn reduce_sum(&mut self, parts: Vec<ExactVec>, phase: Phase) -> Result<Vec<f64>> {
        if parts.len() != self.nodes.len() {
            return Err(Error::InvalidNode {
                node: parts.len(),
                nodes: self.nodes.len(),
            });
        }
        let mut acc = ExactVec::zeros(self.dim);
        for part in &parts {
            check_dim(self.dim, part.len())?;
            acc.merge(part);
        }
        self.ledger.record_pass(phase);
        Ok(acc.round())
    }

    /// Componentwise exact sum of per-node scalar tuples; one scalar message.
    pub fn reduce_scalars(&mut self, parts: Vec<Vec<ExactSum>>) -> Result<Vec<f64>> {
        let width = parts.first().map_or(0, Vec::len);
        let mut acc = vec![ExactSum::new(); width];
        for part in &parts {
            check_dim(width, part.len())?;
            for (a, x) in acc.iter_mut().zip(part) {
                a.merge(x);
            }
        }
        self.ledger.record_scalar();
        Ok(acc.iter().map(ExactSum::value).collect())
    }

    /// Runs `f` on every node in parallel; results come back in node order.
    pub fn map<T, F>(&self, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(&NodeContext) -> T + Sync,
    {
        let nodes = &self.nodes;
        self.pool.install(|| nodes.par_iter().map(&f).collect())
    }

    /// Like [`Cluster::map`], with mutable access to node state.
    pub fn map_mut<T, F>(&mut self, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(&mut NodeContext) -> T + Sync,
    {
        let nodes = &mut self.nodes;
        self.pool.install(|| nodes.par_iter_mut().map(&f).collect())
    }
}
