//! Domain- and task-aware feature embeddings.
//!
//! Every encoder layer `l` (including the word-embedding layer, `l = 0`)
//! owns one vector per registered domain and one per task. The layer output
//! becomes `base_l(h) + domain[(d, l)] + task[(t, l)]`, broadcast over
//! positions. The vectors live in their own parameter groups, which is what
//! lets training gate updates per objective.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::{Decoded, Seq2Seq};
use crate::numerics::{Graph, NodeId, ParamGroup, ParamId, ParamStore, Tensor};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DomainId {
    In,
    Out,
    /// Additional domains for multi-domain probes.
    Named(String),
}

impl DomainId {
    pub fn named(name: &str) -> Result<Self> {
        name.parse()
    }
}

impl fmt::Display for DomainId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DomainId::In => f.write_str("in"),
            DomainId::Out => f.write_str("out"),
            DomainId::Named(n) => f.write_str(n),
        }
    }
}

impl FromStr for DomainId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "in" => Ok(DomainId::In),
            "out" => Ok(DomainId::Out),
            "" => Err(Error::Usage("empty domain name".into())),
            n if n.chars().all(|c| c.is_ascii_alphanumeric() || c == '-') => {
                Ok(DomainId::Named(n.to_string()))
            }
            n => Err(Error::Usage(format!("invalid domain name `{n}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TaskId {
    Mt,
    Lm,
}

impl TaskId {
    pub const ALL: [TaskId; 2] = [TaskId::Mt, TaskId::Lm];
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskId::Mt => "mt",
            TaskId::Lm => "lm",
        })
    }
}

impl FromStr for TaskId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mt" => Ok(TaskId::Mt),
            "lm" => Ok(TaskId::Lm),
            other => Err(Error::Usage(format!("unknown task `{other}`"))),
        }
    }
}

/// Per-(domain, layer) and per-(task, layer) vectors of hidden size.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureEmbeddingTable {
    slots: usize,
    hidden: usize,
    domains: BTreeMap<DomainId, Vec<ParamId>>,
    tasks: BTreeMap<TaskId, Vec<ParamId>>,
}

fn domain_param_name(d: &DomainId, layer: usize) -> String {
    format!("dafe.domain.{d}.{layer}")
}

fn task_param_name(t: TaskId, layer: usize) -> String {
    format!("dafe.task.{t}.{layer}")
}

impl FeatureEmbeddingTable {
    /// Registers zero-initialised vectors for layers `0..=num_layers`.
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        num_layers: usize,
        hidden: usize,
        domains: &[DomainId],
        tasks: &[TaskId],
    ) -> Result<Self> {
        let mut table = FeatureEmbeddingTable {
            slots: num_layers + 1,
            hidden,
            domains: BTreeMap::new(),
            tasks: BTreeMap::new(),
        };
        for d in domains {
            table.register_domain(store, d.clone())?;
        }
        for &t in tasks {
            table.register_task(store, t)?;
        }
        Ok(table)
    }

    /// Rebinds a table from parameters already present in `store`.
    pub fn bind<T: Scalar>(
        store: &ParamStore<T>,
        num_layers: usize,
        hidden: usize,
        domains: &[DomainId],
        tasks: &[TaskId],
    ) -> Result<Self> {
        let slots = num_layers + 1;
        let find = |name: String| {
            store
                .lookup(&name)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks `{name}`")))
        };
        let mut table = FeatureEmbeddingTable {
            slots,
            hidden,
            domains: BTreeMap::new(),
            tasks: BTreeMap::new(),
        };
        for d in domains {
            let ids = (0..slots)
                .map(|l| find(domain_param_name(d, l)))
                .collect::<Result<_>>()?;
            table.domains.insert(d.clone(), ids);
        }
        for &t in tasks {
            let ids = (0..slots)
                .map(|l| find(task_param_name(t, l)))
                .collect::<Result<_>>()?;
            table.tasks.insert(t, ids);
        }
        Ok(table)
    }

    /// Adds `(L+1)·d` zero parameters for a new domain. Existing values are
    /// untouched; re-registering is an error.
    pub fn register_domain<T: Scalar>(&mut self, store: &mut ParamStore<T>, domain: DomainId) -> Result<()> {
        if self.domains.contains_key(&domain) {
            return Err(Error::DuplicateParameter(format!("domain {domain}")));
        }
        let ids = (0..self.slots)
            .map(|l| {
                store.add(
                    domain_param_name(&domain, l),
                    ParamGroup::Domain(domain.clone()),
                    Tensor::zeros(vec![1, self.hidden]),
                )
            })
            .collect::<Result<_>>()?;
        self.domains.insert(domain, ids);
        Ok(())
    }

    pub fn register_task<T: Scalar>(&mut self, store: &mut ParamStore<T>, task: TaskId) -> Result<()> {
        if self.tasks.contains_key(&task) {
            return Err(Error::DuplicateParameter(format!("task {task}")));
        }
        let ids = (0..self.slots)
            .map(|l| {
                store.add(
                    task_param_name(task, l),
                    ParamGroup::Task(task),
                    Tensor::zeros(vec![1, self.hidden]),
                )
            })
            .collect::<Result<_>>()?;
        self.tasks.insert(task, ids);
        Ok(())
    }

    pub fn domains(&self) -> impl Iterator<Item = &DomainId> {
        self.domains.keys()
    }

    pub fn tasks(&self) -> impl Iterator<Item = TaskId> + '_ {
        self.tasks.keys().copied()
    }

    /// Number of layer slots (`L + 1`).
    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn domain_vector(&self, domain: &DomainId, layer: usize) -> Result<ParamId> {
        self.domains
            .get(domain)
            .and_then(|v| v.get(layer))
            .copied()
            .ok_or_else(|| Error::Lookup(format!("no domain vector for ({domain}, layer {layer})")))
    }

    pub fn task_vector(&self, task: TaskId, layer: usize) -> Result<ParamId> {
        self.tasks
            .get(&task)
            .and_then(|v| v.get(layer))
            .copied()
            .ok_or_else(|| Error::Lookup(format!("no task vector for ({task}, layer {layer})")))
    }

    /// `base_out + domain[(domain, layer)] + task[(task, layer)]` on every row.
    pub fn compose<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        base_out: NodeId,
        domain: &DomainId,
        task: TaskId,
        layer: usize,
    ) -> Result<NodeId> {
        let dv = self.domain_vector(domain, layer)?;
        let tv = self.task_vector(task, layer)?;
        let dn = g.param(store, dv);
        let tn = g.param(store, tv);
        let with_domain = g.add_row(base_out, dn)?;
        g.add_row(with_domain, tn)
    }
}

/// The parameter groups a step on `(domain, task)` may update:
/// base ∪ domain ∪ task.
pub fn active_groups(domain: &DomainId, task: TaskId) -> BTreeSet<ParamGroup> {
    [
        ParamGroup::Base,
        ParamGroup::Domain(domain.clone()),
        ParamGroup::Task(task),
    ]
    .into_iter()
    .collect()
}

/// Disjoint grouping of every trainable parameter of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterPartition {
    groups: BTreeMap<ParamGroup, Vec<ParamId>>,
}

impl ParameterPartition {
    pub fn new<T: Scalar>(store: &ParamStore<T>) -> Self {
        let mut groups: BTreeMap<ParamGroup, Vec<ParamId>> = BTreeMap::new();
        for (pid, p) in store.iter() {
            groups.entry(p.group().clone()).or_default().push(pid);
        }
        ParameterPartition { groups }
    }

    pub fn groups(&self) -> impl Iterator<Item = (&ParamGroup, &[ParamId])> {
        self.groups.iter().map(|(g, v)| (g, v.as_slice()))
    }

    pub fn group(&self, group: &ParamGroup) -> &[ParamId] {
        self.groups.get(group).map_or(&[], Vec::as_slice)
    }

    /// Exactly base ∪ domain ∪ task, in store order.
    pub fn active_parameters(&self, domain: &DomainId, task: TaskId) -> Vec<ParamId> {
        let active = active_groups(domain, task);
        let mut out: Vec<ParamId> = active
            .iter()
            .flat_map(|g| self.group(g).iter().copied())
            .collect();
        out.sort();
        out
    }

    pub fn len(&self) -> usize {
        self.groups.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Decodes one source sentence once per domain embedding, everything else
/// held fixed.
pub fn probe_swap<T: Scalar>(
    model: &Seq2Seq<T>,
    src: &[usize],
    domains: &[DomainId],
    max_steps: usize,
) -> Result<Vec<(DomainId, Decoded)>> {
    if let Some(table) = model.dafe() {
        for d in domains {
            table.domain_vector(d, 0)?;
        }
    }
    domains
        .iter()
        .map(|d| Ok((d.clone(), model.greedy_decode(src, d, max_steps)?)))
        .collect()
}
