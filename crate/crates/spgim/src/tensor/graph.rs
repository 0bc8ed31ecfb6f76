use std::collections::BTreeMap;
use std::sync::Arc;

use ndarray::ArrayD;

pub type NodeId = usize;

/// Handle to a node in a [`Graph`]. Only valid for the graph that created it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) NodeId);

/// Gradient closure: given the upstream gradient and a mask of which parents
/// require gradients, return one optional gradient per parent.
pub(crate) type GradFn = Box<dyn Fn(&ArrayD<f64>, &[bool]) -> Vec<Option<ArrayD<f64>>>>;

pub(crate) struct Node {
    pub value: Arc<ArrayD<f64>>,
    pub parents: Vec<NodeId>,
    pub grad_fn: Option<GradFn>,
    pub needs_grad: bool,
}

/// A single forward tape. Build one per training step, run [`Graph::backward`]
/// once, then drop it.
#[derive(Default)]
pub struct Graph {
    pub(crate) nodes: Vec<Node>,
    bindings: BTreeMap<String, NodeId>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Non-differentiable input (images, targets, masks).
    pub fn constant(&mut self, value: ArrayD<f64>) -> Var {
        self.push_node(value, vec![], None, false)
    }

    /// Differentiable source node.
    pub fn leaf(&mut self, value: ArrayD<f64>) -> Var {
        self.push_node(value, vec![], None, true)
    }

    /// Differentiable source bound to a parameter name, so its gradient can
    /// be fetched by name after `backward`. A name already present returns
    /// its existing node, so a parameter used in several places accumulates
    /// into a single gradient.
    pub fn named_leaf(&mut self, name: &str, value: ArrayD<f64>) -> Var {
        if let Some(&id) = self.bindings.get(name) {
            debug_assert_eq!(
                self.nodes[id].value.shape(),
                value.shape(),
                "named leaf {name} rebound with a different shape"
            );
            return Var(id);
        }
        let v = self.leaf(value);
        self.bindings.insert(name.to_string(), v.0);
        v
    }

    pub fn value(&self, v: Var) -> &ArrayD<f64> {
        &self.nodes[v.0].value
    }

    pub(crate) fn value_arc(&self, v: Var) -> Arc<ArrayD<f64>> {
        Arc::clone(&self.nodes[v.0].value)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub(crate) fn push_node(
        &mut self,
        value: ArrayD<f64>,
        parents: Vec<NodeId>,
        grad_fn: Option<GradFn>,
        needs_grad: bool,
    ) -> Var {
        // Slice-based ops (conv, norms) rely on standard layout; normalize
        // the rare op outputs (e.g. gemm fast paths) that come back in
        // another memory order.
        let value = if value.is_standard_layout() {
            value
        } else {
            value.as_standard_layout().to_owned()
        };
        self.nodes.push(Node {
            value: Arc::new(value),
            parents,
            grad_fn,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Append an op node. `needs_grad` is inherited from the parents; the
    /// gradient closure is dropped when no parent requires gradients.
    pub(crate) fn op(
        &mut self,
        value: ArrayD<f64>,
        parents: &[Var],
        grad_fn: GradFn,
    ) -> Var {
        let needs = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        let ids = parents.iter().map(|p| p.0).collect();
        self.push_node(value, ids, if needs { Some(grad_fn) } else { None }, needs)
    }

    /// Reverse sweep from `loss`, which must be a scalar (single-element)
    /// node. Returns accumulated gradients for every node that needed one.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(
            self.nodes[loss.0].value.len(),
            1,
            "backward requires a scalar loss"
        );
        let mut grads: Vec<Option<ArrayD<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(ArrayD::from_elem(self.nodes[loss.0].value.dim(), 1.0));

        for id in (0..=loss.0).rev() {
            let Some(grad_fn) = self.nodes[id].grad_fn.as_ref() else {
                continue;
            };
            let Some(upstream) = grads[id].take() else {
                continue;
            };
            let parents = &self.nodes[id].parents;
            let mask: Vec<bool> = parents
                .iter()
                .map(|&p| self.nodes[p].needs_grad)
                .collect();
            let parent_grads = grad_fn(&upstream, &mask);
            debug_assert_eq!(parent_grads.len(), parents.len());
            for (&pid, pg) in parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                debug_assert_eq!(
                    pg.shape(),
                    self.nodes[pid].value.shape(),
                    "gradient shape mismatch for node {pid}"
                );
                match &mut grads[pid] {
                    Some(acc) => *acc += &pg,
                    slot @ None => *slot = Some(pg),
                }
            }
        }

        Gradients {
            grads,
            by_name: self.bindings.clone(),
        }
    }
}

/// Result of a backward sweep.
pub struct Gradients {
    grads: Vec<Option<ArrayD<f64>>>,
    by_name: BTreeMap<String, NodeId>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&ArrayD<f64>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn by_name(&self, name: &str) -> Option<&ArrayD<f64>> {
        self.by_name.get(name).and_then(|&id| self.get(Var(id)))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.by_name.keys().map(|s| s.as_str())
    }
}
