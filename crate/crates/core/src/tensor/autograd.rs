use std::collections::{HashMap, HashSet};

use super::{Element, Tensor};
use crate::error::{usage_err, Result};

/// Operations reachable from a loss, in topological order (inputs first).
pub struct Tape<T: Element> {
    order: Vec<Tensor<T>>,
}

impl<T: Element> Tape<T> {
    /// Collects every gradient-carrying tensor that `root` depends on.
    pub fn record(root: &Tensor<T>) -> Self {
        let mut order = Vec::new();
        let mut seen = HashSet::new();
        if !root.requires_grad() {
            return Self { order };
        }
        // Iterative post-order DFS; the graph can be a few thousand nodes deep.
        let mut stack: Vec<(Tensor<T>, bool)> = vec![(root.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
                continue;
            }
            if !seen.insert(node.id()) {
                continue;
            }
            stack.push((node.clone(), true));
            if let Some(gf) = node.grad_fn() {
                for input in gf.inputs.iter().rev() {
                    if input.requires_grad() && !seen.contains(&input.id()) {
                        stack.push((input.clone(), false));
                    }
                }
            }
        }
        Self { order }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Names of the recorded operations, leaves reported as `"leaf"`.
    pub fn op_names(&self) -> Vec<&'static str> {
        self.order
            .iter()
            .map(|t| t.op_name().unwrap_or("leaf"))
            .collect()
    }

    /// Replays the backward rules from `root`, seeding its gradient with
    /// `seed`, and accumulates into every leaf that requires a gradient.
    pub fn run(self, root: &Tensor<T>, seed: Vec<T>) {
        let mut grads: HashMap<usize, Vec<T>> = HashMap::new();
        grads.insert(root.id(), seed);
        for node in self.order.iter().rev() {
            let Some(g) = grads.remove(&node.id()) else {
                continue;
            };
            match node.grad_fn() {
                None => node.accumulate_grad(&g),
                Some(gf) => {
                    let input_grads = (gf.backward)(node.data(), &g);
                    debug_assert_eq!(input_grads.len(), gf.inputs.len(), "{}", gf.name);
                    for (input, ig) in gf.inputs.iter().zip(input_grads) {
                        let Some(ig) = ig else { continue };
                        if !input.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(ig.len(), input.numel(), "{}", gf.name);
                        match grads.get_mut(&input.id()) {
                            Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, &b)| *a += b),
                            None => {
                                grads.insert(input.id(), ig);
                            }
                        }
                    }
                }
            }
        }
    }
}

impl<T: Element> Tensor<T> {
    /// Back-propagates from a scalar loss into every reachable leaf that
    /// requires a gradient. Gradients accumulate into existing ones.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(usage_err(format!(
                "backward() needs a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Err(usage_err("backward() on a tensor that is not on the tape"));
        }
        Tape::record(self).run(self, vec![T::one()]);
        Ok(())
    }
}
