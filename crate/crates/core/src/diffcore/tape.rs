use super::real::Real;
use super::tensor::Tensor;
use super::AutodiffError;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Local gradient rule of one recorded operation.
///
/// Given the operation's inputs, its output and the gradient flowing into the
/// output, return one gradient per input (`None` when an input receives no
/// gradient from this rule).
pub trait GradRule<F: Real>: Send + Sync {
    fn name(&self) -> &'static str;

    fn backward(
        &self,
        inputs: &[&Tensor<F>],
        output: &Tensor<F>,
        grad: &Tensor<F>,
    ) -> Vec<Option<Tensor<F>>>;
}

struct Node<F: Real> {
    inputs: Vec<Var>,
    rule: Box<dyn GradRule<F>>,
}

struct Entry<F: Real> {
    value: Tensor<F>,
    requires_grad: bool,
    node: Option<Node<F>>,
}

/// Append-only record of a computation.
///
/// Entries are stored in creation order, so every node's inputs precede it;
/// [`Tape::backward`] walks the entries in exact reverse order.
pub struct Tape<F: Real> {
    entries: Vec<Entry<F>>,
    kink_distance: Option<F>,
    fault: Option<&'static str>,
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            kink_distance: None,
            fault: None,
        }
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<F>) -> Var {
        self.leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor<F>, requires_grad: bool) -> Var {
        self.entries.push(Entry {
            value,
            requires_grad,
            node: None,
        });
        Var(self.entries.len() - 1)
    }

    /// Records an operation output computed from `inputs`.
    pub fn record(&mut self, inputs: &[Var], value: Tensor<F>, rule: impl GradRule<F> + 'static) -> Var {
        let requires_grad = inputs.iter().any(|v| self.entries[v.0].requires_grad);
        self.entries.push(Entry {
            value,
            requires_grad,
            node: Some(Node {
                inputs: inputs.to_vec(),
                rule: Box::new(rule),
            }),
        });
        Var(self.entries.len() - 1)
    }

    pub fn value(&self, var: Var) -> &Tensor<F> {
        &self.entries[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.entries[var.0].value.shape()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.entries[var.0].requires_grad
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Names of the recorded operations, in recording order.
    pub fn op_names(&self) -> Vec<&'static str> {
        self.entries
            .iter()
            .filter_map(|e| e.node.as_ref().map(|n| n.rule.name()))
            .collect()
    }

    /// Registers how close a non-differentiable point came during the forward
    /// pass (|relu input|, |abs argument|, |hinge argument|).
    pub fn note_kink(&mut self, distance: F) {
        self.kink_distance = Some(match self.kink_distance {
            Some(d) if d <= distance => d,
            _ => distance,
        });
    }

    /// Smallest kink distance noted so far; `None` when no kinked op ran.
    pub fn kink_distance(&self) -> Option<F> {
        self.kink_distance
    }

    /// Test hook: corrupts the gradient rule of every op with this name.
    #[doc(hidden)]
    pub fn inject_fault(&mut self, op: &'static str) {
        self.fault = Some(op);
    }

    pub(crate) fn check(&self, var: Var) -> Result<(), AutodiffError> {
        if var.0 < self.entries.len() {
            Ok(())
        } else {
            Err(AutodiffError::UnknownVar(var.0))
        }
    }

    /// Reverse-mode sweep from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients<F>, AutodiffError> {
        self.check(output)?;
        let out_value = &self.entries[output.0].value;
        if !out_value.is_scalar() {
            return Err(AutodiffError::NonScalarOutput {
                shape: out_value.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor<F>>> = (0..self.entries.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::ones(out_value.shape()));

        for idx in (0..=output.0).rev() {
            let entry = &self.entries[idx];
            let Some(node) = &entry.node else { continue };
            if !entry.requires_grad {
                continue;
            }
            let Some(grad) = grads[idx].take() else { continue };
            let inputs: Vec<&Tensor<F>> = node.inputs.iter().map(|v| &self.entries[v.0].value).collect();
            let mut local = node.rule.backward(&inputs, &entry.value, &grad);
            if self.fault == Some(node.rule.name()) {
                let skew = F::from_f64_lossy(1.5);
                for g in local.iter_mut().flatten() {
                    *g = g.map(|v| v * skew);
                }
            }
            grads[idx] = Some(grad);
            for (input, g) in node.inputs.iter().zip(local) {
                let Some(g) = g else { continue };
                if !self.entries[input.0].requires_grad {
                    continue;
                }
                debug_assert_eq!(g.shape(), self.entries[input.0].value.shape(), "{}", node.rule.name());
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                }
            }
        }

        let shapes = self.entries.iter().map(|e| e.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }
}

/// Result of [`Tape::backward`]: one gradient per recorded value.
pub struct Gradients<F: Real> {
    grads: Vec<Option<Tensor<F>>>,
    shapes: Vec<Vec<usize>>,
}

impl<F: Real> Gradients<F> {
    /// Gradient w.r.t. `var`; zeros when no path reaches it.
    pub fn get(&self, var: Var) -> Tensor<F> {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[var.0]),
        }
    }

    pub fn get_ref(&self, var: Var) -> Option<&Tensor<F>> {
        self.grads[var.0].as_ref()
    }

    /// Moves the gradient out, leaving zeros behind.
    pub fn take(&mut self, var: Var) -> Tensor<F> {
        self.grads[var.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[var.0]))
    }
}
