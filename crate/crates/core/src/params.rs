//! Named parameters and their binding onto a tape.

use crate::tensor::{Tape, Tensor, Var};
use std::cell::RefCell;
use std::collections::HashSet;

/// Something that owns named parameter tensors.
///
/// `visit` and `visit_mut` must list the same names in the same order, and
/// every name a model binds through a [`Binder`] must appear in them.
pub trait Parameterized {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor));

    fn param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.visit(&mut |name, _| out.push(name.to_string()));
        out
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, t| n += t.len());
        n
    }
}

/// Places parameters on a tape, as tracked leaves unless frozen, and
/// remembers which var belongs to which name.
pub struct Binder<'t> {
    tape: &'t Tape,
    frozen: HashSet<String>,
    bound: RefCell<Vec<(String, Var<'t>)>>,
}

impl<'t> Binder<'t> {
    pub fn new(tape: &'t Tape) -> Self {
        Binder { tape, frozen: HashSet::new(), bound: RefCell::new(Vec::new()) }
    }

    /// Parameters whose name is in `frozen` are bound as constants.
    pub fn with_frozen(tape: &'t Tape, frozen: impl IntoIterator<Item = String>) -> Self {
        Binder { tape, frozen: frozen.into_iter().collect(), bound: RefCell::new(Vec::new()) }
    }

    /// Binder that records everything as constants (pure evaluation).
    pub fn constant(tape: &'t Tape) -> Self {
        let mut b = Binder::new(tape);
        b.frozen.insert("*".into());
        b
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    fn is_frozen(&self, name: &str) -> bool {
        self.frozen.contains("*") || self.frozen.contains(name)
    }

    pub fn param(&self, name: &str, value: &Tensor) -> Var<'t> {
        if self.is_frozen(name) {
            return self.tape.constant(value.clone());
        }
        let v = self.tape.param(value.clone());
        self.bound.borrow_mut().push((name.to_string(), v));
        v
    }

    /// Tracked parameters in binding order.
    pub fn bound(&self) -> Vec<(String, Var<'t>)> {
        self.bound.borrow().clone()
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
