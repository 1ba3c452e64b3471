//! Transport-operator strategies. An operator turns the exact graph matrix
//! of a term into the effective `N x N` matrix the right-hand side applies.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use super::PhysicsError;
use crate::autodiff::nn::{chebyshev_basis, ChebGraphConv};
use crate::autodiff::{Matrix, ParamStore, Tape, Var};

pub trait TransportOperator: Send + Sync {
    fn name(&self) -> &'static str;

    /// Adds this operator's parameters under `prefix` (nothing for exact).
    fn init(&self, store: &mut ParamStore, prefix: &str);

    /// Effective operator for `base` on the tape.
    fn effective<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        prefix: &str,
        base: &Matrix,
    ) -> Result<Var<'t>, PhysicsError>;

    /// Effective operator as a plain matrix.
    fn effective_value(&self, store: &ParamStore, prefix: &str, base: &Matrix) -> Result<Matrix, PhysicsError> {
        let tape = Tape::new();
        Ok(self.effective(&tape, store, prefix, base)?.value())
    }
}

/// The analytic graph operators; no trainable parameters.
pub struct ExactOperator;

impl TransportOperator for ExactOperator {
    fn name(&self) -> &'static str {
        "exact"
    }

    fn init(&self, _store: &mut ParamStore, _prefix: &str) {}

    fn effective<'t>(
        &self,
        tape: &'t Tape,
        _store: &ParamStore,
        _prefix: &str,
        base: &Matrix,
    ) -> Result<Var<'t>, PhysicsError> {
        Ok(tape.constant(base.clone()))
    }

    fn effective_value(&self, _store: &ParamStore, _prefix: &str, base: &Matrix) -> Result<Matrix, PhysicsError> {
        Ok(base.clone())
    }
}

/// Chebyshev expansion `sum_k theta_k T_k(base)` with scalar coefficients.
/// Starts at `theta = [0, 1, 0, ...]`, i.e. the exact operator.
pub struct LearnedChebyshev {
    pub order: usize,
}

impl LearnedChebyshev {
    fn conv(&self, prefix: &str) -> Result<ChebGraphConv, PhysicsError> {
        Ok(ChebGraphConv::new(prefix, self.order, 1, 1)?)
    }
}

impl TransportOperator for LearnedChebyshev {
    fn name(&self) -> &'static str {
        "learned"
    }

    fn init(&self, store: &mut ParamStore, prefix: &str) {
        let conv = ChebGraphConv::new(prefix, self.order.max(1), 1, 1).expect("order >= 1");
        for k in 0..conv.order {
            let v = if k == 1 { 1.0 } else { 0.0 };
            store.insert(conv.weight_name(k), Matrix::scalar(v));
        }
    }

    fn effective<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        prefix: &str,
        base: &Matrix,
    ) -> Result<Var<'t>, PhysicsError> {
        let conv = self.conv(prefix)?;
        let mut out: Option<Var<'t>> = None;
        for (k, t_k) in chebyshev_basis(base, self.order).into_iter().enumerate() {
            let theta = tape.param(store, &conv.weight_name(k))?;
            let term = tape.constant(t_k).mul_scalar(theta);
            out = Some(match out {
                None => term,
                Some(acc) => acc + term,
            });
        }
        out.ok_or_else(|| PhysicsError::Config("Chebyshev order must be at least 1".into()))
    }
}

type Factory = fn(usize) -> Box<dyn TransportOperator>;

/// Operator strategies by name; the factory receives the Chebyshev order.
#[derive(Default)]
pub struct OperatorRegistry {
    factories: BTreeMap<&'static str, Factory>,
}

impl OperatorRegistry {
    pub fn with_defaults() -> Self {
        let mut r = Self::default();
        r.register("exact", |_| Box::new(ExactOperator));
        r.register("learned", |order| Box::new(LearnedChebyshev { order }));
        r
    }

    pub fn register(&mut self, name: &'static str, factory: Factory) {
        self.factories.insert(name, factory);
    }

    pub fn create(&self, name: &str, order: usize) -> Result<Box<dyn TransportOperator>, PhysicsError> {
        if order < 1 {
            return Err(PhysicsError::Config("Chebyshev order must be at least 1".into()));
        }
        self.factories
            .get(name)
            .map(|f| f(order))
            .ok_or_else(|| PhysicsError::UnknownOperator(name.to_string()))
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.factories.keys().copied().collect()
    }
}

pub fn operator_registry() -> &'static OperatorRegistry {
    static REGISTRY: OnceLock<OperatorRegistry> = OnceLock::new();
    REGISTRY.get_or_init(OperatorRegistry::with_defaults)
}
