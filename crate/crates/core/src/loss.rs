//! Aggregation of the n×m patch/prompt distances into one differentiable
//! loss: the mean baseline and the entropic-OT replacement.
//!
//! Both modes run through the same pathway, `<C, P>` for a coupling `P`:
//! the mean is exactly the fixed independent coupling `a b^T` with uniform
//! weights, while OT solves for the entropic plan. Gradients with respect to
//! each patch embedding follow the envelope theorem: the coupling is held
//! fixed at its optimum, so `g_i = sum_j P_ij * grad_u D(u_i, v_j)`.

use ndarray::Array1;

use crate::error::{Error, Result};
use crate::measures::{build_cost_matrix, CostMatrix, Embedding, Metric, WeightVector};
use crate::sinkhorn::{sinkhorn_solve, Coupling, SinkhornConfig};

/// How pairwise distances are combined into one scalar.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AggregationMode {
    /// Plain average of all n*m distances.
    Mean,
    /// Entropic optimal transport with uniform marginals.
    OptimalTransport(SinkhornConfig),
}

impl AggregationMode {
    pub fn name(&self) -> &'static str {
        match self {
            AggregationMode::Mean => "mean",
            AggregationMode::OptimalTransport(_) => "ot",
        }
    }
}

/// Everything a caller needs from one loss evaluation.
#[derive(Debug, Clone)]
pub struct LossReport {
    /// The optimized objective: `<C, P>` in mean mode, the regularized
    /// objective `<C, P> - eps * H(P)` in OT mode (the quantity the envelope
    /// gradient is exact for).
    pub value: f64,
    /// `<C, P>` under the coupling actually used.
    pub transport_cost: f64,
    /// The coupling actually used: `a b^T` in mean mode, the Sinkhorn plan
    /// in OT mode.
    pub coupling: Coupling,
    /// `d value / d u_i` for each patch embedding, envelope theorem.
    pub patch_gradients: Vec<Array1<f64>>,
    pub mode: AggregationMode,
}

/// Average of all n*m pairwise distances.
pub fn mean_loss(us: &[Embedding], vs: &[Embedding], metric: Metric) -> Result<f64> {
    let c = build_cost_matrix(us, vs, metric)?;
    Ok(c.entries().sum() / (c.nrows() * c.ncols()) as f64)
}

/// Entropic-OT aggregation. See [`evaluate`] for the strictness contract.
pub fn ot_loss(
    us: &[Embedding],
    vs: &[Embedding],
    metric: Metric,
    cfg: SinkhornConfig,
    strict: bool,
) -> Result<LossReport> {
    evaluate(
        &AggregationMode::OptimalTransport(cfg),
        us,
        vs,
        metric,
        strict,
    )
}

/// Evaluate the loss in either mode.
///
/// With `strict` set, an unconverged Sinkhorn solve is an error carrying the
/// iteration count; otherwise the best-effort plan is used and its marginal
/// error remains visible through [`LossReport::coupling`].
pub fn evaluate(
    mode: &AggregationMode,
    us: &[Embedding],
    vs: &[Embedding],
    metric: Metric,
    strict: bool,
) -> Result<LossReport> {
    if us.is_empty() {
        return Err(Error::Empty("patch embeddings"));
    }
    if vs.is_empty() {
        return Err(Error::Empty("prompt embeddings"));
    }
    let cost = build_cost_matrix(us, vs, metric)?;
    let a = WeightVector::uniform(us.len())?;
    let b = WeightVector::uniform(vs.len())?;

    match mode {
        AggregationMode::Mean => {
            let coupling = Coupling::independent(&a, &b);
            let transport_cost = inner(&cost, &coupling);
            let patch_gradients = gradients_for_plan(&coupling, us, vs, metric)?;
            Ok(LossReport {
                value: transport_cost,
                transport_cost,
                coupling,
                patch_gradients,
                mode: *mode,
            })
        }
        AggregationMode::OptimalTransport(cfg) => {
            let sol = sinkhorn_solve(&a, &b, &cost, cfg)?;
            if strict && !sol.converged {
                return Err(Error::NotConverged {
                    iterations: sol.iterations_used,
                    marginal_error: sol.marginal_error,
                });
            }
            let patch_gradients = gradients_for_plan(&sol.plan, us, vs, metric)?;
            Ok(LossReport {
                value: sol.reg_objective,
                transport_cost: sol.transport_cost,
                coupling: sol.plan,
                patch_gradients,
                mode: *mode,
            })
        }
    }
}

/// Per-patch gradients for the given mode; plan recomputed as in [`evaluate`].
pub fn loss_gradients(
    mode: &AggregationMode,
    us: &[Embedding],
    vs: &[Embedding],
    metric: Metric,
) -> Result<Vec<Array1<f64>>> {
    Ok(evaluate(mode, us, vs, metric, false)?.patch_gradients)
}

/// `g_i = sum_j P_ij grad_u D(u_i, v_j)` with the plan held fixed.
pub fn gradients_for_plan(
    plan: &Coupling,
    us: &[Embedding],
    vs: &[Embedding],
    metric: Metric,
) -> Result<Vec<Array1<f64>>> {
    let d = us[0].dim();
    let mut out = Vec::with_capacity(us.len());
    for (i, u) in us.iter().enumerate() {
        let mut g = Array1::zeros(d);
        for (j, v) in vs.iter().enumerate() {
            let w = plan.plan()[(i, j)];
            if w == 0.0 {
                continue;
            }
            let dg = metric.grad_u(u, v).map_err(|e| Error::AtPatch {
                index: i,
                source: Box::new(e),
            })?;
            g.scaled_add(w, &dg);
        }
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::AtPatch {
                index: i,
                source: Box::new(Error::NonFinite("patch gradient".into())),
            });
        }
        out.push(g);
    }
    Ok(out)
}

fn inner(cost: &CostMatrix, coupling: &Coupling) -> f64 {
    (coupling.plan() * cost.entries()).sum()
}
