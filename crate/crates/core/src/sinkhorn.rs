//! Entropic-regularized optimal transport.
//!
//! The solver minimises `<C, P> - eps * H(P)` over couplings `P` with row
//! sums `a` and column sums `b`, where `H(P) = -sum P_ij (log P_ij - 1)`.
//! Two equivalent fixed-point iterations are provided: plain scaling of
//! `exp(-C/eps)` and the log-domain update on the dual potentials `(f, g)`,
//! which survives small `eps`. Convergence is declared on the L-inf marginal
//! violation, because feasibility is the invariant callers rely on.
//!
//! A brute-force permutation oracle gives the exact (unregularized) optimum
//! on small uniform square instances, for verification only.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::measures::{CostMatrix, WeightVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornConfig {
    /// Regularization strength. With cosine costs in [0, 2] the documented
    /// default is 0.05.
    pub epsilon: f64,
    pub max_iterations: usize,
    /// Largest tolerated L-inf violation of the marginal constraints.
    pub tolerance: f64,
    /// Use log-sum-exp updates on the potentials. Default; the plain scaling
    /// path underflows `exp(-C/eps)` once eps drops below roughly 0.02.
    pub log_domain: bool,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            max_iterations: 10_000,
            tolerance: 1e-6,
            log_domain: true,
        }
    }
}

impl SinkhornConfig {
    pub fn with_epsilon(epsilon: f64) -> Self {
        Self {
            epsilon,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("max_iterations must be >= 1".into()));
        }
        Ok(())
    }
}

/// A transport plan: nonnegative matrix whose row sums approximate `a` and
/// column sums approximate `b` within the solver tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    plan: Array2<f64>,
}

impl Coupling {
    pub fn from_plan(plan: Array2<f64>) -> Result<Self> {
        if plan.is_empty() {
            return Err(Error::Empty("coupling"));
        }
        if plan.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidArgument(
                "coupling entries must be finite and nonnegative".into(),
            ));
        }
        Ok(Self { plan })
    }

    /// The independent coupling `a b^T`, always feasible.
    pub fn independent(a: &WeightVector, b: &WeightVector) -> Self {
        let n = a.len();
        let m = b.len();
        let mut plan = Array2::zeros((n, m));
        for i in 0..n {
            for j in 0..m {
                plan[(i, j)] = a.values()[i] * b.values()[j];
            }
        }
        Self { plan }
    }

    pub fn plan(&self) -> &Array2<f64> {
        &self.plan
    }

    pub fn nrows(&self) -> usize {
        self.plan.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.plan.ncols()
    }
}

/// Output of [`sinkhorn_solve`].
#[derive(Debug, Clone)]
pub struct SinkhornSolution {
    pub plan: Coupling,
    /// Row dual potentials, length n. `P_ij = exp((f_i + g_j - C_ij)/eps)`.
    pub potentials_f: Array1<f64>,
    /// Column dual potentials, length m.
    pub potentials_g: Array1<f64>,
    /// `<C, P>`.
    pub transport_cost: f64,
    /// `<C, P> - eps * H(P)`, the quantity the solver actually minimises.
    pub reg_objective: f64,
    pub iterations_used: usize,
    pub converged: bool,
    pub marginal_error: f64,
}

/// Entropy with the `-1` convention: `H(P) = -sum P_ij (log P_ij - 1)`,
/// where zero entries contribute zero. Note `H([[1]]) = 1`, not 0.
pub fn entropy(plan: &Array2<f64>) -> Result<f64> {
    let mut h = 0.0;
    for &p in plan {
        if p < 0.0 || !p.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "entropy needs finite nonnegative entries, got {p}"
            )));
        }
        if p > 0.0 {
            h -= p * (p.ln() - 1.0);
        }
    }
    Ok(h)
}

/// L-inf distance of the plan's marginals from `(a, b)`.
pub fn check_marginals(plan: &Coupling, a: &WeightVector, b: &WeightVector) -> Result<f64> {
    if plan.nrows() != a.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: plan.nrows(),
        });
    }
    if plan.ncols() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: b.len(),
            got: plan.ncols(),
        });
    }
    Ok(marginal_error(plan.plan(), a.values(), b.values()))
}

fn marginal_error(plan: &Array2<f64>, a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    let mut err: f64 = 0.0;
    for i in 0..plan.nrows() {
        err = err.max((plan.row(i).sum() - a[i]).abs());
    }
    for j in 0..plan.ncols() {
        err = err.max((plan.column(j).sum() - b[j]).abs());
    }
    err
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Solve the entropic problem by alternating marginal scaling.
///
/// Returns a populated solution even when the iteration cap is hit
/// (`converged = false`); strictness is the caller's policy.
pub fn sinkhorn_solve(
    a: &WeightVector,
    b: &WeightVector,
    cost: &CostMatrix,
    cfg: &SinkhornConfig,
) -> Result<SinkhornSolution> {
    cfg.validate()?;
    let n = cost.nrows();
    let m = cost.ncols();
    if a.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: a.len(),
        });
    }
    if b.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: b.len(),
        });
    }

    let (f, g, iterations_used, converged) = if cfg.log_domain {
        solve_log_domain(a.values(), b.values(), cost.entries(), cfg)
    } else {
        solve_plain(a.values(), b.values(), cost.entries(), cfg)
    };

    let c = cost.entries();
    let eps = cfg.epsilon;
    let mut plan = Array2::zeros((n, m));
    for i in 0..n {
        for j in 0..m {
            plan[(i, j)] = ((f[i] + g[j] - c[(i, j)]) / eps).exp();
        }
    }
    let marginal_err = marginal_error(&plan, a.values(), b.values());
    let transport_cost = (&plan * c).sum();
    let h = entropy(&plan)?;
    let plan = Coupling::from_plan(plan)?;

    Ok(SinkhornSolution {
        plan,
        potentials_f: f,
        potentials_g: g,
        transport_cost,
        reg_objective: transport_cost - eps * h,
        iterations_used,
        converged,
        marginal_error: marginal_err,
    })
}

fn solve_log_domain(
    a: &Array1<f64>,
    b: &Array1<f64>,
    c: &Array2<f64>,
    cfg: &SinkhornConfig,
) -> (Array1<f64>, Array1<f64>, usize, bool) {
    let n = a.len();
    let m = b.len();
    let eps = cfg.epsilon;
    let ln_a: Vec<f64> = a.iter().map(|&x| x.ln()).collect();
    let ln_b: Vec<f64> = b.iter().map(|&x| x.ln()).collect();
    let mut f = Array1::zeros(n);
    let mut g = Array1::zeros(m);

    for iter in 1..=cfg.max_iterations {
        for i in 0..n {
            let lse = log_sum_exp((0..m).map(|j| (g[j] - c[(i, j)]) / eps));
            f[i] = eps * ln_a[i] - eps * lse;
        }
        for j in 0..m {
            let lse = log_sum_exp((0..n).map(|i| (f[i] - c[(i, j)]) / eps));
            g[j] = eps * ln_b[j] - eps * lse;
        }
        if marginal_error_from_potentials(&f, &g, c, a, b, eps) <= cfg.tolerance {
            return (f, g, iter, true);
        }
    }
    (f, g, cfg.max_iterations, false)
}

fn marginal_error_from_potentials(
    f: &Array1<f64>,
    g: &Array1<f64>,
    c: &Array2<f64>,
    a: &Array1<f64>,
    b: &Array1<f64>,
    eps: f64,
) -> f64 {
    let mut err: f64 = 0.0;
    for i in 0..a.len() {
        let row: f64 = (0..b.len())
            .map(|j| ((f[i] + g[j] - c[(i, j)]) / eps).exp())
            .sum();
        err = err.max((row - a[i]).abs());
    }
    for j in 0..b.len() {
        let col: f64 = (0..a.len())
            .map(|i| ((f[i] + g[j] - c[(i, j)]) / eps).exp())
            .sum();
        err = err.max((col - b[j]).abs());
    }
    err
}

fn solve_plain(
    a: &Array1<f64>,
    b: &Array1<f64>,
    c: &Array2<f64>,
    cfg: &SinkhornConfig,
) -> (Array1<f64>, Array1<f64>, usize, bool) {
    let n = a.len();
    let m = b.len();
    let eps = cfg.epsilon;
    let kernel = c.mapv(|x| (-x / eps).exp());
    let mut u = Array1::from_elem(n, 1.0);
    let mut v = Array1::from_elem(m, 1.0);

    for iter in 1..=cfg.max_iterations {
        for i in 0..n {
            let kv: f64 = (0..m).map(|j| kernel[(i, j)] * v[j]).sum();
            u[i] = if kv > 0.0 { a[i] / kv } else { 0.0 };
        }
        for j in 0..m {
            let ku: f64 = (0..n).map(|i| kernel[(i, j)] * u[i]).sum();
            v[j] = if ku > 0.0 { b[j] / ku } else { 0.0 };
        }
        let mut err: f64 = 0.0;
        for i in 0..n {
            let row: f64 = (0..m).map(|j| u[i] * kernel[(i, j)] * v[j]).sum();
            err = err.max((row - a[i]).abs());
        }
        for j in 0..m {
            let col: f64 = (0..n).map(|i| u[i] * kernel[(i, j)] * v[j]).sum();
            err = err.max((col - b[j]).abs());
        }
        if err <= cfg.tolerance {
            return (u.mapv(|x| eps * x.ln()), v.mapv(|x| eps * x.ln()), iter, true);
        }
    }
    (
        u.mapv(|x| eps * x.ln()),
        v.mapv(|x| eps * x.ln()),
        cfg.max_iterations,
        false,
    )
}

/// Exact Kantorovich optimum by exhaustive permutation enumeration.
///
/// Deliberately narrow: square instances up to 7x7 with uniform marginals,
/// where Birkhoff guarantees a permutation optimum. Returns the minimal cost
/// `(1/n) sum_i C[i, perm(i)]` and the corresponding plan.
pub fn lp_oracle(
    a: &WeightVector,
    b: &WeightVector,
    cost: &CostMatrix,
) -> Result<(f64, Coupling)> {
    let n = cost.nrows();
    if cost.ncols() != n {
        return Err(Error::OracleUnsupported(format!(
            "requires a square cost matrix, got {}x{}",
            n,
            cost.ncols()
        )));
    }
    if n > 7 {
        return Err(Error::OracleUnsupported(format!(
            "requires n <= 7, got {n}"
        )));
    }
    let uniform = 1.0 / n as f64;
    let is_uniform = |w: &WeightVector| {
        w.len() == n && w.values().iter().all(|&x| (x - uniform).abs() <= 1e-12)
    };
    if !is_uniform(a) || !is_uniform(b) {
        return Err(Error::OracleUnsupported(
            "requires uniform marginals".into(),
        ));
    }

    let c = cost.entries();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best_perm = perm.clone();
    let mut best_sum = perm_cost(c, &perm);
    // Heap's algorithm over all n! permutations.
    let mut stack = vec![0usize; n];
    let mut i = 1;
    while i < n {
        if stack[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(stack[i], i);
            }
            let s = perm_cost(c, &perm);
            if s < best_sum {
                best_sum = s;
                best_perm.copy_from_slice(&perm);
            }
            stack[i] += 1;
            i = 1;
        } else {
            stack[i] = 0;
            i += 1;
        }
    }

    let mut plan = Array2::zeros((n, n));
    for (i, &j) in best_perm.iter().enumerate() {
        plan[(i, j)] = uniform;
    }
    Ok((best_sum * uniform, Coupling { plan }))
}

fn perm_cost(c: &Array2<f64>, perm: &[usize]) -> f64 {
    perm.iter().enumerate().map(|(i, &j)| c[(i, j)]).sum()
}
