//! Analysis of a set of patch embeddings against the prompts: closest-prompt
//! assignment with per-prompt counts, the map phi onto the cost plane
//! (the m distances to the prompts), and the pushforward of loss gradients
//! onto that plane, which visualises how differently the two aggregation
//! modes treat individual patches.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::loss::{loss_gradients, AggregationMode};
use crate::measures::{build_cost_matrix, Embedding, Metric};
use crate::pipeline::PromptSet;
use crate::sinkhorn::Coupling;

/// Closest-prompt assignment for every patch.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentReport {
    /// `j*_i`: index of the prompt minimising the i-th distance row.
    pub assigned: Vec<usize>,
    /// Patches per prompt; sums to n.
    pub counts: Vec<usize>,
    /// Row i is `phi(u_i)`, the distances of patch i to every prompt.
    pub distance_rows: Array2<f64>,
}

/// Cost-plane positions and pushed-forward gradients, one row per patch.
#[derive(Debug, Clone)]
pub struct TangentReport {
    pub phis: Array2<f64>,
    pub pushforwards: Array2<f64>,
    pub assigned: Vec<usize>,
    pub metadata: TangentMetadata,
}

/// Which loss produced the gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentMetadata {
    pub mode: AggregationMode,
    /// The gradients are taken on the objective the optimizer minimises:
    /// the regularized objective in OT mode, the plain mean otherwise.
    pub objective: &'static str,
}

/// `phi(u) = [D(u, v_1), ..., D(u, v_m)]`.
pub fn phi(u: &Embedding, prompts: &PromptSet, metric: Metric) -> Result<Array1<f64>> {
    let mut out = Array1::zeros(prompts.len());
    for (j, v) in prompts.embeddings().iter().enumerate() {
        out[j] = metric.distance(u, v)?;
    }
    Ok(out)
}

/// Pushforward of an embedding-space tangent `g` through `phi`:
/// `w_j = <grad_u D(u, v_j), g>`.
pub fn pushforward(
    u: &Embedding,
    prompts: &PromptSet,
    metric: Metric,
    g: &Array1<f64>,
) -> Result<Array1<f64>> {
    if g.len() != u.dim() {
        return Err(Error::DimensionMismatch {
            expected: u.dim(),
            got: g.len(),
        });
    }
    let mut out = Array1::zeros(prompts.len());
    for (j, v) in prompts.embeddings().iter().enumerate() {
        out[j] = metric.grad_u(u, v)?.dot(g);
    }
    Ok(out)
}

/// Group patches by their closest prompt; ties break to the lowest index.
pub fn assign_patches(
    us: &[Embedding],
    prompts: &PromptSet,
    metric: Metric,
) -> Result<AssignmentReport> {
    let cost = build_cost_matrix(us, prompts.embeddings(), metric)?;
    let rows = cost.entries();
    let mut assigned = Vec::with_capacity(us.len());
    let mut counts = vec![0usize; prompts.len()];
    for i in 0..us.len() {
        let mut best = 0usize;
        for j in 1..prompts.len() {
            if rows[(i, j)] < rows[(i, best)] {
                best = j;
            }
        }
        counts[best] += 1;
        assigned.push(best);
    }
    Ok(AssignmentReport {
        assigned,
        counts,
        distance_rows: rows.clone(),
    })
}

/// Smallest per-prompt count, and the Shannon entropy of the count
/// distribution normalized by log m (1 = perfectly balanced). A single
/// prompt is balanced by definition.
pub fn balance_metrics(report: &AssignmentReport) -> (usize, f64) {
    let n: usize = report.counts.iter().sum();
    let m = report.counts.len();
    let min_count = report.counts.iter().copied().min().unwrap_or(0);
    if m < 2 {
        return (min_count, 1.0);
    }
    let mut h = 0.0;
    for &c in &report.counts {
        if c > 0 {
            let p = c as f64 / n as f64;
            h -= p * p.ln();
        }
    }
    (min_count, h / (m as f64).ln())
}

/// Positions and pushforwards for every patch under the given mode.
pub fn tangent_report(
    us: &[Embedding],
    prompts: &PromptSet,
    metric: Metric,
    mode: &AggregationMode,
) -> Result<TangentReport> {
    let grads = loss_gradients(mode, us, prompts.embeddings(), metric)?;
    let assignment = assign_patches(us, prompts, metric)?;
    let m = prompts.len();
    let mut phis = Array2::zeros((us.len(), m));
    let mut pushforwards = Array2::zeros((us.len(), m));
    for (i, u) in us.iter().enumerate() {
        let w = pushforward(u, prompts, metric, &grads[i]).map_err(|e| Error::AtPatch {
            index: i,
            source: Box::new(e),
        })?;
        for j in 0..m {
            phis[(i, j)] = assignment.distance_rows[(i, j)];
            pushforwards[(i, j)] = w[j];
        }
    }
    Ok(TangentReport {
        phis,
        pushforwards,
        assigned: assignment.assigned,
        metadata: TangentMetadata {
            mode: *mode,
            objective: match mode {
                AggregationMode::Mean => "mean",
                AggregationMode::OptimalTransport(_) => "regularized",
            },
        },
    })
}

/// Each plan row rescaled to sum 1: the per-patch mix of prompt pulls.
pub fn plan_row_shares(coupling: &Coupling) -> Array2<f64> {
    let p = coupling.plan();
    let mut shares = p.clone();
    for mut row in shares.rows_mut() {
        let s = row.sum();
        if s > 0.0 {
            row.mapv_inplace(|x| x / s);
        }
    }
    shares
}

/// Standard deviation across patches of one column of the row shares; zero
/// exactly when every patch is pulled with the same mix.
pub fn row_share_stddev(coupling: &Coupling, col: usize) -> f64 {
    let shares = plan_row_shares(coupling);
    let column = shares.column(col);
    let n = column.len() as f64;
    let mean = column.sum() / n;
    (column.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::evaluate;
    use crate::sinkhorn::SinkhornConfig;
    use crate::testutil::random_unit;

    fn emb(values: &[f64]) -> Embedding {
        Embedding::new(values.to_vec()).unwrap()
    }

    fn axes_prompts() -> PromptSet {
        PromptSet::new(
            vec!["P0".into(), "P1".into()],
            vec![emb(&[1.0, 0.0]), emb(&[0.0, 1.0])],
        )
        .unwrap()
    }

    #[test]
    fn phi_examples() {
        let prompts = axes_prompts();
        let at_first = phi(&emb(&[1.0, 0.0]), &prompts, Metric::Cosine).unwrap();
        assert_eq!(at_first[0], 0.0);
        assert_eq!(at_first[1], 1.0);

        let mut rng = crate::rng::stream(41, "diag-phi");
        let u = random_unit(&mut rng, 2);
        let coords = phi(&u, &prompts, Metric::Geodesic).unwrap();
        for (j, v) in prompts.embeddings().iter().enumerate() {
            assert_eq!(coords[j], Metric::Geodesic.distance(&u, v).unwrap());
        }
    }

    #[test]
    fn pushforward_zero_and_closed_form() {
        let prompts = axes_prompts();
        let u = emb(&[1.0, 0.0]);
        let zero = pushforward(&u, &prompts, Metric::Cosine, &Array1::zeros(2)).unwrap();
        assert!(zero.iter().all(|&w| w == 0.0));

        // Single prompt P1, mean gradient with n = m = 1 is the distance
        // gradient itself, so w = |grad D|^2 = 1 at u = (1,0), v = (0,1).
        let single = PromptSet::new(vec!["P".into()], vec![emb(&[0.0, 1.0])]).unwrap();
        let g = loss_gradients(
            &AggregationMode::Mean,
            std::slice::from_ref(&u),
            single.embeddings(),
            Metric::Cosine,
        )
        .unwrap();
        assert_eq!(g[0][0], 0.0);
        assert_eq!(g[0][1], -1.0);
        let w = pushforward(&u, &single, Metric::Cosine, &g[0]).unwrap();
        assert!((w[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn pushforward_is_linear() {
        let mut rng = crate::rng::stream(42, "diag-linear");
        let prompts = PromptSet::random(3, 5, 42).unwrap();
        for _ in 0..10 {
            let u = random_unit(&mut rng, 5);
            let g = Array1::from_shape_fn(5, |_| crate::rng::standard_normal(&mut rng));
            let w = pushforward(&u, &prompts, Metric::Cosine, &g).unwrap();
            let scaled = pushforward(&u, &prompts, Metric::Cosine, &(&g * 2.5)).unwrap();
            for j in 0..3 {
                assert!((scaled[j] - 2.5 * w[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn self_assignment_is_diagonal() {
        let prompts = PromptSet::random(4, 6, 43).unwrap();
        let report =
            assign_patches(prompts.embeddings(), &prompts, Metric::Cosine).unwrap();
        assert_eq!(report.assigned, vec![0, 1, 2, 3]);
        assert_eq!(report.counts, vec![1, 1, 1, 1]);
    }

    #[test]
    fn hand_computed_assignment() {
        let prompts = axes_prompts();
        let us = vec![
            emb(&[1.0, 0.0]),
            Embedding::new(vec![0.9, 0.1]).unwrap().normalized().unwrap(),
            emb(&[0.0, 1.0]),
        ];
        let report = assign_patches(&us, &prompts, Metric::Cosine).unwrap();
        assert_eq!(report.assigned, vec![0, 0, 1]);
        assert_eq!(report.counts, vec![2, 1]);
    }

    #[test]
    fn ties_break_to_lowest_index() {
        let prompts = axes_prompts();
        let tied = Embedding::new(vec![1.0, 1.0]).unwrap().normalized().unwrap();
        let report = assign_patches(&[tied], &prompts, Metric::Cosine).unwrap();
        assert_eq!(report.assigned, vec![0]);
    }

    #[test]
    fn assignment_rows_equal_cost_matrix_bitwise() {
        let mut rng = crate::rng::stream(44, "diag-rows");
        let prompts = PromptSet::random(3, 4, 44).unwrap();
        let us: Vec<_> = (0..5).map(|_| random_unit(&mut rng, 4)).collect();
        let report = assign_patches(&us, &prompts, Metric::Cosine).unwrap();
        let cost = build_cost_matrix(&us, prompts.embeddings(), Metric::Cosine).unwrap();
        assert_eq!(report.distance_rows, *cost.entries());
    }

    #[test]
    fn balance_metric_examples() {
        let report = |counts: Vec<usize>| AssignmentReport {
            assigned: vec![],
            counts,
            distance_rows: Array2::zeros((0, 0)),
        };
        assert_eq!(balance_metrics(&report(vec![32, 32])), (32, 1.0));
        let (min, h) = balance_metrics(&report(vec![64, 0]));
        assert_eq!(min, 0);
        assert_eq!(h, 0.0);

        // The 36/28 split: entropy of (36/64, 28/64) over log 2.
        let (min, h) = balance_metrics(&report(vec![36, 28]));
        assert_eq!(min, 28);
        let p: f64 = 36.0 / 64.0;
        let expect = -(p * p.ln() + (1.0 - p) * (1.0 - p).ln()) / 2.0f64.ln();
        assert!((h - expect).abs() < 1e-12);
        assert!((h - 0.9887).abs() < 1e-4);
    }

    #[test]
    fn balance_pigeonhole_bounds() {
        let mut rng = crate::rng::stream(45, "diag-pigeon");
        let prompts = PromptSet::random(3, 4, 45).unwrap();
        let us: Vec<_> = (0..12).map(|_| random_unit(&mut rng, 4)).collect();
        let report = assign_patches(&us, &prompts, Metric::Cosine).unwrap();
        let (min, _) = balance_metrics(&report);
        let max = *report.counts.iter().max().unwrap();
        assert!(min as f64 <= 12.0 / 3.0);
        assert!(max as f64 >= 12.0 / 3.0);
    }

    #[test]
    fn single_patch_reports_coincide_across_modes() {
        let mut rng = crate::rng::stream(46, "diag-single");
        let prompts = PromptSet::random(2, 4, 46).unwrap();
        let u = vec![random_unit(&mut rng, 4)];
        let mean = tangent_report(&u, &prompts, Metric::Cosine, &AggregationMode::Mean)
            .unwrap();
        let ot = tangent_report(
            &u,
            &prompts,
            Metric::Cosine,
            &AggregationMode::OptimalTransport(SinkhornConfig::with_epsilon(0.05)),
        )
        .unwrap();
        for j in 0..2 {
            assert_eq!(mean.phis[(0, j)], ot.phis[(0, j)]);
            assert!((mean.pushforwards[(0, j)] - ot.pushforwards[(0, j)]).abs() < 1e-9);
        }
    }

    #[test]
    fn fan_out_of_plan_rows_ot_vs_mean() {
        // Two antipodal prompts with patches spread between them: OT mixes
        // each patch differently, the mean mixes every patch identically.
        let prompts = PromptSet::new(
            vec!["P0".into(), "P1".into()],
            vec![emb(&[1.0, 0.0]), emb(&[-1.0, 0.0])],
        )
        .unwrap();
        let us: Vec<Embedding> = (0..8)
            .map(|k| {
                let t = (k as f64 + 0.5) / 8.0 * std::f64::consts::PI;
                emb(&[t.cos(), t.sin()])
            })
            .collect();
        let ot = evaluate(
            &AggregationMode::OptimalTransport(SinkhornConfig::with_epsilon(0.05)),
            &us,
            prompts.embeddings(),
            Metric::Cosine,
            true,
        )
        .unwrap();
        let mean = evaluate(
            &AggregationMode::Mean,
            &us,
            prompts.embeddings(),
            Metric::Cosine,
            true,
        )
        .unwrap();
        assert!(row_share_stddev(&ot.coupling, 0) > 0.0);
        assert_eq!(row_share_stddev(&mean.coupling, 0), 0.0);
    }
}
