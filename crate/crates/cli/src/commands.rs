//! The four subcommands. Each writes its artifacts under the output
//! directory plus a manifest that reproduces the run.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use otpatch::diagnostics::{assign_patches, balance_metrics, row_share_stddev, tangent_report};
use otpatch::error::{Error, Result};
use otpatch::io;
use otpatch::loss::evaluate;
use otpatch::measures::{uniform_weights, Embedding};
use otpatch::pipeline::{
    extract_patch, LatentState, OptimizerConfig, Pipeline, PromptSet, ToyEncoder, ToyGenerator,
};
use otpatch::plot;
use otpatch::rng;
use otpatch::sinkhorn::sinkhorn_solve;

use crate::config::{ModeName, PromptSource, RunConfig};

/// Solve one entropic problem from a cost CSV; uniform marginals.
pub fn cmd_solve(cost_csv: &Path, cfg: &RunConfig, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    let cost = io::read_cost_csv(cost_csv)?;
    let a = uniform_weights(cost.nrows())?;
    let b = uniform_weights(cost.ncols())?;
    let sol = sinkhorn_solve(&a, &b, &cost, &cfg.sinkhorn_config())?;
    if cfg.strict && !sol.converged {
        return Err(Error::NotConverged {
            iterations: sol.iterations_used,
            marginal_error: sol.marginal_error,
        });
    }
    io::write_matrix_csv(&out.join("plan.csv"), sol.plan.plan())?;
    let summary = format!(
        "{{\"epsilon\": {}, \"iterations\": {}, \"transport_cost\": {}, \
         \"reg_objective\": {}, \"marginal_error\": {}, \"converged\": {}}}",
        cfg.epsilon,
        sol.iterations_used,
        sol.transport_cost,
        sol.reg_objective,
        sol.marginal_error,
        sol.converged,
    );
    fs::write(out.join("summary.json"), format!("{summary}\n"))?;
    fs::write(out.join("manifest.txt"), cfg.manifest())?;
    println!("{summary}");
    Ok(())
}

/// Run the descent loop; write the final image, trajectory, final-state
/// assignment and embeddings, and the manifest.
pub fn cmd_optimize(cfg: &RunConfig, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    let pipeline = build_pipeline(cfg)?;
    let z0 = LatentState::random(cfg.latent_dim, cfg.seed)?;
    let (z_final, record) = pipeline.optimize(&cfg.optimizer_config(), &z0, cfg.strict)?;

    let image = pipeline.generator.generate(&z_final)?;
    io::write_ppm(&out.join("final.ppm"), &image)?;
    fs::write(out.join("trajectory.csv"), io::trajectory_to_csv(&record))?;

    let embeddings = final_state_embeddings(&pipeline, &z_final, cfg)?;
    let assignment = assign_patches(&embeddings, &pipeline.prompts, pipeline.metric)?;
    io::write_embeddings_csv(&out.join("embeddings.csv"), &embeddings)?;
    fs::write(out.join("assignment.csv"), io::assignment_to_csv(&assignment))?;
    fs::write(out.join("manifest.txt"), cfg.manifest())?;

    let last = record.rows.last().expect("at least one iteration");
    println!(
        "optimize: {} iterations, final loss {}, counts {:?}",
        record.rows.len(),
        last.loss,
        assignment.counts
    );
    Ok(())
}

/// Tangent report for a set of embeddings (from CSV, or the final state of
/// the configured run) against the configured prompts.
pub fn cmd_diagnose(cfg: &RunConfig, embeddings_csv: Option<&Path>, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    let pipeline = build_pipeline(cfg)?;
    let embeddings = match embeddings_csv {
        Some(path) => {
            let loaded = io::read_embeddings_csv(path)?;
            for e in &loaded {
                if e.dim() != pipeline.prompts.dim() {
                    return Err(Error::DimensionMismatch {
                        expected: pipeline.prompts.dim(),
                        got: e.dim(),
                    });
                }
            }
            loaded
        }
        None => {
            let z0 = LatentState::random(cfg.latent_dim, cfg.seed)?;
            let (z_final, _) = pipeline.optimize(&cfg.optimizer_config(), &z0, cfg.strict)?;
            final_state_embeddings(&pipeline, &z_final, cfg)?
        }
    };

    let report = tangent_report(
        &embeddings,
        &pipeline.prompts,
        pipeline.metric,
        &cfg.aggregation_mode(),
    )?;
    fs::write(out.join("tangents.csv"), io::tangent_to_csv(&report))?;
    if pipeline.prompts.len() >= 2 {
        for (tag, svg) in
            plot::tangent_svgs(&report, pipeline.prompts.labels(), cfg.arrow_scale)?
        {
            fs::write(out.join(format!("tangents_{tag}.svg")), svg)?;
        }
    } else {
        println!("cost-plane plots need at least two prompts; wrote tangents.csv only");
    }
    fs::write(out.join("manifest.txt"), cfg.manifest())?;
    Ok(())
}

/// Run both aggregation modes from identical seeds and compare balance.
pub fn cmd_compare(cfg: &RunConfig, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    let pipeline = build_pipeline(cfg)?;
    let z0 = LatentState::random(cfg.latent_dim, cfg.seed)?;
    let base = cfg.optimizer_config();

    let mut balance = String::from("mode,min_count,normalized_entropy,share_stddev_0\n");
    for mode_name in [ModeName::Ot, ModeName::Mean] {
        let mode_cfg = RunConfig {
            mode: mode_name,
            ..cfg.clone()
        };
        let opt = OptimizerConfig {
            mode: mode_cfg.aggregation_mode(),
            ..base
        };
        let (z_final, record) = pipeline.optimize(&opt, &z0, cfg.strict)?;
        let prefix = match mode_name {
            ModeName::Ot => "ot",
            ModeName::Mean => "mean",
        };
        fs::write(
            out.join(format!("{prefix}_trajectory.csv")),
            io::trajectory_to_csv(&record),
        )?;

        let embeddings = final_state_embeddings(&pipeline, &z_final, cfg)?;
        let assignment = assign_patches(&embeddings, &pipeline.prompts, pipeline.metric)?;
        let (min_count, entropy) = balance_metrics(&assignment);
        let final_report = evaluate(
            &opt.mode,
            &embeddings,
            pipeline.prompts.embeddings(),
            pipeline.metric,
            cfg.strict,
        )?;
        let stddev = row_share_stddev(&final_report.coupling, 0);
        let _ = writeln!(balance, "{prefix},{min_count},{entropy},{stddev}");
    }
    fs::write(out.join("balance.csv"), &balance)?;
    fs::write(out.join("manifest.txt"), cfg.manifest())?;
    print!("{balance}");
    Ok(())
}

/// Assemble generator, sampler, encoder and prompts from the configuration.
pub fn build_pipeline(cfg: &RunConfig) -> Result<Pipeline> {
    let generator = ToyGenerator::new(
        cfg.image_height,
        cfg.image_width,
        cfg.latent_dim,
        cfg.seed,
    )?;
    let encoder = ToyEncoder::new(
        cfg.patch_resolution,
        cfg.pool_factor,
        cfg.embed_dim,
        cfg.seed,
    )?;
    let prompts = match cfg.prompt_source {
        PromptSource::Antipodal => PromptSet::antipodal(cfg.embed_dim, cfg.seed)?,
        PromptSource::Aligned => PromptSet::aligned_antipodal(
            &generator,
            &cfg.sampler(),
            &encoder,
            cfg.n_patches,
            cfg.seed,
        )?,
        PromptSource::Random => PromptSet::random(cfg.n_prompts, cfg.embed_dim, cfg.seed)?,
        PromptSource::Csv => {
            let path = cfg
                .prompts_csv
                .as_ref()
                .expect("validated: csv source has a path");
            let raw = io::read_embeddings_csv(path)?;
            let set = PromptSet::from_raw(None, raw)?;
            if set.dim() != cfg.embed_dim {
                return Err(Error::InvalidConfig(format!(
                    "prompts in {} have dimension {}, embed_dim is {}",
                    path.display(),
                    set.dim(),
                    cfg.embed_dim
                )));
            }
            if set.len() != cfg.n_prompts {
                return Err(Error::InvalidConfig(format!(
                    "{} holds {} prompts, n_prompts is {}",
                    path.display(),
                    set.len(),
                    cfg.n_prompts
                )));
            }
            set
        }
    };
    let pipeline = Pipeline {
        generator,
        sampler: cfg.sampler(),
        encoder,
        prompts,
        metric: cfg.metric,
    };
    pipeline.validate()?;
    Ok(pipeline)
}

/// Re-evaluate the final latent on a fresh geometry draw (the `final-eval`
/// stream, shared across modes so comparisons see identical patches).
pub fn final_state_embeddings(
    pipeline: &Pipeline,
    z: &LatentState,
    cfg: &RunConfig,
) -> Result<Vec<Embedding>> {
    let mut rng = rng::stream(cfg.seed, "final-eval");
    let geometries = pipeline.sampler.draw(
        pipeline.generator.height(),
        pipeline.generator.width(),
        cfg.n_patches,
        &mut rng,
    )?;
    let image = pipeline.generator.generate(z)?;
    geometries
        .iter()
        .map(|geo| pipeline.encoder.encode(&extract_patch(&image, geo)?))
        .collect()
}
