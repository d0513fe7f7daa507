//! Interactive browser demo. Three operations are exported to JavaScript:
//! an entropic-plan explorer, the latent descent loop, and the OT-vs-mean
//! tangent fan-out comparison. Everything is seeded and runs in a few
//! hundred milliseconds at demo scale.
//!
//! The `*_impl` functions carry the logic and compile on any target; the
//! `#[wasm_bindgen]` wrappers only translate errors for JavaScript.

use wasm_bindgen::prelude::*;

use ndarray::Array2;
use otpatch::diagnostics::tangent_report;
use otpatch::error::Error;
use otpatch::loss::AggregationMode;
use otpatch::measures::{build_cost_matrix, uniform_weights, Embedding, Metric};
use otpatch::pipeline::{
    extract_patch, LatentState, OptimizerConfig, PatchSampler, Pipeline, PromptSet, ToyEncoder,
    ToyGenerator,
};
use otpatch::plot;
use otpatch::rng;
use otpatch::sinkhorn::{sinkhorn_solve, SinkhornConfig};

const IMAGE_SIDE: usize = 24;
const LATENT_DIM: usize = 12;
const EMBED_DIM: usize = 24;
const PATCH_RES: usize = 8;
const N_PATCHES: usize = 24;

fn js_err(e: Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

fn demo_pipeline(seed: u64) -> Result<Pipeline, Error> {
    let generator = ToyGenerator::new(IMAGE_SIDE, IMAGE_SIDE, LATENT_DIM, seed)?;
    let sampler = PatchSampler {
        size_min: 6,
        size_max: 18,
        out_res: PATCH_RES,
    };
    let encoder = ToyEncoder::new(PATCH_RES, 2, EMBED_DIM, seed)?;
    let prompts =
        PromptSet::aligned_antipodal(&generator, &sampler, &encoder, N_PATCHES, seed)?;
    Ok(Pipeline {
        generator,
        sampler,
        encoder,
        prompts,
        metric: Metric::Cosine,
    })
}

fn mode_for(ot: bool, epsilon: f64) -> AggregationMode {
    if ot {
        AggregationMode::OptimalTransport(SinkhornConfig::with_epsilon(epsilon))
    } else {
        AggregationMode::Mean
    }
}

/// Entropic plan explorer: a seeded random patch/prompt instance with the
/// plan rendered as a heatmap.
#[wasm_bindgen]
pub fn plan_heatmap_svg(n: u32, m: u32, epsilon: f64, seed: u32) -> Result<String, JsValue> {
    plan_heatmap_impl(n, m, epsilon, seed).map_err(js_err)
}

fn plan_heatmap_impl(n: u32, m: u32, epsilon: f64, seed: u32) -> Result<String, Error> {
    let (n, m) = (n as usize, m as usize);
    if !(1..=24).contains(&n) || !(1..=8).contains(&m) {
        return Err(Error::InvalidArgument(
            "n must be in 1..=24 and m in 1..=8".into(),
        ));
    }
    let mut r = rng::stream(u64::from(seed), "demo-plan-instance");
    let us: Vec<Embedding> = (0..n)
        .map(|_| random_unit(&mut r, EMBED_DIM))
        .collect::<Result<_, _>>()?;
    let vs: Vec<Embedding> = (0..m)
        .map(|_| random_unit(&mut r, EMBED_DIM))
        .collect::<Result<_, _>>()?;
    let cost = build_cost_matrix(&us, &vs, Metric::Cosine)?;
    let a = uniform_weights(n)?;
    let b = uniform_weights(m)?;
    let cfg = SinkhornConfig {
        epsilon,
        max_iterations: 500_000,
        ..Default::default()
    };
    cfg.validate()?;
    let sol = sinkhorn_solve(&a, &b, &cost, &cfg)?;
    Ok(heatmap_svg(
        sol.plan.plan(),
        &format!(
            "epsilon {epsilon}  transport cost {:.5}  iterations {}  marginal error {:.2e}{}",
            sol.transport_cost,
            sol.iterations_used,
            sol.marginal_error,
            if sol.converged { "" } else { "  (not converged)" },
        ),
    ))
}

/// One descent run at demo scale: final image as RGBA bytes plus
/// loss-curve and tangent SVGs.
#[wasm_bindgen]
pub struct OptimizeOutcome {
    image_rgba: Vec<u8>,
    side: u32,
    loss_svg: String,
    tangent_svg: String,
    summary: String,
}

#[wasm_bindgen]
impl OptimizeOutcome {
    #[wasm_bindgen(getter)]
    pub fn image_rgba(&self) -> Vec<u8> {
        self.image_rgba.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn side(&self) -> u32 {
        self.side
    }

    #[wasm_bindgen(getter)]
    pub fn loss_svg(&self) -> String {
        self.loss_svg.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn tangent_svg(&self) -> String {
        self.tangent_svg.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn summary(&self) -> String {
        self.summary.clone()
    }
}

#[wasm_bindgen]
pub fn run_optimize(
    seed: u32,
    iterations: u32,
    ot: bool,
    learning_rate: f64,
    epsilon: f64,
) -> Result<OptimizeOutcome, JsValue> {
    run_optimize_impl(seed, iterations, ot, learning_rate, epsilon).map_err(js_err)
}

fn run_optimize_impl(
    seed: u32,
    iterations: u32,
    ot: bool,
    learning_rate: f64,
    epsilon: f64,
) -> Result<OptimizeOutcome, Error> {
    if iterations == 0 || iterations > 2000 {
        return Err(Error::InvalidArgument(
            "iterations must be in 1..=2000".into(),
        ));
    }
    let seed = u64::from(seed);
    let pipeline = demo_pipeline(seed)?;
    let cfg = OptimizerConfig {
        learning_rate,
        iterations: iterations as usize,
        n_patches: N_PATCHES,
        mode: mode_for(ot, epsilon),
        seed,
        resample_each_iteration: true,
    };
    let z0 = LatentState::random(LATENT_DIM, seed)?;
    let (z_final, record) = pipeline.optimize(&cfg, &z0, false)?;

    let image = pipeline.generator.generate(&z_final)?;
    let mut rgba = Vec::with_capacity(IMAGE_SIDE * IMAGE_SIDE * 4);
    for y in 0..IMAGE_SIDE {
        for x in 0..IMAGE_SIDE {
            for c in 0..3 {
                let v = image.pixels()[(y, x, c)];
                rgba.push(((v + 1.0) / 2.0 * 255.0).round().clamp(0.0, 255.0) as u8);
            }
            rgba.push(255);
        }
    }

    let losses: Vec<f64> = record.rows.iter().map(|r| r.loss).collect();
    let costs: Vec<f64> = record.rows.iter().map(|r| r.transport_cost).collect();
    let loss_svg = plot::loss_curves_svg(&[
        ("objective", &losses[..]),
        ("transport cost", &costs[..]),
    ])?;

    let tangent_svg = tangent_svg_at(&pipeline, &z_final, &cfg.mode, seed)?;

    let last = record.rows.last().expect("at least one row");
    let summary = format!(
        "{} mode, {} iterations: objective {:.4}, transport cost {:.4}, final counts {:?}",
        cfg.mode.name(),
        record.rows.len(),
        last.loss,
        last.transport_cost,
        last.counts,
    );
    Ok(OptimizeOutcome {
        image_rgba: rgba,
        side: IMAGE_SIDE as u32,
        loss_svg,
        tangent_svg,
        summary,
    })
}

/// The fan-out contrast: run both modes from the same seed and show each
/// final state's tangents on the cost plane, OT left, mean right.
#[wasm_bindgen]
pub fn fan_out_html(
    seed: u32,
    iterations: u32,
    learning_rate: f64,
    epsilon: f64,
) -> Result<String, JsValue> {
    fan_out_impl(seed, iterations, learning_rate, epsilon).map_err(js_err)
}

fn fan_out_impl(
    seed: u32,
    iterations: u32,
    learning_rate: f64,
    epsilon: f64,
) -> Result<String, Error> {
    let mut html = String::from("<div class=\"pair\">");
    for ot in [true, false] {
        let outcome = run_optimize_impl(seed, iterations, ot, learning_rate, epsilon)?;
        html.push_str("<figure><figcaption>");
        html.push_str(if ot { "optimal transport" } else { "mean" });
        html.push_str("</figcaption>");
        html.push_str(&outcome.tangent_svg);
        html.push_str("</figure>");
    }
    html.push_str("</div>");
    Ok(html)
}

fn tangent_svg_at(
    pipeline: &Pipeline,
    z: &LatentState,
    mode: &AggregationMode,
    seed: u64,
) -> Result<String, Error> {
    let mut r = rng::stream(seed, "demo-tangent-eval");
    let geometries = pipeline
        .sampler
        .draw(IMAGE_SIDE, IMAGE_SIDE, N_PATCHES, &mut r)?;
    let image = pipeline.generator.generate(z)?;
    let embeds: Vec<Embedding> = geometries
        .iter()
        .map(|g| pipeline.encoder.encode(&extract_patch(&image, g)?))
        .collect::<Result<_, _>>()?;
    let report = tangent_report(&embeds, &pipeline.prompts, pipeline.metric, mode)?;
    plot::tangent_pair_svg(&report, pipeline.prompts.labels(), 1.0, 0, 1)
}

fn random_unit(r: &mut rng::ChaCha8Rng, d: usize) -> Result<Embedding, Error> {
    let e = Embedding::new((0..d).map(|_| rng::standard_normal(r)).collect())?;
    e.normalized()
}

fn heatmap_svg(plan: &Array2<f64>, caption: &str) -> String {
    let (n, m) = (plan.nrows(), plan.ncols());
    let cell = 28.0_f64;
    let margin = 56.0_f64;
    let w = margin * 2.0 + cell * m as f64;
    let h = margin * 2.0 + cell * n as f64;
    let peak = plan.iter().cloned().fold(f64::MIN_POSITIVE, f64::max);
    let mut svg = format!(
        "<svg version=\"1.1\" width=\"{w}\" height=\"{h}\" \
         xmlns=\"http://www.w3.org/2000/svg\">\n\
         <rect x=\"0\" y=\"0\" width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n"
    );
    for i in 0..n {
        for j in 0..m {
            let t = (plan[(i, j)] / peak).clamp(0.0, 1.0);
            let shade = (255.0 - t * 205.0).round() as u8;
            svg.push_str(&format!(
                "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{cell}\" height=\"{cell}\" \
                 fill=\"rgb({shade},{g},255)\" stroke=\"#ccd\"><title>P[{i},{j}] = {v:.5}</title></rect>\n",
                x = margin + j as f64 * cell,
                y = margin + i as f64 * cell,
                g = shade,
                v = plan[(i, j)],
            ));
        }
    }
    for j in 0..m {
        svg.push_str(&format!(
            "<text x=\"{x:.1}\" y=\"{y:.1}\" font-size=\"11\" text-anchor=\"middle\" \
             font-family=\"monospace\">v{j}</text>\n",
            x = margin + (j as f64 + 0.5) * cell,
            y = margin - 8.0,
        ));
    }
    for i in 0..n {
        svg.push_str(&format!(
            "<text x=\"{x:.1}\" y=\"{y:.1}\" font-size=\"11\" text-anchor=\"end\" \
             font-family=\"monospace\">u{i}</text>\n",
            x = margin - 8.0,
            y = margin + (i as f64 + 0.5) * cell + 4.0,
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{x:.1}\" y=\"{y:.1}\" font-size=\"12\" font-family=\"monospace\">{caption}</text>\n",
        x = margin,
        y = h - margin + 24.0,
    ));
    svg.push_str("</svg>\n");
    svg
}
