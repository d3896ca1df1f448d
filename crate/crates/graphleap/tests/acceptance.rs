//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use graphleap::pipeline::run_graphleap_overlapped;
use graphleap_core::config::{
    preset, BlockOptions, HardwareParams, ModelDesc, ModelSpec, Schedule, Structure, PRESET_NAMES,
};
use graphleap_core::fue::{ffn_block, fused_update, gelu_exact, gelu_pwl, grapher_block, mrconv_aggregate};
use graphleap_core::gce::{build_graph, pairwise_distances_tiled, DistanceTilePlan};
use graphleap_core::perf::{
    block_costs, closed_form_total, ffn_cycles, gce_cycles, grapher_cycles, simulate, total_latency, BlockCost,
    LayerCost,
};
use graphleap_core::schedule::{run_graphleap_sequential, run_standard, Engine};
use graphleap_core::stages::ImageTensor;
use graphleap_core::tensor::{GraphTopology, Matrix};
use graphleap_core::weights::{init_weights, BlockWeights, ModelWeights, UniformStream};

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Full-sort oracle over its own untiled distance evaluation.
fn knn_oracle(x: &Matrix, k: usize, d: usize) -> Vec<u32> {
    let n = x.rows();
    let mut out = Vec::with_capacity(n * k);
    for i in 0..n {
        let mut c: Vec<(f32, bool, usize)> = (0..n)
            .map(|j| {
                let dist = x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum::<f32>();
                (dist, j != i, j)
            })
            .collect();
        c.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        out.extend(c[..k * d].iter().step_by(d).map(|t| t.2 as u32));
    }
    out
}

/// Features on a 1/64 grid in [-1, 1]: every squared distance for D <= 64 is
/// exact in f32, so tiled and untiled sums agree to the bit and the oracle
/// comparison can demand identical order, ties included.
fn grid_features(rng: &mut UniformStream, n: usize, d: usize) -> Matrix {
    Matrix::from_fn(n, d, |_, _| (rng.below(129) as f32 - 64.0) / 64.0)
}

fn knn_oracle_equivalence() -> Outcome {
    let started = Instant::now();
    let mut rng = UniformStream::new(1, 0);
    for case in 0..200 {
        let n = 1 + rng.below(128);
        let dim = 1 + rng.below(64);
        let k = 1 + rng.below(16.min(n));
        let d = 1 + rng.below(4.min(n / k));
        let x = grid_features(&mut rng, n, dim);
        let g = build_graph(&x, k, d, &DistanceTilePlan::for_features(&x, 32, 32).unwrap()).map_err(|e| e.to_string())?;
        if g.indices() != knn_oracle(&x, k, d).as_slice() {
            return Err(format!("case {case}: N={n} D={dim} k={k} d={d} differs"));
        }
    }
    let secs = started.elapsed().as_secs_f64();
    ensure(secs < 10.0, format!("200 instances in {secs:.2} s"))
}

fn tiling_transparency() -> Outcome {
    let mut rng = UniformStream::new(2, 0);
    let mut worst = 0f32;
    for _ in 0..50 {
        let n = 2 + rng.below(40);
        let dim = 1 + rng.below(96);
        let x = rng.matrix(n, dim, 4.0);
        let reference = pairwise_distances_tiled(&x, &DistanceTilePlan::for_features(&x, 32, dim).unwrap()).unwrap();
        for p_d in [1, 7, 32, dim] {
            let t = pairwise_distances_tiled(&x, &DistanceTilePlan::for_features(&x, 32, p_d).unwrap()).unwrap();
            for (a, b) in t.data().iter().zip(reference.data()) {
                let scale = a.abs().max(b.abs());
                if scale > 0.0 {
                    worst = worst.max((a - b).abs() / scale);
                }
            }
        }
    }
    ensure(worst <= 1e-5, format!("max relative deviation {worst:.2e} over p_D in {{1, 7, 32, D}}"))
}

fn fused_update_identity() -> Outcome {
    let mut rng = UniformStream::new(3, 0);
    let mut worst = 0f32;
    for _ in 0..100 {
        let heads = 1 + rng.below(16);
        let dh = 1 + rng.below(12);
        let dim = heads * dh;
        let n = 1 + rng.below(24);
        let x = rng.matrix(n, dim, 1.0);
        let m = rng.unit_matrix(n, dim);
        let wx: Vec<Matrix> = (0..heads).map(|_| rng.matrix(dh, dh, 1.0)).collect();
        let wm: Vec<Matrix> = (0..heads).map(|_| rng.matrix(dh, dh, 1.0)).collect();
        let fused = fused_update(&x, &m, &wx, &wm).map_err(|e| e.to_string())?;
        let (bx, bm) = (BlockWeights::block_diagonal(&wx), BlockWeights::block_diagonal(&wm));
        let cat = Matrix::from_fn(n, 2 * dim, |r, c| if c < dim { x.get(r, c) } else { m.get(r, c - dim) });
        let w_agg = Matrix::from_fn(2 * dim, dim, |r, c| if r < dim { bx.get(r, c) } else { bm.get(r - dim, c) });
        let reference = cat.matmul(&w_agg).unwrap();
        let scale = reference.data().iter().fold(0f32, |a, v| a.max(v.abs())).max(f32::MIN_POSITIVE);
        let err = fused.data().iter().zip(reference.data()).fold(0f32, |a, (p, q)| a.max((p - q).abs()));
        worst = worst.max(err / scale);
    }
    ensure(worst <= 1e-5, format!("max relative deviation {worst:.2e} over 100 (D, H) shapes"))
}

fn small_isotropic(rng: &mut UniformStream) -> ModelSpec {
    let (image, patch) = [(32, 8), (48, 8), (64, 16), (64, 8)][rng.below(4)];
    let heads = [1, 2, 4][rng.below(3)];
    let dim = heads * (2 + rng.below(6));
    let nodes = (image / patch) * (image / patch);
    ModelDesc {
        name: None,
        structure: Structure::Isotropic,
        blocks: vec![1 + rng.below(6)],
        dims: vec![dim],
        patch_size: patch,
        image_size: image,
        num_classes: 10,
        k: 1 + rng.below(6.min(nodes)),
        max_heads: heads,
        dilation_schedule: None,
    }
    .build()
    .unwrap()
}

fn bits(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn determinism_under_concurrency() -> Outcome {
    let mut rng = UniformStream::new(4, 0);
    let pyramids = ["ViG-Py-Ti", "ViG-Py-S", "ViG-Py-M", "ViG-Py-B"];
    let mut pyramid_cases = 0;
    for case in 0..50 {
        let spec = if case % 3 == 0 {
            pyramid_cases += 1;
            preset(pyramids[(case / 3) % 4]).unwrap().resized(64, 3).unwrap()
        } else {
            small_isotropic(&mut rng)
        };
        let seed = u64::from(rng.below(1 << 30) as u32);
        let w = init_weights(&spec, seed);
        let x_img = ImageTensor::random(&spec, seed);
        for n_buf in [1, 2] {
            let hw = HardwareParams {
                n_buf,
                ..HardwareParams::default()
            };
            let engine = Engine::new(&spec, &w, BlockOptions::default(), &hw).unwrap();
            let x0 = engine.embed(&x_img).unwrap();
            let seq = run_graphleap_sequential(&x0, &engine).map_err(|e| e.to_string())?;
            let ovl = run_graphleap_overlapped(&x0, &engine, &hw).map_err(|e| e.to_string())?;
            if bits(&seq.logits) != bits(&ovl.logits) || seq.trace != ovl.trace {
                return Err(format!("case {case} ({}) N_buf={n_buf}: outputs differ", spec.display_name()));
            }
            if !ovl.timeline.ordering_violations().is_empty() {
                return Err(format!("case {case} N_buf={n_buf}: measured schedule breaks precedence"));
            }
        }
    }
    Ok(format!(
        "50 (spec, seed) pairs ({pyramid_cases} reduced pyramids) x N_buf in {{1, 2}} bitwise equal"
    ))
}

fn frozen_feature_equivalence() -> Outcome {
    let specs = [
        preset("ViG-Ti").unwrap(),
        preset("ViG-Py-Ti").unwrap().resized(64, 3).unwrap(),
        preset("ViG-Py-B").unwrap().resized(64, 3).unwrap(),
    ];
    for spec in &specs {
        for opts in [BlockOptions::default(), BlockOptions::plain(Default::default())] {
            let w = ModelWeights::frozen(spec, 5);
            let engine = Engine::new(spec, &w, opts, &HardwareParams::default()).unwrap();
            let x0 = engine.embed(&ImageTensor::random(spec, 5)).unwrap();
            let a = run_standard(&x0, &engine).map_err(|e| e.to_string())?;
            let b = run_graphleap_sequential(&x0, &engine).map_err(|e| e.to_string())?;
            if bits(&a.logits) != bits(&b.logits) || a.trace.digests() != b.trace.digests() {
                return Err(format!("{} differs", spec.display_name()));
            }
        }
    }
    Ok("ViG-Ti, reduced ViG-Py-Ti and ViG-Py-B bitwise equal, with and without LayerNorm".into())
}

fn residual_identities() -> Outcome {
    let mut rng = UniformStream::new(6, 0);
    for case in 0..20 {
        let heads = 1 + rng.below(4);
        let dim = heads * (1 + rng.below(8));
        let n = 2 + rng.below(30);
        let x = rng.matrix(n, dim, 2.0);
        let k = 1 + rng.below(n.min(5));
        let g = build_graph(&x, k, 1, &DistanceTilePlan::for_features(&x, 32, 32).unwrap()).unwrap();
        let w = BlockWeights::zeros(dim, heads);
        for opts in [BlockOptions::default(), BlockOptions::plain(Default::default())] {
            let y = grapher_block(&x, &g, &w, &opts).map_err(|e| e.to_string())?;
            let z = ffn_block(&x, &w, &opts).map_err(|e| e.to_string())?;
            if !y.bits_eq(&x) || !z.bits_eq(&x) {
                return Err(format!("case {case}: zero-weight block changed its input"));
            }
        }
    }
    Ok("20 inputs, Grapher and FFN exact".into())
}

fn permutation_invariance() -> Outcome {
    let mut rng = UniformStream::new(7, 0);
    for inst in 0..10 {
        let n = 4 + rng.below(60);
        let k = 2 + rng.below(n.min(16) - 1);
        let dim = 1 + rng.below(24);
        let x = rng.matrix(n, dim, 1.0);
        let g = build_graph(&x, k, 1, &DistanceTilePlan::for_features(&x, 32, 32).unwrap()).unwrap();
        let base = mrconv_aggregate(&x, &g).unwrap();
        for _ in 0..100 {
            let mut rows = g.indices().to_vec();
            for row in rows.chunks_mut(k) {
                for i in (1..k).rev() {
                    row.swap(i, rng.below(i + 1));
                }
            }
            let m = mrconv_aggregate(&x, &GraphTopology::new(n, k, rows).unwrap()).unwrap();
            if !m.bits_eq(&base) {
                return Err(format!("instance {inst} changed under a row permutation"));
            }
        }
    }
    Ok("10 instances x 100 permutations bitwise equal".into())
}

fn cost_model_regression() -> Outcome {
    let hw = HardwareParams::default();
    let got = (gce_cycles(196, 192, 9, &hw), grapher_cycles(196, 192, 9, &hw), ffn_cycles(196, 192, &hw));
    if got != (350, 24_248, 56_462) {
        return Err(format!("ViG-Ti cycles {got:?}"));
    }
    let mut checked = 0;
    for name in PRESET_NAMES {
        for res in [224, 448] {
            let spec = preset(name).unwrap().with_image_size(res).unwrap();
            for t_sync in [0, 37] {
                for n_buf in [1, 2, 3] {
                    let hw = HardwareParams {
                        t_sync,
                        n_buf,
                        ..HardwareParams::default()
                    };
                    let costs = block_costs(&spec, &hw);
                    let sim = simulate(&costs, n_buf, Schedule::Overlapped, hw.f_clk);
                    if sim.total != closed_form_total(&costs, Schedule::Overlapped) {
                        return Err(format!("{name}@{res} t_sync={t_sync} N_buf={n_buf}: event total differs"));
                    }
                    checked += 1;
                }
            }
        }
    }
    let mut rng = UniformStream::new(8, 0);
    for _ in 0..500 {
        let costs: Vec<BlockCost> = (0..1 + rng.below(24))
            .map(|i| {
                let fue = rng.below(1000) as u64;
                BlockCost {
                    cost: LayerCost {
                        t_gce: rng.below(1000) as u64,
                        t_grapher: fue,
                        t_ffn: 0,
                        t_fue: fue,
                        t_sync: rng.below(20) as u64,
                    },
                    stage_start: i == 0 || rng.below(5) == 0,
                }
            })
            .collect();
        let n_buf = 1 + rng.below(3);
        if simulate(&costs, n_buf, Schedule::Overlapped, 1.0).total != closed_form_total(&costs, Schedule::Overlapped) {
            return Err("random cost vector: event total differs".into());
        }
        checked += 1;
    }
    Ok(format!("350 / 24248 / 56462 cycles; event total = closed form in {checked} schedules"))
}

fn reference_latency() -> Outcome {
    let ms = total_latency(&preset("ViG-Ti").unwrap(), &HardwareParams::default(), Schedule::Sequential).total_ms();
    let rel = (ms - 2.88) / 2.88;
    ensure(rel.abs() <= 0.25, format!("ViG-Ti sequential {ms:.4} ms vs 2.88 ms ({:+.1}%)", rel * 100.0))
}

fn gelu_approximation() -> Outcome {
    let worst = (0..=10_000)
        .map(|i| -8.0 + 16.0 * i as f64 / 10_000.0)
        .map(|x| (f64::from(gelu_pwl(x as f32)) - f64::from(gelu_exact(x as f32))).abs())
        .fold(0f64, f64::max);
    ensure(worst <= 1e-2, format!("max |error| {worst:.5} on 10001 points"))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("kNN oracle equivalence", knn_oracle_equivalence),
        ("tiling transparency", tiling_transparency),
        ("fused-update identity", fused_update_identity),
        ("determinism under concurrency", determinism_under_concurrency),
        ("frozen-feature equivalence", frozen_feature_equivalence),
        ("residual identities", residual_identities),
        ("permutation invariance", permutation_invariance),
        ("cost-model regression", cost_model_regression),
        ("model-level latency check", reference_latency),
        ("GELU approximation", gelu_approximation),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS criterion {:>2} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {:>2} {name}: {detail}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
