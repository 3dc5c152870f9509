//! Acceptance suite. One test per criterion; each prints a pass line
//! with its measured runtime (visible under `--nocapture`) and fails
//! if it exceeds its runtime budget.
//!
//! Run with: `cargo test -p mbs-core --test acceptance -- --nocapture`

mod common;

use std::time::{Duration, Instant};

use common::gen::{random_chain, random_rf_chain};
use common::oracles::{chain_geometry, impulse_rf, oracle_nonzero_fractions, transliterated_plan};

use mbs_core::ir::{apply_plan, ConvKind, GraphBuilder};
use mbs_core::planner::{
    accumulate, effective_flops, plan, plan_from_widths, run_mbs, Exact, PlannerConfig,
};
use mbs_core::report::{compare, count_params, report_csv};
use mbs_core::rf::{classify_layers, compute_rf};
use mbs_core::stats::engine;
use mbs_core::stats::simulate_stats;
use mbs_core::zoo::{generate, ZooFamily, ZooSpec};

fn finish(criterion: &str, detail: &str, started: Instant, budget: Duration) {
    let elapsed = started.elapsed();
    assert!(
        elapsed < budget,
        "criterion {criterion} exceeded its runtime budget: {elapsed:?} >= {budget:?}"
    );
    println!("[PASS] criterion {criterion}: {detail} ({elapsed:.2?})");
}

fn within(value: f64, target: f64, tolerance: f64) -> bool {
    (value - target).abs() <= tolerance
}

// ─── 1. Parameter fidelity on stock models ───────────────────────────────────

#[test]
fn criterion_1_parameter_fidelity() {
    let started = Instant::now();
    let cases: [(ZooSpec, f64, f64, &str); 4] = [
        (
            ZooSpec::new(ZooFamily::ResnetImagenetBasic).with_depth(18),
            11.69e6,
            0.01,
            "resnet-18",
        ),
        (
            ZooSpec::new(ZooFamily::ResnetImagenetBottleneck).with_depth(101),
            44.55e6,
            0.01,
            "resnet-101",
        ),
        (
            ZooSpec::new(ZooFamily::ResnetImagenetBasic).with_depth(34),
            21.80e6,
            0.01,
            "resnet-34",
        ),
        (
            ZooSpec::new(ZooFamily::MobilenetV1).with_resolution(224),
            4.23e6,
            0.02,
            "mobilenet-224",
        ),
    ];
    let mut detail = String::new();
    for (spec, published, tolerance, name) in cases {
        let params = count_params(&generate(&spec).unwrap()) as f64;
        let relative = (params - published).abs() / published;
        assert!(
            relative <= tolerance,
            "{name}: {params} vs published {published} (relative {relative:.4})"
        );
        detail.push_str(&format!("{name} {:.2}M ", params / 1e6));
    }
    finish("1", detail.trim(), started, Duration::from_secs(1));
}

// ─── 2. Reduction fidelity on published configurations ───────────────────────

#[test]
fn criterion_2_reduction_fidelity() {
    let started = Instant::now();
    struct Case {
        spec: ZooSpec,
        widths: Vec<u32>,
        reduction: f64,
        tolerance_pp: f64,
        params_after: Option<(f64, f64)>,
        name: &'static str,
    }
    let cases = [
        Case {
            spec: ZooSpec::new(ZooFamily::ResnetImagenetBasic).with_depth(18),
            widths: vec![64, 128, 256, 453],
            reduction: 0.1497,
            tolerance_pp: 0.015,
            params_after: None,
            name: "resnet-18",
        },
        Case {
            spec: ZooSpec::new(ZooFamily::ResnetImagenetBottleneck).with_depth(101),
            widths: vec![64, 128, 174, 337],
            reduction: 0.5167,
            tolerance_pp: 0.02,
            params_after: None,
            name: "resnet-101",
        },
        Case {
            spec: ZooSpec::new(ZooFamily::ResnetImagenetBasic).with_depth(34),
            widths: vec![64, 128, 192, 359],
            reduction: 0.4450,
            tolerance_pp: 0.02,
            params_after: Some((12.10e6, 0.02)),
            name: "resnet-34",
        },
        Case {
            spec: ZooSpec::new(ZooFamily::MobilenetV1).with_resolution(224),
            widths: vec![32, 64, 128, 256, 474, 879],
            reduction: 0.1726,
            tolerance_pp: 0.03,
            params_after: None,
            name: "mobilenet-224",
        },
    ];
    let mut detail = String::new();
    for case in cases {
        let graph = generate(&case.spec).unwrap();
        let plan = plan_from_widths(&graph, &case.widths).unwrap();
        let report = compare(&graph, Some(&plan), &[]).unwrap();
        let row = &report.rows[0];
        assert!(
            within(row.reduction_ratio, case.reduction, case.tolerance_pp),
            "{}: reduction {:.4} vs published {:.4}",
            case.name,
            row.reduction_ratio,
            case.reduction
        );
        if let Some((published, tolerance)) = case.params_after {
            let relative = (row.params as f64 - published).abs() / published;
            assert!(
                relative <= tolerance,
                "{}: params after {} vs published {published}",
                case.name,
                row.params
            );
        }
        detail.push_str(&format!("{} {:.2}% ", case.name, row.reduction_ratio * 100.0));
    }
    finish("2", detail.trim(), started, Duration::from_secs(1));
}

// ─── 3. Oracle equivalence with the transliterated procedure ─────────────────

#[test]
fn criterion_3_algorithm_oracle_equivalence() {
    let started = Instant::now();
    let k_values = [0.6, 1.0, 1.4];
    for i in 0..200u64 {
        let graph = random_chain(1000 + i, 12);
        let stats = simulate_stats(&graph, 2, 9000 + i).unwrap();
        let k = k_values[(i % 3) as usize];
        let config = PlannerConfig::from_k(k);
        let (z, _) = config.resolve(graph.input_resolution).unwrap();
        let mine = run_mbs(&graph, &stats, &config).unwrap();
        let reference = transliterated_plan(&graph, &stats, z);
        assert_eq!(mine.macroblocks.len(), reference.len(), "graph {i}");
        for (ours, expected) in mine.macroblocks.iter().zip(&reference) {
            assert_eq!(
                ours.r.to_bits(),
                expected.r.to_bits(),
                "graph {i} macroblock {} r: {} vs {}",
                ours.macroblock_id,
                ours.r,
                expected.r
            );
            assert_eq!(
                ours.beta.to_bits(),
                expected.beta.to_bits(),
                "graph {i} macroblock {} beta",
                ours.macroblock_id
            );
            assert_eq!(
                ours.compact_width, expected.compact_width,
                "graph {i} macroblock {} width",
                ours.macroblock_id
            );
        }
    }
    finish(
        "3",
        "200 random graphs bit-equal to the transliterated procedure",
        started,
        Duration::from_secs(10),
    );
}

// ─── 4. Receptive-field oracle ───────────────────────────────────────────────

#[test]
fn criterion_4_receptive_field_oracle() {
    let started = Instant::now();
    let mut checked = 0u32;
    let mut seed = 0u64;
    while checked < 100 {
        seed += 1;
        let graph = random_rf_chain(seed);
        let chain = chain_geometry(&graph);
        let measured = impulse_rf(&chain);
        if measured.iter().any(|&(rf, _)| rf > 64) {
            continue;
        }
        let analytic = compute_rf(&graph);
        for (entry, &(rf, jump)) in analytic.iter().zip(&measured) {
            assert_eq!(
                (entry.rf, entry.jump),
                (rf, jump),
                "seed {seed} layer {}",
                entry.layer_id
            );
        }
        checked += 1;
    }
    finish(
        "4",
        "100 random graphs match the impulse-response oracle exactly",
        started,
        Duration::from_secs(30),
    );
}

// ─── 5. Bounds and monotonicity ──────────────────────────────────────────────

#[test]
fn criterion_5_bounds_and_monotonicity() {
    let started = Instant::now();
    let sweep = [1.4, 1.2, 1.0, 0.8, 0.6];

    let mut corpus: Vec<(mbs_core::ModelGraph, mbs_core::StatsCollection)> = (0..40u64)
        .map(|i| {
            let graph = random_chain(5000 + i, 10);
            let stats = simulate_stats(&graph, 2, 7000 + i).unwrap();
            (graph, stats)
        })
        .collect();
    let resnet20 = generate(&ZooSpec::new(ZooFamily::ResnetCifar).with_depth(20)).unwrap();
    let resnet20_stats = simulate_stats(&resnet20, 4, 42).unwrap();
    corpus.push((resnet20, resnet20_stats));

    for (graph, stats) in &corpus {
        let before = count_params(graph);
        let mut last_reduction = -1.0f64;
        for &k in &sweep {
            let plan = run_mbs(graph, stats, &PlannerConfig::from_k(k)).unwrap();
            for mb in &plan.macroblocks {
                assert!((0.0..1.0).contains(&mb.r), "r = {}", mb.r);
                assert!(mb.beta > 0.5 && mb.beta <= 1.0, "beta = {}", mb.beta);
            }
            let compact = apply_plan(graph, &plan).unwrap();
            let reduction = 1.0 - count_params(&compact) as f64 / before as f64;
            assert!(
                reduction >= last_reduction,
                "reduction must not decrease as k shrinks: {reduction} after {last_reduction}"
            );
            last_reduction = reduction;
        }
    }
    finish(
        "5",
        "r and beta bounds hold; k sweeps reduce monotonically on 41 models",
        started,
        Duration::from_secs(10),
    );
}

// ─── 6. Scale invariance ─────────────────────────────────────────────────────

#[test]
fn criterion_6_scale_invariance() {
    let started = Instant::now();
    let graph = generate(&ZooSpec::new(ZooFamily::ResnetCifar).with_depth(20)).unwrap();
    let stats = simulate_stats(&graph, 4, 42).unwrap();
    let (z, k) = PlannerConfig::default()
        .resolve(graph.input_resolution)
        .unwrap();
    let rf_table = compute_rf(&graph);
    let profile = classify_layers(&graph, &rf_table, z).unwrap();
    let mut layers = effective_flops(&graph, &stats).unwrap();
    let baseline = plan(&graph, &accumulate(&graph, &profile, &layers), z, k);

    let factor = Exact::new(73.into(), 10.into());
    for layer in &mut layers {
        layer.e = &layer.e * &factor;
    }
    let scaled = plan(&graph, &accumulate(&graph, &profile, &layers), z, k);

    for (a, b) in baseline.macroblocks.iter().zip(&scaled.macroblocks) {
        assert_eq!(a.r.to_bits(), b.r.to_bits());
        assert_eq!(a.beta.to_bits(), b.beta.to_bits());
        assert_eq!(a.compact_width, b.compact_width);
    }
    finish(
        "6",
        "scaling all effective flops by 7.3 changes nothing, exactly",
        started,
        Duration::from_secs(5),
    );
}

// ─── 7. Pipeline determinism ─────────────────────────────────────────────────

#[test]
fn criterion_7_pipeline_determinism() {
    let started = Instant::now();
    let run_pipeline = || -> (String, String, String, String, String) {
        let graph = generate(&ZooSpec::new(ZooFamily::ResnetCifar).with_depth(20)).unwrap();
        let model_doc = graph.to_document();
        let reloaded = mbs_core::ir::parse_and_resolve(&model_doc).unwrap();
        let stats = simulate_stats(&reloaded, 4, 42).unwrap();
        let stats_doc = stats.to_document();
        let stats_loaded = mbs_core::stats::load_stats(&stats_doc, Some(&reloaded)).unwrap();
        let plan = run_mbs(&reloaded, &stats_loaded, &PlannerConfig::from_k(1.0)).unwrap();
        let plan_doc = plan.to_document();
        let plan_loaded = mbs_core::planner::load_plan(&plan_doc).unwrap();
        let compact_doc = apply_plan(&reloaded, &plan_loaded).unwrap().to_document();
        let report = compare(&reloaded, Some(&plan_loaded), &[0.8]).unwrap();
        (model_doc, stats_doc, plan_doc, compact_doc, report_csv(&report))
    };
    let first = run_pipeline();
    let second = run_pipeline();
    assert_eq!(first.0.as_bytes(), second.0.as_bytes(), "model documents differ");
    assert_eq!(first.1.as_bytes(), second.1.as_bytes(), "stats documents differ");
    assert_eq!(first.2.as_bytes(), second.2.as_bytes(), "plan documents differ");
    assert_eq!(first.3.as_bytes(), second.3.as_bytes(), "compact documents differ");
    assert_eq!(first.4.as_bytes(), second.4.as_bytes(), "report CSVs differ");
    finish(
        "7",
        "two full pipeline runs emit byte-identical artifacts",
        started,
        Duration::from_secs(30),
    );
}

// ─── 8. Stats correctness against the convolution oracle ────────────────────

#[test]
fn criterion_8_stats_oracle() {
    let started = Instant::now();
    for seed in 0..20u64 {
        let graph = random_chain(2000 + seed, 4);
        let n_images = 3u32;
        let stats = simulate_stats(&graph, n_images, 400 + seed).unwrap();
        let weights = engine::model_weights(&graph, 400 + seed);
        let mut sums = vec![0.0f64; stats.layers.len()];
        for index in 0..n_images as u64 {
            let image = engine::synthetic_image(&graph, 400 + seed, index);
            let fractions = oracle_nonzero_fractions(&graph, &weights, &image);
            for (sum, p) in sums.iter_mut().zip(&fractions) {
                *sum += p;
            }
        }
        for (layer, sum) in stats.layers.iter().zip(&sums) {
            let expected = sum / n_images as f64;
            assert!(
                (layer.p - expected).abs() <= 1e-12,
                "seed {seed} layer {}: {} vs oracle {expected}",
                layer.layer_id,
                layer.p
            );
        }
    }

    // degenerate constructions hold exactly
    let mut b = GraphBuilder::new("degenerate", 6).input_channels(2);
    b.conv(ConvKind::Standard, 3, 1, 3, true, true);
    b.conv(ConvKind::Pointwise, 1, 1, 2, true, true);
    let graph = b.build().unwrap();
    let weights = engine::model_weights(&graph, 1);
    let zero_image = engine::Tensor::zeros(2, 6, 6);
    let fractions = engine::forward_nonzero_fractions(&graph, &weights, &zero_image);
    assert_eq!(fractions, vec![0.0, 0.0], "all-zero input must give p = 0");

    let mut b = GraphBuilder::new("positive", 4).input_channels(1);
    b.conv(ConvKind::Pointwise, 1, 1, 1, true, true);
    let graph = b.build().unwrap();
    let identity = vec![Some(engine::ConvWeights {
        out_channels: 1,
        in_per_group: 1,
        kernel: 1,
        data: vec![1.0],
    })];
    let mut positive = engine::Tensor::zeros(1, 4, 4);
    for v in &mut positive.data {
        *v = 0.5;
    }
    let fractions = engine::forward_nonzero_fractions(&graph, &identity, &positive);
    assert_eq!(fractions, vec![1.0], "positive weight on positive input must give p = 1");

    finish(
        "8",
        "20 seeded nets match the dense conv oracle to 1e-12; p = 0 and p = 1 hold exactly",
        started,
        Duration::from_secs(30),
    );
}
