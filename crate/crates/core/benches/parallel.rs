use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use avlsp::config::PipelineConfig;
use avlsp::graph::{build_graph_with, branch_score, GraphParams, ScoredBranch};
use avlsp::phantom::{corrupt, generate, PhantomSpec};
use avlsp::pipeline::label_and_propagate;
use avlsp::preprocess::median_filter_with;
use avlsp::skeleton::{extract_branches, thin};
use avlsp::{argmax_labels, Parallelism, Raster2D};

const MODES: [(&str, Parallelism); 2] = [("sequential", Parallelism::Sequential), ("rayon", Parallelism::Rayon)];

fn median(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (w, h) = (512, 512);
    let img = Raster2D::new(w, h, 1, (0..w * h).map(|_| rng.random_range(0..=255) as f32).collect()).unwrap();
    let mut g = c.benchmark_group("median_filter_512_k51");
    for (name, par) in MODES {
        g.bench_function(name, |b| b.iter(|| median_filter_with(&img, 51, par).unwrap()));
    }
    g.finish();
}

fn graph(c: &mut Criterion) {
    let spec = PhantomSpec {
        seed: 3,
        depth: 5,
        size: (768, 768),
        ..PhantomSpec::default()
    };
    let ph = generate(&spec).unwrap();
    let (probs, _) = corrupt(&ph, &spec).unwrap();
    let labels = argmax_labels(&probs, &ph.fov).unwrap();
    let lik = probs.artery_likelihood();
    let scored: Vec<ScoredBranch> = extract_branches(&thin(&labels.vessel_mask()))
        .into_iter()
        .map(|b| ScoredBranch {
            score: branch_score(&b, &lik, probs.width).unwrap(),
            branch: b,
        })
        .collect();
    let p = GraphParams::default();
    let mut g = c.benchmark_group("build_graph");
    for (name, par) in MODES {
        g.bench_with_input(BenchmarkId::new(name, scored.len()), &scored, |b, s| {
            b.iter(|| build_graph_with(s, &p, par))
        });
    }
    g.finish();
}

fn batch(c: &mut Criterion) {
    use rayon::prelude::*;
    let cfg = PipelineConfig::default();
    let inputs: Vec<_> = (0..8u64)
        .map(|seed| {
            let spec = PhantomSpec {
                seed,
                flip_fraction: 0.2,
                noise_sigma: 0.1,
                ..PhantomSpec::default()
            };
            let ph = generate(&spec).unwrap();
            let (probs, _) = corrupt(&ph, &spec).unwrap();
            (probs, ph.fov)
        })
        .collect();
    let mut g = c.benchmark_group("pipeline_batch_8");
    g.sample_size(10);
    g.bench_function("sequential", |b| {
        b.iter(|| {
            inputs
                .iter()
                .map(|(p, f)| label_and_propagate(p, f, &cfg, Parallelism::Sequential).unwrap())
                .collect::<Vec<_>>()
        })
    });
    g.bench_function("rayon", |b| {
        b.iter(|| {
            inputs
                .par_iter()
                .map(|(p, f)| label_and_propagate(p, f, &cfg, Parallelism::Sequential).unwrap())
                .collect::<Vec<_>>()
        })
    });
    g.finish();
}

criterion_group!(benches, median, graph, batch);
criterion_main!(benches);
