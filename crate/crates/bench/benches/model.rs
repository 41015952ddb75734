use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use t3former_core::neural::Tape;
use t3former_core::pipeline::{extract_descriptors, feature_grid, synth_generate, SynthSpec};
use t3former_core::{Model, ModelMode, RunConfig};

fn forward(c: &mut Criterion) {
    let spec = SynthSpec {
        num_graphs: 2,
        ..SynthSpec::default()
    };
    let dataset = synth_generate(&spec, 7).unwrap();
    let grid = feature_grid(&dataset);
    let config = RunConfig::default();
    let features = extract_descriptors(&dataset, &config, &grid).unwrap();
    let input = features[0].input();
    let mut group = c.benchmark_group("model");
    for mode in [ModelMode::Full, ModelMode::TopoOnly, ModelMode::GsageOnly] {
        let model_config = RunConfig { mode, ..config.clone() }.model_config(features[0].node_features.cols(), 2);
        let (model, params) = Model::new(model_config, 0).unwrap();
        group.bench_function(BenchmarkId::new("forward", mode.as_str()), |b| {
            b.iter(|| {
                let mut tape = Tape::new(0);
                let vars = params.bind(&mut tape).unwrap();
                model.forward(&mut tape, &vars, black_box(&input)).unwrap().logits
            })
        });
        group.bench_function(BenchmarkId::new("backward", mode.as_str()), |b| {
            b.iter(|| {
                let mut tape = Tape::new(0);
                let vars = params.bind(&mut tape).unwrap();
                let (loss, _) = model.loss(&mut tape, &vars, black_box(&input), 1).unwrap();
                tape.backward(loss).unwrap();
                params.gradients(&tape, &vars)
            })
        });
    }
    group.finish();
}

criterion_group!(benches, forward);
criterion_main!(benches);
