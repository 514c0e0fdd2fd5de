//! Sequential against parallel execution of the hot loops. Both paths give
//! bit-identical results, so only the wall time differs.

use std::collections::HashMap;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sidkit::genret::{GrModel, GrShape, SidVocabulary};
use sidkit::pipeline::stages::gr_split;
use sidkit::pipeline::{gen_synthetic, SyntheticSpec};
use sidkit::tokenizer::{rq_kmeans_fit, tokenize_corpus, RqVaeShape, Tokenizer, TokenizerModel, AssignmentRule};
use sidkit::{Exec, SemanticId};

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn data() -> sidkit::pipeline::SyntheticData {
    gen_synthetic(&SyntheticSpec {
        items: 4000,
        users: 200,
        ..SyntheticSpec::default()
    })
    .unwrap()
}

fn tokenizer_gradient(c: &mut Criterion) {
    let d = data();
    let names: Vec<String> = d.corpus.modalities().iter().map(|m| m.name.clone()).collect();
    let dims: Vec<(String, usize)> = d.corpus.modalities().iter().map(|m| (m.name.clone(), m.dim)).collect();
    let items: Vec<_> = d.corpus.records()[..1024].iter().map(|r| d.corpus.inputs(r, &names).unwrap()).collect();
    let mut model = TokenizerModel::random(
        &dims,
        &RqVaeShape::default(),
        AssignmentRule::Cosine,
        true,
        0.25,
        &mut ChaCha8Rng::seed_from_u64(0),
    )
    .unwrap();
    model.init_codebooks(&items, 0, 5, Exec::default()).unwrap();
    let mut g = c.benchmark_group("rqvae_loss_and_grad_1024");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| model.loss_and_grad(&items, exec).unwrap()));
    }
    g.finish();
}

fn kmeans_and_tokenize(c: &mut Criterion) {
    let d = data();
    let names: Vec<String> = d.corpus.modalities().iter().map(|m| m.name.clone()).collect();
    let mut g = c.benchmark_group("rq_kmeans_64x3_4000");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| rq_kmeans_fit(&d.corpus, &names, &[64, 64, 64], 10, 0, exec).unwrap())
        });
    }
    g.finish();
    let tok = Tokenizer::RqKmeans(rq_kmeans_fit(&d.corpus, &names, &[64, 64, 64], 10, 0, Exec::default()).unwrap());
    let mut g = c.benchmark_group("tokenize_corpus_4000");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| tokenize_corpus(&tok, &d.corpus, exec)));
    }
    g.finish();
}

fn gr_gradient(c: &mut Criterion) {
    let d = data();
    let names: Vec<String> = d.corpus.modalities().iter().map(|m| m.name.clone()).collect();
    let tok = Tokenizer::RqKmeans(rq_kmeans_fit(&d.corpus, &names, &[32, 32, 32], 10, 0, Exec::default()).unwrap());
    let sids: HashMap<u64, SemanticId> = tokenize_corpus(&tok, &d.corpus, Exec::default()).entries.into_iter().collect();
    let (split, _) = gr_split(&d.events, &sids, 16, 2).unwrap();
    let shape = GrShape {
        width: 32,
        heads: 4,
        layers: 1,
        ffn_width: 64,
        max_history: 16,
    };
    let model = GrModel::new(SidVocabulary::new(&[32, 32, 32]).unwrap(), shape, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let batch = &split.train[..256.min(split.train.len())];
    let mut g = c.benchmark_group("gr_loss_and_grad_256");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| model.loss_and_grad(batch, exec).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, tokenizer_gradient, kmeans_and_tokenize, gr_gradient);
criterion_main!(benches);
