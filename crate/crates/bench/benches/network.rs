use criterion::{criterion_group, criterion_main, Criterion};
use jdnet_core::data::{Dataset, RainSynthConfig};
use jdnet_core::nn::{Ctx, JdNet, NetConfig};
use jdnet_core::train::{TrainConfig, Trainer};
use jdnet_core::Graph;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny_net(c: &mut Criterion) {
    let data = Dataset::synthetic(8, 64, 64, &RainSynthConfig { seed: 42, ..Default::default() }).unwrap();
    let (o, b) = data.epoch_batches::<f32>(0, 1, 8, 64).unwrap().remove(0);
    let mut group = c.benchmark_group("tiny_jdnet_8x64x64");
    group.sample_size(10);

    let (net, mut store) = JdNet::build::<f32, _>(&mut ChaCha8Rng::seed_from_u64(0), NetConfig::tiny()).unwrap();
    group.bench_function("inference", |bench| {
        bench.iter(|| {
            let mut g = Graph::inference();
            let mut ctx = Ctx::new(&mut g, &mut store, false);
            let x = ctx.graph.input(o.clone());
            let out = net.forward(&mut ctx, x).unwrap();
            g.value(out.b_hat).len()
        })
    });

    let cfg = TrainConfig { net: NetConfig::tiny(), crop: 64, ..Default::default() };
    let mut trainer = Trainer::new(cfg).unwrap();
    group.bench_function("train_step", |bench| bench.iter(|| trainer.step(&o, &b, 1e-4).unwrap()));
    group.finish();
}

criterion_group!(benches, tiny_net);
criterion_main!(benches);
