use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

use vesselgan_bench::seeded_tensor;
use vesselgan_core::models::{
    build_discriminator, build_generator, discriminator_forward, generator_forward,
    DiscriminatorConfig, GeneratorConfig,
};
use vesselgan_core::tensor::conv::{conv2d_backward, conv2d_forward};
use vesselgan_core::{BnMode, ConvSpec, NetTag, Shape, Tape, Tensor};

fn bench_conv2d(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv2d");
    let spec = ConvSpec::new(2, 1);
    for (name, xs, ks) in [
        (
            "64->128@64",
            Shape::new(1, 64, 64, 64),
            Shape::new(128, 64, 4, 4),
        ),
        (
            "256->512@16",
            Shape::new(1, 256, 16, 16),
            Shape::new(512, 256, 4, 4),
        ),
    ] {
        let x = seeded_tensor(xs, 1, -1.0, 1.0);
        let k = seeded_tensor(ks, 2, -0.1, 0.1);
        let b = Tensor::zeros(Shape::new(1, ks.n(), 1, 1));
        let (out, _) = conv2d_forward(&x, &k, &b, &spec).unwrap();
        let macs = out.numel() * ks.c() * ks.h() * ks.w();
        group.throughput(Throughput::Elements(macs as u64));
        group.bench_with_input(BenchmarkId::new("forward", name), &(), |bench, ()| {
            bench.iter(|| conv2d_forward(&x, &k, &b, &spec).unwrap());
        });
        let (_, cols) = conv2d_forward(&x, &k, &b, &spec).unwrap();
        let dy = seeded_tensor(out.shape(), 3, -1.0, 1.0);
        group.bench_with_input(BenchmarkId::new("backward", name), &(), |bench, ()| {
            bench.iter(|| conv2d_backward(&dy, xs, &k, &spec, &cols, (true, true, true)));
        });
    }
    group.finish();
}

fn bench_models(c: &mut Criterion) {
    let mut group = c.benchmark_group("models");
    group.sample_size(10);

    let gcfg = GeneratorConfig::default();
    let (gen, stats) = build_generator::<f32>(&gcfg, 7).unwrap();
    let x = seeded_tensor(Shape::new(1, 3, 128, 128), 11, 0.0, 1.0);
    let z = seeded_tensor(Shape::new(1, 1, 128, 128), 12, -1.0, 1.0);
    group.bench_function("generator_forward 128x128", |bench| {
        bench.iter(|| {
            let mut stats = stats.clone();
            let mut tape: Tape<f32> = Tape::new();
            let lease = gen.lease(&mut tape, Some(NetTag::Generator), false);
            let x_id = tape.leaf(x.clone(), false);
            let z_id = tape.leaf(z.clone(), false);
            generator_forward(
                &mut tape,
                &gcfg,
                &lease,
                &mut stats,
                x_id,
                z_id,
                BnMode::Eval,
            )
            .unwrap()
        });
    });

    let dcfg = DiscriminatorConfig::default();
    let (disc, dstats) = build_discriminator::<f32>(&dcfg, 8).unwrap();
    let cand = seeded_tensor(Shape::new(1, 1, 128, 128), 13, 0.0, 1.0);
    group.bench_function("discriminator_forward 128x128", |bench| {
        bench.iter(|| {
            let mut stats = dstats.clone();
            let mut tape: Tape<f32> = Tape::new();
            let lease = disc.lease(&mut tape, Some(NetTag::Discriminator), false);
            let x_id = tape.leaf(x.clone(), false);
            let c_id = tape.leaf(cand.clone(), false);
            discriminator_forward(
                &mut tape,
                &dcfg,
                &lease,
                &mut stats,
                x_id,
                c_id,
                BnMode::Eval,
            )
            .unwrap()
        });
    });
    group.finish();
}

fn bench_eval(c: &mut Criterion) {
    let mut group = c.benchmark_group("eval");
    let n = 512 * 512;
    let mut rng_state = 0x12345u64;
    let mut next = move || {
        rng_state = rng_state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        (rng_state >> 33) as f32 / (u32::MAX >> 1) as f32
    };
    let scores: Vec<f32> = (0..n).map(|_| next()).collect();
    let gt: Vec<u8> = scores
        .iter()
        .map(|&s| (s + next() * 0.5 > 0.75) as u8)
        .collect();
    group.throughput(Throughput::Elements(n as u64));
    group.bench_function("roc_auc 512x512", |bench| {
        bench.iter(|| vesselgan_core::eval::roc_auc(&scores, &gt, None).unwrap());
    });
    group.bench_function("otsu 512x512", |bench| {
        bench.iter(|| vesselgan_core::eval::otsu_threshold(&scores, None).unwrap());
    });
    group.finish();
}

criterion_group!(benches, bench_conv2d, bench_models, bench_eval);
criterion_main!(benches);
