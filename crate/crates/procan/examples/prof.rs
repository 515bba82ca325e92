use procan::datapipe::{gen_synthetic, preprocess_all};
use procan::network::build;
use procan::numerics::{Graph, Mode, ParamBinder, Tensor};
use procan::trainer::TrainConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn main() {
    let t0 = Instant::now();
    let records = gen_synthetic(500, 7, 16).unwrap();
    println!("gen 500: {:?}", t0.elapsed());
    let t0 = Instant::now();
    let samples =
        preprocess_all(&records, 16, procan::curriculum::DifficultyCriterion::Diameter).unwrap();
    println!("preprocess: {:?}", t0.elapsed());

    let config = TrainConfig::desk_scale();
    let mut net = build(
        config.network_spec().unwrap(),
        &mut ChaCha8Rng::seed_from_u64(1),
    )
    .unwrap();
    net.grow_block(
        procan::progrow::BlendStrategy::Bernoulli,
        &mut ChaCha8Rng::seed_from_u64(2),
    )
    .unwrap();
    net.grow_block(
        procan::progrow::BlendStrategy::Bernoulli,
        &mut ChaCha8Rng::seed_from_u64(3),
    )
    .unwrap();
    for e in net.extended.iter_mut() {
        e.growth.force_final();
    }

    let side = 16;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for s in samples.iter().take(32) {
        data.extend_from_slice(s.cube.data());
        labels.push(s.label as f64);
    }
    let batch = Tensor::new(vec![32, side, side, side], data).unwrap();

    let mut droprng = ChaCha8Rng::seed_from_u64(4);
    let mut maskrng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..2 {
        let mut g = Graph::new();
        let mut b = ParamBinder::new();
        let x = g.leaf(batch.clone());
        let logits = net
            .forward_on(&mut g, x, Mode::Train, &mut b, &mut droprng, &mut maskrng)
            .unwrap();
        let loss = g.bce_with_logits(logits, &labels).unwrap();
        g.backward(loss).unwrap();
    }
    let reps = 5u32;
    let t0 = Instant::now();
    for _ in 0..reps {
        let mut g = Graph::new();
        let mut b = ParamBinder::new();
        let x = g.leaf(batch.clone());
        let logits = net
            .forward_on(&mut g, x, Mode::Train, &mut b, &mut droprng, &mut maskrng)
            .unwrap();
        let loss = g.bce_with_logits(logits, &labels).unwrap();
        g.backward(loss).unwrap();
    }
    let per_batch = t0.elapsed() / reps;
    println!("train fwd+bwd per batch of 32: {per_batch:?}");
    let t0 = Instant::now();
    for _ in 0..reps {
        let mut g = Graph::new();
        let mut b = ParamBinder::new();
        let x = g.leaf(batch.clone());
        let _ = net
            .forward_on(&mut g, x, Mode::Train, &mut b, &mut droprng, &mut maskrng)
            .unwrap();
    }
    println!("forward only per batch: {:?}", t0.elapsed() / reps);
    println!("epoch estimate (237 batches): {:?}", per_batch * 237);
}
