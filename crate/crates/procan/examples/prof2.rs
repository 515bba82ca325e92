use procan::numerics::{Graph, Mode, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn timeit(name: &str, mut f: impl FnMut()) {
    f();
    let reps = 10u32;
    let t0 = Instant::now();
    for _ in 0..reps {
        f();
    }
    println!("{name:28} {:?}", t0.elapsed() / reps);
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    // Block-1 scale: B=32, C=16, N=256 (16x16), c_bar=1.
    let v = Tensor::uniform(&[32, 16, 256], -1.0, 1.0, &mut rng);
    let s_raw = Tensor::uniform(&[32, 256, 256], -2.0, 2.0, &mut rng);
    let x4 = Tensor::uniform(&[32, 16, 16, 16], -1.0, 1.0, &mut rng);
    let k33 = Tensor::uniform(&[8, 16, 3, 3], -0.3, 0.3, &mut rng);

    timeit("bmm V*B fwd", || {
        let mut g = Graph::new();
        let a = g.leaf(v.clone());
        let b = g.leaf(s_raw.clone());
        let _ = g.bmm(a, b).unwrap();
    });
    timeit("softmax [32,256,256]", || {
        let mut g = Graph::new();
        let s = g.leaf(s_raw.clone());
        let _ = g.softmax_rows(s).unwrap();
    });
    timeit("softmax+bwd", || {
        let mut g = Graph::new();
        let s = g.leaf(s_raw.clone());
        let sm = g.softmax_rows(s).unwrap();
        let w = g.leaf(Tensor::filled(&[32, 256, 256], 0.5));
        let m = g.mul(sm, w).unwrap();
        let l = g.sum(m);
        g.backward(l).unwrap();
    });
    timeit("bmm V*B fwd+bwd", || {
        let mut g = Graph::new();
        let a = g.leaf(v.clone());
        let b = g.leaf(s_raw.clone());
        let c = g.bmm(a, b).unwrap();
        let w = g.leaf(Tensor::filled(&[32, 16, 256], 0.5));
        let m = g.mul(c, w).unwrap();
        let l = g.sum(m);
        g.backward(l).unwrap();
    });
    timeit("conv 16->8 s1 fwd", || {
        let mut g = Graph::new();
        let x = g.leaf(x4.clone());
        let k = g.leaf(k33.clone());
        let _ = g.conv2d(x, k, 1, 1).unwrap();
    });
    timeit("clone 16MB", || {
        let c = s_raw.clone();
        std::hint::black_box(&c);
    });
    timeit("alloc zeros 16MB", || {
        let c = Tensor::zeros(&[32, 256, 256]);
        std::hint::black_box(&c);
    });
    // Full forward pieces at block-2 scale: C=8, N=256.
    let v2 = Tensor::uniform(&[32, 8, 256], -1.0, 1.0, &mut rng);
    timeit("bmm C8 fwd+bwd", || {
        let mut g = Graph::new();
        let a = g.leaf(v2.clone());
        let b = g.leaf(s_raw.clone());
        let c = g.bmm(a, b).unwrap();
        let w = g.leaf(Tensor::filled(&[32, 8, 256], 0.5));
        let m = g.mul(c, w).unwrap();
        let l = g.sum(m);
        g.backward(l).unwrap();
    });
    let _ = Mode::Train;
}
