use procan::numerics::{Graph, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let s_raw = Tensor::uniform(&[32, 256, 256], -2.0, 2.0, &mut rng);

    // Stage timing of one graph softmax call.
    for rep in 0..3 {
        let t0 = Instant::now();
        let mut g = Graph::new();
        let t_new = t0.elapsed();
        let leaf_t = Instant::now();
        let s = g.leaf(s_raw.clone());
        let t_leaf = leaf_t.elapsed();
        let sm_t = Instant::now();
        let _b = g.softmax_rows(s).unwrap();
        let t_sm = sm_t.elapsed();
        println!("rep {rep}: new {t_new:?} leaf {t_leaf:?} softmax {t_sm:?}");
    }

    // Raw uniform values vs structured: exp argument range effect.
    let wide = Tensor::uniform(&[32, 256, 256], -30.0, 30.0, &mut rng);
    let t0 = Instant::now();
    let mut g = Graph::new();
    let s = g.leaf(wide.clone());
    let _ = g.softmax_rows(s).unwrap();
    println!("wide-range softmax: {:?}", t0.elapsed());
}
