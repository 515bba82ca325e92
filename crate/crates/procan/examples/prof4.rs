use rayon::prelude::*;
use std::time::Instant;

fn main() {
    println!("rayon threads: {}", rayon::current_num_threads());
    let n = 256usize;
    let rows = 32 * 256;
    let mut data: Vec<f64> = (0..rows * n).map(|i| ((i * 37) % 100) as f64 * 0.03 - 1.5).collect();

    let timeit = |name: &str, f: &mut dyn FnMut(&mut [f64])| {
        let mut buf = data.clone();
        f(&mut buf);
        let reps = 10u32;
        let t0 = Instant::now();
        for _ in 0..reps {
            let mut buf = data.clone();
            f(&mut buf);
            std::hint::black_box(&buf);
        }
        println!("{name:34} {:?}", t0.elapsed() / reps);
    };

    timeit("seq softmax (div)", &mut |buf| {
        for row in buf.chunks_exact_mut(n) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                denom += *v;
            }
            for v in row.iter_mut() {
                *v /= denom;
            }
        }
    });
    timeit("par softmax (div)", &mut |buf| {
        buf.par_chunks_exact_mut(n).for_each(|row| {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                denom += *v;
            }
            for v in row.iter_mut() {
                *v /= denom;
            }
        });
    });
    timeit("par softmax (recip mul)", &mut |buf| {
        buf.par_chunks_exact_mut(n).for_each(|row| {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                denom += *v;
            }
            let inv = 1.0 / denom;
            for v in row.iter_mut() {
                *v *= inv;
            }
        });
    });
    timeit("par exp only", &mut |buf| {
        buf.par_chunks_exact_mut(n).for_each(|row| {
            for v in row.iter_mut() {
                *v = v.exp();
            }
        });
    });
    timeit("clone only", &mut |_| {});
    let d2 = data.clone();
    std::hint::black_box(&d2);
    data[0] += d2[1];
}
