use autodiff::{Tape, Tensor};
use std::time::Instant;

fn main() {
    // pure kernel throughput via one tape reused... tape is consumed by
    // backward, so isolate stages instead.
    let a_t = Tensor::filled(vec![3, 256], 0.5);
    let b_t = Tensor::filled(vec![256, 384], 0.25);

    // forward only, reusing one tape (no backward)
    let reps = 3000;
    let tape = Tape::new();
    let a = tape.leaf(a_t.clone(), false);
    let b = tape.leaf(b_t.clone(), false);
    let t0 = Instant::now();
    let mut sink = 0.0;
    for _ in 0..reps {
        let c = tape.matmul(&a, &b).unwrap();
        sink += c.shape()[0] as f64;
    }
    let dt = t0.elapsed().as_secs_f64();
    let flops = reps as f64 * 3.0 * 256.0 * 384.0 * 2.0;
    println!("matmul forward only: {:.2} GFLOP/s (sink {})", flops / dt / 1e9, sink);

    // leaf binding cost (tensor clone + grad alloc) per rep
    let t1 = Instant::now();
    let mut s2 = 0usize;
    for _ in 0..reps {
        let tape = Tape::new();
        let b2 = tape.leaf(b_t.clone(), true);
        s2 += b2.numel();
    }
    println!(
        "leaf-bind 786KB param: {:.1} us/rep (sink {})",
        t1.elapsed().as_secs_f64() / reps as f64 * 1e6,
        s2
    );
}
