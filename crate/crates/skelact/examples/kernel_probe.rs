// scratch: raw kernel throughput vs graph overhead
use std::time::Instant;
use tapegrad::{Tape, Tensor};

fn main() {
    // big matmul: raw throughput
    let n = 512;
    let a = Tensor::from_fn(vec![n, n], |i| (i as f64 * 0.001).sin());
    let b = Tensor::from_fn(vec![n, n], |i| (i as f64 * 0.002).cos());
    let mut tape = Tape::new();
    let av = tape.leaf(&a);
    let bv = tape.leaf(&b);
    let t0 = Instant::now();
    let _ = tape.matmul(av, bv).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    let macs = (n * n * n) as f64;
    println!("matmul {n}^3: {:.3}s = {:.2} GMAC/s", dt, macs / dt / 1e9);

    // many small ops: overhead
    let mut tape = Tape::new();
    let x = tape
        .leaf_from(vec![12, 8, 16, 17], vec![0.5; 12 * 8 * 16 * 17], true)
        .unwrap();
    let t0 = Instant::now();
    let mut v = x;
    for _ in 0..200 {
        v = tape.relu(v).unwrap();
    }
    let dt = t0.elapsed().as_secs_f64();
    println!(
        "200 relu on 26k elems: {:.1}ms ({:.1}us/op)",
        dt * 1e3,
        dt * 1e6 / 200.0
    );

    // small adjacency-style matmul: [1536,17]x[17,17]
    let a = Tensor::from_fn(vec![1536, 17], |i| (i as f64 * 0.001).sin());
    let b = Tensor::from_fn(vec![17, 17], |i| (i as f64 * 0.002).cos());
    let mut tape = Tape::new();
    let av = tape.leaf(&a);
    let bv = tape.leaf(&b);
    let t0 = Instant::now();
    for _ in 0..100 {
        let _ = tape.matmul(av, bv).unwrap();
    }
    let dt = t0.elapsed().as_secs_f64();
    println!(
        "100x adjacency matmul: {:.1}ms = {:.2} GMAC/s",
        dt * 1e3,
        100.0 * 1536.0 * 17.0 * 17.0 / dt / 1e9
    );

    // conv1d: [12,8,16,17] w [8,8,3]
    let x = Tensor::from_fn(vec![12, 8, 16, 17], |i| (i as f64 * 0.01).sin());
    let w = Tensor::from_fn(vec![8, 8, 3], |i| (i as f64 * 0.1).cos());
    let bias = Tensor::zeros([8]);
    let mut tape = Tape::new();
    let xv = tape.leaf(&x);
    let wv = tape.leaf(&w);
    let bb = tape.leaf(&bias);
    let t0 = Instant::now();
    for _ in 0..100 {
        let _ = tape.conv1d_time(xv, wv, bb, 1, 1).unwrap();
    }
    let dt = t0.elapsed().as_secs_f64();
    let macs = 100.0 * (12 * 8 * 16 * 17 * 8 * 3) as f64;
    println!("100x conv: {:.1}ms = {:.2} GMAC/s", dt * 1e3, macs / dt / 1e9);
}
