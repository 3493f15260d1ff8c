// scratch: allocation vs compute cost for op-sized buffers
use std::time::Instant;

fn main() {
    let n = 26112;
    let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.01).sin()).collect();

    // compute into a reused buffer
    let mut out = vec![0.0f64; n];
    let t0 = Instant::now();
    for _ in 0..200 {
        for (o, &v) in out.iter_mut().zip(&x) {
            *o = if v > 0.0 { v } else { 0.0 };
        }
        std::hint::black_box(&out);
    }
    println!("reused buffer: {:.1}us/op", t0.elapsed().as_secs_f64() * 1e6 / 200.0);

    // fresh zeroed vec each time, kept alive (like tape nodes)
    let mut keep = Vec::new();
    let t0 = Instant::now();
    for _ in 0..200 {
        let mut out = vec![0.0f64; n];
        for (o, &v) in out.iter_mut().zip(&x) {
            *o = if v > 0.0 { v } else { 0.0 };
        }
        keep.push(out);
    }
    println!("fresh vec kept: {:.1}us/op", t0.elapsed().as_secs_f64() * 1e6 / 200.0);
    drop(keep);

    // collect (no pre-zero), kept alive
    let mut keep = Vec::new();
    let t0 = Instant::now();
    for _ in 0..200 {
        let out: Vec<f64> = x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        keep.push(out);
    }
    println!("collect kept: {:.1}us/op", t0.elapsed().as_secs_f64() * 1e6 / 200.0);
}
