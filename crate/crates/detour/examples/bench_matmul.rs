//! Micro-benchmark for the matmul kernels.

use detour::numerics::ops::{matmul_at_b_into, matmul_bt_into, matmul_into};
use detour::numerics::Tensor;
use std::time::Instant;

fn bench(name: &str, m: usize, k: usize, n: usize, which: u8) {
    let a = Tensor::<f32>::filled(&[m, k], 0.5);
    let b_shape: Vec<usize> = match which {
        1 => vec![n, k],
        2 => vec![m, n],
        _ => vec![k, n],
    };
    let b = Tensor::<f32>::filled(&b_shape, 0.25);
    let out_shape: Vec<usize> = if which == 2 { vec![k, n] } else { vec![m, n] };
    let mut out = Tensor::<f32>::zeros(&out_shape);
    let reps = 2000;
    let t = Instant::now();
    for _ in 0..reps {
        match which {
            0 => matmul_into(&a, &b, &mut out),
            1 => matmul_bt_into(&a, &b, &mut out),
            _ => matmul_at_b_into(&a, &b, &mut out),
        }
    }
    let dt = t.elapsed().as_secs_f64();
    let flops = 2.0 * m as f64 * k as f64 * n as f64 * reps as f64;
    println!("{name} [{m}x{k}]x[{k}x{n}]: {:.1} GFLOPS", flops / dt / 1e9);
}

fn main() {
    bench("matmul   ", 256, 64, 64, 0);
    bench("matmul   ", 256, 64, 256, 0);
    bench("matmul   ", 256, 256, 64, 0);
    bench("matmul_bt", 256, 64, 512, 1);
    bench("matmul_bt", 256, 256, 64, 1);
    bench("matmul_atb", 256, 64, 256, 2);
}
