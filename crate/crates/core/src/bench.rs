//! Forward-pass timing with warmup, plus the FLOPs the pass performs.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::arch::ArchSpec;
use crate::complexity::CostModel;
use crate::error::Result;
use crate::flops::FlopCounter;
use crate::generator::{Conditioning, Generator};
use crate::mask::random_shape_mask;

pub const WARMUP: usize = 3;

#[derive(Debug, Clone)]
pub struct BenchReport {
    /// Seconds per timed forward pass, in run order.
    pub times: Vec<f64>,
    /// FLOPs of one forward pass, counted per scope.
    pub flops: FlopCounter,
}

impl BenchReport {
    pub fn mean(&self) -> f64 {
        self.times.iter().sum::<f64>() / self.times.len() as f64
    }

    pub fn median(&self) -> f64 {
        let mut t = self.times.clone();
        t.sort_by(f64::total_cmp);
        let n = t.len();
        if n % 2 == 1 {
            t[n / 2]
        } else {
            (t[n / 2 - 1] + t[n / 2]) / 2.0
        }
    }

    /// Modeled FLOPs of all norm layers in the pass.
    pub fn norm_flops(&self) -> u64 {
        self.flops.rows().iter().map(|&r| self.flops.norm_flops(r)).sum()
    }

    pub fn conv_flops(&self) -> u64 {
        self.flops.rows().iter().map(|&r| self.flops.conv_flops(r)).sum()
    }
}

/// Times `iters` single-image `f32` forward passes of a freshly built
/// generator after [`WARMUP`] untimed ones. Mask and weights depend only on
/// `seed`.
pub fn bench_forward(arch: &ArchSpec, iters: usize, seed: u64, model: CostModel) -> Result<BenchReport> {
    let gen = Generator::<f32>::build(arch, seed)?;
    let (h, w) = gen.output_size();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mask = random_shape_mask(&mut rng, h, w, arch.nc, 4);
    let cond = [Conditioning::derived(mask, arch)];
    let (_, flops) = gen.forward_counted(&cond, FlopCounter::new(model))?;
    for _ in 0..WARMUP {
        std::hint::black_box(gen.forward_batch(&cond)?);
    }
    let mut times = Vec::with_capacity(iters);
    for _ in 0..iters.max(1) {
        let t = Instant::now();
        std::hint::black_box(gen.forward_batch(&cond)?);
        times.push(t.elapsed().as_secs_f64());
    }
    Ok(BenchReport { times, flops })
}
