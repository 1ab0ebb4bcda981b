//! Backward-vs-finite-difference check over every parameter of a small
//! generator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::arch::ArchSpec;
use crate::autodiff::{finite_diff, relative_error, Tape};
use crate::error::Result;
use crate::generator::{synth_task, Conditioning, Generator, ToyTask};
use crate::tensor::{Shape, Tensor};

/// Step relative to `max(1, |θ|)`.
pub const REL_STEP: f64 = 1e-3;
pub const TOLERANCE: f64 = 1e-4;
/// Norm floor in [`relative_error`]; only parameters whose true gradient is
/// exactly zero (biases absorbed by a following batch norm) get near it.
pub const NORM_FLOOR: f64 = 1e-6;

/// Two residual blocks between head and tail convs, exercising convs, batch
/// statistics, guided sampling, ICPE heads, learned and identity shortcuts,
/// edge embedding and upsampling. `tanh` keeps the loss smooth at the
/// finite-difference step.
pub fn toy_arch() -> ArchSpec {
    ArchSpec::from_json(
        r#"{ "name": "gradcheck", "nc": 3, "cm": 4, "edges": true, "activation": "tanh",
             "blocks": [
               { "kind": "conv", "cin": 3, "cout": 4, "h": 4, "w": 4 },
               { "kind": "resblock", "cin": 4, "cout": 3, "h": 4, "w": 4, "norm": "clade_icpe" },
               { "kind": "resblock", "cin": 3, "cout": 3, "h": 8, "w": 8, "norm": "clade" },
               { "kind": "conv", "cin": 3, "cout": 3, "h": 8, "w": 8 } ] }"#,
    )
    .expect("built-in arch parses")
}

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub numel: usize,
    pub rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub seed: u64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.params.iter().map(|p| p.rel_err).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params.iter().max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
    }

    pub fn passed(&self) -> bool {
        self.max_rel_err() < TOLERANCE
    }
}

/// Builds `arch` with `seed`, jitters every parameter by up to ±0.3 (so
/// zero-initialized heads carry signal), then compares backward against
/// central differences on the MSE to a random textured target.
pub fn check(arch: &ArchSpec, seed: u64) -> Result<GradCheckReport> {
    let mut gen = Generator::<f64>::build(arch, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let ids: Vec<_> = gen.params().ids().collect();
    for &id in &ids {
        for v in gen.params_mut().get_mut(id).data_mut() {
            *v += rng.gen_range(-0.3..0.3);
        }
    }
    let (h, w) = gen.output_size();
    let samples = synth_task::<f64>(&ToyTask::new(arch.nc, 0.3), 2, h, w, seed)?;
    let cond: Vec<Conditioning> = samples
        .iter()
        .map(|s| Conditioning::derived(s.mask.clone(), arch))
        .collect();
    let mut data = Vec::new();
    for s in &samples {
        data.extend_from_slice(s.target.data());
    }
    let target = Tensor::from_vec(Shape::new(samples.len(), 3, h, w), data)?;

    let (_, grads) = gen.loss_and_grad(&cond, &target)?;
    let mut store = gen.params().clone();
    let numeric = finite_diff(&mut store, &ids, REL_STEP, |st| {
        let mut tape = Tape::new(st);
        let out = gen.record(&mut tape, &cond)?;
        let loss = tape.mse(out, &target)?;
        Ok(tape.value(loss).data()[0])
    })?;
    let params = ids
        .iter()
        .zip(&numeric)
        .map(|(&id, n)| {
            let zero;
            let a = match grads.param(id) {
                Some(g) => g,
                None => {
                    zero = Tensor::zeros(n.shape());
                    &zero
                }
            };
            ParamCheck {
                name: gen.params().name(id).to_string(),
                numel: n.numel(),
                rel_err: relative_error(a, n, NORM_FLOOR),
            }
        })
        .collect();
    Ok(GradCheckReport { seed, params })
}
