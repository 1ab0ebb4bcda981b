use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use clade_core::conv::ConvKernel;
use clade_core::mask::{icpe_map, random_shape_mask, IcpeMode, PositionalEncodingMap, SemanticMask};
use clade_core::norm::{
    clade_forward, clade_icpe_forward, concentration_stats, embed_edges, guided_sample, normalize, spade_forward,
    ConcentrationOptions, EdgeParams, IcpeHeads, ParamBank, SpadeBlock, StatsMode, EPS,
};
use clade_core::tensor::{Shape, Tensor};

fn random(rng: &mut impl Rng, shape: Shape) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(-2.0..2.0))
}

fn random_bank(rng: &mut impl Rng, classes: usize, channels: usize) -> ParamBank<f64> {
    let g = (0..classes * channels).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let b = (0..classes * channels).map(|_| rng.gen_range(-2.0..2.0)).collect();
    ParamBank::new(classes, channels, g, b).unwrap()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn normalizing_a_pair_gives_plus_minus_one() {
    let x = Tensor::from_vec(Shape::new(1, 1, 1, 2), vec![3.0, 5.0]).unwrap();
    let s = 1.0 / (1.0 + EPS).sqrt();
    assert!(close(normalize(&x, StatsMode::Batch).data(), &[-s, s], 1e-15));
}

#[test]
fn clade_two_pixel_hand_case() {
    // x̂ ≈ (-1, 1); class 0 keeps it, class 1 doubles and shifts by 1
    let x = Tensor::from_vec(Shape::new(1, 1, 1, 2), vec![0.0, 2.0]).unwrap();
    let m = SemanticMask::new(1, 2, 2, vec![0, 1]).unwrap();
    let bank = ParamBank::new(2, 1, vec![1.0, 2.0], vec![0.0, 1.0]).unwrap();
    let y = clade_forward(&x, &m, &bank, StatsMode::Batch).unwrap();
    assert!(close(y.data(), &[-1.0, 3.0], 1e-4));
}

#[test]
fn edge_channel_is_appended() {
    let x = Tensor::ones(Shape::new(2, 3, 2, 2));
    let e = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let y = embed_edges(&x, &e, &EdgeParams { gamma_c: 2.0, beta_c: -1.0 }).unwrap();
    assert_eq!(y.shape(), Shape::new(2, 4, 2, 2));
    assert_eq!(y.plane(1, 3), &[1.0, -1.0, -1.0, 1.0]);
    assert_eq!(y.plane(1, 2), x.plane(1, 2));
}

#[test]
fn icpe_with_zero_heads_is_clade_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let m = random_shape_mask(&mut rng, 9, 11, 4, 3);
        let x = random(&mut rng, Shape::new(2, 5, 9, 11));
        let bank = random_bank(&mut rng, 4, 5);
        let d = icpe_map(&m, IcpeMode::default());
        for mode in [StatsMode::Batch, StatsMode::Instance] {
            let plain = clade_forward(&x, &m, &bank, mode).unwrap();
            let icpe = clade_icpe_forward(&x, &m, &bank, &IcpeHeads::zeros(), &d, mode).unwrap();
            assert_eq!(plain, icpe);
        }
    }
}

#[test]
fn icpe_rescales_by_one_plus_head_output() {
    // same class, same x̂ value at both pixels; only d differs
    let x = Tensor::from_vec(Shape::new(1, 1, 1, 4), vec![1.0, 1.0, -1.0, -1.0]).unwrap();
    let m = SemanticMask::constant(1, 4, 1, 0).unwrap();
    let bank = ParamBank::new(1, 1, vec![2.0], vec![0.5]).unwrap();
    let d = PositionalEncodingMap::new(1, 4, vec![0.5, -0.25, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
    let head = |wx: f64, wy: f64, b: f64| {
        ConvKernel::new(Tensor::from_vec(Shape::new(1, 2, 1, 1), vec![wx, wy]).unwrap(), vec![b], 1, 0).unwrap()
    };
    let heads = IcpeHeads {
        conv_gamma: head(1.0, 0.0, 0.0),
        conv_beta: head(0.0, 3.0, 1.0),
    };
    let y = clade_icpe_forward(&x, &m, &bank, &heads, &d, StatsMode::Batch).unwrap();
    let xhat = 1.0 / (1.0 + EPS).sqrt();
    // γ̃ = 2·(1 + d_x), β̃ = 0.5·(1 + 3·d_y + 1)
    let expect = [
        2.0 * 1.5 * xhat + 1.0,
        2.0 * 0.75 * xhat + 1.0,
        -2.0 * xhat + 1.0,
        -2.0 * xhat + 1.0,
    ];
    assert!(close(y.data(), &expect, 1e-12), "{:?}", y.data());
}

#[test]
fn spade_with_zero_heads_outputs_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let m = random_shape_mask(&mut rng, 8, 8, 3, 2);
    let x = random(&mut rng, Shape::new(1, 4, 8, 8));
    let block = SpadeBlock::zeros(3, 6, 4);
    let y = spade_forward(&x, &m.one_hot(), &block, StatsMode::Batch).unwrap();
    assert!(y.data().iter().all(|&v| v == 0.0));
}

#[test]
fn spade_maps_are_constant_inside_a_uniform_region() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let k = |rng: &mut ChaCha8Rng, cin, cout| {
        ConvKernel::new(
            random(rng, Shape::new(cout, cin, 3, 3)),
            (0..cout).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            1,
            1,
        )
        .unwrap()
    };
    let block = SpadeBlock {
        shared: k(&mut rng, 2, 5),
        gamma_head: k(&mut rng, 5, 3),
        beta_head: k(&mut rng, 5, 3),
    };
    let m = SemanticMask::constant(10, 10, 2, 1).unwrap();
    let x = Tensor::ones(Shape::new(1, 3, 10, 10));
    // x̂ = 0 everywhere, so the output is the β map
    let y = spade_forward(&x, &m.one_hot(), &block, StatsMode::Batch).unwrap();
    let opts = ConcentrationOptions { bins: 4, margin: 2 };
    let rep = concentration_stats(&y, &m, opts).unwrap();
    assert!(rep.rows.iter().all(|r| r.std == 0.0));
    // border pixels see zero padding and differ
    let full = concentration_stats(&y, &m, ConcentrationOptions::default()).unwrap();
    assert!(full.rows.iter().any(|r| r.std > 0.0));
}

#[test]
fn batch_layout_matches_per_sample_instance_norm() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let m = random_shape_mask(&mut rng, 6, 7, 3, 2);
    let bank = random_bank(&mut rng, 3, 2);
    let x = random(&mut rng, Shape::new(3, 2, 6, 7));
    let batched = clade_forward(&x, &m, &bank, StatsMode::Instance).unwrap();
    for n in 0..3 {
        let one = Tensor::from_fn(Shape::new(1, 2, 6, 7), |_, c, h, w| x.at(n, c, h, w));
        let y = clade_forward(&one, &m, &bank, StatsMode::Instance).unwrap();
        for c in 0..2 {
            assert_eq!(y.plane(0, c), batched.plane(n, c));
        }
    }
}

#[test]
fn relabeling_mask_and_bank_together_changes_nothing() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (classes, channels) = (5, 3);
    let m = random_shape_mask(&mut rng, 12, 12, classes, 4);
    let bank = random_bank(&mut rng, classes, channels);
    let x = random(&mut rng, Shape::new(2, channels, 12, 12));
    let perm = [3u32, 0, 4, 1, 2];
    let pm = m.relabel(classes, |l| perm[l as usize]).unwrap();
    let mut g = vec![0.0; classes * channels];
    let mut b = vec![0.0; classes * channels];
    for l in 0..classes {
        let to = perm[l] as usize;
        g[to * channels..(to + 1) * channels].copy_from_slice(bank.gamma_of(l));
        b[to * channels..(to + 1) * channels].copy_from_slice(bank.beta_of(l));
    }
    let pbank = ParamBank::new(classes, channels, g, b).unwrap();
    assert_eq!(
        clade_forward(&x, &m, &bank, StatsMode::Batch).unwrap(),
        clade_forward(&x, &pm, &pbank, StatsMode::Batch).unwrap()
    );
}

#[test]
fn guided_maps_concentrate_and_noise_does_not() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let m = random_shape_mask(&mut rng, 32, 32, 4, 3);
    let (gamma, _) = guided_sample(&random_bank(&mut rng, 4, 3), &m).unwrap();
    let opts = ConcentrationOptions::default();
    assert_eq!(concentration_stats(&gamma, &m, opts).unwrap().ratio(), 0.0);
    let noise = random(&mut rng, Shape::new(1, 3, 32, 32));
    let r = concentration_stats(&noise, &m, opts).unwrap().ratio();
    assert!((r - 1.0).abs() < 0.1, "R = {r}");
}

#[test]
fn histogram_csv_lists_each_present_class_channel() {
    let m = SemanticMask::new(1, 4, 3, vec![0, 0, 2, 2]).unwrap();
    let map = Tensor::from_vec(Shape::new(1, 1, 1, 4), vec![1.0, 3.0, 5.0, 5.0]).unwrap();
    let rep = concentration_stats(&map, &m, ConcentrationOptions { bins: 2, margin: 0 }).unwrap();
    let csv = rep.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "class,channel,mean,std,R,bin_edges,counts");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("0,0,2,1,"), "{}", lines[1]);
    assert!(lines[1].ends_with(",1;2;3,1;1"), "{}", lines[1]);
    assert!(lines[2].starts_with("2,0,5,0,"), "{}", lines[2]);
}
