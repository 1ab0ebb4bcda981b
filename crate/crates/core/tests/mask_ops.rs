use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use clade_core::mask::{
    connected_components, edge_from_instance, icpe_map, icpe_map_with, random_shape_mask, Connectivity, IcpeMode,
    InstanceMap, SemanticMask,
};
use clade_core::netpbm::GrayImage;

fn mask(rows: &[&[u32]], classes: usize) -> SemanticMask {
    SemanticMask::new(rows.len(), rows[0].len(), classes, rows.concat()).unwrap()
}

#[test]
fn one_hot_has_one_indicator_per_pixel() {
    let m = mask(&[&[0, 2], &[1, 2]], 3);
    let t = m.one_hot::<f64>();
    assert_eq!(t.plane(0, 0), &[1.0, 0.0, 0.0, 0.0]);
    assert_eq!(t.plane(0, 1), &[0.0, 0.0, 1.0, 0.0]);
    assert_eq!(t.plane(0, 2), &[0.0, 1.0, 0.0, 1.0]);
}

#[test]
fn out_of_range_label_is_rejected() {
    let err = SemanticMask::new(1, 3, 2, vec![0, 1, 2]).unwrap_err();
    assert!(err.to_string().contains("(0, 2)"), "{err}");
}

#[test]
fn resize_uses_floor_mapping() {
    let m = mask(&[&[0, 1, 2]], 3);
    let up = m.resize_nearest(1, 6).unwrap();
    assert_eq!(up.labels(), &[0, 0, 1, 1, 2, 2]);
    // 3 -> 2: columns floor(0*3/2)=0 and floor(1*3/2)=1
    assert_eq!(m.resize_nearest(1, 2).unwrap().labels(), &[0, 1]);
    assert_eq!(up.resize_nearest(1, 3).unwrap(), m);
}

#[test]
fn checkerboard_components_depend_on_connectivity() {
    let m = SemanticMask::from_fn(4, 4, 2, |r, c| ((r + c) % 2) as u32).unwrap();
    assert_eq!(connected_components(&m, Connectivity::Four).components.len(), 16);
    assert_eq!(connected_components(&m, Connectivity::Eight).components.len(), 2);
}

#[test]
fn diagonal_line_is_one_component_only_under_eight() {
    let m = SemanticMask::from_fn(5, 5, 2, |r, c| u32::from(r == c)).unwrap();
    let four = connected_components(&m, Connectivity::Four);
    let eight = connected_components(&m, Connectivity::Eight);
    assert_eq!(four.of_class(1).count(), 5);
    assert_eq!(eight.of_class(1).count(), 1);
    let (_, diag) = eight.of_class(1).next().unwrap();
    assert_eq!(diag.pixels, 5);
    assert_eq!(diag.centroid(), (2.0, 2.0));
}

#[test]
fn edges_mark_both_sides_of_a_boundary() {
    let inst = InstanceMap::new(1, 2, vec![3, 7]).unwrap();
    assert_eq!(edge_from_instance::<f64>(&inst).data(), &[1.0, 1.0]);

    let inst = InstanceMap::from_fn(3, 3, |r, c| u32::from(r == 1 && c == 1)).unwrap();
    let e = edge_from_instance::<f64>(&inst);
    // the centre and its four neighbours, not the corners
    assert_eq!(e.data(), &[0.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 0.0]);
}

#[test]
fn uniform_instances_have_no_edges() {
    let inst = InstanceMap::from_fn(4, 5, |_, _| 9).unwrap();
    assert!(edge_from_instance::<f64>(&inst).data().iter().all(|&v| v == 0.0));
}

#[test]
fn icpe_on_a_line() {
    let m = SemanticMask::constant(1, 5, 1, 0).unwrap();
    let d = icpe_map(&m, IcpeMode::PerComponent);
    assert_eq!(d.channel(0), &[-1.0, -0.5, 0.0, 0.5, 1.0]);
    assert_eq!(d.channel(1), &[0.0; 5]);
}

#[test]
fn icpe_centre_of_odd_square_is_zero_and_gray_128() {
    let m = SemanticMask::constant(7, 7, 1, 0).unwrap();
    let d = icpe_map(&m, IcpeMode::default());
    assert_eq!((d.get(0, 3, 3), d.get(1, 3, 3)), (0.0, 0.0));
    assert_eq!((d.get(0, 0, 0), d.get(1, 6, 6)), (-1.0, 1.0));
    let gray: GrayImage = d.to_pgm(0);
    assert_eq!(gray.pixels[3 * 7 + 3], 128);
    assert_eq!(gray.pixels[3 * 7], 0);
    assert_eq!(gray.pixels[3 * 7 + 6], 255);
}

#[test]
fn satellite_fragments_measure_against_the_largest_component() {
    // class 1: a 1x3 bar and a lone pixel far to the right
    let m = mask(&[&[1, 1, 1, 0, 0, 0, 1]], 2);
    let largest = icpe_map(&m, IcpeMode::LargestComponentPerClass);
    let per = icpe_map(&m, IcpeMode::PerComponent);
    assert_eq!(&largest.channel(0)[..3], &[-1.0, 0.0, 1.0]);
    assert_eq!(largest.get(0, 0, 6), 1.0, "clamped");
    assert_eq!(per.get(0, 0, 6), 0.0, "single pixel has no extent");
}

#[test]
fn four_connectivity_splits_diagonal_objects() {
    let m = SemanticMask::from_fn(3, 3, 2, |r, c| u32::from(r == c)).unwrap();
    let d8 = icpe_map_with(&m, IcpeMode::PerComponent, Connectivity::Eight);
    let d4 = icpe_map_with(&m, IcpeMode::PerComponent, Connectivity::Four);
    assert_eq!((d8.get(0, 0, 0), d8.get(0, 2, 2)), (-1.0, 1.0));
    assert_eq!((d4.get(0, 0, 0), d4.get(0, 2, 2)), (0.0, 0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn edges_are_invariant_to_relabeling(seed in any::<u64>(), offset in 1u32..50) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_shape_mask(&mut rng, 12, 15, 5, 3);
        let a = InstanceMap::from_components(&m);
        let b = InstanceMap::new(12, 15, a.ids().iter().map(|&i| i * 7 + offset).collect()).unwrap();
        prop_assert_eq!(edge_from_instance::<f64>(&a), edge_from_instance::<f64>(&b));
    }

    #[test]
    fn icpe_is_invariant_to_class_permutation(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_shape_mask(&mut rng, 16, 16, 5, 4);
        let permuted = m.relabel(5, |l| (l + 2) % 5).unwrap();
        for mode in [IcpeMode::PerComponent, IcpeMode::LargestComponentPerClass] {
            prop_assert_eq!(icpe_map(&m, mode), icpe_map(&permuted, mode));
        }
    }

    #[test]
    fn transposed_mask_swaps_axes(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_shape_mask(&mut rng, 10, 13, 4, 3);
        let t = SemanticMask::from_fn(13, 10, 4, |r, c| m.get(c, r)).unwrap();
        let (a, b) = (icpe_map(&m, IcpeMode::PerComponent), icpe_map(&t, IcpeMode::PerComponent));
        for r in 0..10 {
            for c in 0..13 {
                prop_assert_eq!(a.get(0, r, c), b.get(1, c, r));
                prop_assert_eq!(a.get(1, r, c), b.get(0, c, r));
            }
        }
    }

    #[test]
    fn components_partition_the_mask(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_shape_mask(&mut rng, 20, 20, 6, 5);
        let cc = connected_components(&m, Connectivity::Eight);
        let total: usize = cc.components.iter().map(|c| c.pixels).sum();
        prop_assert_eq!(total, 400);
        for (p, &id) in cc.ids.iter().enumerate() {
            prop_assert_eq!(cc.components[id as usize].class, m.labels()[p]);
        }
    }
}
