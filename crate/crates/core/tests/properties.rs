use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dssl::data::Patch;
use dssl::eval::{isomap_2d, kendall_tau, pca_2d, pearson_r};
use dssl::ewt::{build_filterbank, detect_boundaries, fourier_magnitude};
use dssl::nn::{EmbeddingKind, Model, ModelConfig};
use dssl::train::degradation_loss;

fn tiny() -> ModelConfig {
    ModelConfig {
        d_model: 8,
        n_layers: 1,
        n_heads: 2,
        conv_channels: vec![3, 4],
        inception_kernels: vec![3, 5],
        window_len: 32,
        mlp_ratio: 2.0,
        embedding: EmbeddingKind::Conv,
    }
}

fn random_patches(rng: &mut ChaCha8Rng, n: usize, len: usize) -> Vec<Patch<f64>> {
    (0..n)
        .map(|j| {
            let v = (0..len).map(|_| rng.random_range(-0.5..0.5)).collect();
            let i = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
            Patch::new("c", j, 0, v, i).unwrap()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn loss_is_translation_invariant(h in prop::collection::vec(-5.0f64..5.0, 2..12), c in -50.0f64..50.0) {
        let base = degradation_loss(&h, 0.1).unwrap().0;
        let shifted: Vec<f64> = h.iter().map(|v| v + c).collect();
        let moved = degradation_loss(&shifted, 0.1).unwrap().0;
        prop_assert!((base - moved).abs() <= 1e-9 * base.max(1.0));
    }

    #[test]
    fn loss_depends_on_ratio_of_scale_and_temperature(
        h in prop::collection::vec(-5.0f64..5.0, 2..12),
        a in 0.1f64..10.0,
        tau in 0.05f64..2.0,
    ) {
        let base = degradation_loss(&h, tau).unwrap().0;
        let scaled: Vec<f64> = h.iter().map(|v| v * a).collect();
        let other = degradation_loss(&scaled, tau * a).unwrap().0;
        prop_assert!((base - other).abs() <= 1e-9 * base.max(1.0));
    }

    #[test]
    fn loss_gradient_sums_to_zero(h in prop::collection::vec(-5.0f64..5.0, 2..12)) {
        let (_, g) = degradation_loss(&h, 0.3).unwrap();
        prop_assert!(g.iter().sum::<f64>().abs() < 1e-9);
    }

    #[test]
    fn strictly_decreasing_beats_its_reverse(mut h in prop::collection::vec(-5.0f64..5.0, 2..12)) {
        h.sort_by(|a, b| b.total_cmp(a));
        h.dedup();
        prop_assume!(h.len() >= 2);
        let forward = degradation_loss(&h, 0.2).unwrap().0;
        let rev: Vec<f64> = h.iter().rev().copied().collect();
        prop_assert!(forward < degradation_loss(&rev, 0.2).unwrap().0);
    }

    #[test]
    fn pearson_is_affine_invariant(
        x in prop::collection::vec(-10.0f64..10.0, 3..30),
        a in 0.1f64..5.0,
        b in -5.0f64..5.0,
    ) {
        let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| v * v + i as f64).collect();
        if let Ok(r) = pearson_r(&x, &y) {
            let x2: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            let r2 = pearson_r(&x2, &y).unwrap();
            prop_assert!((r - r2).abs() < 1e-9);
            let neg: Vec<f64> = x.iter().map(|v| -a * v + b).collect();
            prop_assert!((r + pearson_r(&neg, &y).unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn kendall_is_bounded(x in prop::collection::vec(-10.0f64..10.0, 3..30)) {
        let y: Vec<f64> = x.iter().map(|v| v.sin()).collect();
        if let Ok(t) = kendall_tau(&x, &y) {
            prop_assert!((-1.0..=1.0).contains(&t));
        }
    }

    #[test]
    fn encoder_is_permutation_equivariant(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model: Model<f64> = Model::init(tiny(), seed).unwrap();
        let patches = random_patches(&mut rng, 6, 32);
        let h = model.predict(&patches).unwrap();
        let perm = [3usize, 0, 5, 1, 4, 2];
        let permuted: Vec<Patch<f64>> = perm.iter().map(|&i| patches[i].clone()).collect();
        let hp = model.predict(&permuted).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            prop_assert!((hp[k] - h[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn ewt_modes_sum_to_signal(seed in 0u64..1000, n in 16usize..600, n_modes in 2usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let spectrum = fourier_magnitude(&x).unwrap();
        if let Ok(b) = detect_boundaries(&spectrum, n_modes) {
            let bank = build_filterbank(&b, 0.9 * b.max_gamma()).unwrap();
            let modes = bank.decompose(&x).unwrap();
            prop_assert_eq!(modes.len(), n_modes);
            for i in 0..n {
                let s: f64 = modes.iter().map(|m| m[i]).sum();
                prop_assert!((s - x[i]).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn gradients_match_finite_differences_across_seeds() {
    for seed in [11u64, 12, 13] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model: Model<f64> = Model::init(tiny(), seed).unwrap();
        for (_, t) in model.params.iter_mut() {
            t.data_mut().iter_mut().for_each(|v| *v += 0.05 * rng.random_range(-1.0..1.0));
        }
        let patches = random_patches(&mut rng, 4, 32);
        let (h, cache) = model.forward(&patches).unwrap();
        let (_, dh) = degradation_loss(&h, 0.2).unwrap();
        let mut grads = model.zero_grads();
        model.backward(&dh, &cache, &mut grads).unwrap();
        let names: Vec<String> = model.params.names().iter().map(|s| s.to_string()).collect();
        for name in names {
            // every third entry keeps the test quick
            for i in (0..model.params.get(&name).len()).step_by(3) {
                let orig = model.params.get(&name).data()[i];
                let step = 1e-5;
                model.params.get_mut(&name).data_mut()[i] = orig + step;
                let lp = degradation_loss(&model.predict(&patches).unwrap(), 0.2).unwrap().0;
                model.params.get_mut(&name).data_mut()[i] = orig - step;
                let lm = degradation_loss(&model.predict(&patches).unwrap(), 0.2).unwrap().0;
                model.params.get_mut(&name).data_mut()[i] = orig;
                let fd = (lp - lm) / (2.0 * step);
                let an = grads.get(&name).data()[i];
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
                assert!(rel < 1e-4, "seed {seed} {name}[{i}]: analytic {an}, numeric {fd}");
            }
        }
    }
}

#[test]
fn ewt_reconstructs_at_reference_lengths() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for n in [64usize, 128, 1000, 4096] {
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b = detect_boundaries(&fourier_magnitude(&x).unwrap(), 4).unwrap();
        let modes = build_filterbank(&b, 0.9 * b.max_gamma()).unwrap().decompose(&x).unwrap();
        let err: f64 = (0..n).map(|i| (modes.iter().map(|m| m[i]).sum::<f64>() - x[i]).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(err / norm < 1e-9, "n = {n}: relative error {}", err / norm);
    }
}

#[test]
fn pca_on_isotropic_cloud_is_orthonormal() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let rows: Vec<Vec<f64>> = (0..300).map(|_| (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let pca = pca_2d(&rows).unwrap();
    let dot = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    let [c0, c1] = &pca.components;
    assert!((dot(c0, c0) - 1.0).abs() < 1e-6);
    assert!((dot(c1, c1) - 1.0).abs() < 1e-6);
    assert!(dot(c0, c1).abs() < 1e-6);
    assert!(pca.variances[0] >= pca.variances[1]);
}

#[test]
fn isomap_recovers_planar_distances() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let flat: Vec<[f64; 2]> = (0..500).map(|_| [rng.random_range(0.0..3.0), rng.random_range(0.0..3.0)]).collect();
    let u = [0.6, 0.0, 0.8, 0.0];
    let v = [0.0, 1.0, 0.0, 0.0];
    let rows: Vec<Vec<f64>> = flat.iter().map(|p| (0..4).map(|d| p[0] * u[d] + p[1] * v[d]).collect()).collect();
    let iso = isomap_2d(&rows, 16).unwrap();
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..flat.len() {
        for j in (i + 1)..flat.len() {
            let d = ((flat[i][0] - flat[j][0]).powi(2) + (flat[i][1] - flat[j][1]).powi(2)).sqrt();
            let e = ((iso[i][0] - iso[j][0]).powi(2) + (iso[i][1] - iso[j][1]).powi(2)).sqrt();
            num += (d - e).powi(2);
            den += d * d;
        }
    }
    assert!((num / den).sqrt() < 0.05, "relative RMS {}", (num / den).sqrt());
}
