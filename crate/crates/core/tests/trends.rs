//! Averaged statistical trends of the sketched solvers and codecs.

use sketchtensor::bench::{gen_synthetic_symmetric, gen_uniform};
use sketchtensor::compression::{compress_kron, reconstruct_kron, Codec, CodecConfig};
use sketchtensor::cpd::{residual_norm, rtpm, RtpmConfig};
use sketchtensor::derive_seed;
use sketchtensor::estimators::{Backend, EstimatorConfig};
use sketchtensor::tensor::kron;

const SEEDS: u64 = 10;

fn rtpm_residual(backend: Backend, hash_len: usize, seed: u64) -> f64 {
    let t = gen_synthetic_symmetric(12, 3, 0.01, seed).unwrap();
    let est = EstimatorConfig::new(hash_len, 5, derive_seed(seed, 2));
    let r = rtpm(&t, &RtpmConfig::new(3, backend, est, derive_seed(seed, 3))).unwrap();
    residual_norm(&t, &r.cp).unwrap()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

#[test]
fn rtpm_residual_falls_with_hash_length() {
    let lens = [20, 60, 200];
    let means: Vec<f64> = lens
        .iter()
        .map(|&j| {
            mean(
                &(0..SEEDS)
                    .map(|s| rtpm_residual(Backend::Fcs, j, s))
                    .collect::<Vec<_>>(),
            )
        })
        .collect();
    assert!(means.windows(2).all(|w| w[1] <= w[0]), "means {means:?}");
}

// At J=20 neither backend recovers anything (residual ~1), so the ordering
// is compared at the shortest length where the sketches carry signal.
#[test]
fn fcs_rtpm_beats_ts_at_short_hashes() {
    let wins = (0..SEEDS)
        .filter(|&s| rtpm_residual(Backend::Fcs, 40, s) <= rtpm_residual(Backend::Ts, 40, s))
        .count();
    assert!(wins * 10 >= 7 * SEEDS as usize, "fcs won {wins}/{SEEDS}");
}

#[test]
fn kron_error_falls_with_hash_length() {
    let a = gen_uniform(&[6, 7], -5.0, 5.0, 1).unwrap();
    let b = gen_uniform(&[7, 8], -5.0, 5.0, 2).unwrap();
    let am = nalgebra::DMatrix::from_column_slice(6, 7, a.data());
    let bm = nalgebra::DMatrix::from_column_slice(7, 8, b.data());
    let truth = kron(&am, &bm);
    let err = |j: usize, seed: u64| {
        let sk = compress_kron(&am, &bm, &CodecConfig::new(Codec::Fcs, j, 5, seed)).unwrap();
        (reconstruct_kron(&sk).unwrap() - &truth).norm() / truth.norm()
    };
    let means: Vec<f64> = [100, 200, 400]
        .iter()
        .map(|&j| mean(&(0..SEEDS).map(|s| err(j, s)).collect::<Vec<_>>()))
        .collect();
    assert!(means.windows(2).all(|w| w[1] <= w[0]), "means {means:?}");
    assert!(means[2] < 1.0);
}
