//! Shared fixtures and independent oracles for integration tests.

#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qspca::solver::CalibrationSet;
use qspca::tensor::{lower_conv, ConvSpec, WeightTensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_weight(kernel: [usize; 4], seed: u64) -> WeightTensor {
    let mut r = rng(seed);
    let len = kernel.iter().product();
    let data: Vec<f32> = (0..len).map(|_| r.random_range(-0.5f32..0.5)).collect();
    WeightTensor::new(kernel[0], kernel[1], kernel[2], kernel[3], data).unwrap()
}

/// Calibration activations whose outputs come from the given weight.
pub fn calibration_for(
    weights: &WeightTensor,
    samples: usize,
    in_hw: (usize, usize),
    stride: usize,
    padding: usize,
    seed: u64,
) -> CalibrationSet {
    let [f_out, f_in, kh, kw] = weights.shape();
    let spec = ConvSpec::new(in_hw.0, in_hw.1, kh, kw, stride, padding).unwrap();
    let mut r = rng(seed);
    let x_sample = f_in * spec.in_h * spec.in_w;
    let p = spec.output_size();
    let w_mat = DMatrix::from_row_slice(
        f_out,
        f_in * kh * kw,
        &weights.data().iter().map(|&v| v as f64).collect::<Vec<_>>(),
    );
    let mut x_data = Vec::with_capacity(samples * x_sample);
    let mut y_data = Vec::with_capacity(samples * f_out * p);
    for _ in 0..samples {
        let x: Vec<f64> = (0..x_sample).map(|_| r.random_range(-1.0..1.0)).collect();
        let xcol = lower_conv(&x, f_in, &spec, kh, kw).unwrap();
        let y = &w_mat * &xcol;
        x_data.extend_from_slice(&x);
        for row in 0..f_out {
            for col in 0..p {
                y_data.push(y[(row, col)]);
            }
        }
    }
    CalibrationSet::new(
        weights.shape(),
        stride,
        padding,
        [samples, f_in, spec.in_h, spec.in_w],
        &x_data,
        [samples, f_out, spec.out_h, spec.out_w],
        &y_data,
        seed,
    )
    .unwrap()
}

/// Jacobi eigenvalue iteration on a symmetric matrix, descending order.
/// Independent oracle for singular-value energy.
pub fn jacobi_eigenvalues(mut a: DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[(i, j)] * a[(i, j)];
            }
        }
        if off.sqrt() < 1e-13 * a.norm().max(1e-300) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[(p, q)].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for i in 0..n {
                    let aip = a[(i, p)];
                    let aiq = a[(i, q)];
                    a[(i, p)] = c * aip - s * aiq;
                    a[(i, q)] = s * aip + c * aiq;
                }
                for i in 0..n {
                    let api = a[(p, i)];
                    let aqi = a[(q, i)];
                    a[(p, i)] = c * api - s * aqi;
                    a[(q, i)] = s * api + c * aqi;
                }
            }
        }
    }
    let mut eigs: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    eigs.sort_by(|x, y| y.total_cmp(x));
    eigs
}
