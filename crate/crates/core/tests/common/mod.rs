//! Random certified instances shared by the integration suites.
#![allow(dead_code)]

use nsfold::certificates::{
    filippov_certificate, hybrid_certificate, map_certificate, ode_certificate, Certificate,
};
use nsfold::{FilippovForm, HybridForm, PwlMap, PwlOde, SquareMatrix, Vector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    rand::SeedableRng::seed_from_u64(seed)
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vector {
    (0..n)
        .map(|_| rng.gen_range(-scale..scale))
        .collect::<Vec<_>>()
        .into()
}

pub fn uniform_matrix(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> SquareMatrix {
    SquareMatrix::new(
        n,
        (0..n * n).map(|_| rng.gen_range(-scale..scale)).collect(),
    )
    .unwrap()
}

/// `(A, A')` differing only in the first column.
pub fn continuous_pair(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> (SquareMatrix, SquareMatrix) {
    let left = uniform_matrix(rng, n, scale);
    let mut right = left.clone();
    for i in 0..n {
        right[(i, 0)] = rng.gen_range(-scale..scale);
    }
    (left, right)
}

fn sign_mu(rng: &mut ChaCha8Rng) -> f64 {
    if rng.gen_bool(0.5) {
        1.0
    } else {
        -1.0
    }
}

/// Rejection sampling: draws until both fixed points are virtual. Instances
/// with rate below `min_rate` are redrawn to keep the suites well
/// conditioned.
pub fn fold_map(rng: &mut ChaCha8Rng, n: usize, min_rate: f64) -> (PwlMap, Certificate) {
    loop {
        let (al, ar) = continuous_pair(rng, n, 2.0);
        let m = PwlMap::new(al, ar, uniform_vec(rng, n, 1.0), sign_mu(rng)).unwrap();
        if let Ok(c) = map_certificate(&m) {
            if c.rate >= min_rate {
                return (m, c);
            }
        }
    }
}

pub fn fold_ode(rng: &mut ChaCha8Rng, n: usize, min_rate: f64) -> (PwlOde, Certificate) {
    loop {
        let (al, ar) = continuous_pair(rng, n, 1.0);
        let o = PwlOde::new(al, ar, uniform_vec(rng, n, 1.0), sign_mu(rng)).unwrap();
        if let Ok(c) = ode_certificate(&o) {
            if c.rate >= min_rate {
                return (o, c);
            }
        }
    }
}

pub fn fold_filippov(rng: &mut ChaCha8Rng, n: usize, min_rate: f64) -> (FilippovForm, Certificate) {
    loop {
        let f = FilippovForm::new(
            uniform_matrix(rng, n, 1.0),
            uniform_vec(rng, n, 1.0),
            uniform_vec(rng, n, 1.0),
            sign_mu(rng),
        )
        .unwrap();
        if let Ok(c) = filippov_certificate(&f) {
            if c.rate >= min_rate {
                return (f, c);
            }
        }
    }
}

pub fn fold_hybrid(rng: &mut ChaCha8Rng, n: usize, min_rate: f64) -> (HybridForm, Certificate) {
    loop {
        let mut c = uniform_vec(rng, n, 2.0);
        c[0] = 0.0;
        let Ok(h) = HybridForm::new(
            uniform_matrix(rng, n, 1.0),
            uniform_vec(rng, n, 1.0),
            c,
            sign_mu(rng),
        ) else {
            continue;
        };
        if h.restitution_term() >= -1.0 {
            continue;
        }
        if let Ok(cert) = hybrid_certificate(&h) {
            if cert.rate >= min_rate {
                return (h, cert);
            }
        }
    }
}

/// Uniform sample of the closed ball of radius `r` by rejection.
pub fn in_ball(rng: &mut ChaCha8Rng, n: usize, r: f64) -> Vector {
    loop {
        let x = uniform_vec(rng, n, r);
        if x.norm() <= r {
            return x;
        }
    }
}
