#![allow(dead_code)]

use rand::Rng;
use smoothctl_core::{Dataset, FirstOrderSample};

/// Smooth test function with a known Lipschitz gradient constant.
#[derive(Clone, Debug)]
pub enum TestFn {
    /// `½ sᵀHs + b·s + c`
    Quadratic { h: Vec<Vec<f64>>, b: Vec<f64>, c: f64 },
    /// `a·sin(k·(w·s) + phase)` with `|w| = 1`
    Sine { a: f64, k: f64, w: Vec<f64>, phase: f64 },
}

impl TestFn {
    /// Random function whose gradient is `lc`-Lipschitz.
    pub fn random(rng: &mut impl Rng, dim: usize, lc: f64) -> Self {
        if rng.gen_bool(0.5) {
            let mut h = vec![vec![0.0; dim]; dim];
            for i in 0..dim {
                for j in 0..=i {
                    let v = rng.gen_range(-1.0..1.0);
                    h[i][j] = v;
                    h[j][i] = v;
                }
            }
            // Frobenius norm bounds the spectral norm.
            let fro = h.iter().flatten().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            let scale = lc * rng.gen_range(0.1..1.0) / fro;
            for v in h.iter_mut().flatten() {
                *v *= scale;
            }
            let b = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
            TestFn::Quadratic { h, b, c: rng.gen_range(-1.0..1.0) }
        } else {
            let mut w: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let n = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n < 1e-6 {
                w = vec![0.0; dim];
                w[0] = 1.0;
            } else {
                w.iter_mut().for_each(|v| *v /= n);
            }
            let k = rng.gen_range(0.3..3.0);
            let a = lc * rng.gen_range(0.1..1.0) / (k * k);
            TestFn::Sine { a, k, w, phase: rng.gen_range(0.0..6.3) }
        }
    }

    pub fn value(&self, s: &[f64]) -> f64 {
        match self {
            TestFn::Quadratic { h, b, c } => {
                let hs: Vec<f64> = h.iter().map(|r| dot(r, s)).collect();
                0.5 * dot(s, &hs) + dot(b, s) + c
            }
            TestFn::Sine { a, k, w, phase } => a * (k * dot(w, s) + phase).sin(),
        }
    }

    pub fn gradient(&self, s: &[f64]) -> Vec<f64> {
        match self {
            TestFn::Quadratic { h, b, .. } => h.iter().zip(b).map(|(r, bi)| dot(r, s) + bi).collect(),
            TestFn::Sine { a, k, w, phase } => {
                let c = a * k * (k * dot(w, s) + phase).cos();
                w.iter().map(|wi| c * wi).collect()
            }
        }
    }

    pub fn sample(&self, q: Vec<f64>) -> FirstOrderSample {
        let v = self.value(&q);
        let g = self.gradient(&q);
        FirstOrderSample::new(q, v, g).unwrap()
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn uniform(rng: &mut impl Rng, lo: &[f64], hi: &[f64]) -> Vec<f64> {
    lo.iter().zip(hi).map(|(l, h)| if h > l { rng.gen_range(*l..*h) } else { *l }).collect()
}

/// `t` samples of `f` at uniform points of `[lo, hi]`.
pub fn dataset(rng: &mut impl Rng, f: &TestFn, dim_z: usize, lo: &[f64], hi: &[f64], t: usize) -> Dataset {
    let samples = (0..t).map(|_| f.sample(uniform(rng, lo, hi))).collect();
    Dataset::from_samples(dim_z, lo.len() - dim_z, samples).unwrap()
}

/// Majorant computed directly from its defining formula.
pub fn naive_majorant(d: &Dataset, lc: f64, s: &[f64]) -> f64 {
    d.samples()
        .iter()
        .map(|x| x.value + dot(&x.gradient, &sub(s, &x.q)) + 0.5 * lc * dist_sq(s, &x.q))
        .fold(f64::INFINITY, f64::min)
}

pub fn naive_minorant(d: &Dataset, lc: f64, s: &[f64]) -> f64 {
    d.samples()
        .iter()
        .map(|x| x.value + dot(&x.gradient, &sub(s, &x.q)) - 0.5 * lc * dist_sq(s, &x.q))
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Five sign patterns of `(α, β)` with `α + β > 0`, plus their boundaries.
pub fn random_weights(rng: &mut impl Rng, case: usize) -> (f64, f64) {
    match case {
        0 => {
            let a = rng.gen_range(0.2..2.0);
            (a, -rng.gen_range(0.0..0.9) * a)
        }
        1 => {
            let b = rng.gen_range(0.2..2.0);
            (-rng.gen_range(0.0..0.9) * b, b)
        }
        2 => {
            let a = rng.gen_range(0.2..2.0);
            (a, a)
        }
        3 => {
            let b = rng.gen_range(0.1..1.5);
            (b + rng.gen_range(0.1..1.5), b)
        }
        4 => {
            let a = rng.gen_range(0.1..1.5);
            (a, a + rng.gen_range(0.1..1.5))
        }
        5 => (1.0, 0.0),
        _ => (0.0, 1.0),
    }
}
