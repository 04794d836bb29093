mod common;

use std::cmp::Ordering;

use common::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smoothctl_core::optimizer::{enumerate_regions, grid_minimize};
use smoothctl_core::surrogate::m_eval;
use smoothctl_core::{classify, minimize_surrogate, AxisBox, Dataset, Halfspace, Polyhedron, SurrogateSpec};

struct Instance {
    d: Dataset,
    spec: SurrogateSpec,
    z: Vec<f64>,
    set: Polyhedron,
}

fn instance(seed: u64, case: usize, cut: bool) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim_z = rng.gen_range(0..=1);
    let dim_u = rng.gen_range(1..=2);
    let dim = dim_z + dim_u;
    let lc = rng.gen_range(0.5..8.0);
    let f = TestFn::random(&mut rng, dim, lc);
    let t = rng.gen_range(1..=8);
    let d = dataset(&mut rng, &f, dim_z, &vec![-1.0; dim], &vec![1.0; dim], t);
    let (alpha, beta) = random_weights(&mut rng, case);
    let spec = SurrogateSpec::new(alpha, beta, lc).unwrap();
    let z = uniform(&mut rng, &vec![-1.0; dim_z], &vec![1.0; dim_z]);
    let c = uniform(&mut rng, &vec![-0.8; dim_u], &vec![0.8; dim_u]);
    let w: Vec<f64> = (0..dim_u).map(|_| rng.gen_range(0.2..0.6)).collect();
    let lo: Vec<f64> = c.iter().zip(&w).map(|(c, w)| c - w / 2.0).collect();
    let hi: Vec<f64> = c.iter().zip(&w).map(|(c, w)| c + w / 2.0).collect();
    let mut set = Polyhedron::from_box(AxisBox::new(lo, hi).unwrap());
    if cut && dim_u == 2 {
        let n = vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let off = dot(&n, &c) + 0.05;
        set = set.with_halfspace(Halfspace::new(n, off).unwrap()).unwrap();
    }
    Instance { d, spec, z, set }
}

fn m_at(inst: &Instance, u: &[f64]) -> f64 {
    let s: Vec<f64> = inst.z.iter().chain(u).copied().collect();
    m_eval(&inst.d, &inst.spec, &s).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn exact_solver_agrees_with_the_grid(seed in any::<u64>(), case in 0usize..7, cut in any::<bool>()) {
        let inst = instance(seed, case, cut);
        let r = minimize_surrogate(&inst.d, &inst.spec, &inst.z, &inst.set).unwrap();
        prop_assert!(inst.set.contains(&r.minimizer, 1e-7).unwrap());
        let scale = 1.0 + r.value.abs();
        prop_assert!((m_at(&inst, &r.minimizer) - r.value).abs() <= 1e-7 * scale);
        let h = 5e-3;
        let (_, grid) = grid_minimize(|u| m_at(&inst, u), &inst.set, &[h]).unwrap();
        prop_assert!(r.value <= grid + 1e-9 * scale, "exact {} above grid {}", r.value, grid);
        // The surrogate's u-gradient on the instance is bounded by the
        // largest sample gradient plus curvature times the spread.
        let lc = inst.spec.lipschitz_gradient;
        let g = (inst.spec.alpha.abs() + inst.spec.beta.abs())
            * inst.d.samples().iter().map(|x| dot(&x.gradient, &x.gradient).sqrt() + lc * 4.0).fold(0.0, f64::max);
        let du = inst.set.dim() as f64;
        if !cut {
            prop_assert!(r.value >= grid - g * h * du.sqrt(), "exact {} far below grid {}", r.value, grid);
        }
    }

    #[test]
    fn region_counts_and_curvature_signs(seed in any::<u64>(), case in 0usize..7, cut in any::<bool>()) {
        let inst = instance(seed, case, cut);
        let t = inst.d.len();
        let r = minimize_surrogate(&inst.d, &inst.spec, &inst.z, &inst.set).unwrap();
        prop_assert!(r.regions_examined <= t * t);
        prop_assert!(r.regions_nonempty <= r.regions_examined.max(t));
        prop_assert!(r.upper_pieces_used <= t);
        let sign = classify(inst.spec.alpha, inst.spec.beta).unwrap().curvature_sign();
        for rq in enumerate_regions(&inst.d, &inst.spec, &inst.z, &inst.set).unwrap() {
            prop_assert_eq!(rq.curvature.partial_cmp(&0.0).unwrap(), sign);
            let vs = rq.vertices();
            let n = vs.len() as f64;
            let centroid: Vec<f64> = (0..inst.set.dim()).map(|k| vs.iter().map(|v| v[k]).sum::<f64>() / n).collect();
            let scale = 1.0 + rq.eval(&centroid).abs();
            prop_assert!((rq.eval(&centroid) - m_at(&inst, &centroid)).abs() <= 1e-9 * scale);
        }
    }

    #[test]
    fn more_data_never_lowers_the_optimistic_minimum(seed in any::<u64>(), cut in any::<bool>()) {
        let mut inst = instance(seed, 6, cut);
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
        let dim = inst.d.dim();
        let f = TestFn::random(&mut rng, dim, inst.spec.lipschitz_gradient);
        let mut prev = minimize_surrogate(&inst.d, &inst.spec, &inst.z, &inst.set).unwrap().value;
        for _ in 0..4 {
            inst.d.push(f.sample(uniform(&mut rng, &vec![-1.0; dim], &vec![1.0; dim]))).unwrap();
            let next = minimize_surrogate(&inst.d, &inst.spec, &inst.z, &inst.set).unwrap().value;
            prop_assert!(next >= prev - 1e-12 * (1.0 + prev.abs()), "{next} < {prev}");
            prev = next;
        }
    }
}

#[test]
fn classification_table() {
    use smoothctl_core::ConvexityCase::*;
    assert_eq!(classify(1.0, -0.5).unwrap(), ConvexQuadPiecesTSq);
    assert_eq!(classify(-0.5, 1.0).unwrap(), ConcavePiecesT);
    assert_eq!(classify(0.5, 0.5).unwrap(), LinearPieces);
    assert_eq!(classify(0.7, 0.3).unwrap(), ConvexQuadPiecesT);
    assert_eq!(classify(0.3, 0.7).unwrap(), SingleConcave);
    assert_eq!(classify(1.0, 0.0).unwrap().curvature_sign(), Ordering::Greater);
    assert_eq!(classify(0.0, 1.0).unwrap().curvature_sign(), Ordering::Less);
    assert!(classify(1.0, -2.0).is_err());
    assert!(classify(0.0, 0.0).is_err());
}
