//! Closed-form and brute-force oracles for the simulators and solvers.

mod common;

use alphafair::alloc::{allocate, utility};
use alphafair::cone::build_geometry;
use alphafair::ctmc::{
    empirical_joint_pmf, exact_linear_law, simulate, simulate_many, stationary_approx, stationary_estimate, SimOptions,
};
use alphafair::model::build_ht_sequence;
use alphafair::multipath::{local_traffic_check, polytopes_equal, project, MultipathSpec, Polytope};
use alphafair::srbm::simulate_srbm;
use alphafair::NetworkSpec;
use common::{linear_network, total_variation};

fn mm1() -> NetworkSpec {
    NetworkSpec::new(vec![vec![1.0]], vec![1.0], vec![1.0], vec![2.0], vec![1.0], 1.0).unwrap()
}

#[test]
fn mm1_mean_and_geometric_histogram() {
    let path = simulate(&mm1(), &[0], 1e6, 11).unwrap();
    let est = stationary_estimate(&path).unwrap();
    assert!((est.mean[0] - 1.0).abs() < 0.02, "mean {}", est.mean[0]);
    let geometric: Vec<f64> = (0..est.histogram[0].len() as i32 + 200).map(|k| 0.5_f64.powi(k + 1)).collect();
    let tv = total_variation(&est.histogram[0], &geometric);
    assert!(tv < 0.01, "tv {tv}");
}

#[test]
fn mm1_short_run_mean() {
    let path = simulate(&mm1(), &[0], 1e5, 3).unwrap();
    let est = stationary_estimate(&path).unwrap();
    assert!((est.mean[0] - 1.0).abs() < 0.02, "mean {}", est.mean[0]);
}

#[test]
fn mm1_half_width_coverage() {
    let seeds: Vec<u64> = (100..150).collect();
    let runs = simulate_many(&mm1(), &[0], 1e5, &seeds, SimOptions::default());
    let covered = runs
        .into_iter()
        .filter(|p| {
            let est = stationary_estimate(p.as_ref().unwrap()).unwrap();
            (est.mean[0] - 1.0).abs() <= est.half_width[0]
        })
        .count();
    assert!(covered >= 45, "covered {covered}/50");
}

#[test]
fn linear_network_joint_law() {
    let law = exact_linear_law(2, 0.3, &[0.4, 0.4]).unwrap();
    let path = simulate(&law.network(), &[0, 0, 0], 1e6, 5).unwrap();
    let empirical = empirical_joint_pmf(&path, 0.2);
    let mut tv = 0.0;
    let mut mass_sim = 0.0;
    let mut mass_exact = 0.0;
    for a in 0..=5 {
        for b in 0..=5 {
            for c in 0..=5 {
                let key = vec![a, b, c];
                let p = empirical.get(&key).copied().unwrap_or(0.0);
                let q = law.pmf(&key);
                tv += (p - q).abs();
                mass_sim += p;
                mass_exact += q;
            }
        }
    }
    // Mass outside the box counts once for the tails.
    tv = 0.5 * (tv + ((1.0 - mass_sim) - (1.0 - mass_exact)).abs());
    assert!(tv < 0.02, "tv {tv}");
}

#[test]
fn linear_law_values() {
    let law = exact_linear_law(2, 0.3, &[0.4, 0.4]).unwrap();
    assert!((law.marginal_mean(1) - 4.0 / 3.0).abs() < 1e-12);
    assert!((law.marginal_pmf(1, 0) - 0.3 / 0.7).abs() < 1e-12);
    let total: f64 = (0..=200).map(|k| law.marginal_pmf(1, k)).sum();
    assert!((total - 1.0).abs() < 1e-10);
    // Joint pmf summed over the other coordinates reproduces the marginal.
    let summed: f64 = (0..60).flat_map(|a| (0..60).map(move |c| (a, c))).map(|(a, c)| law.pmf(&[a, 2, c])).sum();
    assert!((summed - law.marginal_pmf(1, 2)).abs() < 1e-9);
    let approx = stationary_approx(&law.network()).unwrap();
    assert!((approx.mean[1] - 4.0 / 3.0).abs() < 1e-12);
}

#[test]
fn independent_queues_without_long_route() {
    let law = exact_linear_law(2, 0.0, &[0.25, 0.5]).unwrap();
    assert!((law.marginal_mean(1) - 0.25 / 0.75).abs() < 1e-12);
    assert!((law.marginal_mean(2) - 1.0).abs() < 1e-12);
}

#[test]
fn reduced_cut_approximation_rates() {
    // Generalized cut constraints Λ1 + Λ2 ≤ C̄1 + C̄2, Λ1/2 + Λ3 ≤ C̄3.
    let (c1, c2, c3) = (3.0, 4.0, 2.0);
    let spec = NetworkSpec::new(
        vec![vec![1.0, 1.0, 0.0], vec![0.5, 0.0, 1.0]],
        vec![c1 + c2, c3],
        vec![1.0, 2.0, 0.5],
        vec![1.0; 3],
        vec![1.0; 3],
        1.0,
    )
    .unwrap();
    let approx = stationary_approx(&spec).unwrap();
    assert!((approx.rates[0] - (c1 + c2 - 1.0 - 2.0)).abs() < 1e-12);
    assert!((approx.rates[1] - (c3 - 0.5 - 0.5)).abs() < 1e-12);
}

#[test]
fn linear_network_allocation_values() {
    let spec = linear_network(1.0, 1.0);
    let res = allocate(&spec, &[1.0, 1.0, 1.0]).unwrap();
    for (got, want) in res.lambda.iter().zip([2.0 / 3.0, 2.0 / 3.0, 1.0 / 3.0]) {
        assert!((got - want).abs() < 1e-9);
    }
    for p in &res.p {
        assert!((p - 1.5).abs() < 1e-8);
    }
    let single = allocate(&spec, &[5.0, 0.0, 0.0]).unwrap();
    assert!((single.lambda[0] - 1.0).abs() < 1e-9);
    assert_eq!(&single.lambda[1..], &[0.0, 0.0]);
}

#[test]
fn heavy_traffic_rates_match_hand_computation() {
    let seq = build_ht_sequence(&linear_network(0.5, 1.0), &[-1.0, -1.0], &[10.0]).unwrap();
    let nu = seq.members[0].spec.nu();
    for (got, want) in nu.iter().zip([0.5 - 1.0 / 30.0, 0.5 - 1.0 / 30.0, 0.5 - 1.0 / 15.0]) {
        assert!((got - want).abs() < 1e-12);
    }
}

#[test]
fn reflected_bm_mean_in_one_dimension() {
    // Variance Γ = 2ν/μ² = 4 and drift −2: stationary mean Γ/(2|θ|) = 1.
    let spec = NetworkSpec::new(vec![vec![1.0]], vec![1.0], vec![2.0], vec![1.0], vec![1.0], 1.0).unwrap();
    let geom = build_geometry(&spec, &[-2.0]).unwrap();
    assert!((geom.gamma[(0, 0)] - 4.0).abs() < 1e-12);
    let path = simulate_srbm(&geom, &[0.0], 2000.0, 1e-3, 9).unwrap();
    let tail = &path.w[path.w.len() / 5..];
    let mean = tail.iter().map(|w| w[0]).sum::<f64>() / tail.len() as f64;
    assert!((mean - 1.0).abs() < 0.05, "mean {mean}");
}

/// Best `Λ = Hy` over a grid of feasible routings `y`, maximizing the
/// pair-level utility directly.
fn brute_force_routing(mspec: &MultipathSpec, n: &[f64], steps: usize) -> Vec<f64> {
    let spec = NetworkSpec::new(
        vec![vec![1.0; mspec.pairs()]],
        vec![1.0],
        mspec.nu.clone(),
        mspec.mu.clone(),
        mspec.kappa.clone(),
        mspec.alpha,
    )
    .unwrap();
    let k_n = mspec.routes();
    let upper = mspec.cbar.iter().fold(0.0_f64, |m, c| m.max(*c));
    let mut best = (f64::NEG_INFINITY, vec![0.0; mspec.pairs()]);
    let mut y = vec![0.0; k_n];
    for code in 0..(steps + 1).pow(k_n as u32) {
        let mut rest = code;
        for v in y.iter_mut() {
            *v = upper * (rest % (steps + 1)) as f64 / steps as f64;
            rest /= steps + 1;
        }
        let feasible = mspec
            .abar
            .iter()
            .zip(&mspec.cbar)
            .all(|(row, c)| row.iter().zip(&y).map(|(a, v)| a * v).sum::<f64>() <= c + 1e-12);
        if !feasible {
            continue;
        }
        let lambda: Vec<f64> = mspec.h.iter().map(|row| row.iter().zip(&y).map(|(h, v)| h * v).sum()).collect();
        let u = utility(&spec, n, &lambda).unwrap();
        if u > best.0 {
            best = (u, lambda);
        }
    }
    best.1
}

#[test]
fn reduced_allocation_matches_routing_optimum() {
    // Pair 1 may use link 1 or link 2; pair 2 uses link 2 only.
    for alpha in [1.0, 2.0] {
        let mspec = MultipathSpec {
            h: vec![vec![1.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
            abar: vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 1.0]],
            cbar: vec![1.0, 1.0],
            nu: vec![1.0; 2],
            mu: vec![1.0; 2],
            kappa: vec![1.0, 1.5],
            alpha,
        };
        let rep = project(&mspec).unwrap();
        let reduced = rep.network(&mspec).unwrap();
        for n in [[1.0, 1.0], [2.0, 1.0], [1.0, 3.0], [0.5, 0.2]] {
            let solved = allocate(&reduced, &n).unwrap().lambda;
            let brute = brute_force_routing(&mspec, &n, 200);
            for (a, b) in solved.iter().zip(&brute) {
                assert!((a - b).abs() < 0.02, "alpha {alpha} n {n:?}: {solved:?} vs {brute:?}");
            }
        }
    }
}

#[test]
fn cut_constraints_and_local_traffic() {
    let candidate = MultipathSpec {
        h: vec![vec![1.0, 1.0, 0.0, 0.0, 0.0], vec![0.0, 0.0, 1.0, 1.0, 0.0], vec![0.0, 0.0, 0.0, 0.0, 1.0]],
        abar: vec![
            vec![1.0, 0.0, 1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0, 1.0, 0.0],
            vec![1.0, 0.0, 0.0, 0.0, 1.0],
            vec![0.0, 1.0, 0.0, 0.0, 1.0],
        ],
        cbar: vec![3.0, 4.0, 2.0, 2.0],
        nu: vec![1.0; 3],
        mu: vec![1.0; 3],
        kappa: vec![1.0; 3],
        alpha: 1.0,
    };
    let rep = project(&candidate).unwrap();
    let target = Polytope { a: vec![vec![1.0, 1.0, 0.0], vec![0.5, 0.0, 1.0]], c: vec![7.0, 2.0] };
    assert!(polytopes_equal(&rep.polytope(), &target, 3).unwrap());
    let lt = local_traffic_check(&target.a);
    assert!(lt.holds);
    assert_eq!(lt.witnesses, vec![Some(1), Some(2)]);
    assert!(!local_traffic_check(&[vec![1.0, 1.0], vec![1.0, 1.0]]).holds);
}
