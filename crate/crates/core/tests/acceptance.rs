//! Acceptance criteria. Each test prints one `PASS`/`FAIL` line with the
//! measured values, then asserts. Run with `--nocapture` to see the lines.

mod common;

use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DVector, SymmetricEigen};
use ncpvi::diagnostics::{
    compare_covariances, cp_ncp_density_check, kl_gaussian_1d, lambda_marginal_positive, mesh_independence_study,
    squared_relative_error, u_posterior_moments,
};
use ncpvi::experiment::{ProblemSetup, DEFAULT_MESHES};
use ncpvi::gibbs::{lambda_gibbs_step, pcn_v_step, run_chain_from, GibbsConfig, GibbsState, GibbsTarget};
use ncpvi::lowrank::gtilde_eigenpairs;
use ncpvi::vi::{ViConfig, ViResult};
use ncpvi::{Execution, FieldVector, LambdaPosterior, LambdaPrior, LowRankPosteriorCov};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use common::{ks_p_value, normal_cdf, rel_diff, DenseModel};

const DATA_SEED: u64 = 0;

fn report(id: u32, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!("criterion {id} [{verdict}] {name}: {detail}");
}

/// VI run to its fixed point (the contract tolerance stops early on this problem).
fn fixed_point_config() -> ViConfig {
    ViConfig { tol: 1e-9, max_iter: 50_000, ..ViConfig::default() }
}

fn solve_default(n: usize, cfg: &ViConfig) -> (ProblemSetup, ncpvi::vi::NcpModel, ViResult) {
    let setup = ProblemSetup::default();
    let data = setup.generate_data(DATA_SEED).unwrap();
    let (model, res) = setup.solve(n, &data, cfg).unwrap();
    (setup, model, res)
}

#[test]
fn criterion_1_dense_oracle_equivalence() {
    let start = Instant::now();
    let n = 50;
    let setup = ProblemSetup::default();
    let data = setup.generate_data(DATA_SEED).unwrap();
    let (prior, fwd) = setup.operators(n).unwrap();
    let dense = DenseModel::new(n, setup.alpha_prior, setup.prior_scale, setup.alpha_pde, &setup.obs_points, &data.d, data.tau);
    // G̃ has rank at most 20 here, so 20 pairs cover every ρξ ≥ 1 direction.
    let eig = Arc::new(gtilde_eigenpairs(&prior, &fwd, data.tau, 20, 10, 0, Execution::Parallel).unwrap());
    let model = ncpvi::vi::NcpModel::with_eigenpairs(prior.clone(), setup.lam_prior, fwd, data, eig.clone()).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut trace_err, mut smw_err, mut v_err, mut lam_err) = (0f64, 0f64, 0f64, 0f64);
    let mut all_retained = true;
    for (lam, c_lam) in [(1.0, 0.0), (5.0, 0.5), (21.8, 0.137), (300.0, 12.0)] {
        let post = LambdaPosterior::new(lam, c_lam).unwrap();
        let rho = post.rho();
        let smallest = eig.xis().last().copied().unwrap_or(0.0);
        all_retained &= eig.rank_deficient() || rho * smallest < 1.0;

        let cov = LowRankPosteriorCov::new(prior.clone(), eig.clone(), rho).unwrap();
        let dense_trace = dense.trace(rho);
        trace_err = trace_err.max((cov.trace() - dense_trace).abs() / dense_trace);

        let c_v = dense.c_v(rho);
        for _ in 0..5 {
            let f: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let got = cov.smw_apply(&FieldVector::new(prior.grid().clone(), f.clone()).unwrap()).unwrap();
            let want = &c_v * DVector::from_vec(f);
            smw_err = smw_err.max(rel_diff(got.values(), want.as_slice()));
        }

        let vp = model.update_v(&post).unwrap();
        let want_v = dense.v_star(lam, rho);
        v_err = v_err.max(rel_diff(vp.v_star.values(), want_v.as_slice()));

        let next = model.update_lambda(&vp).unwrap();
        let (l, c) = dense.lambda_update(&want_v, rho, 1.0, 1e4);
        lam_err = lam_err.max(((next.lam_star - l) / l).abs()).max(((next.c_lambda - c) / c).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = all_retained && trace_err < 1e-4 && smw_err < 1e-6 && v_err < 1e-6 && lam_err < 1e-6 && secs < 5.0;
    report(
        1,
        "dense-oracle equivalence (n=50)",
        pass,
        &format!(
            "trace {trace_err:.2e} (<1e-4), smw {smw_err:.2e} (<1e-6), update_v {v_err:.2e} (<1e-6), \
             update_lambda {lam_err:.2e} (<1e-6), all rho*xi>=1 retained {all_retained}, {secs:.2}s (<5s)"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_2_headline_reproduction() {
    let start = Instant::now();
    let (_, _, res) = solve_default(100, &ViConfig::default());
    let secs = start.elapsed().as_secs_f64();
    let last = res.trace.records.last().unwrap();
    let rel_err = last.rel_err.unwrap();
    let lam = res.lam_post.lam_star;
    let pass = res.converged && res.iterations() <= 1500 && rel_err <= 0.06 && (285.0..=345.0).contains(&lam) && secs < 60.0;
    report(
        2,
        "default configuration (n=100)",
        pass,
        &format!(
            "converged {} after {} iterations (<=1500), rel err {rel_err:.4} (<=0.06), lambda* {lam:.3} (in [285,345]), \
             C_lambda {:.4}, {secs:.2}s (<60s)",
            res.converged,
            res.iterations(),
            res.lam_post.c_lambda
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_3_vi_against_gibbs() {
    let start = Instant::now();
    let n = 100;
    let (setup, model, vi) = solve_default(n, &fixed_point_config());
    let (prior, fwd, data) = (model.prior(), model.forward(), model.data());
    let target = GibbsTarget::new(prior, &setup.lam_prior, fwd, Some(data)).unwrap();
    // 4 chains x 25k kept sweeps = 1e5 samples.
    let cfg = GibbsConfig { beta: 0.02, n_samples: 50_000, burn_in: 25_000, chains: 4, seed: 0, ..GibbsConfig::default() };
    let chain = run_chain_from(&target, &cfg, Some((&vi.v_post.v_star, vi.lam_post.lam_star))).unwrap();
    let secs = start.elapsed().as_secs_f64();

    let post = u_posterior_moments(&vi.v_post, &vi.lam_post).unwrap();
    let kl = kl_gaussian_1d((vi.lam_post.lam_star, vi.lam_post.c_lambda), (chain.lambda_mean, chain.lambda_var)).unwrap();
    let mean_err = squared_relative_error(post.mean.values(), chain.u_moments.mean()).unwrap();
    let cov = compare_covariances(&post.cov, &chain.u_moments, &[0, 20, 50]).unwrap();
    let matrix = cov.matrix.unwrap();
    let band = |k: usize| cov.bands.iter().find(|(o, _)| *o == k).unwrap().1;
    let (var_err, k20, k50) = (band(0), band(20), band(50));
    let (exact_mean, exact_var, _) = lambda_marginal_positive(prior, fwd, data, &setup.lam_prior, 400.0, 40_000).unwrap();

    let limits = [0.0860 * 2.5, 0.0688 * 2.5, 0.1152 * 2.5, 0.1514 * 2.5];
    let pass = kl < 0.3
        && mean_err < 0.10
        && matrix < limits[0]
        && var_err < limits[1]
        && k20 < limits[2]
        && k50 < limits[3]
        && chain.n_kept() == 100_000
        && secs < 900.0;
    report(
        3,
        "VI vs Gibbs (1e5 samples)",
        pass,
        &format!(
            "KL {kl:.4} (<0.3), mean {mean_err:.4} (<0.10), cov matrix {matrix:.4} (<{:.3}), variance {var_err:.4} (<{:.3}), \
             k=20 {k20:.4} (<{:.3}), k=50 {k50:.4} (<{:.3}); VI lambda {:.3}+/-{:.3}, Gibbs lambda {:.3}+/-{:.3}, \
             exact marginal {exact_mean:.3}+/-{:.3}; acceptance {:.3}, ESS(lambda) {:.0}, {secs:.1}s (<900s)",
            limits[0],
            limits[1],
            limits[2],
            limits[3],
            vi.lam_post.lam_star,
            vi.lam_post.c_lambda.sqrt(),
            chain.lambda_mean,
            chain.lambda_var.sqrt(),
            exact_var.sqrt(),
            chain.acceptance_rate_v,
            chain.ess_lambda,
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_4_mesh_independence() {
    let start = Instant::now();
    let setup = ProblemSetup::default();
    let data = setup.generate_data(DATA_SEED).unwrap();
    let study = mesh_independence_study(&setup, &DEFAULT_MESHES, &data, &ViConfig::default(), Execution::Parallel).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let spread = study.lambda_spread();
    let ratio = study.step_norm_max_ratio();
    let lams: Vec<String> = study.rows.iter().map(|r| format!("{}:{:.3}", r.n, r.lambda_mean)).collect();
    let pass = study.rows.len() == DEFAULT_MESHES.len() && spread < 0.01 && ratio < 3.0 && secs < 300.0;
    report(
        4,
        "mesh independence",
        pass,
        &format!("lambda* [{}], spread {spread:.2e} (<0.01), step-norm ratio {ratio:.3} (<3), {secs:.2}s (<300s)", lams.join(", ")),
    );
    assert!(pass);
}

#[test]
fn criterion_5_scale_self_adjustment() {
    let cfg = fixed_point_config();
    let base = ProblemSetup::default();
    let scaled = ProblemSetup { prior_scale: 4.0, ..ProblemSetup::default() };
    let data = base.generate_data(DATA_SEED).unwrap();
    let (_, a) = base.solve(100, &data, &cfg).unwrap();
    let (_, b) = scaled.solve(100, &data, &cfg).unwrap();
    let ratio = b.lam_post.lam_star / a.lam_post.lam_star;
    let (ua, ub) = (a.u_mean(), b.u_mean());
    let du = ub.sub(&ua).norm() / ua.norm();
    let pass = (ratio - 0.5).abs() < 0.05 && du < 0.02 && a.converged && b.converged;
    report(
        5,
        "prior scaled by 4",
        pass,
        &format!(
            "lambda* {:.4} -> {:.4}, ratio {ratio:.5} (|r-0.5|<0.05), u* change {du:.2e} (<0.02), converged {}/{}",
            a.lam_post.lam_star, b.lam_post.lam_star, a.converged, b.converged
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_6_cp_ncp_equivalence() {
    let start = Instant::now();
    let devs: Vec<(usize, f64)> =
        [1, 3, 5, 10].into_iter().map(|n| (n, cp_ncp_density_check(n, 1000, 100 + n as u64).unwrap())).collect();
    let secs = start.elapsed().as_secs_f64();
    let worst = devs.iter().map(|d| d.1).fold(0.0, f64::max);
    let pass = worst < 1e-10 && secs < 1.0;
    let list: Vec<String> = devs.iter().map(|(n, d)| format!("N={n}: {d:.1e}")).collect();
    report(6, "CP/NCP density equivalence", pass, &format!("{} (<1e-10), {secs:.3}s (<1s)", list.join(", ")));
    assert!(pass);
}

fn adjoint_error() -> f64 {
    let setup = ProblemSetup::default();
    let (prior, fwd) = setup.operators(100).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    (0..20)
        .map(|_| {
            let u = prior.sample(&mut rng);
            let y: Vec<f64> = (0..fwd.n_obs()).map(|_| rng.sample(StandardNormal)).collect();
            let lhs: f64 = fwd.apply_h(&u).unwrap().iter().zip(&y).map(|(a, b)| a * b).sum();
            let rhs = u.inner(&fwd.apply_h_adjoint(&y).unwrap());
            (lhs - rhs).abs() / lhs.abs().max(1e-300)
        })
        .fold(0.0, f64::max)
}

fn manufactured_ratio() -> f64 {
    use std::f64::consts::PI;
    let setup = ProblemSetup::default();
    let err = |n: usize| {
        let (_, fwd) = setup.operators(n).unwrap();
        let g = fwd.grid().clone();
        let u = FieldVector::from_fn(g.clone(), |x| (0.05 * PI * PI + 1.0) * (PI * x).sin());
        let w = fwd.solve_pde(&u).unwrap();
        w.values().iter().zip(g.nodes()).map(|(w, x)| (w - (PI * x).sin()).abs()).fold(0.0, f64::max)
    };
    err(251) / err(501)
}

fn prior_identity_error() -> f64 {
    let setup = ProblemSetup::default();
    let (prior, _) = setup.operators(100).unwrap();
    let c0 = common::c0_operator(100, setup.alpha_prior, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let f: Vec<f64> = (0..100).map(|_| rng.sample(StandardNormal)).collect();
        let fv = FieldVector::new(prior.grid().clone(), f.clone()).unwrap();
        let c0f = prior.apply_c0(&fv).unwrap();
        let twice = prior.apply_c0_sqrt(&prior.apply_c0_sqrt(&fv).unwrap()).unwrap();
        let back = prior.apply_c0_inv(&c0f).unwrap();
        let dense = &c0 * DVector::from_vec(f.clone());
        worst = worst
            .max(rel_diff(twice.values(), c0f.values()))
            .max(rel_diff(back.values(), &f))
            .max(rel_diff(c0f.values(), dense.as_slice()));
    }
    worst
}

/// Prior-only chain: KS p-values for λ and two nodal values of v.
fn pcn_prior_ks() -> [f64; 3] {
    let n = 50;
    let setup = ProblemSetup::default();
    let (prior, fwd) = setup.operators(n).unwrap();
    let lam_prior = LambdaPrior::default();
    let target = GibbsTarget::new(&prior, &lam_prior, &fwd, None).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let v0 = prior.sample(&mut rng).into_values();
    let mut state = GibbsState::new(&target, v0, 1.0).unwrap();
    let (beta, thin, kept) = (0.5, 50, 10_000);
    let nodes = [0, 25];
    let (mut lams, mut vs) = (Vec::with_capacity(kept), [Vec::with_capacity(kept), Vec::with_capacity(kept)]);
    for _ in 0..kept {
        for _ in 0..thin {
            pcn_v_step(&target, &mut state, beta, &mut rng);
            lambda_gibbs_step(&target, &mut state, &mut rng);
        }
        lams.push(state.lam);
        for (s, &i) in vs.iter_mut().zip(&nodes) {
            s.push(state.v[i]);
        }
    }
    let nodal = common::c0_operator(n, setup.alpha_prior, 1.0) * (n - 1) as f64;
    [
        ks_p_value(&lams, |x| normal_cdf(x, 1.0, 1e4)),
        ks_p_value(&vs[0], |x| normal_cdf(x, 0.0, nodal[(0, 0)])),
        ks_p_value(&vs[1], |x| normal_cdf(x, 0.0, nodal[(25, 25)])),
    ]
}

fn lambda_step_log_ratio() -> f64 {
    let setup = ProblemSetup::default();
    let data = setup.generate_data(DATA_SEED).unwrap();
    let (prior, fwd) = setup.operators(100).unwrap();
    let target = GibbsTarget::new(&prior, &setup.lam_prior, &fwd, Some(&data)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    (0..500)
        .map(|_| {
            let v = prior.sample(&mut rng).into_values();
            let lam = rng.random_range(-100.0..400.0);
            let mut s = GibbsState::new(&target, v, lam).unwrap();
            lambda_gibbs_step(&target, &mut s, &mut rng).abs()
        })
        .fold(0.0, f64::max)
}

/// `(‖H*H‖_HS, √‖HH*‖_op · ‖H*‖_HS)` in mass-weighted coordinates at n=50.
fn hs_inequality() -> (f64, f64) {
    let n = 50;
    let setup = ProblemSetup::default();
    let h = 1.0 / (n - 1) as f64;
    let hm = common::forward_matrix(n, setup.alpha_pde, &setup.obs_points);
    let lhs = (hm.transpose() * &hm).norm() / h;
    let op = SymmetricEigen::new(&hm * hm.transpose() / h).eigenvalues.max();
    let hs_adj = hm.norm() / h.sqrt();
    (lhs, op.sqrt() * hs_adj)
}

fn kl_grid_min() -> (f64, f64) {
    let means: Vec<f64> = (-10..=10).map(|i| i as f64 * 0.5).collect();
    let vars: Vec<f64> = (-6..=6).map(|i| 10f64.powf(i as f64 / 3.0)).collect();
    let mut min = f64::INFINITY;
    let mut self_max: f64 = 0.0;
    for &m1 in &means {
        for &v1 in &vars {
            self_max = self_max.max(kl_gaussian_1d((m1, v1), (m1, v1)).unwrap().abs());
            for &m2 in &means {
                for &v2 in &vars {
                    min = min.min(kl_gaussian_1d((m1, v1), (m2, v2)).unwrap());
                }
            }
        }
    }
    (min, self_max)
}

fn informed_count() -> (usize, f64) {
    let cfg = ViConfig { r_max: 20, ..fixed_point_config() };
    let (_, model, res) = solve_default(100, &cfg);
    let rho = res.lam_post.rho();
    (model.eig().count_informed(rho), rho)
}

#[test]
fn criterion_7_property_suites() {
    let adjoint = adjoint_error();
    let ratio = manufactured_ratio();
    let prior_err = prior_identity_error();
    let ks = pcn_prior_ks();
    let lam_ratio = lambda_step_log_ratio();
    let (hs_lhs, hs_rhs) = hs_inequality();
    let (kl_min, kl_self) = kl_grid_min();
    let (informed, rho) = informed_count();

    let checks = [
        ("adjoint identity", adjoint < 1e-10, format!("{adjoint:.2e} (<1e-10)")),
        ("O(h^2) manufactured solution", (ratio - 4.0).abs() < 0.5, format!("ratio {ratio:.4} (4+/-0.5)")),
        ("prior sqrt/inverse", prior_err < 1e-10, format!("{prior_err:.2e} (<1e-10)")),
        (
            "pCN prior targeting",
            ks.iter().all(|p| *p > 0.01),
            format!("KS p lambda {:.3}, v[0] {:.3}, v[25] {:.3} (>0.01)", ks[0], ks[1], ks[2]),
        ),
        ("lambda Gibbs acceptance", lam_ratio < 1e-10, format!("max |log ratio| {lam_ratio:.2e} (<1e-10)")),
        ("HS inequality (n=50)", hs_lhs <= hs_rhs, format!("{hs_lhs:.4e} <= {hs_rhs:.4e}")),
        ("KL nonnegativity", kl_min >= 0.0 && kl_self < 1e-12, format!("min {kl_min:.2e}, self {kl_self:.1e}")),
        ("informed directions", informed < 10, format!("{informed} with rho*xi>=1 at rho={rho:.1} (<10)")),
    ];
    for (name, ok, detail) in &checks {
        println!("  7/{name}: {} {detail}", if *ok { "ok" } else { "failed" });
    }
    let pass = checks.iter().all(|c| c.1);
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    report(7, "property suites", pass, &format!("{} of {} checks hold; failed: {:?}", checks.len() - failed.len(), checks.len(), failed));
    assert!(pass);
}
