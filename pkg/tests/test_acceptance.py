"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Criteria 6-8 share one mini-study (about half an hour on one core) and are
marked ``slow``; ``pytest -m "not slow"`` skips them.
"""

import math
import os
import time
import zlib

import numpy as np
import pytest

import oracles
from conftest import ACCEPTANCE
from gradcheck import CASES, check_case
from test_methods import analytic_tc, correlated, train_discriminator
from untangle.analysis import (anova_variance_explained, rank_correlation_matrix, spearman,
                               transfer_vs_random)
from untangle.autodiff import Graph
from untangle.impossibility import (build_twin_worlds, entanglement_report,
                                    identity_representation, make_rotation,
                                    rotated_representation)
from untangle.methods import gaussian_total_correlation, mws_total_correlation
from untangle.metrics import (constant_representation, evaluate_all, factor_representation,
                              factor_vae_score, mig, modularity, sap_score, table_representation)
from untangle.metrics.dci import disentanglement_from_importance
from untangle.metrics.representations import map_codes
from untangle.study import UNSUPERVISED, StudyConfig, run_study
from untangle.worlds import draw_factors, dsprites_lite, enumerate_grid


def record(number, passed, detail):
    ACCEPTANCE[number] = (bool(passed), detail)
    print(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
    assert passed, detail


# ---- 1 ---------------------------------------------------------------------

def test_criterion_1_gradients():
    start = time.perf_counter()
    worst = {}
    for name in CASES:
        rng = np.random.default_rng(zlib.crc32(f"accept-{name}".encode()))
        worst[name] = max(check_case(name, rng) for _ in range(100))
    elapsed = time.perf_counter() - start
    top = max(worst, key=worst.get)
    record(1, max(worst.values()) < 1e-4 and elapsed < 60,
           f"{len(CASES)} ops x 100 instances, worst rel err {worst[top]:.2e} ({top}), "
           f"{elapsed:.1f}s")


# ---- 2 ---------------------------------------------------------------------

def test_criterion_2_analytic_oracles():
    rng = np.random.default_rng(0)
    mu = rng.normal(size=(64, 10))
    lv = rng.normal(scale=0.7, size=(64, 10))
    kl_err = 0.0
    for i in range(len(mu)):
        g = Graph()
        kl = g.gaussian_kl_to_standard(g.constant(mu[i:i + 1]), g.constant(lv[i:i + 1]))
        s = np.exp(0.5 * lv[i])
        # per dim: log(1/s) + (s^2 + m^2) / 2 - 1/2
        closed = math.fsum(np.log(1 / s) + (s ** 2 + mu[i] ** 2) / 2 - 0.5)
        kl_err = max(kl_err, abs(kl.value[0, 0] - closed))

    codes = correlated(10000, 0.8, rng)
    sigma = 0.1
    z = codes + sigma * rng.normal(size=codes.shape)
    mws = mws_total_correlation(z, codes, np.full_like(codes, 2 * math.log(sigma)))
    mws_rel = abs(mws - analytic_tc(0.8)) / analytic_tc(0.8)

    pool = correlated(10000, 0.9, np.random.default_rng(1))
    disc = train_discriminator(pool, steps=2000)
    disc_rel = abs(disc - analytic_tc(0.9)) / analytic_tc(0.9)

    gtc = gaussian_total_correlation(correlated(10**6, 0.5, np.random.default_rng(2)))
    gtc_err = abs(gtc - analytic_tc(0.5))
    record(2, kl_err < 1e-10 and mws_rel < 0.15 and disc_rel < 0.30 and gtc_err < 1e-3,
           f"KL err {kl_err:.1e}; MWS rel {mws_rel:.3f}; disc rel {disc_rel:.3f}; "
           f"gaussian_tc err {gtc_err:.1e}")


# ---- 3 ---------------------------------------------------------------------

def test_criterion_3_metric_sanity():
    start = time.perf_counter()
    world = dsprites_lite()
    k = sum(c > 1 for c in world.space.cardinalities)
    exact = {n: r.score for n, r in evaluate_all(world, factor_representation(world)).items()}
    const_reports = evaluate_all(world, constant_representation())
    const = {n: r.score for n, r in const_reports.items()}
    noise_rng = np.random.default_rng(3)
    random_fvae = factor_vae_score(
        world, lambda f: noise_rng.normal(size=(len(f), 10))).score

    f = draw_factors(world.space, 100000, np.random.default_rng(4))[:, 3:5]
    u = f / 15.0
    c = math.cos(math.pi / 4)
    rotated = u @ np.array([[c, -c], [c, c]])
    drop = mig(u, f).score - mig(rotated, f).score
    elapsed = time.perf_counter() - start

    ok_exact = all(v >= 0.99 for n, v in exact.items() if n != "sap") and exact["sap"] >= 0.9
    # classifier scores are judged against chance; FactorVAE on a constant code
    # is fully pruned and reports 0 (collapsed), random codes give chance
    ok_const = (all(const[n] <= 0.1 for n in ("mig", "modularity", "dci_disentanglement", "sap"))
                and abs(const["beta_vae"] - 1 / k) < 0.05
                and const["factor_vae"] <= 0.1 and const_reports["factor_vae"].flags["collapsed"]
                and abs(random_fvae - 1 / k) < 0.05)
    fmt = lambda d: ", ".join(f"{n} {v:.3f}" for n, v in d.items())  # noqa: E731
    record(3, ok_exact and ok_const and drop >= 0.5 and elapsed < 600,
           f"exact [{fmt(exact)}]; constant [{fmt(const)}]; random factor_vae "
           f"{random_fvae:.3f} (1/k={1 / k:.3f}); rotated MIG drop {drop:.3f}; {elapsed:.0f}s")


# ---- 4 ---------------------------------------------------------------------

def test_criterion_4_invariances():
    world = dsprites_lite()
    rng = np.random.default_rng(5)
    base = factor_representation(world)
    noisy_grid = base(enumerate_grid(world)) + 0.2 * rng.normal(size=(world.space.grid_size, 5))
    mixing = np.eye(5) + 0.3 * rng.normal(size=(5, 5))
    table = table_representation(world.space, np.column_stack([noisy_grid @ mixing,
                                                               rng.normal(size=len(noisy_grid))]))
    factors = draw_factors(world.space, 10000, np.random.default_rng(6))
    reps = table(factors)
    checks = {}
    for trial in range(5):
        perm = np.random.default_rng(100 + trial).permutation(reps.shape[1])
        for name, fn in (("mig", mig), ("modularity", modularity), ("sap", sap_score)):
            checks.setdefault(f"perm/{name}", []).append(
                fn(reps, factors).score == fn(reps[:, perm], factors).score)
        checks.setdefault("perm/gaussian_tc", []).append(
            gaussian_total_correlation(reps) == gaussian_total_correlation(reps[:, perm]))
        imp = np.random.default_rng(trial).random((reps.shape[1], 5))
        checks.setdefault("perm/dci_formula", []).append(
            disentanglement_from_importance(imp)[0]
            == disentanglement_from_importance(imp[perm])[0])
    warped = np.column_stack([np.exp(reps[:, 0]), 2 * reps[:, 1] - 1, np.tanh(reps[:, 2]),
                              reps[:, 3] ** 3, np.arctan(reps[:, 4]), 5 + np.exp(reps[:, 5])])
    for name, fn in (("mig", mig), ("modularity", modularity)):
        checks[f"monotone/{name}"] = [fn(reps, factors).score == fn(warped, factors).score]
    scale = np.array([1.0, 50.0, 2.0, 3.0, 7.0])
    exact = factor_representation(world)
    checks["scale/factor_vae"] = [
        factor_vae_score(world, exact).score
        == factor_vae_score(world, map_codes(exact, lambda c: c * scale)).score]
    failed = [k for k, v in checks.items() if not all(v)]
    record(4, not failed, f"{len(checks)} invariance checks, failed: {failed or 'none'}")


# ---- 5 ---------------------------------------------------------------------

def test_criterion_5_impossibility():
    start = time.perf_counter()
    twins = build_twin_worlds(make_rotation(2, angles=[math.pi / 4]))
    a = entanglement_report(identity_representation(twins), twins, n=10**5)
    b = entanglement_report(rotated_representation(twins), twins, n=10**5)
    elapsed = time.perf_counter() - start
    moments = a["moments"]
    ok = (a["pushforward_bitwise_equal"] and moments["mean_max_dev"] < 0.02
          and moments["cov_max_dev"] < 0.02 and a["mig_a"] >= 0.95 and a["mig_b"] <= 0.2
          and b["mig_b"] >= 0.95 and b["mig_a"] <= 0.2 and elapsed < 60)
    record(5, ok, f"bitwise equal {a['pushforward_bitwise_equal']}; moment devs "
                  f"{moments['mean_max_dev']:.4f}/{moments['cov_max_dev']:.4f}; identity "
                  f"MIG_A {a['mig_a']:.3f} MIG_B {a['mig_b']:.3f}; R z MIG_A {b['mig_a']:.3f} "
                  f"MIG_B {b['mig_b']:.3f}; {elapsed:.1f}s")


# ---- 6-8: mini-study -------------------------------------------------------

MINI_STUDY = {
    "schema_version": 1,
    "worlds": ["dsprites-lite"],
    "methods": ["beta_vae", "beta_tcvae"],
    "strengths": {"beta_vae": [1.0, 4.0, 16.0], "beta_tcvae": [1.0, 4.0, 10.0]},
    "seeds": 5,
    "steps": 5000,
    "eval_samples": 10000,
}


@pytest.fixture(scope="module")
def mini_study(tmp_path_factory):
    root = os.environ.get("UNTANGLE_ACCEPTANCE_DIR") or str(tmp_path_factory.mktemp("mini"))
    out = os.path.join(root, "first")
    start = time.perf_counter()
    store = run_study(StudyConfig.from_dict(MINI_STUDY), out, workers=os.cpu_count() or 1,
                      force=True)
    return store, out, time.perf_counter() - start, root


@pytest.mark.slow
def test_criterion_6_mini_study(mini_study):
    store, _, elapsed, _ = mini_study
    hyper = anova_variance_explained(store, "factor_vae", "hyperparameter")
    method = anova_variance_explained(store, "factor_vae", "method")
    runs_ok = len({r.run_id for r in store.select(metric="factor_vae")})
    within = 1 - hyper.fraction
    ok = (not hyper.degenerate and not method.degenerate and within > 0.10
          and method.fraction < 0.90 and runs_ok == 30 and elapsed < 3600)
    record(6, ok, f"{runs_ok}/30 runs scored; FactorVAE within-cell variance share {within:.3f} "
                  f"(> 0.10); method eta^2 {method.fraction:.3f} (< 0.90); "
                  f"{elapsed / 60:.1f} min on {os.cpu_count()} core(s)")


@pytest.mark.slow
def test_criterion_7_analysis_oracles(mini_study):
    store = mini_study[0]
    world = store.worlds[0]
    problems = []
    for metric in store.metrics:
        records = store.select(metric=metric)
        values = [r.value for r in records]
        for grouping, key in (("method", lambda r: r.method),
                              ("hyperparameter", lambda r: (r.method, r.hparam_value)),
                              ("seed", lambda r: r.seed)):
            res = anova_variance_explained(store, metric, grouping)
            expected = oracles.eta_squared(values, [key(r) for r in records])
            if res.degenerate or not math.isclose(res.fraction, expected, rel_tol=1e-12,
                                                  abs_tol=1e-15):
                problems.append(f"anova {metric}/{grouping}")

    matrix = rank_correlation_matrix(store, "unsupervised", world=world)
    by_model = {m: {r.model: r.value for r in store.select(metric=m)} for m in store.metrics}
    models = sorted(by_model["recon"])
    for i, u in enumerate(matrix.rows):
        for j, m in enumerate(matrix.cols):
            expected = oracles.spearman([by_model[u][k] for k in models],
                                        [by_model[m][k] for k in models])
            direct = spearman([by_model[u][k] for k in models], [by_model[m][k] for k in models])
            if math.isnan(matrix.values[i, j]) or not math.isclose(
                    matrix.values[i, j], expected, rel_tol=1e-12, abs_tol=1e-15) \
                    or direct.rho != matrix.values[i, j]:
                problems.append(f"spearman {u}/{m}")
    worlds = rank_correlation_matrix(store, "worlds", metric="factor_vae")
    if worlds.values.tolist() != [[1.0]]:
        problems.append("worlds matrix")

    worst = 0.0
    for metric in [m for m in store.metrics if m not in UNSUPERVISED]:
        res = transfer_vs_random(store, world, world, metric, trials=10000, seed=0)
        expected = oracles.transfer_win_rate(store.records, world, world, metric)
        worst = max(worst, abs(res.fraction - expected))
        if not math.isclose(res.exact, expected, abs_tol=1e-12):
            problems.append(f"transfer exact {metric}")
    record(7, not problems and worst < 0.02,
           f"anova/spearman/rank matrix vs oracles: {problems or 'all match'}; "
           f"transfer max |MC - exact| {worst:.4f} at 1e4 trials")


@pytest.mark.slow
def test_criterion_8_determinism(mini_study):
    _, first, _, root = mini_study
    second = os.path.join(root, "second")
    run_study(StudyConfig.from_dict(MINI_STUDY), second, workers=os.cpu_count() or 1,
              force=True)
    with open(os.path.join(first, "scores.csv"), "rb") as fh:
        a = fh.read()
    with open(os.path.join(second, "scores.csv"), "rb") as fh:
        b = fh.read()
    rows = len(a.splitlines()) - 1
    record(8, a == b, f"rerun scores.csv {'byte-identical' if a == b else 'DIFFERS'} "
                      f"({len(a)} bytes, {rows} rows)")
