"""End-to-end acceptance checks, one test per shipped guarantee.

Each test prints a single `ACCEPTANCE <n> <label>: PASS/FAIL <detail>`
line before asserting, so a verbose run doubles as the acceptance
report.  Criterion 3 documents a real finite-size gap and is expected
to fail; see the README.
"""

import time

import numpy as np
import pytest

from gmpid import (
    IterationOptions,
    PRIOR_MODE_GENIE_NOISY,
    RELAXATION_MANUAL,
    SystemConfig,
    VERDICT_CONVERGED,
    VERDICT_DIVERGED,
    ExperimentSpec,
    choose_relaxation,
    csv_bytes,
    derive_trial_seed,
    gamma_tilde,
    generate_instance,
    gmpid_asymptotic_radius,
    gmpid_limit_formula,
    gmpid_run,
    lmmse_detect,
    mean_convergence_report,
    mse,
    predict_mmse_mse,
    run_experiment,
    sa_asymptotic_radius,
    sa_gmpid_run,
    sa_iteration_matrix_operator,
    solve_variance_fixed_point,
    solve_variance_recursion,
    symmetric_extremes,
)


def _verdict_line(number, label, ok, detail):
    status = "PASS" if ok else "FAIL"
    print(f"ACCEPTANCE {number} {label}: {status} {detail}")
    return ok


def _cfg(n_users, n_antennas, noise_var, prior_var, seed=0):
    return SystemConfig(
        n_users=n_users,
        n_antennas=n_antennas,
        noise_var=noise_var,
        prior_var=prior_var,
        seed=seed,
    )


# configurations where the plain detector provably contracts (load 4,
# strong priors); reused by criteria 3 and 4
_CONVERGENT_CELLS = (
    (0.01, 2.0),
    (0.01, 4.0),
    (0.02, 3.0),
)


def test_criterion_01_variance_fixed_point_identity():
    start = time.perf_counter()
    worst = 0.0
    for beta in np.geomspace(1.1, 16.0, 10):
        n_users = int(round(beta * 8))
        for snr in np.geomspace(0.01, 100.0, 10):
            cfg = _cfg(n_users, 8, 1.0 / snr, 1.0)
            fixed = solve_variance_fixed_point(cfg)
            predicted = predict_mmse_mse(cfg)
            worst = max(worst, abs(fixed.v_hat - predicted) / predicted)
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-9 and elapsed < 1.0
    _verdict_line(
        1,
        "variance_fixed_point_identity",
        ok,
        f"max rel dev {worst:.3e} (tol 1e-9) over 100 configs in {elapsed:.3f}s",
    )
    assert ok


def test_criterion_02_variance_recursion_convergence():
    start = time.perf_counter()
    cfg = _cfg(400, 100, 0.1, 1.0)
    root = solve_variance_fixed_point(cfg).v_hat
    means = []
    for t in range(20):
        ch, _, prior = generate_instance(cfg.with_seed(derive_trial_seed(200, t)))
        means.append(float(np.mean(solve_variance_recursion(ch, prior, cfg.noise_var).v_hat)))
    elapsed = time.perf_counter() - start
    rel = abs(float(np.mean(means)) - root) / root
    ok = rel <= 0.05 and elapsed < 30.0
    _verdict_line(
        2,
        "variance_recursion_convergence",
        ok,
        f"mean decision variance dev {rel:.3%} of root {root:.6f} "
        f"over 20 channels (tol 5%) in {elapsed:.1f}s",
    )
    assert ok


def test_criterion_03_mean_fixed_point_formula():
    # Documented honest failure: the closed-form limit is a
    # large-system statement, and at desk sizes the converged iterate
    # sits a finite-size distance away from it.  The per-coordinate
    # 1e-6 contract is therefore not attainable at N_u=400; the
    # measured gap is printed for the record.
    worst_coord = 0.0
    worst_l2 = 0.0
    trials = 0
    for prior_var, noise_var in _CONVERGENT_CELLS:
        cfg = _cfg(400, 100, noise_var, prior_var)
        for t in range(2):
            trial_cfg = cfg.with_seed(derive_trial_seed(300, trials))
            ch, obs, prior = generate_instance(trial_cfg, prior_mode=PRIOR_MODE_GENIE_NOISY)
            report = gmpid_run(ch, obs, prior, trial_cfg.noise_var)
            assert report.verdict == VERDICT_CONVERGED
            limit = gmpid_limit_formula(ch, obs, prior, trial_cfg)
            denom = np.maximum(np.abs(limit), 1e-12)
            worst_coord = max(worst_coord, float(np.max(np.abs(report.posterior_mean - limit) / denom)))
            worst_l2 = max(
                worst_l2,
                float(np.linalg.norm(report.posterior_mean - limit) / np.linalg.norm(limit)),
            )
            trials += 1
    ok = worst_coord <= 1e-6
    _verdict_line(
        3,
        "mean_fixed_point_formula",
        ok,
        f"max per-coordinate rel dev {worst_coord:.3e} (tol 1e-6), "
        f"rel L2 dev {worst_l2:.3e}, over {trials} convergent trials; "
        "known finite-size gap",
    )
    assert ok, (
        "converged means differ from the closed-form limit by a finite-size gap "
        f"(max per-coordinate {worst_coord:.3e}, rel L2 {worst_l2:.3e})"
    )


def test_criterion_04_plain_detector_suboptimality():
    total = 0
    strict = 0
    not_below = 0
    for prior_var, noise_var in _CONVERGENT_CELLS:
        cfg = _cfg(400, 100, noise_var, prior_var)
        for t in range(10):
            trial_cfg = cfg.with_seed(derive_trial_seed(400, total))
            ch, obs, prior = generate_instance(trial_cfg, prior_mode=PRIOR_MODE_GENIE_NOISY)
            report = gmpid_run(ch, obs, prior, trial_cfg.noise_var)
            assert report.verdict == VERDICT_CONVERGED
            oracle = lmmse_detect(ch, obs, prior, trial_cfg.noise_var)
            plain_mse = mse(report.posterior_mean, obs.x_true)
            oracle_mse = mse(oracle.posterior_mean, obs.x_true)
            total += 1
            if plain_mse >= oracle_mse:
                not_below += 1
            if plain_mse > oracle_mse:
                strict += 1
    ok = not_below == total and strict >= 0.95 * total
    _verdict_line(
        4,
        "plain_detector_suboptimality",
        ok,
        f"{not_below}/{total} trials at or above the oracle MSE, {strict} strict "
        f"(need >= {int(np.ceil(0.95 * total))})",
    )
    assert ok


def test_criterion_05_relaxed_detector_oracle_equivalence():
    start = time.perf_counter()
    worst = 0.0
    runs = 0
    for beta in (1.2, 10.0 / 7.0, 2.0, 4.0, 8.0):
        for n_users in (100, 400):
            n_antennas = int(round(n_users / beta))
            cfg = _cfg(n_users, n_antennas, n_users / 2.0, 1.0)
            for t in range(3):
                trial_cfg = cfg.with_seed(derive_trial_seed(500, runs))
                ch, obs, prior = generate_instance(trial_cfg, prior_mode=PRIOR_MODE_GENIE_NOISY)
                report = sa_gmpid_run(ch, obs, prior, trial_cfg.noise_var)
                assert report.verdict == VERDICT_CONVERGED
                oracle = lmmse_detect(ch, obs, prior, trial_cfg.noise_var)
                rel = float(
                    np.linalg.norm(report.posterior_mean - oracle.posterior_mean)
                    / np.linalg.norm(oracle.posterior_mean)
                )
                worst = max(worst, rel)
                runs += 1
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-6 and elapsed < 120.0
    _verdict_line(
        5,
        "relaxed_detector_oracle_equivalence",
        ok,
        f"worst rel L2 dev {worst:.3e} (tol 1e-6) over {runs} trials in {elapsed:.1f}s",
    )
    assert ok


@pytest.fixture(scope="module")
def radius_survey():
    surveys = {}
    for beta, n_antennas in ((2, 200), (4, 100), (8, 50)):
        cfg = _cfg(400, n_antennas, 0.1, 1.0)
        rows = []
        for t in range(20):
            trial_cfg = cfg.with_seed(derive_trial_seed(600 + beta, t))
            ch, obs, prior = generate_instance(trial_cfg, prior_mode=PRIOR_MODE_GENIE_NOISY)
            rows.append((trial_cfg, ch, obs, prior, mean_convergence_report(ch, trial_cfg, tol=1e-6)))
        surveys[beta] = rows
    return surveys


def _fitted_decay(decisions, oracle):
    errs = [float(np.linalg.norm(d - oracle)) for d in decisions]
    floor = 1e-11 * (1.0 + float(np.linalg.norm(oracle)))
    t0 = 2
    t1 = max(i for i, e in enumerate(errs) if e > floor)
    if t1 <= t0 + 2:
        t0, t1 = 0, len(errs) - 1
    return (errs[t1] / errs[t0]) ** (1.0 / (t1 - t0))


def test_criterion_06_radius_ordering_and_decay(radius_survey):
    ordered = 0
    checked = 0
    worst_margin = np.inf
    decay_ok = 0
    decay_total = 0
    worst_excess = -np.inf
    for beta, rows in radius_survey.items():
        for trial_cfg, ch, obs, prior, report in rows:
            checked += 1
            if report.rho_sa < report.rho_gmpid_empirical:
                ordered += 1
            worst_margin = min(worst_margin, report.rho_gmpid_empirical - report.rho_sa)
        for trial_cfg, ch, obs, prior, report in rows[:8]:
            decisions = []
            sa_gmpid_run(
                ch,
                obs,
                prior,
                trial_cfg.noise_var,
                opts=IterationOptions(max_iters=5000, tol=1e-10),
                on_decision=lambda t, d: decisions.append(d.copy()),
            )
            oracle = lmmse_detect(ch, obs, prior, trial_cfg.noise_var).posterior_mean
            rate = _fitted_decay(decisions, oracle)
            decay_total += 1
            if rate <= report.rho_sa + 0.05:
                decay_ok += 1
            worst_excess = max(worst_excess, rate - report.rho_sa)
    ok = ordered == checked and decay_ok == decay_total
    _verdict_line(
        6,
        "radius_ordering_and_decay",
        ok,
        f"relaxed radius below plain on {ordered}/{checked} channels "
        f"(min gap {worst_margin:.3f}); decay rate within bound on "
        f"{decay_ok}/{decay_total} runs (worst rate-radius {worst_excess:+.3f}, slack 0.05)",
    )
    assert ok


def test_criterion_07_asymptotic_radius_accuracy(radius_survey):
    cfg = _cfg(400, 200, 0.1, 1.0)
    plain_form = gmpid_asymptotic_radius(cfg)
    relaxed_form = sa_asymptotic_radius(cfg)
    worst_plain = 0.0
    worst_relaxed = 0.0
    for _, _, _, _, report in radius_survey[2]:
        worst_plain = max(worst_plain, abs(report.rho_gmpid_empirical - plain_form) / plain_form)
        worst_relaxed = max(worst_relaxed, abs(report.rho_sa - relaxed_form) / relaxed_form)
    ok = worst_plain <= 0.10 and worst_relaxed <= 0.10
    _verdict_line(
        7,
        "asymptotic_radius_accuracy",
        ok,
        f"plain radius dev <= {worst_plain:.2%}, relaxed dev <= {worst_relaxed:.2%} "
        f"of closed forms ({plain_form:.4f}, {relaxed_form:.4f}) on 20 channels (tol 10%)",
    )
    assert ok


def test_criterion_08_divergence_regime():
    # Near unit load the radius-minimizing factor from the analysis
    # matrix sits within a fraction of a percent of the true stability
    # edge of the finite channel, where it can stall or cross over; a
    # factor with a 5% window margin converges dependably, so that is
    # the selection rule pinned here (and the harness's fallback).
    cfg = _cfg(500, 350, 1e-3, 1.0)
    diverged = 0
    relaxed_converged = 0
    max_iterations_used = 0
    trials = 20
    for t in range(trials):
        trial_cfg = cfg.with_seed(derive_trial_seed(800, t))
        ch, obs, prior = generate_instance(trial_cfg, prior_mode=PRIOR_MODE_GENIE_NOISY)
        if gmpid_run(ch, obs, prior, trial_cfg.noise_var).verdict == VERDICT_DIVERGED:
            diverged += 1
        operator, n = sa_iteration_matrix_operator(ch, gamma_tilde(trial_cfg))
        _, lam_max = symmetric_extremes(operator, n)
        relax = choose_relaxation(ch, trial_cfg, mode=RELAXATION_MANUAL, w=1.9 / lam_max)
        report = sa_gmpid_run(
            ch, obs, prior, trial_cfg.noise_var, relax, IterationOptions(max_iters=20000)
        )
        if report.verdict == VERDICT_CONVERGED:
            relaxed_converged += 1
            max_iterations_used = max(max_iterations_used, report.iterations)
    ok = diverged >= 0.9 * trials and relaxed_converged == trials
    _verdict_line(
        8,
        "divergence_regime",
        ok,
        f"plain diverged on {diverged}/{trials} (need >= {int(0.9 * trials)}), "
        f"margined-window relaxed converged on {relaxed_converged}/{trials} "
        f"(need all; worst {max_iterations_used} sweeps)",
    )
    assert ok


def test_criterion_09_oracle_mse_prediction():
    cfg = _cfg(400, 100, 0.1, 1.0)
    details = []
    ok = True
    for prior_var in (1.0, 0.1, 0.01):
        swept = cfg.with_prior_var(prior_var)
        predicted = predict_mmse_mse(swept)
        scores = []
        for t in range(50):
            trial_cfg = swept.with_seed(derive_trial_seed(900, t))
            ch, obs, prior = generate_instance(trial_cfg, prior_mode=PRIOR_MODE_GENIE_NOISY)
            result = lmmse_detect(ch, obs, prior, trial_cfg.noise_var)
            scores.append(mse(result.posterior_mean, obs.x_true))
        rel = abs(float(np.mean(scores)) - predicted) / predicted
        details.append(f"prior {prior_var:g}: dev {rel:.2%}")
        ok = ok and rel <= 0.05
    _verdict_line(
        9,
        "oracle_mse_prediction",
        ok,
        "; ".join(details) + " over 50 trials each (tol 5%)",
    )
    assert ok


def test_criterion_10_cost_accounting():
    cfg = _cfg(60, 20, 0.5, 1.0, seed=3)
    ch, obs, prior = generate_instance(cfg, prior_mode=PRIOR_MODE_GENIE_NOISY)
    cross = cfg.n_users * cfg.n_antennas
    plain = gmpid_run(ch, obs, prior, cfg.noise_var)
    relaxed = sa_gmpid_run(ch, obs, prior, cfg.noise_var)
    per_iter_ok = (
        3 * cross <= plain.per_iteration_mul_count <= 6 * cross
        and 3 * cross <= relaxed.per_iteration_mul_count <= 6 * cross
    )

    counts = []
    sizes = (100, 200, 400, 800)
    for n_users in sizes:
        size_cfg = _cfg(n_users, n_users // 4, 0.5, 1.0, seed=4)
        ch, obs, prior = generate_instance(size_cfg)
        counts.append(lmmse_detect(ch, obs, prior, size_cfg.noise_var).mul_count)
    slope = float(np.polyfit(np.log(sizes), np.log(counts), 1)[0])
    slope_ok = 2.7 <= slope <= 3.3
    ok = per_iter_ok and slope_ok
    _verdict_line(
        10,
        "cost_accounting",
        ok,
        f"per-iteration counts {plain.per_iteration_mul_count} and "
        f"{relaxed.per_iteration_mul_count} inside [3,6]*{cross}; "
        f"oracle cost log-log slope {slope:.3f} (need 3 +/- 0.3)",
    )
    assert ok


def test_criterion_11_determinism():
    spec = ExperimentSpec(
        name="acceptance-determinism",
        detector_set=("lmmse", "gmpid", "sa_gmpid", "jacobi", "richardson"),
        cfg=_cfg(40, 16, 0.5, 1.0, seed=77),
        prior_var_sweep=(1.0, 0.25),
        n_trials=4,
        max_iters=200,
    )
    blob_serial = csv_bytes(run_experiment(spec).records)
    blob_threads = csv_bytes(run_experiment(spec, workers=3).records)
    blob_again = csv_bytes(run_experiment(spec).records)

    oracle_spec = ExperimentSpec(
        name="acceptance-determinism-oracle",
        detector_set=("lmmse",),
        cfg=_cfg(6, 9, 0.25, 1.0, seed=78),
        prior_var_sweep=(1.0, 0.5),
        n_trials=3,
        max_iters=10,
    )
    oracle_serial = csv_bytes(run_experiment(oracle_spec).records)
    oracle_threads = csv_bytes(run_experiment(oracle_spec, workers=2).records)

    ok = (
        blob_serial == blob_threads == blob_again
        and oracle_serial == oracle_threads
        and len(blob_serial) > len(csv_bytes(()))
    )
    _verdict_line(
        11,
        "determinism",
        ok,
        f"identical {len(blob_serial)}-byte CSV across serial/threaded/repeat runs "
        "on the five-detector spec and the oracle-only spec",
    )
    assert ok
