"""Acceptance suite: ten numbered criteria, one printed pass/fail line each.

Each criterion pins an end-to-end guarantee of the package against an
independent route: the never-transmit closed form, exhaustive enumeration on
a quantized chain, Monte Carlo, the risk-neutral limit, or a structural
invariant of the solved tables.  Tolerances are part of the contract and are
asserted exactly as stated in each test.
"""

import math
import time

import numpy as np
import pytest

from risksched import (
    GridSpec,
    ModelParams,
    QuadratureSpec,
    auto_delta_max,
    brute_force_optimal,
    chain_policy,
    check_feasibility,
    closed_form_never_transmit,
    estimate_risk_objective,
    exact_policy_cost,
    extract_thresholds,
    idle_policy,
    quantize,
    risk_neutral_value_iterate,
    threshold_policy,
    value_iterate,
)

HERMITE = QuadratureSpec(n_nodes=64)


def report(num: int, ok: bool, detail: str) -> None:
    print(f"{'PASS' if ok else 'FAIL'} criterion {num}: {detail}")
    assert ok, f"criterion {num}: {detail}"


def std_params(**kw):
    base = dict(a=0.9, sigma2=1.0, lam=1.0, gamma=0.05, horizon=5, p01=0.3, p10=0.2)
    base.update(kw)
    return ModelParams(**base)


@pytest.fixture(scope="module")
def std_instance():
    """Shared solves of the standard instance (criteria 5, 6, 7, 10)."""
    p = std_params()
    grid = GridSpec(auto_delta_max(p, HERMITE), 401)
    original = value_iterate(p, grid, HERMITE, space="original")
    folded = value_iterate(p, grid, HERMITE, space="folded")
    unnormalized = value_iterate(p, grid, HERMITE, space="original", normalized=False)
    return p, grid, original, folded, unnormalized


@pytest.fixture(scope="module")
def lam_gamma_sweep():
    """Folded solves over (lambda, gamma) in {0.5,1,2} x {0.01,0.05,0.1} (criteria 3, 4)."""
    out = {}
    for lam in (0.5, 1.0, 2.0):
        for gamma in (0.01, 0.05, 0.1):
            p = std_params(lam=lam, gamma=gamma, horizon=3)
            assert check_feasibility(p).feasible
            grid = GridSpec(auto_delta_max(p, HERMITE), 321)
            out[(lam, gamma)] = (p, grid) + value_iterate(p, grid, HERMITE, space="folded")
    return out


def test_criterion_01_closed_form_oracle():
    """Forced-idle value iteration vs the never-transmit closed form."""
    t0 = time.perf_counter()
    p = std_params()  # a=0.9, sigma2=1, gamma=0.05, T=5
    grid = GridSpec(auto_delta_max(p, HERMITE), 401)
    table, _ = value_iterate(p, grid, HERMITE, space="original", force_u=0)
    nodes = grid.nodes()
    err = max(
        float(np.max(np.abs(table.w[t] - closed_form_never_transmit(p, nodes, 0, t)[None, :])))
        for t in range(p.horizon + 1)
    )
    elapsed = time.perf_counter() - t0
    report(
        1,
        err <= 1e-6 and elapsed < 10.0,
        f"max |dlogV| = {err:.3e} (tol 1e-6), {elapsed:.2f}s (< 10s), delta_max={grid.delta_max}",
    )


def test_criterion_02_small_instance_optimality():
    """Enumeration, backward induction, and direct policy evaluation agree."""
    t0 = time.perf_counter()
    p = std_params(horizon=3)
    chain = quantize(p, n_delta=9, noise_points=3)
    # enumerate the full even-threshold family; brute_force_optimal raises
    # OracleMismatchError if its best misses the unrestricted DP optimum
    result = brute_force_optimal(chain, mode="threshold")
    enum_gap = float(np.max(np.abs(result.value - result.enum_value) / np.abs(result.value)))
    rule = chain_policy(result.policy, chain)
    eval_gap = 0.0
    for i, s in enumerate(chain.delta_states):
        for c in (0, 1):
            v = exact_policy_cost(chain, rule, float(s), c)
            eval_gap = max(eval_gap, abs(v - float(result.value[i, c])) / float(result.value[i, c]))
    elapsed = time.perf_counter() - t0
    report(
        2,
        enum_gap <= 1e-12 and eval_gap <= 1e-12 and elapsed < 60.0,
        f"enum-vs-DP rel gap = {enum_gap:.3e}, eval-vs-DP rel gap = {eval_gap:.3e} "
        f"(tol 1e-12), {result.n_enumerated} policies, {elapsed:.2f}s (< 60s)",
    )


def test_criterion_03_threshold_structure(lam_gamma_sweep):
    """Transmit sets are up-sets in |delta| and extraction succeeds everywhere."""
    violations = 0
    for (lam, gamma), (p, grid, table, pol) in lam_gamma_sweep.items():
        # non-decreasing action along the folded grid at every stage
        violations += int(np.sum(np.diff(pol.u_star.astype(int), axis=2) < 0))
        extract_thresholds(pol, grid)  # raises NonThresholdPolicyError on any gap
    report(
        3,
        violations == 0,
        f"up-set violations = {violations} over 9 (lambda, gamma) points, "
        "threshold extraction succeeded at all of them",
    )


def test_criterion_04_bad_channel_never_transmits(lam_gamma_sweep):
    """u* = 0 at every node and stage when the channel is bad."""
    n_transmit = 0
    n_nodes = 0
    for (lam, gamma), (p, grid, table, pol) in lam_gamma_sweep.items():
        n_transmit += int(pol.u_star[:, 0, :].sum())
        n_nodes += pol.u_star[:, 0, :].size
    report(
        4,
        n_transmit == 0,
        f"bad-channel transmit count = {n_transmit} / {n_nodes} nodes "
        "over 9 (lambda, gamma) points",
    )


def test_criterion_05_even_in_delta(std_instance):
    """W(delta) = W(-delta) on the original grid."""
    _, _, (table, _), _, _ = std_instance
    err = float(np.max(np.abs(table.w - table.w[:, :, ::-1])))
    report(5, err <= 1e-12, f"max |W(d) - W(-d)| = {err:.3e} (tol 1e-12)")


def test_criterion_06_fold_unfold_consistency(std_instance):
    """Folded solve reproduces the original one on the shared half-grid."""
    p, grid, (table, pol), (ftable, fpol), _ = std_instance
    mid = grid.n_points // 2
    w_err = float(np.max(np.abs(table.w[:, :, mid:] - ftable.w)))
    tie = np.abs(pol.q_margin[:, :, mid:]) <= 1e-9
    mismatches = int(np.sum((pol.u_star[:, :, mid:] != fpol.u_star) & ~tie))
    report(
        6,
        w_err <= 1e-8 and mismatches == 0,
        f"max |W_orig - W_folded| = {w_err:.3e} (tol 1e-8), "
        f"policy mismatches outside 1e-9 tie band = {mismatches}",
    )


def test_criterion_07_monotonicity(std_instance):
    """W_folded non-decreasing in |delta| and in stages to go.

    Violations are counted below -1e-12; plain floating-point dust (order
    1e-16, from re-summed quadrature weights) is not a violation of the
    ordering, which the table otherwise satisfies exactly.
    """
    _, _, _, (ftable, _), _ = std_instance
    node_diff = np.diff(ftable.w, axis=2)
    stage_diff = np.diff(ftable.w, axis=0)
    n_node = int(np.sum(node_diff < -1e-12))
    n_stage = int(np.sum(stage_diff < -1e-12))
    report(
        7,
        n_node == 0 and n_stage == 0,
        f"grid-monotonicity violations = {n_node} (min diff {node_diff.min():.1e}), "
        f"stage-monotonicity violations = {n_stage} (min diff {stage_diff.min():.1e})",
    )


def test_criterion_08_risk_neutral_limit():
    """(1/gamma) W approaches the risk-neutral table at first order in gamma."""
    base = dict(a=0.9, sigma2=1.0, lam=1.0, horizon=3, p01=0.3, p10=0.2)
    grid = GridSpec(9.3, 481)  # fixed grid so D(gamma) compares identical nodes
    rn, _ = risk_neutral_value_iterate(
        ModelParams(gamma=0.1, **base), grid, HERMITE, space="folded"
    )
    T = base["horizon"]
    d = {}
    for gamma in (0.1, 0.05, 0.025):
        table, _ = value_iterate(ModelParams(gamma=gamma, **base), grid, HERMITE, space="folded")
        d[gamma] = float(np.max(np.abs(table.w[T] / gamma - rn.v[T])))
    decreasing = d[0.025] < d[0.05] < d[0.1]
    ratio = d[0.05] / d[0.1]
    report(
        8,
        decreasing and 0.35 <= ratio <= 0.65,
        f"D(0.1)={d[0.1]:.4e} D(0.05)={d[0.05]:.4e} D(0.025)={d[0.025]:.4e}, "
        f"D(0.05)/D(0.1) = {ratio:.3f} (in [0.35, 0.65])",
    )


def test_criterion_09_monte_carlo_consistency():
    """MC log-objective within 3 SE of the solved table and the closed form."""
    t0 = time.perf_counter()
    p = std_params(gamma=0.02)
    grid = GridSpec(auto_delta_max(p, HERMITE), 401)
    table, pol = value_iterate(p, grid, HERMITE, space="folded")
    schedule = extract_thresholds(pol, grid)

    anchor_opt = float(table.w[p.horizon, 1, 0])  # start delta=0, c=1
    est_opt = estimate_risk_objective(
        p, threshold_policy(schedule), n_rollouts=1_000_000, seed=7, delta0=0.0, c0=1
    )
    z_opt = abs(est_opt.log_estimate - anchor_opt) / est_opt.se_log

    anchor_idle = float(closed_form_never_transmit(p, 0.0, 1, p.horizon))
    est_idle = estimate_risk_objective(
        p, idle_policy(), n_rollouts=1_000_000, seed=11, delta0=0.0, c0=1
    )
    z_idle = abs(est_idle.log_estimate - anchor_idle) / est_idle.se_log

    elapsed = time.perf_counter() - t0
    report(
        9,
        z_opt <= 3.0 and z_idle <= 3.0 and est_opt.tail_ok and est_idle.tail_ok
        and elapsed < 300.0,
        f"solved policy |z| = {z_opt:.2f}, never-transmit |z| = {z_idle:.2f} (<= 3), "
        f"tail diagnostics ok = ({est_opt.tail_ok}, {est_idle.tail_ok}), "
        f"{elapsed:.1f}s (< 300s)",
    )


def test_criterion_10_normalization_invariance(std_instance):
    """Unnormalized kernels shift W by t/2 * ln(2 pi sigma2) and keep the policy."""
    p, grid, (tn, pn), _, (tu, pu) = std_instance
    shift = 0.5 * math.log(2.0 * math.pi * p.sigma2)
    err = max(
        float(np.max(np.abs(tu.w[j] - tn.w[j] - j * shift)))
        for j in range(p.horizon + 1)
    )
    tie = np.abs(pn.q_margin) <= 1e-9
    mismatches = int(np.sum((pn.u_star != pu.u_star) & ~tie))
    report(
        10,
        err <= 1e-10 and mismatches == 0,
        f"max shift defect = {err:.3e} (tol 1e-10), "
        f"policy mismatches outside 1e-9 tie band = {mismatches}",
    )
