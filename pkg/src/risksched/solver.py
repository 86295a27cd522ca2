"""Finite-horizon risk-sensitive value iteration in the log domain.

The target quantity is V_T(delta, c) = min over policies of
E[exp(gamma * sum of the T stage costs)], computed by the multiplicative
Bellman recursion V_0 := 1, V_{j+1} = min_u Q_{j+1}(., u).  Index j always
means "stages to go"; wall stage s of a horizon-T episode uses iterate T - s.

Values grow like exp(beta_j * delta^2), so everything is stored as logs and
reduced with log-sum-exp.  Gaussian integrals use Gauss-Hermite quadrature
centered at the kernel mean (default) or a trapezoid rule on the grid itself
(cross-check).  Off-grid values of W = log V are taken by piecewise-linear
interpolation in z = delta^2, which matches the exact never-transmit shape
log K_j + beta_j * delta^2 and hence is exact for that envelope; beyond
delta_max the last two nodes extrapolate linearly in z.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, ndtr

from .model import ModelParams

__all__ = [
    "GridSpec",
    "QuadratureSpec",
    "LogValueTable",
    "PolicyTable",
    "ValueTable",
    "FeasibilityReport",
    "TruncationReport",
    "InfeasibleModelError",
    "check_feasibility",
    "closed_form_never_transmit",
    "auto_delta_max",
    "truncation_report",
    "log_q_idle",
    "log_q_transmit",
    "value_iterate",
    "risk_neutral_value_iterate",
]

RULE_HERMITE = "gauss-hermite-centered"
RULE_TRAPEZOID = "trapezoid-on-grid"

# Tail-coverage target used by the runtime truncation diagnostics.
TRUNCATION_TOL = 1e-10


class InfeasibleModelError(ValueError):
    """The exponential-cost expectation diverges at some stage."""

    def __init__(self, stage: int, message: str | None = None):
        self.stage = stage
        super().__init__(message or f"infeasible at stage {stage}")


@dataclass(frozen=True)
class GridSpec:
    """Uniform symmetric grid on [-delta_max, delta_max].

    n_points is odd so 0 is a node; the folded grid is the non-negative
    half, sharing nodes bitwise with the original so fold/unfold
    comparisons carry no interpolation noise.
    """

    delta_max: float
    n_points: int

    def __post_init__(self) -> None:
        if not self.delta_max > 0:
            raise ValueError(f"delta_max must be > 0, got {self.delta_max}")
        if self.n_points < 3 or self.n_points % 2 == 0:
            raise ValueError(f"n_points must be odd and >= 3, got {self.n_points}")

    @property
    def spacing(self) -> float:
        return 2.0 * self.delta_max / (self.n_points - 1)

    @property
    def n_folded(self) -> int:
        return (self.n_points + 1) // 2

    def folded_nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.delta_max, self.n_folded)

    def nodes(self) -> np.ndarray:
        # Built by mirroring the half grid so symmetry is exact bitwise.
        pos = self.folded_nodes()
        return np.concatenate([-pos[:0:-1], pos])

    def nodes_for(self, space: str) -> np.ndarray:
        _check_space(space)
        return self.nodes() if space == "original" else self.folded_nodes()


@dataclass(frozen=True)
class QuadratureSpec:
    rule: str = RULE_HERMITE
    n_nodes: int = 64

    def __post_init__(self) -> None:
        if self.rule not in (RULE_HERMITE, RULE_TRAPEZOID):
            raise ValueError(f"unknown quadrature rule {self.rule!r}")
        if self.rule == RULE_HERMITE and self.n_nodes < 8:
            raise ValueError("Hermite rule needs n_nodes >= 8")


@dataclass
class LogValueTable:
    """w[j][c][i] = log V_j at node i, channel c, j = 0..T stages to go."""

    w: np.ndarray
    grid: GridSpec
    space: str
    normalized: bool = True

    @property
    def horizon(self) -> int:
        return self.w.shape[0] - 1


@dataclass
class ValueTable:
    """Additive (risk-neutral) analog of LogValueTable."""

    v: np.ndarray
    grid: GridSpec
    space: str


@dataclass
class PolicyTable:
    """u_star[j][c][i]: minimizing action with j stages to go (row 0 idle).

    q_margin holds log_q_transmit - log_q_idle at each decision so callers
    can recognize numerical ties; +inf on the degenerate row 0.
    """

    u_star: np.ndarray
    q_margin: np.ndarray
    grid: GridSpec
    space: str

    @property
    def horizon(self) -> int:
        return self.u_star.shape[0] - 1


@dataclass(frozen=True)
class FeasibilityReport:
    """beta-recursion trace; beta[t] is NaN past the first violation."""

    beta: np.ndarray
    feasible: bool
    first_violation_stage: int | None


@dataclass(frozen=True)
class TruncationReport:
    """Runtime validation of the grid truncation against the analytic envelope.

    coverage_tail is the mass the exp-tilted visit law (from delta = 0,
    never transmitting) leaves beyond delta_max.  envelope_extrap_error is
    the defect of the linear-in-delta^2 extrapolation against the exact
    never-transmit log-value at 1.5 * delta_max; extrapolation makes the
    closed form exact off-grid, so this is the error the truncation
    actually induces on the analytic envelope.
    """

    delta_max: float
    tilted_std: float
    coverage_tail: float
    envelope_extrap_error: float
    ok: bool
    gh_cap_active: bool = False


def _check_space(space: str) -> None:
    if space not in ("original", "folded"):
        raise ValueError(f"space must be 'original' or 'folded', got {space!r}")


def check_feasibility(params: ModelParams) -> FeasibilityReport:
    """Run beta_{t+1} = gamma + a^2 beta_t / (1 - 2 sigma2 beta_t), beta_0 = 0.

    The model is feasible iff 2 sigma2 beta_t < 1 for every t <= T; the
    report never raises, it carries the verdict.
    """
    T = params.horizon
    beta = np.full(T + 1, np.nan)
    beta[0] = 0.0
    first_violation = None
    for t in range(T + 1):
        if 2.0 * params.sigma2 * beta[t] >= 1.0:
            first_violation = t
            beta[t + 1 :] = np.nan
            break
        if t < T:
            beta[t + 1] = params.gamma + params.a**2 * beta[t] / (
                1.0 - 2.0 * params.sigma2 * beta[t]
            )
    return FeasibilityReport(
        beta=beta, feasible=first_violation is None, first_violation_stage=first_violation
    )


def _log_k(params: ModelParams, beta: np.ndarray, t: int) -> float:
    # log K_t = -1/2 * sum_{s<t} log(1 - 2 sigma2 beta_s)
    return float(-0.5 * np.sum(np.log1p(-2.0 * params.sigma2 * beta[:t])))


def closed_form_never_transmit(params: ModelParams, delta, c, t: int):
    """log V_t under u == 0: log K_t + beta_t * delta^2 (channel-free).

    K_{t+1} = K_t / sqrt(1 - 2 sigma2 beta_t), K_0 = 1, from the Gaussian
    identity E[exp(b (m + w)^2)] = (1 - 2 sigma2 b)^{-1/2} exp(b m^2 /
    (1 - 2 sigma2 b)).
    """
    if not 0 <= t <= params.horizon:
        raise ValueError(f"stage t must lie in [0, {params.horizon}], got {t}")
    rep = check_feasibility(params)
    if rep.first_violation_stage is not None and rep.first_violation_stage < t:
        raise InfeasibleModelError(rep.first_violation_stage)
    return _log_k(params, rep.beta, t) + rep.beta[t] * np.square(np.asarray(delta, dtype=float))


def _tilted_visit_std(params: ModelParams, beta: np.ndarray) -> float:
    """Max std of the exp-tilted never-transmit error path started at 0.

    Tilting the drift step by exp(beta (a*delta + w)^2) turns the noise into
    N(., sigma2 / (1 - 2 sigma2 beta)) and scales the gain by the same
    denominator; this is the widest law the solver's integrals see.
    """
    T = params.horizon
    v = 0.0
    vmax = params.sigma2
    for j in range(1, T + 1):
        den = 1.0 - 2.0 * params.sigma2 * beta[T - j]
        v = (params.a / den) ** 2 * v + params.sigma2 / den
        vmax = max(vmax, v)
    return math.sqrt(vmax)


def _hermite_cap(params: ModelParams, beta: np.ndarray, n_nodes: int) -> float:
    """Largest delta_max at which mean-centered Hermite stays accurate.

    Integrating exp(beta x^2)-shaped values shifts the effective integrand
    peak to y_hat = sqrt(2) sigma beta a delta / (1 - 2 sigma2 beta); the
    rule degrades once y_hat plus a few tilted stds nears the outermost
    Hermite node, so cap delta accordingly (worst stage: largest beta).
    """
    T = params.horizon
    if T == 0 or params.a == 0.0:
        return math.inf
    bstar = float(np.max(beta[: T]))
    if bstar <= 0.0:
        return math.inf
    alpha = 2.0 * params.sigma2 * bstar
    y_max = float(np.polynomial.hermite.hermgauss(n_nodes)[0].max())
    s_y = 1.0 / math.sqrt(2.0 * (1.0 - alpha))
    margin = 0.9 * y_max - 6.0 * s_y
    if margin <= 0.0:
        return math.inf  # rule too coarse to help; fall back to coverage radius
    return margin * (1.0 - alpha) / (math.sqrt(2.0) * params.sigma * bstar * abs(params.a))


def auto_delta_max(params: ModelParams, quad: QuadratureSpec | None = None) -> float:
    """Truncation radius: tilted 6.5-sigma coverage, capped for Hermite safety."""
    rep = check_feasibility(params)
    if not rep.feasible:
        raise InfeasibleModelError(rep.first_violation_stage)
    sigma = params.sigma
    if params.horizon == 0:
        return round(4.0 * sigma, 2)
    d_cov = 6.5 * _tilted_visit_std(params, rep.beta)
    d = d_cov
    if quad is None or quad.rule == RULE_HERMITE:
        n_nodes = quad.n_nodes if quad is not None else 64
        d = min(d, _hermite_cap(params, rep.beta, n_nodes))
    d = max(d, 2.0 * sigma)
    return float(np.ceil(d * 10.0) / 10.0)


def truncation_report(
    params: ModelParams, grid: GridSpec, quad: QuadratureSpec | None = None
) -> TruncationReport:
    rep = check_feasibility(params)
    if not rep.feasible:
        raise InfeasibleModelError(rep.first_violation_stage)
    std = _tilted_visit_std(params, rep.beta)
    coverage_tail = float(2.0 * ndtr(-grid.delta_max / std))
    T = params.horizon
    # Linear-in-z extrapolation of the stage-T closed form from the last
    # two grid nodes, probed at 1.5 * delta_max.
    pos = grid.folded_nodes()
    w_last = closed_form_never_transmit(params, pos[-2:], 0, T)
    probe = 1.5 * grid.delta_max
    th = (probe**2 - pos[-2] ** 2) / (pos[-1] ** 2 - pos[-2] ** 2)
    w_extrap = w_last[0] * (1.0 - th) + w_last[1] * th
    w_exact = float(closed_form_never_transmit(params, probe, 0, T))
    scale = max(1.0, abs(w_exact))
    err = abs(w_extrap - w_exact) / scale
    cap = math.inf
    if quad is None or quad.rule == RULE_HERMITE:
        cap = _hermite_cap(params, rep.beta, quad.n_nodes if quad is not None else 64)
    return TruncationReport(
        delta_max=grid.delta_max,
        tilted_std=std,
        coverage_tail=coverage_tail,
        envelope_extrap_error=err,
        ok=bool(coverage_tail <= TRUNCATION_TOL or err <= TRUNCATION_TOL),
        gh_cap_active=bool(cap < 6.5 * std),
    )


# ---------------------------------------------------------------------------
# Off-grid evaluation: piecewise-linear in z = delta^2, per channel state.


class _ZInterp:
    """Evaluate a per-channel node table at arbitrary points.

    Original space keeps separate left/right half-tables (so no evenness is
    assumed); folded space looks up |x|.  Queries past delta_max continue
    the last interval's line in z.
    """

    def __init__(self, grid: GridSpec, space: str, table: np.ndarray):
        _check_space(space)
        pos = grid.folded_nodes()
        self.pos = pos
        self.zpos = pos * pos
        if space == "original":
            mid = grid.n_points // 2
            self.right = table[:, mid:]
            self.left = table[:, mid::-1]
        else:
            self.right = table
            self.left = table

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        ax = np.abs(x)
        j = np.clip(np.searchsorted(self.pos, ax, side="right"), 1, len(self.pos) - 1)
        z0 = self.zpos[j - 1]
        th = (x * x - z0) / (self.zpos[j] - z0)
        lo = np.where(x < 0, self.left[:, j - 1], self.right[:, j - 1])
        hi = np.where(x < 0, self.left[:, j], self.right[:, j])
        return lo * (1.0 - th) + hi * th


def _hermite_nodes(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Symmetrized Hermite abscissas and log-weights (weights / sqrt(pi))."""
    y, wt = np.polynomial.hermite.hermgauss(n)
    y = 0.5 * (y - y[::-1])
    wt = 0.5 * (wt + wt[::-1])
    return y, np.log(wt) - 0.5 * math.log(math.pi)


def _log_channel(params: ModelParams) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(params.channel_matrix())


class _BellmanStage:
    """One application of the log-domain Bellman operator on a fixed grid."""

    def __init__(
        self,
        params: ModelParams,
        grid: GridSpec,
        quad: QuadratureSpec,
        space: str,
        normalized: bool,
    ):
        _check_space(space)
        self.params = params
        self.grid = grid
        self.quad = quad
        self.space = space
        self.normalized = normalized
        self.nodes = grid.nodes_for(space)
        self.logp = _log_channel(params)
        # Unnormalized kernels scale every branch by sqrt(2 pi sigma2).
        self.stage_shift = 0.0 if normalized else 0.5 * math.log(2.0 * math.pi * params.sigma2)
        if quad.rule == RULE_HERMITE:
            self.y, self.logw = _hermite_nodes(quad.n_nodes)
        else:
            w = np.full(grid.n_points, grid.spacing)
            w[0] *= 0.5
            w[-1] *= 0.5
            self.int_nodes = grid.nodes()
            self.log_trapz = np.log(w)
            # |node| index into a folded table: distance from the center.
            self.fold_idx = np.abs(np.arange(grid.n_points) - grid.n_points // 2)

    def _integrate_hermite(self, w_t: np.ndarray, centers: np.ndarray) -> np.ndarray:
        """log of sum_{c+} p[c][c+] * int N(x; center, sigma2) exp(W_t(x, c+)) dx.

        Returns an array (2, len(centers)) indexed by the current channel c.
        """
        interp = _ZInterp(self.grid, self.space, w_t)
        x = centers[:, None] + math.sqrt(2.0) * self.params.sigma * self.y[None, :]
        vals = interp(x)  # (2, n_centers, n_quad) over c+
        terms = self.logw[None, None, :] + vals
        out = np.empty((2, len(centers)))
        for c in (0, 1):
            out[c] = logsumexp(self.logp[c][:, None, None] + terms, axis=(0, 2))
        return out

    def _integrate_trapezoid(self, w_t: np.ndarray, centers: np.ndarray) -> np.ndarray:
        s2 = self.params.sigma2
        xj = self.int_nodes
        logw = self.log_trapz
        log_kernel = -np.square(xj[None, :] - centers[:, None]) / (2.0 * s2) - 0.5 * math.log(
            2.0 * math.pi * s2
        )
        if self.space == "original":
            w_vals = w_t  # (2, n) at the integration nodes directly
        else:
            w_vals = w_t[:, self.fold_idx]
        terms = logw[None, None, :] + log_kernel[None, :, :] + w_vals[:, None, :]
        out = np.empty((2, len(centers)))
        for c in (0, 1):
            out[c] = logsumexp(self.logp[c][:, None, None] + terms, axis=(0, 2))
        return out

    def _integrate(self, w_t: np.ndarray, centers: np.ndarray) -> np.ndarray:
        if self.quad.rule == RULE_HERMITE:
            return self._integrate_hermite(w_t, centers)
        return self._integrate_trapezoid(w_t, centers)

    def q_values(
        self, w_t: np.ndarray, deltas: np.ndarray | None = None
    ) -> tuple[np.ndarray, np.ndarray]:
        """(log_q_idle, log_q_transmit), each (2, n_deltas) over channel c."""
        p = self.params
        w_t = np.asarray(w_t, dtype=float)
        deltas = self.nodes if deltas is None else np.asarray(deltas, dtype=float)
        z = np.square(deltas)
        # Overflow here means the expectation diverged; it surfaces as a
        # non-finite entry that the callers turn into InfeasibleModelError.
        with np.errstate(over="ignore", invalid="ignore"):
            drift = self._integrate(w_t, p.a * deltas)  # kernel centered at a*delta
            reset = self._integrate(w_t, np.zeros(1))  # delivered kernel center 0
        q0 = p.gamma * z[None, :] + drift + self.stage_shift
        q1 = np.empty_like(q0)
        # Bad channel: the attempt is lost, so only the price is added.
        q1[0] = p.gamma * p.lam + q0[0]
        q1[1] = p.gamma * p.lam + reset[1, 0] + self.stage_shift
        return q0, q1


def _stage_op(
    params: ModelParams,
    grid: GridSpec,
    quad: QuadratureSpec,
    space: str,
    normalized: bool,
) -> _BellmanStage:
    return _BellmanStage(params, grid, quad, space, normalized)


def log_q_idle(
    t: int,
    delta,
    c: int,
    w_t: np.ndarray,
    params: ModelParams,
    grid: GridSpec,
    quad: QuadratureSpec,
    space: str = "original",
    normalized: bool = True,
):
    """gamma*delta^2 + log sum_{c+} p[c][c+] * E[exp W_t(a*delta + w, c+)].

    w_t is the stage table being integrated, shaped (2, n_nodes) for the
    given space; t only labels error messages.
    """
    stage = _stage_op(params, grid, quad, space, normalized)
    deltas = np.atleast_1d(np.asarray(delta, dtype=float))
    q0, _ = stage.q_values(w_t, deltas)
    out = q0[c]
    if not np.all(np.isfinite(out)):
        raise InfeasibleModelError(t, f"log_q_idle overflowed at stage {t}")
    return out if np.ndim(delta) else float(out[0])


def log_q_transmit(
    t: int,
    delta,
    c: int,
    w_t: np.ndarray,
    params: ModelParams,
    grid: GridSpec,
    quad: QuadratureSpec,
    space: str = "original",
    normalized: bool = True,
):
    """Transmit branch: reset kernel when c=1, idle kernel plus price when c=0."""
    stage = _stage_op(params, grid, quad, space, normalized)
    deltas = np.atleast_1d(np.asarray(delta, dtype=float))
    _, q1 = stage.q_values(w_t, deltas)
    out = q1[c]
    if not np.all(np.isfinite(out)):
        raise InfeasibleModelError(t, f"log_q_transmit overflowed at stage {t}")
    return out if np.ndim(delta) else float(out[0])


def value_iterate(
    params: ModelParams,
    grid: GridSpec,
    quad: QuadratureSpec,
    space: str = "original",
    normalized: bool = True,
    force_u: int | None = None,
) -> tuple[LogValueTable, PolicyTable]:
    """Backward recursion W_{j+1} = min(log_q_idle, log_q_transmit) on the grid.

    Returns tables indexed by stages-to-go j = 0..T; u_star records the
    argmin with ties resolved to u = 0.  force_u pins the action (0 or 1)
    at every decision, which turns the recursion into policy evaluation
    (u == 0 reproduces the closed form).
    """
    _check_space(space)
    if force_u not in (None, 0, 1):
        raise ValueError("force_u must be None, 0, or 1")
    rep = check_feasibility(params)
    if not rep.feasible:
        raise InfeasibleModelError(rep.first_violation_stage)
    stage = _stage_op(params, grid, quad, space, normalized)
    n = len(stage.nodes)
    T = params.horizon
    w = np.zeros((T + 1, 2, n))
    u_star = np.zeros((T + 1, 2, n), dtype=np.int8)
    q_margin = np.full((T + 1, 2, n), np.inf)
    for j in range(1, T + 1):
        q0, q1 = stage.q_values(w[j - 1])
        take = q1 < q0  # strict: ties idle
        if force_u == 0:
            take = np.zeros_like(take)
        elif force_u == 1:
            take = np.ones_like(take)
        w[j] = np.where(take, q1, q0)
        u_star[j] = take
        q_margin[j] = q1 - q0
        if not np.all(np.isfinite(w[j])):
            raise InfeasibleModelError(j, f"value table overflowed at stage {j}")
    return (
        LogValueTable(w=w, grid=grid, space=space, normalized=normalized),
        PolicyTable(u_star=u_star, q_margin=q_margin, grid=grid, space=space),
    )


def risk_neutral_value_iterate(
    params: ModelParams,
    grid: GridSpec,
    quad: QuadratureSpec,
    space: str = "original",
) -> tuple[ValueTable, PolicyTable]:
    """Additive Bellman recursion with the same kernels and stage cost d.

    gamma is ignored; this is the gamma -> 0 limit of (1/gamma) * W.
    """
    _check_space(space)
    p = params
    nodes = grid.nodes_for(space)
    z = np.square(nodes)
    T = p.horizon
    n = len(nodes)
    P = p.channel_matrix()
    if quad.rule == RULE_HERMITE:
        y, logw = _hermite_nodes(quad.n_nodes)
        wq = np.exp(logw)
        x_drift = p.a * nodes[:, None] + math.sqrt(2.0) * p.sigma * y[None, :]
        x_reset = (math.sqrt(2.0) * p.sigma * y)[None, :]
    else:
        xj = grid.nodes()
        wts = np.r_[0.5, np.ones(len(xj) - 2), 0.5] * grid.spacing
        dens_drift = wts[None, :] * np.exp(
            -np.square(xj[None, :] - p.a * nodes[:, None]) / (2 * p.sigma2)
        ) / math.sqrt(2 * math.pi * p.sigma2)
        dens_reset = (
            wts * np.exp(-np.square(xj) / (2 * p.sigma2)) / math.sqrt(2 * math.pi * p.sigma2)
        )[None, :]
        fold_idx = np.abs(np.arange(grid.n_points) - grid.n_points // 2)

    v = np.zeros((T + 1, 2, n))
    u_star = np.zeros((T + 1, 2, n), dtype=np.int8)
    q_margin = np.full((T + 1, 2, n), np.inf)

    def expect(v_j: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        # E[v(next delta, next c)] for drift and reset kernels, per current c.
        if quad.rule == RULE_HERMITE:
            interp = _ZInterp(grid, space, v_j)
            vd = np.einsum("k,cik->ci", wq, interp(x_drift))
            vr = np.einsum("k,cik->ci", wq, interp(x_reset))[:, 0]
        else:
            vals = v_j if space == "original" else v_j[:, fold_idx]
            vd = np.einsum("ij,cj->ci", dens_drift, vals)
            vr = np.einsum("ij,cj->c", dens_reset, vals)
        e_drift = P @ vd
        e_reset = P @ vr
        return e_drift, e_reset

    for j in range(1, T + 1):
        e_drift, e_reset = expect(v[j - 1])
        q0 = z[None, :] + e_drift
        q1 = np.empty_like(q0)
        q1[0] = p.lam + q0[0]
        q1[1] = p.lam + e_reset[1]
        take = q1 < q0
        v[j] = np.where(take, q1, q0)
        u_star[j] = take
        q_margin[j] = q1 - q0
    return (
        ValueTable(v=v, grid=grid, space=space),
        PolicyTable(u_star=u_star, q_margin=q_margin, grid=grid, space=space),
    )
