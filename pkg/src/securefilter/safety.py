"""Zero-order CBF evaluation and the min-norm secure safety filter.

The filter perturbs a nominal input as little as possible subject to the
one-step barrier condition

    h(F(x, u)) - h(x) >= -lam * h(x) + eps + eps1

holding simultaneously for every plausible current state x. ``eps`` covers
intra-sample excursions of the continuous flow; ``eps1`` additionally covers
the ball radius and integrator error of the relaxed estimator (0 in exact
mode). The solver is a deterministic grid sweep over the input box followed
by coordinate bisection toward the nominal input; reproducibility is worth
more here than squeezing out the last fraction of optimality from what is a
nonconvex constraint in u.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import Box, SamplingConfig, exact_flow, rk4_step

__all__ = [
    "CbfSpec",
    "FilterResult",
    "h_band",
    "cbf_constraint",
    "secure_filter",
    "verify_zocbf_margin",
]


def h_band(x, half_width: float = 3.0):
    """Horizontal-band safety function h = half_width^2 - p2^2 (safe where >= 0)."""
    x = np.asarray(x, dtype=float)
    return half_width * half_width - x[..., 1] ** 2


@dataclass(frozen=True)
class CbfSpec:
    """Safety function plus the margins of the discrete barrier condition.

    ``lam`` is the slope of the linear extended-class-K term (gamma(s) = lam*s,
    0 < lam <= 1 so |gamma(s)| <= |s|). ``L1`` is the Lipschitz constant of h
    over the operating region; in relaxed mode ``eps1`` must dominate
    L1 * (L * delta_prime + wbar).
    """

    h: callable = h_band
    lam: float = 0.1
    eps: float = 0.0
    eps1: float = 0.0
    L1: float = 0.0

    def __post_init__(self):
        if not (0.0 < self.lam <= 1.0):
            raise ValueError("lam must lie in (0, 1] for gamma to be class-K with |gamma(s)| <= |s|")
        if self.eps < 0 or self.eps1 < 0:
            raise ValueError("margins eps and eps1 must be nonnegative")

    def gamma(self, s):
        return self.lam * np.asarray(s, dtype=float)


@dataclass
class FilterResult:
    """Outcome of one filter solve."""

    u_safe: np.ndarray
    feasible: bool
    active: bool
    correction_norm: float
    n_constraints: int
    min_slack: float


def cbf_constraint(x, u, spec: CbfSpec, cfg: SamplingConfig):
    """Slack of the discrete barrier condition; >= 0 means satisfied.

    Broadcasts over batched states and inputs, returning
    h(F(x,u)) - h(x) + gamma(h(x)) - eps - eps1.
    """
    hx = spec.h(np.asarray(x, dtype=float))
    hn = spec.h(rk4_step(x, u, cfg.T))
    return hn - hx + spec.gamma(hx) - spec.eps - spec.eps1


def _min_slack_over_states(states, u, spec, cfg):
    """Worst constraint slack over all enforced states at a single input."""
    slacks = cbf_constraint(states, np.asarray(u, dtype=float), spec, cfg)
    return float(np.min(slacks))


def secure_filter(
    u_nom,
    plausible,
    spec: CbfSpec,
    cfg: SamplingConfig,
    input_box: Box,
    n_grid: tuple = (51, 21),
    refine_iters: int = 20,
    recheck_tol: float = 1e-9,
    excitation_floor: float = 0.1,
    v_sign_hint: float = 0.0,
) -> FilterResult:
    """Minimally invasive correction of u_nom subject to the barrier condition.

    Enforces the constraint at every member of the plausible set. If u_nom
    itself is feasible it is returned bit-exactly. Otherwise a coarse grid
    over the input box is swept for feasible points, the feasible point
    closest to u_nom is refined by bisecting each coordinate toward u_nom,
    and the result is re-verified. With no feasible grid point the filter
    falls back to the input maximizing the worst slack and reports
    ``feasible=False``; safety guarantees are void for that step.

    Corrections avoid the speed dead zone |v| < ``excitation_floor`` whenever
    a feasible input outside it exists: a stopped unicycle is unobservable,
    so letting a correction park the vehicle would destroy the sensor
    redundancy the whole scheme relies on at the next step. ``v_sign_hint``
    (the sign of the previously applied speed) breaks ties when leaving the
    dead zone, so that consecutive marginal corrections keep moving the
    vehicle one way instead of dithering in place.
    """
    states = plausible.centers()
    if len(states) == 0:
        raise ValueError("plausible set must be nonempty")
    u_nom = np.asarray(u_nom, dtype=float)

    def min_slack(u):
        return _min_slack_over_states(states, u, spec, cfg)

    nom_slack = min_slack(u_nom)
    if nom_slack >= 0.0:
        return FilterResult(
            u_safe=u_nom.copy(),
            feasible=True,
            active=False,
            correction_norm=0.0,
            n_constraints=len(states),
            min_slack=nom_slack,
        )

    lo = np.asarray(input_box.lo, dtype=float)
    hi = np.asarray(input_box.hi, dtype=float)
    vs = np.linspace(lo[0], hi[0], n_grid[0])
    ws = np.linspace(lo[1], hi[1], n_grid[1])
    VV, WW = np.meshgrid(vs, ws, indexing="ij")
    grid = np.stack([VV.ravel(), WW.ravel()], axis=-1)  # (N, 2)

    # slack of every (state, grid-point) pair in one broadcast
    slacks = cbf_constraint(
        states[:, None, :], grid[None, :, :], spec, cfg
    )  # (m, N)
    worst = np.min(slacks, axis=0)
    feasible_mask = worst >= 0.0

    if not np.any(feasible_mask):
        u_fallback = grid[int(np.argmax(worst))]
        return FilterResult(
            u_safe=u_fallback,
            feasible=False,
            active=True,
            correction_norm=float(np.linalg.norm(u_fallback - u_nom)),
            n_constraints=len(states),
            min_slack=float(np.max(worst)),
        )

    dist2 = np.sum((grid - u_nom) ** 2, axis=-1)
    dist2[~feasible_mask] = np.inf
    u_cur = grid[int(np.argmin(dist2))].copy()

    # walk each coordinate toward u_nom while the point stays feasible
    for _ in range(refine_iters):
        moved = False
        for i in range(2):
            if u_cur[i] == u_nom[i]:
                continue
            cand = u_cur.copy()
            cand[i] = 0.5 * (u_cur[i] + u_nom[i])
            if min_slack(cand) >= 0.0:
                u_cur = cand
                moved = True
        if not moved:
            break

    if abs(u_cur[0]) < excitation_floor:
        if v_sign_hint != 0.0:
            order = (v_sign_hint * excitation_floor, -v_sign_hint * excitation_floor)
        else:
            order = sorted(
                (excitation_floor, -excitation_floor),
                key=lambda v: abs(v - u_nom[0]),
            )
        for v_snap in order:
            cand = u_cur.copy()
            cand[0] = v_snap
            if lo[0] <= v_snap <= hi[0] and min_slack(cand) >= 0.0:
                u_cur = cand
                break

    final_slack = min_slack(u_cur)
    if final_slack < -recheck_tol:
        raise RuntimeError(
            f"filter invariant violated: refined input has slack {final_slack}"
        )
    return FilterResult(
        u_safe=u_cur,
        feasible=True,
        active=True,
        correction_norm=float(np.linalg.norm(u_cur - u_nom)),
        n_constraints=len(states),
        min_slack=final_slack,
    )


def verify_zocbf_margin(
    spec: CbfSpec,
    cfg: SamplingConfig,
    region: Box,
    input_box: Box,
    n_samples: int = 2000,
    n_sub: int = 32,
    rng: np.random.Generator | None = None,
) -> float:
    """Sampled bound on the intra-sample excursion h(phi(T)) - h(phi(t)).

    Returns the smallest margin eps (over the sampled states and inputs, with
    sub-sampled t in [0, T)) such that ending the interval with h >= eps
    guarantees h >= 0 throughout it. Call it with a region hugging the safety
    boundary; states that cannot end the step inside the safe set never
    activate the margin and only inflate the bound.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    xs = region.sample(rng, n_samples)
    us = input_box.sample(rng, n_samples)
    h_end = spec.h(exact_flow(xs, us, cfg.T))
    worst = 0.0
    for t in np.linspace(0.0, cfg.T, n_sub, endpoint=False):
        h_t = spec.h(exact_flow(xs, us, float(t)))
        worst = max(worst, float(np.max(np.clip(h_end - h_t, 0.0, None))))
    return worst
