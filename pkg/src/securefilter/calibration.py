"""Empirical calibration of the frozen scenario constants.

Measures, over seeded random samples of the operating region:

* ``wbar``   one-step gap between the RK4 transition map and the exact flow,
* ``L``      one-step Lipschitz constant of the transition map,
* ``L1``     Lipschitz constant of the band safety function (analytic),
* ``delta``  worst observability-map error on attack-free windows,
* ``tau``    consistency threshold (worst honest residual, tripled),
* ``eps``    intra-sample excursion margin near the safety boundary,
* ``eps1``   robustness margin covering the inflated ball radius.

The window generator mixes constant, slowly varying, and step-jittered input
profiles so the thresholds cover both cruising and filter-correction motion.
Guarantees are conditional on the closed loop staying inside the sampled
envelope (in particular away from the origin, where the bearing geometry
degenerates); this matches the compactness caveat of the underlying theory.
"""

from __future__ import annotations

import numpy as np

from .dynamics import (
    Box,
    SamplingConfig,
    estimate_lipschitz,
    estimate_transition_error,
    exact_flow,
    state_distance,
)
from .reconstruction import (
    IOWindow,
    UnicycleSystem,
    consistency_check,
    enumerate_subsets,
)
from .safety import CbfSpec, h_band, verify_zocbf_margin
from .scenario import Calibration, ScenarioSpec
from .sensing import measure

__all__ = ["random_attack_free_window", "iterate_radius_growth", "calibrate"]

WINDOW_TEXTURES = ("constant", "smooth", "jitter")


def random_attack_free_window(
    rng: np.random.Generator,
    cfg: SamplingConfig,
    texture: str = "mixed",
    p_range: tuple = (-10.5, 10.5),
    v_bounds: tuple = (-5.0, 5.0),
    mu_bounds: tuple = (-2.0, 2.0),
    r_min: float = 0.5,
):
    """Honest measurement window along a random feasible trajectory.

    Returns (window, true_states) where true_states[j] is the plant state at
    sample j. Trajectories passing too close to the origin are rejected and
    resampled, since the bearing channel is not meaningful there.
    """
    if texture == "mixed":
        texture = WINDOW_TEXTURES[int(rng.integers(len(WINDOW_TEXTURES)))]
    for _ in range(200):
        x0 = np.array(
            [
                rng.uniform(*p_range),
                rng.uniform(*p_range),
                rng.uniform(-np.pi, np.pi),
            ]
        )
        if np.hypot(x0[0], x0[1]) < r_min + 0.3:
            continue
        inputs = _input_profile(rng, cfg.l, texture, v_bounds, mu_bounds)
        xs = [x0]
        for u in inputs:
            xs.append(exact_flow(xs[-1], u, cfg.T))
        xs = np.asarray(xs)
        if np.min(np.hypot(xs[:, 0], xs[:, 1])) < r_min:
            continue
        window = IOWindow(inputs=inputs, outputs=measure(xs))
        return window, xs
    raise RuntimeError("could not sample a window away from the origin")


def _input_profile(rng, l, texture, v_bounds, mu_bounds):
    v_hi = v_bounds[1]
    if texture == "constant":
        v = rng.choice([-1.0, 1.0]) * rng.uniform(0.2, v_hi)
        mu = rng.uniform(*mu_bounds)
        return np.tile([v, mu], (l, 1))
    if texture == "smooth":
        v0 = rng.choice([-1.0, 1.0]) * rng.uniform(0.5, v_hi)
        mu0 = rng.uniform(0.6 * mu_bounds[0], 0.6 * mu_bounds[1])
        t = np.arange(l) * 1.0
        v = v0 * (1.0 + 0.2 * np.sin(2 * np.pi * t / l + rng.uniform(0, 2 * np.pi)))
        mu = mu0 + 0.4 * np.sin(2 * np.pi * t / l + rng.uniform(0, 2 * np.pi))
        return np.clip(
            np.stack([v, mu], axis=-1),
            [v_bounds[0], mu_bounds[0]],
            [v_bounds[1], mu_bounds[1]],
        )
    if texture == "jitter":
        # sparse step changes emulating filter corrections on a cruise input
        v0 = rng.choice([-1.0, 1.0]) * rng.uniform(0.8, v_hi)
        mu0 = rng.uniform(0.7 * mu_bounds[0], 0.7 * mu_bounds[1])
        us = np.tile([v0, mu0], (l, 1))
        for _ in range(3):
            at = int(rng.integers(1, l))
            us[at:, 0] += rng.uniform(-0.2, 0.2)
            us[at:, 1] += rng.uniform(-0.3, 0.3)
        return np.clip(
            us, [v_bounds[0], mu_bounds[0]], [v_bounds[1], mu_bounds[1]]
        )
    raise ValueError(f"unknown texture {texture!r}")


def iterate_radius_growth(delta: float, L: float, wbar: float, l: int) -> float:
    """l-fold composition of g(s) = L s + wbar applied to delta."""
    s = delta
    for _ in range(l):
        s = L * s + wbar
    return s


def measure_reconstruction_envelope(
    spec: ScenarioSpec,
    n_windows: int,
    rng: np.random.Generator,
):
    """Worst observability-map error and honest residual over random windows.

    The residual is computed exactly as the consistency check computes it, so
    tripling it gives a threshold honest subsets cannot trip under the same
    motion envelope.
    """
    cfg = SamplingConfig(T=spec.T, l=spec.l, wbar=0.0)
    system = UnicycleSystem(cfg, spec.floors)
    subsets = enumerate_subsets(5, spec.s)
    worst_err = 0.0
    worst_res = 0.0
    for _ in range(n_windows):
        window, xs = random_attack_free_window(
            rng, cfg, v_bounds=spec.v_bounds, mu_bounds=spec.mu_bounds
        )
        fit = system.window_fit(window)
        for gamma in subsets:
            xhat, singular = system.reconstruct(window, gamma, fit=fit)
            if singular:
                continue
            worst_err = max(worst_err, state_distance(xhat, xs[0]))
            _, residual = consistency_check(window, gamma, xhat, system, np.inf)
            worst_res = max(worst_res, residual)
    return worst_err, worst_res


def calibrate(
    spec: ScenarioSpec,
    n_error_samples: int = 4000,
    n_windows: int = 250,
    n_margin_samples: int = 4000,
    safety_factor: float = 2.0,
    tau_factor: float = 3.0,
    delta_factor: float = 2.0,
    eps_factor: float = 1.1,
) -> Calibration:
    """Produce the frozen calibration block for a scenario.

    Deterministic given ``spec.seed``; rerunning with the same seed reproduces
    the block bit for bit.
    """
    if not (0.0 < spec.lam <= 1.0):
        raise ValueError("lam must lie in (0, 1]; gamma would not be class-K")
    rng = np.random.default_rng(spec.seed)
    lo, hi = -12.0, 12.0
    region = Box((lo, lo, -np.pi), (hi, hi, np.pi))
    input_box = spec.input_box

    wbar = estimate_transition_error(
        region, input_box, spec.T, n_error_samples, rng, safety_factor
    )
    L = estimate_lipschitz(
        region, input_box, spec.T, n_error_samples, rng, safety_factor
    )
    # band safety function: |dh/dp2| = 2 |p2|, maximal at the region edge
    L1 = 2.0 * max(abs(lo), abs(hi))

    worst_err, worst_res = measure_reconstruction_envelope(spec, n_windows, rng)
    delta = delta_factor * worst_err
    tau = tau_factor * worst_res
    delta_prime = iterate_radius_growth(delta, L, wbar, spec.l)

    # intra-sample excursion only matters where a step can end inside the
    # safe set, i.e. within one step's reach of the band
    hw = spec.band_half_width
    collar = hw + input_box.hi[0] * spec.T
    eps_region = Box((lo, -collar, -np.pi), (hi, collar, np.pi))
    probe = CbfSpec(h=lambda x: h_band(x, hw), lam=spec.lam, eps=0.0, eps1=0.0, L1=L1)
    cfg = SamplingConfig(T=spec.T, l=spec.l, wbar=0.0)
    eps = eps_factor * verify_zocbf_margin(
        probe, cfg, eps_region, input_box, n_margin_samples, rng=rng
    )

    eps1 = L1 * (L * delta_prime + wbar)
    return Calibration(
        wbar=wbar,
        L=L,
        L1=L1,
        delta=delta,
        delta_prime=delta_prime,
        tau=tau,
        eps=eps,
        eps1=eps1,
    )
