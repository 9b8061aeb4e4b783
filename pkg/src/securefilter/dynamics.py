"""Unicycle kinematics: vector field, exact constant-input flow, RK4 transition map.

State layout is a plain ndarray ``[p1, p2, theta]`` (x-position m, y-position m,
heading rad); inputs are ``[v, mu]`` (linear and angular velocity). All functions
broadcast over leading axes, so a ``(n, 3)`` batch of states with a ``(n, 2)``
batch of inputs works transparently.

The heading is normalized to (-pi, pi] after every state-producing operation.
``exact_flow`` is the ground-truth plant evolution (closed form); ``rk4_step``
is the one-step transition map used by the estimator and filter, which only
approximates the flow. The sampling helpers at the bottom measure how good
that approximation is (``estimate_transition_error``) and how fast it spreads
nearby states (``estimate_lipschitz``); both feed the calibration pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Box",
    "SamplingConfig",
    "wrap_angle",
    "state_difference",
    "state_distance",
    "vector_field",
    "exact_flow",
    "rk4_step",
    "estimate_transition_error",
    "estimate_lipschitz",
]


def wrap_angle(theta):
    """Normalize an angle (or array of angles) to (-pi, pi]."""
    w = np.mod(np.asarray(theta, dtype=float) + np.pi, 2.0 * np.pi) - np.pi
    w = np.where(w <= -np.pi, w + 2.0 * np.pi, w)
    return float(w) if w.ndim == 0 else w


def state_difference(a, b):
    """Componentwise a - b with the heading difference wrapped to (-pi, pi]."""
    d = (np.asarray(a, dtype=float) - np.asarray(b, dtype=float)).copy()
    d[..., 2] = wrap_angle(d[..., 2])
    return d


def state_distance(a, b) -> float:
    """Euclidean distance between two states with wrapped heading difference."""
    return float(np.linalg.norm(state_difference(a, b)))


def vector_field(x, u):
    """Continuous-time derivative (p1_dot, p2_dot, theta_dot) = (v cos, v sin, mu)."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    v, mu = u[..., 0], u[..., 1]
    theta = x[..., 2]
    return np.stack(
        [v * np.cos(theta), v * np.sin(theta), mu * np.ones_like(theta)], axis=-1
    )


def exact_flow(x, u, T: float):
    """End state of the constant-input unicycle trajectory after time T.

    Uses the arc-midpoint form p' = p + v T sinc(mu T / 2) * e(theta + mu T / 2),
    which is the closed-form circular arc for mu != 0 and degrades smoothly to
    straight-line motion as mu -> 0 (no branch, no cancellation).
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    v, mu = u[..., 0], u[..., 1]
    theta = x[..., 2]
    half = 0.5 * mu * T
    s = np.sinc(half / np.pi)  # sin(half)/half, 1 at half=0
    out = np.stack(
        [
            x[..., 0] + v * T * np.cos(theta + half) * s,
            x[..., 1] + v * T * np.sin(theta + half) * s,
            wrap_angle(theta + mu * T) * np.ones_like(theta),
        ],
        axis=-1,
    )
    return out


def rk4_step(x, u, T: float):
    """One classical fourth-order Runge-Kutta step of the unicycle vector field.

    This is the approximate one-step transition map F(x, u); the mismatch to
    ``exact_flow`` is the process-disturbance term the relaxed estimator and
    filter budget for.
    """
    x = np.asarray(x, dtype=float)
    k1 = vector_field(x, u)
    k2 = vector_field(x + 0.5 * T * k1, u)
    k3 = vector_field(x + 0.5 * T * k2, u)
    k4 = vector_field(x + T * k3, u)
    out = x + (T / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    out = np.asarray(out, dtype=float).copy()
    out[..., 2] = wrap_angle(out[..., 2])
    return out


@dataclass(frozen=True)
class Box:
    """Axis-aligned sampling box with inclusive bounds."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1 or lo.size == 0:
            raise ValueError("box bounds must be 1-d and of equal length")
        if np.any(hi < lo):
            raise ValueError("box has hi < lo")

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def widths(self) -> np.ndarray:
        return np.asarray(self.hi, dtype=float) - np.asarray(self.lo, dtype=float)

    def is_degenerate(self) -> bool:
        return bool(np.all(self.widths == 0.0))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        return rng.uniform(lo, hi, size=(n, self.dim))


# Default compact operating region: covers the case-study trajectory with margin.
DEFAULT_STATE_BOX = Box((-12.0, -12.0, -np.pi), (12.0, 12.0, np.pi))
DEFAULT_INPUT_BOX = Box((-5.0, -2.0), (5.0, 2.0))


@dataclass(frozen=True)
class SamplingConfig:
    """Sampled-data parameters: period T, window order l, disturbance bound wbar.

    ``wbar`` upper-bounds the one-step gap between ``rk4_step`` and
    ``exact_flow`` over the operating region; it is produced by
    ``estimate_transition_error`` and frozen by calibration.
    """

    T: float = 0.01
    l: int = 25
    wbar: float = 0.0

    def __post_init__(self):
        if self.T <= 0:
            raise ValueError("sampling period T must be positive")
        if self.l < 1:
            raise ValueError("window order l must be at least 1")
        if self.wbar < 0:
            raise ValueError("wbar must be nonnegative")

    @property
    def window_len(self) -> int:
        """Number of measurement samples in one window (l + 1)."""
        return self.l + 1


def estimate_transition_error(
    region: Box,
    inputs: Box,
    T: float,
    n_samples: int,
    rng: np.random.Generator | None = None,
    safety_factor: float = 2.0,
) -> float:
    """Sampled bound on the one-step integrator error max ||rk4 - exact_flow||.

    Returns the sampled maximum times ``safety_factor``; the result is the
    wbar a scenario freezes into its config.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if rng is None:
        rng = np.random.default_rng(0)
    xs = region.sample(rng, n_samples)
    us = inputs.sample(rng, n_samples)
    approx = rk4_step(xs, us, T)
    exact = exact_flow(xs, us, T)
    errs = np.linalg.norm(state_difference(approx, exact), axis=-1)
    return float(np.max(errs)) * safety_factor


def estimate_lipschitz(
    region: Box,
    inputs: Box,
    T: float,
    n_samples: int,
    rng: np.random.Generator | None = None,
    safety_factor: float = 2.0,
) -> float:
    """Sampled Lipschitz constant of x -> rk4_step(x, u, T), uniform over u.

    Samples base points and perturbed partners at several scales and takes the
    worst ratio ||F(x,u) - F(x',u)|| / ||x - x'||. The safety factor inflates
    the expansion gap above the identity, L = 1 + factor * (ratio - 1), rather
    than the raw ratio: one-step maps sit near the identity, and scaling the
    whole ratio would compound to a uselessly loose bound over a window.
    """
    if n_samples < 2:
        raise ValueError("n_samples must be >= 2")
    if safety_factor < 1.0:
        raise ValueError("safety_factor must be >= 1")
    if region.is_degenerate():
        raise ValueError("region is degenerate (zero volume in every axis)")
    if rng is None:
        rng = np.random.default_rng(0)
    xs = region.sample(rng, n_samples)
    us = inputs.sample(rng, n_samples)
    best = 0.0
    for scale in (1.0, 1e-2, 1e-4):
        offsets = rng.normal(size=xs.shape)
        offsets /= np.linalg.norm(offsets, axis=1, keepdims=True)
        xs2 = xs + scale * offsets
        num = np.linalg.norm(
            state_difference(rk4_step(xs, us, T), rk4_step(xs2, us, T)), axis=-1
        )
        den = np.linalg.norm(state_difference(xs, xs2), axis=-1)
        ratios = num / den
        best = max(best, float(np.max(ratios)))
    return 1.0 + safety_factor * (best - 1.0) if best > 1.0 else best
