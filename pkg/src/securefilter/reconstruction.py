"""Secure state reconstruction from sensor-subset windows.

Given a rolling input-output window, every (p - s)-sensor subset gets its own
state estimate through an observability map; each estimate is then replayed
through the transition map and compared against that subset's measurements
(the consistency check). Subsets whose data cannot be explained by any single
trajectory are discarded; the survivors form the plausible-state set that the
safety filter must protect against.

The machinery is generic over a small system interface (``step``, ``measure``,
``reconstruct`` and friends) so the same enumeration, consistency, and
propagation code drives both the unicycle and the linear self-test fixture.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .dynamics import SamplingConfig, rk4_step, state_distance, wrap_angle
from .sensing import (
    ANGULAR_SENSORS,
    N_SENSORS,
    SensorSubset,
    measure,
    project,
)

__all__ = [
    "ReconstructionError",
    "IOWindow",
    "SubsetEstimate",
    "PlausibleSet",
    "SingularityFloors",
    "enumerate_subsets",
    "estimate_signal_and_derivative",
    "WindowFit",
    "UnicycleSystem",
    "observability_map_unicycle",
    "consistency_check",
    "plausible_initial_set",
    "propagate_plausible_set",
    "check_2s_agreement",
]


class ReconstructionError(RuntimeError):
    """No sensor subset produced a usable, consistent state estimate."""


@dataclass(frozen=True)
class IOWindow:
    """Rolling record of the last l inputs and l+1 measurements.

    ``inputs[j]`` is the input held over [t_{k-l+j}, t_{k-l+j+1}); ``outputs[j]``
    is the measurement at t_{k-l+j}. ``t0_index`` is the discrete index k-l of
    the first sample.
    """

    inputs: np.ndarray
    outputs: np.ndarray
    t0_index: int = 0

    def __post_init__(self):
        inputs = np.asarray(self.inputs, dtype=float)
        outputs = np.asarray(self.outputs, dtype=float)
        if len(outputs) != len(inputs) + 1:
            raise ValueError(
                f"window needs l inputs and l+1 outputs, got {len(inputs)} / {len(outputs)}"
            )
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "outputs", outputs)

    @property
    def order(self) -> int:
        return len(self.inputs)


@dataclass
class SubsetEstimate:
    """Result of running one subset's observability map plus consistency check."""

    gamma: SensorSubset
    xhat_initial: np.ndarray | None
    delta: float
    consistent: bool
    residual: float
    singular: bool


@dataclass
class PlausibleSet:
    """Consistent subset estimates, either as points (exact) or ball centers.

    ``members`` holds (gamma, center) pairs for the consistent, non-singular
    subsets; ``radius`` is the shared ball radius (0 in exact mode). ``at_index``
    tracks which discrete instant the centers refer to. ``estimates`` keeps the
    full per-subset diagnostics, including rejected subsets.
    """

    mode: str
    members: list
    radius: float
    at_index: int = 0
    estimates: list = field(default_factory=list)

    def __post_init__(self):
        if self.mode not in ("exact", "relaxed"):
            raise ValueError(f"unknown mode {self.mode!r}")

    def centers(self) -> np.ndarray:
        return np.asarray([c for _, c in self.members], dtype=float)

    def __len__(self) -> int:
        return len(self.members)


def enumerate_subsets(p: int, r: int) -> list[SensorSubset]:
    """All (p-r)-element sensor subsets of {1..p}, lexicographically ordered."""
    if r < 0 or r >= p:
        raise ValueError(f"sparsity r must satisfy 0 <= r < p, got r={r}, p={p}")
    return [
        SensorSubset(c) for c in itertools.combinations(range(1, p + 1), p - r)
    ]


def estimate_signal_and_derivative(samples, at: float, degree: int = 3):
    """Least-squares polynomial fit of (time, value) samples, evaluated at ``at``.

    Returns (value, first derivative). Angular channels must be unwrapped by
    the caller before fitting and re-wrapped after.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 2 or samples.shape[1] != 2:
        raise ValueError("samples must be an (n, 2) array of (time, value)")
    if len(samples) < degree + 1:
        raise ValueError(
            f"need at least degree+1={degree + 1} samples, got {len(samples)}"
        )
    t, vals = samples[:, 0], samples[:, 1]
    # centered Vandermonde: coefficient j is the j-th derivative at `at` / j!
    V = np.vander(t - at, degree + 1, increasing=True)
    coef, *_ = np.linalg.lstsq(V, vals, rcond=None)
    return float(coef[0]), float(coef[1])


class WindowFit:
    """Shared polynomial fits of the measurement channels over one window.

    Values are read off the raw anchor sample (exact for honest, noise-free
    sensors). Derivatives come from a least-squares polynomial fitted over a
    short sub-window centered on the anchor: the signals are only piecewise
    smooth (the held input switches every sample), and a tight stencil keeps
    the fit bias far below what a full-window fit leaks when inputs move.
    Angular channels are unwrapped before fitting. The weight vectors are
    precomputed once, so every evaluation is a dot product.
    """

    def __init__(
        self,
        window: IOWindow,
        T: float,
        anchor: int,
        degree: int = 3,
        deriv_halfwidth: int = 2,
    ):
        n = len(window.outputs)
        if anchor < 0 or anchor >= n:
            raise ValueError("anchor index outside window")
        self.anchor = anchor
        self.t_anchor = float(anchor * T)
        half = min(deriv_halfwidth, anchor, n - 1 - anchor)
        self._lo, self._hi = anchor - half, anchor + half + 1
        t_sub = np.arange(self._lo, self._hi) * T
        deg = min(degree, len(t_sub) - 1)
        V = np.vander(t_sub - self.t_anchor, deg + 1, increasing=True)
        # pseudo-inverse row 1 holds the derivative weights at the anchor
        self._w_der = np.linalg.pinv(V)[1]
        ys = window.outputs.copy()
        for i in ANGULAR_SENSORS:
            ys[:, i - 1] = np.unwrap(ys[:, i - 1])
        self._ys = ys
        self._raw = window.outputs

    def value(self, sensor: int) -> float:
        """Raw sample of a channel at the anchor (exact for honest sensors)."""
        return float(self._raw[self.anchor, sensor - 1])

    def derivative(self, sensor: int) -> float:
        """Fitted first derivative of a channel at the anchor."""
        return float(self._w_der @ self._ys[self._lo : self._hi, sensor - 1])


@dataclass(frozen=True)
class SingularityFloors:
    """Thresholds below which a reconstruction rule must abstain.

    ``trig_min`` guards the mixed Cartesian/bearing rules against bearings
    aligned with a coordinate axis, where the tangent relation blows up.
    ``sign_gap_min`` and ``sign_tol`` govern the mixed Cartesian/range rule:
    its two sign roots are kept apart only when their window replays differ
    by at least ``sign_gap_min`` in residual; otherwise the rule abstains
    unless the roots are within ``sign_tol`` of each other anyway.
    ``path_min`` is the integrated window motion (meters) below which the
    mixed rules abstain outright: they fuse channels through the trajectory
    geometry, and a near-stationary window carries no geometry to fuse.
    """

    v_min: float = 0.05
    r_min: float = 0.1
    rate_min: float = 0.01
    trig_min: float = 0.05
    sign_gap_min: float = 1e-4
    sign_tol: float = 0.01
    path_min: float = 0.05


def _position_from_subset(fit: WindowFit, gamma: SensorSubset, floors, v_cmd, path_len):
    """Anchor-time position estimate, or None when the rule degenerates.

    Preference order: both Cartesian sensors, then range+bearing, then one
    Cartesian coordinate combined with range or bearing. The mixed rules also
    require enough integrated motion over the window.
    """
    has = set(gamma.indices)
    if {1, 2} <= has:
        return fit.value(1), fit.value(2)
    if {3, 4} <= has:
        r, phi = fit.value(3), fit.value(4)
        if r < floors.r_min:
            return None
        return r * np.cos(phi), r * np.sin(phi)
    if path_len < floors.path_min:
        return None
    if 4 in has and (1 in has or 2 in has):
        phi = fit.value(4)
        if 1 in has:
            # p2 = p1 tan(phi); degenerate when the bearing is near +-pi/2
            if abs(np.cos(phi)) < floors.trig_min:
                return None
            p1 = fit.value(1)
            return p1, p1 * np.tan(phi)
        if abs(np.sin(phi)) < floors.trig_min:
            return None
        p2 = fit.value(2)
        return p2 / np.tan(phi), p2
    if 3 in has and (1 in has or 2 in has):
        # circle equation pins the magnitude of the unknown coordinate; the
        # sign is resolved later by replaying both roots against the window
        r = fit.value(3)
        if r < floors.r_min:
            return None
        known_idx = 1 if 1 in has else 2
        known = fit.value(known_idx)
        mag = np.sqrt(max(r * r - known * known, 0.0))
        if known_idx == 1:
            return [(known, mag), (known, -mag)]
        return [(mag, known), (-mag, known)]
    return None


def _heading_from_subset(fit: WindowFit, gamma: SensorSubset, floors, v_cmd):
    """Anchor-time heading estimate, or None when every applicable rule degenerates."""
    has = set(gamma.indices)
    if 5 in has:
        return fit.value(5)
    if abs(v_cmd) < floors.v_min:
        return None
    sv = np.sign(v_cmd)
    if {1, 2} <= has:
        p1dot, p2dot = fit.derivative(1), fit.derivative(2)
        if np.hypot(p1dot, p2dot) >= floors.rate_min:
            return float(np.arctan2(p2dot * sv, p1dot * sv))
    if {3, 4} <= has:
        # rdot = v cos(theta - phi), r phidot = v sin(theta - phi)
        r, phi = fit.value(3), fit.value(4)
        if r >= floors.r_min:
            rdot, phidot = fit.derivative(3), fit.derivative(4)
            tang = r * phidot
            if np.hypot(rdot, tang) >= floors.rate_min:
                return wrap_angle(phi + np.arctan2(tang * sv, rdot * sv))
    return None


def observability_map_unicycle(
    window: IOWindow,
    gamma: SensorSubset,
    cfg: SamplingConfig,
    floors: SingularityFloors | None = None,
    degree: int = 3,
    deriv_halfwidth: int = 2,
    fit: WindowFit | None = None,
):
    """Recover the state at the window start from one sensor subset.

    Values and fitted derivatives are taken at the center sample of the
    window, where the polynomial fit is most accurate; the state assembled
    there is then rolled back to the window start with reverse transition
    steps under the known inputs. Returns (xhat or None, singular flag).
    """
    if len(gamma) < 3:
        raise ValueError(f"unsupported subset {gamma.indices}: need at least 3 sensors")
    if window.order != cfg.l:
        raise ValueError("window order does not match the sampling config")
    floors = floors or SingularityFloors()
    if fit is None:
        fit = WindowFit(
            window, cfg.T, anchor=cfg.l // 2, degree=degree,
            deriv_halfwidth=deriv_halfwidth,
        )
    anchor = fit.anchor
    v_cmd = float(window.inputs[anchor, 0])
    path_len = float(np.sum(np.abs(window.inputs[:, 0]))) * cfg.T

    pos = _position_from_subset(fit, gamma, floors, v_cmd, path_len)
    if pos is None:
        return None, True
    heading = _heading_from_subset(fit, gamma, floors, v_cmd)
    if heading is None:
        return None, True

    candidates = pos if isinstance(pos, list) else [pos]
    states = []
    for p1, p2 in candidates:
        x = np.array([p1, p2, wrap_angle(heading)])
        # roll back from the anchor sample to the window start
        for j in range(anchor - 1, -1, -1):
            x = rk4_step(x, window.inputs[j], -cfg.T)
        states.append(x)
    if len(states) == 1:
        return states[0], False

    # two sign roots: keep the one that explains the window, abstain when the
    # replays cannot tell materially different roots apart (the trajectory is
    # moving radially, the genuine singularity of this subset)
    system = UnicycleSystem(cfg, floors)
    res = _window_residuals(window, np.asarray(states), [gamma, gamma], system)
    if abs(res[0] - res[1]) < floors.sign_gap_min:
        if state_distance(states[0], states[1]) > floors.sign_tol:
            return None, True
        return states[0], False
    return states[int(np.argmin(res))], False


@dataclass(frozen=True)
class UnicycleSystem:
    """Binds the unicycle transition, measurement, and observability maps.

    Satisfies the generic system interface consumed by ``consistency_check``
    and ``plausible_initial_set``.
    """

    cfg: SamplingConfig
    floors: SingularityFloors = field(default_factory=SingularityFloors)
    fit_degree: int = 3
    fit_halfwidth: int = 2

    n_sensors: int = N_SENSORS
    angular_outputs: tuple = ANGULAR_SENSORS

    def step(self, x, u):
        return rk4_step(x, u, self.cfg.T)

    def measure(self, x):
        return measure(x)

    def state_distance(self, a, b) -> float:
        return state_distance(a, b)

    def window_fit(self, window: IOWindow) -> WindowFit:
        return WindowFit(
            window,
            self.cfg.T,
            anchor=self.cfg.l // 2,
            degree=self.fit_degree,
            deriv_halfwidth=self.fit_halfwidth,
        )

    def reconstruct(self, window: IOWindow, gamma: SensorSubset, fit=None):
        return observability_map_unicycle(
            window,
            gamma,
            self.cfg,
            self.floors,
            self.fit_degree,
            self.fit_halfwidth,
            fit=fit,
        )


def _output_difference(system, ya, yb) -> np.ndarray:
    d = (np.asarray(ya, dtype=float) - np.asarray(yb, dtype=float)).copy()
    for i in getattr(system, "angular_outputs", ()):
        d[..., i - 1] = wrap_angle(d[..., i - 1])
    return d


def _window_residuals(window: IOWindow, xhats, gammas, system, r_floor: float = 1e-6):
    """Worst measurement residual per candidate state over the whole window.

    All candidates are rolled forward together (one batched transition per
    window step). Bearing residuals are zeroed at steps where the observed or
    predicted range is degenerate, matching the honest map's flagged-bearing
    convention.
    """
    zs = np.asarray(xhats, dtype=float)
    preds = [system.measure(zs)]
    for u in window.inputs:
        zs = system.step(zs, u)
        preds.append(system.measure(zs))
    preds = np.asarray(preds)  # (l+1, n, p)
    diff = np.abs(_output_difference(system, window.outputs[:, None, :], preds))
    if getattr(system, "n_sensors", 0) == N_SENSORS:
        degenerate = (
            np.minimum(window.outputs[:, None, 2], preds[..., 2]) < r_floor
        )
        diff[..., 3] = np.where(degenerate, 0.0, diff[..., 3])
    return [
        float(np.max(diff[:, :, gamma.zero_based][:, i, :]))
        for i, gamma in enumerate(gammas)
    ]


def consistency_check(
    window: IOWindow,
    gamma: SensorSubset,
    xhat,
    system,
    tau: float,
):
    """Replay the window from xhat and compare against gamma's measurements.

    Propagates z_{j+1} = F(z_j, u_j) across the window, takes the worst
    absolute residual over all steps and all sensors in gamma (angular entries
    wrapped), and compares it to the threshold tau.

    Returns (consistent, residual).
    """
    residual = _window_residuals(
        window, np.asarray(xhat, dtype=float)[None, :], [gamma], system
    )[0]
    return residual <= tau, residual


def plausible_initial_set(
    window: IOWindow,
    s: int,
    system,
    tau: float,
    mode: str = "relaxed",
    delta: float = 0.0,
) -> PlausibleSet:
    """Evaluate every (p-s)-sensor subset and keep the consistent survivors.

    Raises ``ReconstructionError`` when every subset is singular or
    inconsistent; the caller decides how to degrade (the closed loop marks
    the step non-certified).
    """
    estimates = []
    candidates = []
    fit = system.window_fit(window) if hasattr(system, "window_fit") else None
    for gamma in enumerate_subsets(system.n_sensors, s):
        if fit is not None:
            xhat, singular = system.reconstruct(window, gamma, fit=fit)
        else:
            xhat, singular = system.reconstruct(window, gamma)
        if singular or xhat is None:
            estimates.append(
                SubsetEstimate(gamma, None, delta, False, float("inf"), True)
            )
            continue
        est = SubsetEstimate(gamma, xhat, delta, False, float("inf"), False)
        estimates.append(est)
        candidates.append(est)

    members = []
    if candidates:
        residuals = _window_residuals(
            window,
            [e.xhat_initial for e in candidates],
            [e.gamma for e in candidates],
            system,
        )
        for est, residual in zip(candidates, residuals):
            est.residual = residual
            est.consistent = residual <= tau
            if est.consistent:
                members.append((est.gamma, est.xhat_initial))
    if not members:
        raise ReconstructionError(
            "no sensor subset is consistent; state reconstruction failed"
        )
    return PlausibleSet(
        mode=mode,
        members=members,
        radius=0.0 if mode == "exact" else delta,
        at_index=window.t0_index,
        estimates=estimates,
    )


def propagate_plausible_set(
    pset: PlausibleSet, inputs, system, L: float, wbar: float
) -> PlausibleSet:
    """Advance every center through F along the input record and grow the radius.

    The ball radius follows the l-fold composition of g(s) = L s + wbar, which
    is how far a delta-ball can spread in l disturbed steps under an
    L-Lipschitz transition map.
    """
    inputs = np.asarray(inputs, dtype=float)
    members = []
    for gamma, c in pset.members:
        z = np.asarray(c, dtype=float)
        for u in inputs:
            z = system.step(z, u)
        members.append((gamma, z))
    radius = pset.radius
    if pset.mode == "relaxed":
        for _ in range(len(inputs)):
            radius = L * radius + wbar
    return PlausibleSet(
        mode=pset.mode,
        members=members,
        radius=radius,
        at_index=pset.at_index + len(inputs),
        estimates=pset.estimates,
    )


def check_2s_agreement(pset: PlausibleSet, delta: float, exact_tol: float = 1e-9):
    """True when all consistent centers agree pairwise.

    Exact mode requires coincidence within ``exact_tol``; relaxed mode allows
    pairwise distances up to 4*delta (two delta-balls seen from an honest
    core must intersect). A true result is the runtime signature of the
    doubly-redundant observability regime.
    """
    centers = pset.centers()
    bound = exact_tol if pset.mode == "exact" else 4.0 * delta
    for i in range(len(centers)):
        for j in range(i + 1, len(centers)):
            if _center_distance(pset, centers[i], centers[j]) > bound:
                return False
    return True


def _center_distance(pset: PlausibleSet, a, b) -> float:
    if len(a) == 3:
        return state_distance(a, b)
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)))
