"""Closed-loop case study: spoofed remote tracking versus onboard safe filtering.

The plant is the exact unicycle flow. A remote controller sees only the
position sensors 1 and 2, which the attacker rewires to a simulated fake
trajectory, and steers toward a sinusoidal reference path. The onboard filter
sees all five sensors, rebuilds the plausible current states from the rolling
window, and minimally corrects the remote command so the discrete barrier
condition holds for every plausible state. Runs are fully deterministic.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .dynamics import (
    Box,
    SamplingConfig,
    exact_flow,
    state_distance,
    wrap_angle,
)
from .reconstruction import (
    IOWindow,
    ReconstructionError,
    SingularityFloors,
    UnicycleSystem,
    plausible_initial_set,
    propagate_plausible_set,
)
from .safety import CbfSpec, h_band, secure_filter
from .sensing import AttackPlan, Attacker, corrupt, measure

__all__ = [
    "Calibration",
    "ScenarioSpec",
    "StepRecord",
    "RunSummary",
    "reference_path",
    "nominal_controller",
    "run_closed_loop",
    "summarize",
]


# Case-study defaults: start poses, attacked set, path coefficients
DEFAULT_X0 = (-10.0, 0.0, -0.1)
DEFAULT_FAKE_X0 = (-10.0, 0.0, 0.1)
DEFAULT_PATH = (1.0, -10.0, 1.8, np.pi / 5.0, 0.0, 1.0)


@dataclass(frozen=True)
class Calibration:
    """Frozen constants produced by the calibration pass.

    ``wbar`` bounds the one-step integrator error, ``L`` the one-step state
    Lipschitz constant, ``L1`` the Lipschitz constant of the safety function,
    ``delta`` the observability-map error ball, ``delta_prime`` its l-step
    forward inflation, ``tau`` the consistency threshold, and ``eps``/``eps1``
    the barrier margins.
    """

    wbar: float
    L: float
    L1: float
    delta: float
    delta_prime: float
    tau: float
    eps: float
    eps1: float


@dataclass
class ScenarioSpec:
    """Everything needed to reproduce one closed-loop run."""

    x0: tuple = DEFAULT_X0
    fake_x0: tuple = DEFAULT_FAKE_X0
    attacked: tuple = (1, 2)
    attack_mode: str = "fake-trajectory"
    path_params: tuple = DEFAULT_PATH
    T: float = 0.01
    l: int = 25
    horizon: float = 22.0
    s: int = 2
    mode: str = "relaxed"
    filter_enabled: bool = True
    seed: int = 0
    band_half_width: float = 3.0
    lam: float = 0.1
    k_v: float = 1.0
    k_mu: float = 2.0
    lookahead: float = 0.5
    v_bounds: tuple = (-5.0, 5.0)
    mu_bounds: tuple = (-2.0, 2.0)
    grid: tuple = (51, 21)
    floors: SingularityFloors = field(default_factory=SingularityFloors)
    calibration: Calibration | None = None

    def __post_init__(self):
        if self.horizon <= (self.l + 1) * self.T:
            raise ValueError("horizon must exceed the (l+1)-step warm-up")
        if self.mode not in ("exact", "relaxed"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.s < 0 or self.s >= 5:
            raise ValueError("attack budget s must satisfy 0 <= s < 5")

    @property
    def input_box(self) -> Box:
        return Box(
            (self.v_bounds[0], self.mu_bounds[0]),
            (self.v_bounds[1], self.mu_bounds[1]),
        )

    def sampling(self) -> SamplingConfig:
        wbar = self.calibration.wbar if self.calibration else 0.0
        return SamplingConfig(T=self.T, l=self.l, wbar=wbar)

    def cbf(self) -> CbfSpec:
        cal = self.calibration
        if cal is None:
            raise ValueError("scenario has no calibration block; run calibrate first")
        hw = self.band_half_width
        return CbfSpec(
            h=lambda x: h_band(x, hw),
            lam=self.lam,
            eps=cal.eps,
            eps1=cal.eps1 if self.mode == "relaxed" else 0.0,
            L1=cal.L1,
        )


@dataclass
class StepRecord:
    """Everything logged at one sampling instant."""

    k: int
    t: float
    x_true: np.ndarray
    x_fake: np.ndarray
    y: np.ndarray
    e: np.ndarray
    u_nom: np.ndarray
    u_safe: np.ndarray
    h_true: float
    filter_engaged: bool
    n_consistent: int
    feasible: bool
    active: bool
    reconstruction_failed: bool
    delta_prime: float
    correction_norm: float
    centers: np.ndarray
    subset_flags: dict
    certified: bool


@dataclass
class RunSummary:
    """Run-level statistics derived from the step records."""

    n_steps: int
    h_min: float
    safety_violated: bool
    n_infeasible_steps: int
    n_reconstruction_failures: int
    n_uncertified_steps: int
    max_containment_error: float
    wall_clock_s: float


def reference_path(t, params):
    """Reference point (a0 t + a1, a2 sin(a3 t + a4) + a5) at time t."""
    a0, a1, a2, a3, a4, a5 = params
    t = np.asarray(t, dtype=float)
    return np.stack([a0 * t + a1, a2 * np.sin(a3 * t + a4) + a5], axis=-1)


def nominal_controller(pose, t: float, spec: ScenarioSpec) -> np.ndarray:
    """Pure-pursuit tracking of the reference path.

    ``pose`` is the controller's believed (p1, p2, theta). Speed is
    proportional to the distance to a lookahead point on the path; turn rate
    is proportional to the wrapped heading error toward it. Both are clipped
    to the input box.
    """
    p1, p2, theta = pose
    target = reference_path(t + spec.lookahead, spec.path_params)
    d1, d2 = target[0] - p1, target[1] - p2
    dist = float(np.hypot(d1, d2))
    heading_err = wrap_angle(np.arctan2(d2, d1) - theta)
    v = np.clip(spec.k_v * dist / spec.lookahead, *spec.v_bounds)
    mu = np.clip(spec.k_mu * heading_err, *spec.mu_bounds)
    return np.array([v, mu])


class _SpoofedHeadingTracker:
    """Heading belief of the remote controller.

    The remote side only receives the two position channels, so it
    finite-differences them; with the fake-trajectory attack this reproduces
    the fake heading (the spoofed positions are a real trajectory).
    """

    def __init__(self):
        self._prev = None
        self._theta = 0.0

    def update(self, p1: float, p2: float) -> float:
        if self._prev is not None:
            d1, d2 = p1 - self._prev[0], p2 - self._prev[1]
            if np.hypot(d1, d2) >= 1e-6:
                self._theta = float(np.arctan2(d2, d1))
        self._prev = (p1, p2)
        return self._theta


def run_closed_loop(spec: ScenarioSpec) -> list[StepRecord]:
    """Simulate the scenario and return one record per sampling instant.

    Reconstruction failures and filter infeasibility are recorded on the
    step (certified=False) and never abort the run.
    """
    cal = spec.calibration
    if cal is None:
        raise ValueError("scenario has no calibration block; run calibrate first")
    cfg = spec.sampling()
    system = UnicycleSystem(cfg, spec.floors)
    cbf = spec.cbf()
    plan = AttackPlan(
        attacked=spec.attacked if spec.attack_mode != "none" else (),
        mode=spec.attack_mode,
        fake_initial=spec.fake_x0 if spec.attack_mode == "fake-trajectory" else None,
    )
    attacker = Attacker(plan)
    heading_tracker = _SpoofedHeadingTracker()

    n_steps = int(round(spec.horizon / spec.T))
    x_true = np.asarray(spec.x0, dtype=float)
    prev_u = None
    v_sign = 0.0
    y_buf: deque = deque(maxlen=spec.l + 1)
    u_buf: deque = deque(maxlen=spec.l)
    records: list[StepRecord] = []

    for k in range(n_steps):
        t = k * spec.T
        e = attacker.step(x_true, prev_u, spec.T)
        y = corrupt(measure(x_true), e)
        y_buf.append(y)

        theta_belief = heading_tracker.update(y[0], y[1])
        u_nom = nominal_controller((y[0], y[1], theta_belief), t, spec)

        engaged = k > spec.l  # warm-up: open-loop nominal for the first l+1 steps
        n_consistent = 0
        feasible = True
        active = False
        failed = False
        correction = 0.0
        centers = np.empty((0, 3))
        flags: dict = {}
        dprime = 0.0
        u = u_nom

        if engaged:
            window = IOWindow(
                inputs=np.asarray(u_buf), outputs=np.asarray(y_buf), t0_index=k - spec.l
            )
            try:
                pset = plausible_initial_set(
                    window, spec.s, system, cal.tau, spec.mode, cal.delta
                )
                pset = propagate_plausible_set(
                    pset, window.inputs, system, cal.L, cal.wbar
                )
                n_consistent = len(pset)
                centers = pset.centers()
                dprime = pset.radius
                flags = {
                    est.gamma.label(): (est.consistent, est.singular, est.residual)
                    for est in pset.estimates
                }
                if spec.filter_enabled:
                    res = secure_filter(
                        u_nom,
                        pset,
                        cbf,
                        cfg,
                        spec.input_box,
                        spec.grid,
                        v_sign_hint=v_sign,
                    )
                    u = res.u_safe
                    feasible = res.feasible
                    active = res.active
                    correction = res.correction_norm
            except ReconstructionError:
                failed = True
                feasible = False

        certified = (not engaged) or (not failed and feasible)
        fake = (
            attacker.fake_state.copy()
            if attacker.fake_state is not None
            else np.full(3, np.nan)
        )
        records.append(
            StepRecord(
                k=k,
                t=t,
                x_true=x_true.copy(),
                x_fake=fake,
                y=y,
                e=e,
                u_nom=u_nom,
                u_safe=np.asarray(u, dtype=float),
                h_true=float(h_band(x_true, spec.band_half_width)),
                filter_engaged=engaged,
                n_consistent=n_consistent,
                feasible=feasible,
                active=active,
                reconstruction_failed=failed,
                delta_prime=dprime,
                correction_norm=correction,
                centers=centers,
                subset_flags=flags,
                certified=certified,
            )
        )

        x_true = exact_flow(x_true, u, spec.T)
        u_buf.append(np.asarray(u, dtype=float))
        prev_u = u
        if abs(u[0]) >= 0.05:
            v_sign = float(np.sign(u[0]))

    return records


def summarize(records: list[StepRecord], spec: ScenarioSpec, wall_clock_s: float = 0.0) -> RunSummary:
    """Aggregate a run into the headline safety and diagnostics numbers.

    The containment error of a step is the distance from the true state to
    its nearest consistent center minus the inflated ball radius; any
    positive value falsifies the plausible-set guarantee.
    """
    h_min = min(r.h_true for r in records)
    containment = -np.inf
    dprime_ref = (
        spec.calibration.delta_prime if spec.calibration is not None else 0.0
    )
    for r in records:
        if not r.filter_engaged or len(r.centers) == 0:
            continue
        dmin = min(state_distance(r.x_true, c) for c in r.centers)
        radius = r.delta_prime if spec.mode == "relaxed" else dprime_ref
        containment = max(containment, dmin - radius)
    return RunSummary(
        n_steps=len(records),
        h_min=float(h_min),
        safety_violated=bool(h_min < 0.0),
        n_infeasible_steps=sum(
            1 for r in records if r.filter_engaged and not r.feasible
        ),
        n_reconstruction_failures=sum(1 for r in records if r.reconstruction_failed),
        n_uncertified_steps=sum(
            1 for r in records if r.filter_engaged and not r.certified
        ),
        max_containment_error=float(containment),
        wall_clock_s=wall_clock_s,
    )
