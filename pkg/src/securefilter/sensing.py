"""Five-channel measurement model, sensor-subset projection, and spoofing attacks.

Sensor numbering is 1-based throughout the public API:

  1: p1 (m)    2: p2 (m)    3: range to origin (m)
  4: bearing from origin (rad)    5: heading (rad)

Channels 4 and 5 are angular; sums and differences on them are always wrapped
back to (-pi, pi]. The range channel is nonnegative under the honest map, but
an attacker may inject anything.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import exact_flow, wrap_angle

__all__ = [
    "N_SENSORS",
    "ANGULAR_SENSORS",
    "SensorSubset",
    "AttackPlan",
    "Attacker",
    "measure",
    "bearing_degenerate",
    "project",
    "corrupt",
    "measurement_difference",
]

N_SENSORS = 5
ANGULAR_SENSORS = (4, 5)


def measure(x) -> np.ndarray:
    """Honest measurement y = (p1, p2, range, bearing, heading).

    At the origin the bearing is undefined; it is reported as 0.0 and the
    degeneracy is detectable through ``bearing_degenerate`` (range ~ 0), which
    consumers use to drop the bearing channel for that step.
    """
    x = np.asarray(x, dtype=float)
    p1, p2, theta = x[..., 0], x[..., 1], x[..., 2]
    r = np.hypot(p1, p2)
    # atan2(0, 0) already returns 0.0, the flagged placeholder value
    phi = np.arctan2(p2, p1)
    return np.stack([p1, p2, r, phi, wrap_angle(theta) * np.ones_like(r)], axis=-1)


def bearing_degenerate(y, r_floor: float = 1e-9) -> bool:
    """True when the range entry is too small for the bearing to mean anything."""
    return bool(np.asarray(y, dtype=float)[..., 2] < r_floor)


@dataclass(frozen=True)
class SensorSubset:
    """An ordered set of 1-based sensor indices."""

    indices: tuple

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if len(idx) == 0:
            raise ValueError("sensor subset must be nonempty")
        if any(i < 1 or i > N_SENSORS for i in idx):
            raise ValueError(f"sensor indices must lie in 1..{N_SENSORS}: {idx}")
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError(f"sensor indices must be strictly increasing: {idx}")
        object.__setattr__(self, "indices", idx)

    def __contains__(self, i: int) -> bool:
        return i in self.indices

    def __len__(self) -> int:
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)

    def issubset(self, other: "SensorSubset") -> bool:
        return set(self.indices) <= set(other.indices)

    @property
    def zero_based(self) -> np.ndarray:
        return np.asarray(self.indices, dtype=int) - 1

    def label(self) -> str:
        return "".join(str(i) for i in self.indices)


def project(y, gamma: SensorSubset) -> np.ndarray:
    """Keep the entries of y indexed by gamma, in index order."""
    return np.asarray(y, dtype=float)[..., gamma.zero_based]


def corrupt(y, e) -> np.ndarray:
    """Entrywise y + e with the angular channels re-wrapped to (-pi, pi]."""
    out = np.asarray(y, dtype=float) + np.asarray(e, dtype=float)
    out = out.copy()
    for i in ANGULAR_SENSORS:
        out[..., i - 1] = wrap_angle(out[..., i - 1])
    return out


def measurement_difference(ya, yb) -> np.ndarray:
    """ya - yb with wrapped differences on the angular channels."""
    d = (np.asarray(ya, dtype=float) - np.asarray(yb, dtype=float)).copy()
    for i in ANGULAR_SENSORS:
        d[..., i - 1] = wrap_angle(d[..., i - 1])
    return d


@dataclass(frozen=True)
class AttackPlan:
    """Which sensors the adversary owns and how it drives them.

    The attacked set is fixed for the whole run. Modes:

    * ``"none"``: zero attack signal.
    * ``"fake-trajectory"``: the omniscient attacker simulates a plant-exact
      fake trajectory from ``fake_initial`` under the actually applied inputs
      and replaces each owned channel with the fake reading.
    * ``"fixed-offset"``: adds the constant ``offset`` vector on owned channels.
    """

    attacked: tuple = ()
    mode: str = "none"
    fake_initial: tuple | None = None
    offset: tuple = (0.0,) * N_SENSORS

    def __post_init__(self):
        idx = tuple(sorted(int(i) for i in self.attacked))
        if any(i < 1 or i > N_SENSORS for i in idx):
            raise ValueError("attacked sensor indices must lie in 1..5")
        if len(set(idx)) != len(idx):
            raise ValueError("attacked sensor indices must be unique")
        object.__setattr__(self, "attacked", idx)
        if self.mode not in ("none", "fake-trajectory", "fixed-offset"):
            raise ValueError(f"unknown attack mode: {self.mode!r}")
        if self.mode == "fake-trajectory" and self.fake_initial is None:
            raise ValueError("fake-trajectory mode requires fake_initial")
        if len(self.offset) != N_SENSORS:
            raise ValueError("offset must have one entry per sensor")

    @property
    def n_attacked(self) -> int:
        return len(self.attacked)


class Attacker:
    """Stateful adversary producing the additive signal e at each instant.

    In fake-trajectory mode the internal fake state advances with the exact
    plant flow under whatever input was actually applied (the adversary is
    omniscient), so the spoofed channels are perfectly consistent with a
    physically realizable trajectory.
    """

    def __init__(self, plan: AttackPlan):
        self.plan = plan
        self.fake_state = (
            np.asarray(plan.fake_initial, dtype=float)
            if plan.fake_initial is not None
            else None
        )

    def step(self, true_x, applied_input, T: float) -> np.ndarray:
        """Attack signal for the current instant.

        ``applied_input`` is the input held over the sampling interval that
        just ended (None at the very first instant, when nothing has been
        applied yet). The fake state is advanced by it before the signal is
        formed, so the signal always reflects the fake trajectory at "now".
        """
        plan = self.plan
        e = np.zeros(N_SENSORS)
        if plan.mode == "none" or plan.n_attacked == 0:
            return e
        if plan.mode == "fixed-offset":
            for i in plan.attacked:
                e[i - 1] = plan.offset[i - 1]
            return e
        if applied_input is not None:
            self.fake_state = exact_flow(self.fake_state, applied_input, T)
        diff = measurement_difference(measure(self.fake_state), measure(true_x))
        for i in plan.attacked:
            e[i - 1] = diff[i - 1]
        return e
