"""YAML scenario configuration with an embedded calibration block.

The file has two top-level sections: ``scenario`` (plant, attack, controller,
filter and threshold knobs) and ``calibration`` (the frozen constants written
by the ``calibrate`` command). Command-line flags override individual fields
after loading.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

import yaml

from .reconstruction import SingularityFloors
from .scenario import Calibration, ScenarioSpec

__all__ = ["ConfigError", "load_config", "save_config", "spec_to_dict"]

_SCENARIO_FIELDS = {
    f.name for f in dataclasses.fields(ScenarioSpec) if f.name not in ("calibration",)
}
_TUPLE_FIELDS = {
    "x0",
    "fake_x0",
    "attacked",
    "path_params",
    "v_bounds",
    "mu_bounds",
    "grid",
}


class ConfigError(ValueError):
    """Configuration file failed validation."""


def load_config(path) -> ScenarioSpec:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(raw, dict) or "scenario" not in raw:
        raise ConfigError(f"{path}: missing top-level 'scenario' section")
    sc = raw["scenario"]
    if not isinstance(sc, dict):
        raise ConfigError(f"{path}: 'scenario' must be a mapping")
    kwargs = {}
    for key, value in sc.items():
        if key == "floors":
            try:
                kwargs["floors"] = SingularityFloors(**value)
            except TypeError as exc:
                raise ConfigError(f"{path}: scenario.floors: {exc}") from exc
            continue
        if key not in _SCENARIO_FIELDS:
            raise ConfigError(f"{path}: unknown scenario field '{key}'")
        kwargs[key] = tuple(value) if key in _TUPLE_FIELDS else value
    cal = None
    if raw.get("calibration") is not None:
        try:
            cal = Calibration(**raw["calibration"])
        except TypeError as exc:
            raise ConfigError(f"{path}: calibration: {exc}") from exc
    try:
        return ScenarioSpec(calibration=cal, **kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: scenario: {exc}") from exc


def spec_to_dict(spec: ScenarioSpec) -> dict:
    sc = {}
    for f in dataclasses.fields(ScenarioSpec):
        if f.name == "calibration":
            continue
        value = getattr(spec, f.name)
        if f.name == "floors":
            sc["floors"] = dataclasses.asdict(value)
        elif isinstance(value, tuple):
            sc[f.name] = [float(v) if isinstance(v, float) else v for v in value]
        else:
            sc[f.name] = value
    out = {"scenario": sc}
    if spec.calibration is not None:
        out["calibration"] = dataclasses.asdict(spec.calibration)
    return out


def save_config(spec: ScenarioSpec, path) -> None:
    Path(path).write_text(
        yaml.safe_dump(spec_to_dict(spec), sort_keys=False, default_flow_style=None)
    )
