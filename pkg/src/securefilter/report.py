"""Run artifacts: per-step CSV, summary, figure-data files, rendered figures.

All delimited output uses a fixed shortest-roundtrip float format so that two
runs with the same configuration and seed are byte-identical. Figures mirror
the three case-study plots (trajectories, barrier-value history, input
history) and are rendered next to their data files.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import yaml

from .scenario import RunSummary, ScenarioSpec, StepRecord, reference_path

__all__ = [
    "STEP_SCHEMA",
    "write_step_csv",
    "write_summary",
    "write_figure_data",
    "render_figures",
    "write_run_outputs",
]

STEP_SCHEMA = "securefilter-steps-v1"
STEP_COLUMNS = (
    "k,t,p1,p2,theta,fake_p1,fake_p2,fake_theta,"
    "y1,y2,y3,y4,y5,v_nom,mu_nom,v_safe,mu_safe,h,"
    "n_consistent,feasible,delta_prime"
)


def _fmt(x) -> str:
    return format(float(x), ".17g")


def write_step_csv(records: list[StepRecord], path) -> None:
    lines = [f"# schema={STEP_SCHEMA}", STEP_COLUMNS]
    for r in records:
        vals = [
            str(r.k),
            _fmt(r.t),
            _fmt(r.x_true[0]),
            _fmt(r.x_true[1]),
            _fmt(r.x_true[2]),
            _fmt(r.x_fake[0]),
            _fmt(r.x_fake[1]),
            _fmt(r.x_fake[2]),
            *[_fmt(v) for v in r.y],
            _fmt(r.u_nom[0]),
            _fmt(r.u_nom[1]),
            _fmt(r.u_safe[0]),
            _fmt(r.u_safe[1]),
            _fmt(r.h_true),
            str(r.n_consistent),
            str(int(r.feasible)),
            _fmt(r.delta_prime),
        ]
        lines.append(",".join(vals))
    Path(path).write_text("\n".join(lines) + "\n")


def write_summary(summary: RunSummary, path, exit_status: str) -> None:
    payload = {
        "status": exit_status,
        "n_steps": summary.n_steps,
        "h_min": float(summary.h_min),
        "safety_violated": bool(summary.safety_violated),
        "n_infeasible_steps": int(summary.n_infeasible_steps),
        "n_reconstruction_failures": int(summary.n_reconstruction_failures),
        "n_uncertified_steps": int(summary.n_uncertified_steps),
        "max_containment_error": float(summary.max_containment_error),
        "wall_clock_s": float(summary.wall_clock_s),
    }
    Path(path).write_text(yaml.safe_dump(payload, sort_keys=False))


def _write_table(path, header: str, rows) -> None:
    lines = [header]
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    Path(path).write_text("\n".join(lines) + "\n")


def write_figure_data(records: list[StepRecord], spec: ScenarioSpec, out_dir) -> dict:
    """Emit the three figure-data files; returns their paths."""
    out_dir = Path(out_dir)
    ts = np.array([r.t for r in records])
    refs = reference_path(ts, spec.path_params)
    paths = {}

    paths["trajectory"] = out_dir / "fig_trajectory.csv"
    _write_table(
        paths["trajectory"],
        "t,true_p1,true_p2,fake_p1,fake_p2,ref_p1,ref_p2",
        (
            (
                r.t,
                r.x_true[0],
                r.x_true[1],
                r.x_fake[0],
                r.x_fake[1],
                refs[i, 0],
                refs[i, 1],
            )
            for i, r in enumerate(records)
        ),
    )
    paths["cbf"] = out_dir / "fig_cbf.csv"
    _write_table(paths["cbf"], "t,h", ((r.t, r.h_true) for r in records))
    paths["inputs"] = out_dir / "fig_inputs.csv"
    _write_table(
        paths["inputs"],
        "t,v_nom,mu_nom,v_safe,mu_safe",
        (
            (r.t, r.u_nom[0], r.u_nom[1], r.u_safe[0], r.u_safe[1])
            for r in records
        ),
    )
    return paths


def render_figures(records: list[StepRecord], spec: ScenarioSpec, out_dir) -> dict:
    """Render the three case-study figures as PNG files."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    ts = np.array([r.t for r in records])
    true = np.array([r.x_true[:2] for r in records])
    fake = np.array([r.x_fake[:2] for r in records])
    refs = reference_path(ts, spec.path_params)
    hw = spec.band_half_width
    paths = {}

    fig, ax = plt.subplots(figsize=(8, 4))
    ax.plot(true[:, 0], true[:, 1], label="true trajectory", color="tab:blue")
    if np.all(np.isfinite(fake)):
        ax.plot(
            fake[:, 0], fake[:, 1], label="fake trajectory", color="tab:orange"
        )
    ax.plot(refs[:, 0], refs[:, 1], "--", label="reference path", color="gray")
    for y in (-hw, hw):
        ax.axhline(y, color="red", linewidth=1.0)
    ax.set_xlabel("p1 [m]")
    ax.set_ylabel("p2 [m]")
    ax.legend(loc="best", fontsize=8)
    ax.set_title("trajectories" + (" (filter on)" if spec.filter_enabled else " (filter off)"))
    fig.tight_layout()
    paths["trajectory"] = out_dir / "trajectory.png"
    fig.savefig(paths["trajectory"], dpi=130)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(8, 3))
    ax.plot(ts, [r.h_true for r in records], color="tab:blue")
    ax.axhline(0.0, color="red", linewidth=1.0)
    ax.set_xlabel("t [s]")
    ax.set_ylabel("h(x)")
    ax.set_title("barrier value history")
    fig.tight_layout()
    paths["cbf"] = out_dir / "cbf_history.png"
    fig.savefig(paths["cbf"], dpi=130)
    plt.close(fig)

    fig, axes = plt.subplots(2, 1, figsize=(8, 5), sharex=True)
    axes[0].plot(ts, [r.u_nom[0] for r in records], label="nominal", color="gray")
    axes[0].plot(ts, [r.u_safe[0] for r in records], label="safe", color="tab:blue")
    axes[0].set_ylabel("v [m/s]")
    axes[0].legend(loc="best", fontsize=8)
    axes[1].plot(ts, [r.u_nom[1] for r in records], label="nominal", color="gray")
    axes[1].plot(ts, [r.u_safe[1] for r in records], label="safe", color="tab:blue")
    axes[1].set_ylabel("mu [rad/s]")
    axes[1].set_xlabel("t [s]")
    fig.suptitle("nominal vs safe input")
    fig.tight_layout()
    paths["inputs"] = out_dir / "inputs.png"
    fig.savefig(paths["inputs"], dpi=130)
    plt.close(fig)
    return paths


def write_run_outputs(
    records: list[StepRecord],
    summary: RunSummary,
    spec: ScenarioSpec,
    out_dir,
    exit_status: str,
    plots: bool = True,
) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_step_csv(records, out_dir / "steps.csv")
    write_summary(summary, out_dir / "summary.yaml", exit_status)
    write_figure_data(records, spec, out_dir)
    if plots:
        render_figures(records, spec, out_dir)
