"""Figure rendering from the simulator's documented CSV/JSON contracts.

This package never imports the simulator: it consumes ``sweep.csv``,
``threshold.json``, and ``epochs.csv`` exactly as the CLI documents them, so
figures can be produced from any archived run directory.

Three figure kinds:

* ``heatmap``      one sweep statistic over two sweep axes, remaining axis
                   fixed by a slice filter; detected collapse thresholds are
                   drawn as markers when a threshold.json is supplied.
* ``threshold_curve``  the statistic against one axis at a fixed slice, with
                   a vertical marker at the detected threshold.
* ``trajectory``   per-agent discount and confidence paths from epochs.csv,
                   with the deviant fraction underneath.

Rendering is deterministic: identical inputs produce identical axes ranges
and annotation values (returned in :class:`RenderInfo` for checking).
"""

from __future__ import annotations

import json
import math
import os
import re
from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

__all__ = ["PlotError", "PlotSpec", "RenderInfo", "load_spec", "render"]

SWEEP_AXES = ("eps", "kappa", "gamma")
KINDS = ("heatmap", "threshold_curve", "trajectory")

plt.rcParams.update(
    {
        "figure.figsize": (7.0, 5.0),
        "figure.dpi": 110,
        "savefig.dpi": 110,
        "axes.grid": True,
        "grid.alpha": 0.3,
        "font.size": 10,
        "svg.hashsalt": "mutagame-viz",  # deterministic SVG element ids
    }
)


class PlotError(ValueError):
    """Unusable plot specification or input data."""


@dataclass(frozen=True)
class PlotSpec:
    input_csv: str
    kind: str  # heatmap | threshold_curve | trajectory
    output: str
    x_axis: str = "eps"
    y_axis: str = "kappa"  # heatmap only
    value: str = "incidence"
    slices: dict = field(default_factory=dict)  # fixed values for unplotted axes
    threshold_json: str | None = None
    title: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise PlotError(f"kind must be one of {KINDS}, got {self.kind!r}")


@dataclass(frozen=True)
class RenderInfo:
    """What was drawn, for round-trip checks: axis ranges and annotations."""

    output: str
    kind: str
    x_range: tuple
    y_range: tuple
    annotations: dict


def load_spec(path: str) -> PlotSpec:
    import yaml

    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise PlotError(f"cannot read spec {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise PlotError("plot spec must be a mapping")
    known = {f for f in PlotSpec.__dataclass_fields__}
    unknown = set(raw) - known
    if unknown:
        raise PlotError(f"unknown spec fields: {sorted(unknown)}")
    try:
        return PlotSpec(**raw)
    except TypeError as exc:
        raise PlotError(str(exc)) from exc


def _read_csv(path: str) -> pd.DataFrame:
    try:
        return pd.read_csv(path)
    except OSError as exc:
        raise PlotError(f"cannot read {path}: {exc}") from exc
    except pd.errors.ParserError as exc:
        raise PlotError(f"unparsable CSV {path}: {exc}") from exc


def _require_columns(frame: pd.DataFrame, columns) -> None:
    for column in columns:
        if column not in frame.columns:
            raise PlotError(f"missing column: {column}")


def _apply_slices(frame: pd.DataFrame, spec: PlotSpec, plotted) -> pd.DataFrame:
    out = frame
    for axis in SWEEP_AXES:
        if axis in plotted:
            continue
        values = np.sort(out[axis].unique())
        if axis in spec.slices:
            wanted = float(spec.slices[axis])
            matches = values[np.isclose(values, wanted, rtol=1e-9, atol=1e-12)]
            if len(matches) == 0:
                raise PlotError(f"slice {axis}={wanted} matches no rows")
            out = out[np.isclose(out[axis], matches[0], rtol=1e-9, atol=1e-12)]
        elif len(values) > 1:
            raise PlotError(
                f"ambiguous slice: {axis} has {len(values)} values; fix one in slices"
            )
    return out


def _threshold_for(spec: PlotSpec, kappa=None, gamma=None):
    """Detected threshold for a (kappa, gamma) slice, if a sidecar exists."""
    path = spec.threshold_json
    if path is None:
        guess = os.path.join(os.path.dirname(spec.input_csv), "threshold.json")
        path = guess if os.path.exists(guess) else None
    if path is None:
        return None
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise PlotError(f"cannot read threshold file {path}: {exc}") from exc
    for entry in payload.get("slices", []):
        if kappa is not None and not math.isclose(entry["kappa"], kappa, rel_tol=1e-9):
            continue
        if gamma is not None and not math.isclose(entry["gamma"], gamma, rel_tol=1e-9):
            continue
        return entry.get("eps_star")
    return None


def _render_heatmap(spec: PlotSpec) -> RenderInfo:
    frame = _read_csv(spec.input_csv)
    _require_columns(frame, [spec.x_axis, spec.y_axis, spec.value])
    if spec.x_axis not in SWEEP_AXES or spec.y_axis not in SWEEP_AXES:
        raise PlotError(f"heatmap axes must be sweep axes {SWEEP_AXES}")
    if spec.x_axis == spec.y_axis:
        raise PlotError("heatmap needs two distinct axes")
    frame = _apply_slices(frame, spec, plotted={spec.x_axis, spec.y_axis})
    grid = frame.pivot_table(index=spec.y_axis, columns=spec.x_axis, values=spec.value)
    grid = grid.sort_index().sort_index(axis=1)

    fig, ax = plt.subplots()
    xs = grid.columns.to_numpy(dtype=float)
    ys = grid.index.to_numpy(dtype=float)
    mesh = ax.pcolormesh(
        _edges(xs), _edges(ys), grid.to_numpy(), cmap="inferno", vmin=0.0, vmax=None
    )
    fig.colorbar(mesh, ax=ax, label=spec.value)
    ax.set_xlabel(spec.x_axis)
    ax.set_ylabel(spec.y_axis)
    ax.grid(False)

    annotations = {}
    if spec.x_axis == "eps":
        # Mark the detected collapse threshold on each horizontal slice.
        marks = []
        for y in ys:
            eps_star = _threshold_for(
                spec,
                kappa=y if spec.y_axis == "kappa" else _only_slice(frame, "kappa"),
                gamma=y if spec.y_axis == "gamma" else _only_slice(frame, "gamma"),
            )
            if eps_star is not None:
                ax.plot([eps_star], [y], marker="o", color="cyan", markersize=5)
                marks.append((float(y), float(eps_star)))
        if marks:
            annotations["eps_star"] = marks
    ax.set_title(spec.title or f"{spec.value} over {spec.x_axis} x {spec.y_axis}")
    info = RenderInfo(
        output=spec.output,
        kind="heatmap",
        x_range=(float(xs.min()), float(xs.max())),
        y_range=(float(ys.min()), float(ys.max())),
        annotations=annotations,
    )
    _save(fig, spec.output)
    return info


def _only_slice(frame: pd.DataFrame, axis: str):
    values = frame[axis].unique()
    return float(values[0]) if len(values) == 1 else None


def _render_threshold_curve(spec: PlotSpec) -> RenderInfo:
    frame = _read_csv(spec.input_csv)
    _require_columns(frame, [spec.x_axis, spec.value])
    frame = _apply_slices(frame, spec, plotted={spec.x_axis})
    frame = frame.sort_values(spec.x_axis)
    xs = frame[spec.x_axis].to_numpy(dtype=float)
    values = frame[spec.value].to_numpy(dtype=float)

    fig, ax = plt.subplots()
    ax.plot(xs, values, marker="o", color="tab:red")
    ax.set_xlabel(spec.x_axis)
    ax.set_ylabel(spec.value)

    annotations = {}
    eps_star = _threshold_for(
        spec, kappa=_only_slice(frame, "kappa"), gamma=_only_slice(frame, "gamma")
    )
    if eps_star is not None:
        ax.axvline(eps_star, color="black", linestyle="--", linewidth=1)
        ax.annotate(
            f"threshold = {eps_star:g}",
            xy=(eps_star, 0.5),
            xytext=(5, 0),
            textcoords="offset points",
            rotation=90,
            va="center",
        )
        annotations["eps_star"] = float(eps_star)
    ax.set_title(spec.title or f"{spec.value} vs {spec.x_axis}")
    info = RenderInfo(
        output=spec.output,
        kind="threshold_curve",
        x_range=(float(xs.min()), float(xs.max())),
        y_range=(float(values.min()), float(values.max())),
        annotations=annotations,
    )
    _save(fig, spec.output)
    return info


_AGENT_COLUMN = re.compile(r"agent(\d+)_(action|payoff|discount|confidence)")


def _render_trajectory(spec: PlotSpec) -> RenderInfo:
    frame = _read_csv(spec.input_csv)
    _require_columns(frame, ["epoch", "deviant_fraction"])
    agent_ids = sorted(
        {int(m.group(1)) for c in frame.columns for m in [_AGENT_COLUMN.fullmatch(c)] if m}
    )
    if not agent_ids:
        raise PlotError("missing column: agent0_discount")

    epochs = frame["epoch"].to_numpy()
    fig, (ax_delta, ax_psi, ax_dev) = plt.subplots(
        3, 1, sharex=True, figsize=(7.0, 7.5), height_ratios=[2, 2, 1]
    )
    for i in agent_ids:
        ax_delta.plot(epochs, frame[f"agent{i}_discount"], linewidth=0.9)
        ax_psi.plot(epochs, frame[f"agent{i}_confidence"], linewidth=0.9)
    ax_delta.set_ylabel("discount factor")
    ax_psi.set_ylabel("confidence")
    ax_dev.plot(epochs, frame["deviant_fraction"], color="tab:red")
    ax_dev.set_ylabel("deviant fraction")
    ax_dev.set_xlabel("epoch")
    ax_dev.set_ylim(-0.05, 1.05)
    fig.suptitle(spec.title or "per-agent discount and confidence")

    deltas = frame[[f"agent{i}_discount" for i in agent_ids]].to_numpy()
    info = RenderInfo(
        output=spec.output,
        kind="trajectory",
        x_range=(float(epochs.min()), float(epochs.max())),
        y_range=(float(deltas.min()), float(deltas.max())),
        annotations={"agents": len(agent_ids)},
    )
    _save(fig, spec.output)
    return info


def _edges(centers: np.ndarray) -> np.ndarray:
    """Cell edges for pcolormesh from sorted cell centers."""
    if len(centers) == 1:
        half = 0.5 if centers[0] == 0 else abs(centers[0]) * 0.5 + 1e-9
        return np.array([centers[0] - half, centers[0] + half])
    mids = (centers[1:] + centers[:-1]) / 2
    first = centers[0] - (mids[0] - centers[0])
    last = centers[-1] + (centers[-1] - mids[-1])
    return np.concatenate([[first], mids, [last]])


def _save(fig, output: str) -> None:
    ext = os.path.splitext(output)[1].lower()
    if ext not in (".png", ".svg"):
        raise PlotError(f"output must end in .png or .svg, got {output!r}")
    os.makedirs(os.path.dirname(os.path.abspath(output)), exist_ok=True)
    fig.savefig(output, metadata=_stable_metadata(ext))
    plt.close(fig)
    if not os.path.getsize(output):
        raise PlotError(f"wrote an empty figure to {output}")


def _stable_metadata(ext: str) -> dict:
    # Strip timestamps so identical inputs give identical bytes.
    if ext == ".svg":
        return {"Date": None}
    return {"Software": None}


def render(spec: PlotSpec) -> RenderInfo:
    """Render one figure; returns the drawn ranges and annotations."""
    if spec.kind == "heatmap":
        return _render_heatmap(spec)
    if spec.kind == "threshold_curve":
        return _render_threshold_curve(spec)
    return _render_trajectory(spec)
