"""Plain-text persistence of trajectories and verification reports.

Directory layout written by :func:`write_outputs`::

    config.ini            configuration that produced the run (if given)
    mesh.txt              mesh in the text format of :mod:`thermodamage.mesh`
    timeseries.txt        one row per state: step, t, tau, E, min/max theta, min/max chi, iterations
    snapshots/step_XXXXX.txt
                          nodal fields; header lines ``# key=value`` hold t, tau and diagnostics
    report.txt, report.kv verification report (table and key=value forms)

Floats are printed with 17 significant digits so that reading a file back
reproduces the stored values exactly.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .mesh import write_mesh
from .stepper import State, Trajectory, local_means

TIMESERIES_COLUMNS = (
    "step", "t", "tau", "energy", "min_theta", "max_theta", "min_chi", "max_chi",
    "outer_iterations", "chi_iterations", "heat_iterations",
)
FMT = "%.17g"


class OutputError(OSError):
    """Failure writing or reading an output directory; the message names the path."""


def snapshot_columns(dim: int) -> list:
    comps = "xyz"[:dim]
    return (
        ["node"] + [c for c in comps] + ["theta"]
        + [f"u_{c}" for c in comps] + [f"v_{c}" for c in comps] + ["chi", "xi", "zeta"]
    )


def _write(path: Path, text: str):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}") from exc


def _read(path: Path) -> str:
    try:
        return path.read_text(encoding="utf-8")
    except OSError as exc:
        raise OutputError(f"cannot read {path}: {exc}") from exc


def timeseries_text(traj: Trajectory | None) -> str:
    lines = ["# " + " ".join(TIMESERIES_COLUMNS)]
    if traj is None:
        return "\n".join(lines) + "\n"
    from .verification import total_energy

    for k, s in enumerate(traj.states):
        dg = s.diagnostics
        row = [str(k)] + [FMT % v for v in (
            s.t, s.tau, total_energy(s, traj.disc),
            np.min(s.theta), np.max(s.theta), np.min(s.chi), np.max(s.chi),
        )] + [str(int(dg.get(key, 0))) for key in ("outer_iterations", "chi_iterations", "heat_iterations")]
        lines.append(" ".join(row))
    return "\n".join(lines) + "\n"


def snapshot_text(state: State, mesh) -> str:
    lines = [f"# t={float(state.t)!r}", f"# tau={float(state.tau)!r}"]
    for key in sorted(state.diagnostics):
        val = state.diagnostics[key]
        if isinstance(val, (int, float, np.integer, np.floating)):
            lines.append(f"# diag.{key}={float(val)!r}")
    lines.append("# " + " ".join(snapshot_columns(mesh.dim)))
    data = np.column_stack([
        np.arange(mesh.n_nodes), mesh.nodes, state.theta, state.u, state.v, state.chi, state.xi, state.zeta,
    ])
    for row in data:
        lines.append(str(int(row[0])) + " " + " ".join(FMT % v for v in row[1:]))
    return "\n".join(lines) + "\n"


def read_snapshot(path, dim: int) -> State:
    """Parse a snapshot file back into a :class:`State`."""
    meta, diag, rows = {}, {}, []
    for line in _read(Path(path)).splitlines():
        if line.startswith("#"):
            body = line[1:].strip()
            if "=" in body:
                key, val = body.split("=", 1)
                if key.startswith("diag."):
                    diag[key[5:]] = float(val)
                else:
                    meta[key] = float(val)
        elif line.strip():
            rows.append([float(v) for v in line.split()])
    arr = np.array(rows, float).reshape(-1, 1 + dim + 1 + 2 * dim + 3)
    c = 1 + dim
    theta = arr[:, c]
    u = arr[:, c + 1:c + 1 + dim]
    v = arr[:, c + 1 + dim:c + 1 + 2 * dim]
    chi, xi, zeta = arr[:, -3], arr[:, -2], arr[:, -1]
    return State(meta["t"], theta.copy(), u.copy(), v.copy(), chi.copy(), xi.copy(), zeta.copy(), meta["tau"], diag)


def read_timeseries(path) -> np.ndarray:
    """Time-series table as an array of shape (n_states, len(TIMESERIES_COLUMNS))."""
    text = _read(Path(path))
    rows = [[float(v) for v in line.split()] for line in text.splitlines() if line.strip() and not line.startswith("#")]
    return np.array(rows, float).reshape(-1, len(TIMESERIES_COLUMNS))


def write_outputs(traj: Trajectory | None, report, directory, config_text: str | None = None, snapshot_every: int = 1) -> Path:
    """Write time series, snapshots, mesh, report and configuration under ``directory``."""
    out = Path(directory)
    if config_text is not None:
        _write(out / "config.ini", config_text)
    _write(out / "timeseries.txt", timeseries_text(traj))
    snap_dir = out / "snapshots"
    try:
        snap_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OutputError(f"cannot create {snap_dir}: {exc}") from exc
    if traj is not None:
        try:
            write_mesh(traj.mesh, out / "mesh.txt")
        except OSError as exc:
            raise OutputError(f"cannot write {out / 'mesh.txt'}: {exc}") from exc
        last = len(traj.states) - 1
        for k, s in enumerate(traj.states):
            if k % max(snapshot_every, 1) == 0 or k == last:
                _write(snap_dir / f"step_{k:05d}.txt", snapshot_text(s, traj.mesh))
    if report is not None:
        _write(out / "report.txt", report.to_table())
        _write(out / "report.kv", report.to_kv())
    return out


def read_report_kv(path) -> dict:
    out = {}
    for line in _read(Path(path)).splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            out[k] = v
    return out


def load_trajectory(directory) -> Trajectory:
    """Rebuild a trajectory from ``config.ini`` and every snapshot of a run directory.

    The per-step data are recomputed as local means of the configured sources
    over the stored time levels.
    """
    from .config import build_problem, parse_config

    out = Path(directory)
    cfg = parse_config(_read(out / "config.ini"))
    disc, _, sources = build_problem(cfg)
    files = sorted((out / "snapshots").glob("step_*.txt"))
    if not files:
        raise OutputError(f"no snapshots in {out / 'snapshots'}")
    indices = [int(f.stem.split("_")[1]) for f in files]
    if indices != list(range(len(files))):
        raise OutputError(f"{out / 'snapshots'}: every step must be stored to verify a trajectory")
    states = [read_snapshot(f, disc.mesh.dim) for f in files]
    times = [s.t for s in states]
    data = local_means(sources.f, sources.g, sources.h, times) if len(times) > 1 else []
    return Trajectory(disc, states, data, cfg.material.theta_star, sources)


def output_dir(default) -> str:
    """Output directory, overridden by the ``THERMODAMAGE_OUTPUT_DIR`` environment variable."""
    return os.environ.get("THERMODAMAGE_OUTPUT_DIR") or str(default)
