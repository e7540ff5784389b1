"""Refinement studies: time-step halving, the vanishing p-Laplacian weight, regularisation limits,
and manufactured-solution rates for the decoupled heat equation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .material import MaterialParams, PotentialW
from .mesh import build_mesh
from .stepper import Discretization, SchemeOptions, StepData, Trajectory, local_means, solve_heat_subsystem
from .verification import apriori_monitors, verify_trajectory


class StudyError(RuntimeError):
    """A study level failed verification."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class Interpolants:
    """Time interpolants of a trajectory.

    ``upper`` is piecewise constant taking the value of step k on
    (t_{k-1}, t_k], ``lower`` takes the value of step k-1 on [t_{k-1}, t_k),
    and ``linear`` interpolates linearly between the two.
    """

    def __init__(self, traj: Trajectory):
        self.traj = traj
        self.t = traj.times
        self._cache = {}

    def values(self, name: str) -> np.ndarray:
        if name not in self._cache:
            self._cache[name] = traj_field(self.traj, name)
        return self._cache[name]

    def _index(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        k = np.searchsorted(self.t, t, side="left")
        return np.clip(k, 0, len(self.t) - 1)

    def upper(self, name: str, t):
        return self.values(name)[self._index(t)]

    def lower(self, name: str, t):
        k = np.searchsorted(self.t, np.atleast_1d(np.asarray(t, float)), side="right") - 1
        return self.values(name)[np.clip(k, 0, len(self.t) - 1)]

    def linear(self, name: str, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        k = np.clip(np.searchsorted(self.t, t, side="left"), 1, len(self.t) - 1)
        t0, t1 = self.t[k - 1], self.t[k]
        w = ((t - t0) / (t1 - t0)).reshape((-1,) + (1,) * (self.values(name).ndim - 1))
        U = self.values(name)
        return (1.0 - w) * U[k - 1] + w * U[k]

    def rate(self, name: str, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        k = np.clip(np.searchsorted(self.t, t, side="left"), 1, len(self.t) - 1)
        U = self.values(name)
        dt = (self.t[k] - self.t[k - 1]).reshape((-1,) + (1,) * (U.ndim - 1))
        return (U[k] - U[k - 1]) / dt

    def stability_estimate(self, name: str):
        """(sup_t ||linear - upper||_{L2}, sqrt(tau_max) ||d/dt linear||_{L2(0,T;L2)})."""
        U = self.values(name)
        m = self.traj.mesh.lumped_mass
        dU = np.diff(U, axis=0).reshape(len(U) - 1, len(m), -1)
        jumps = np.sqrt(np.einsum("i,kic->k", m, dU**2))
        taus = np.diff(self.t)
        lhs = float(jumps.max(initial=0.0))
        rhs = float(np.sqrt(taus.max(initial=0.0)) * np.sqrt(np.sum(jumps**2 / taus)))
        return lhs, rhs


def traj_field(traj: Trajectory, name: str) -> np.ndarray:
    n = traj.mesh.n_nodes
    return np.stack([np.asarray(getattr(s, name), float).reshape(n, -1) for s in traj.states])


def _space_norm_sq(mesh, diff, norm: str) -> np.ndarray:
    """Squared L2 or H1 norms of nodal fields, diff shape (..., n, c)."""
    m = mesh.lumped_mass
    out = np.einsum("i,...ic->...", m, diff**2)
    if norm == "H1":
        G = mesh.grads
        de = diff[..., mesh.elems, :]  # (..., ne, d+1, c)
        grad = np.einsum("...ejc,ejd->...ecd", de, G)
        out = out + np.einsum("e,...ecd->...", mesh.measures, grad**2)
    return out


def interpolant_distance(a: Trajectory, b: Trajectory, name: str, norm: str = "L2", kind: str = "L2") -> float:
    """Distance between the interpolants of two trajectories on the same mesh.

    ``kind='L2'`` measures the piecewise-constant interpolants in L2(0,T;X),
    ``kind='C0'`` the piecewise-linear ones in C0([0,T];X), with X = L2 or H1.
    """
    ia, ib = Interpolants(a), Interpolants(b)
    grid = np.union1d(ia.t, ib.t)
    if kind == "C0":
        d = ia.linear(name, grid) - ib.linear(name, grid)
        return float(np.sqrt(np.max(_space_norm_sq(a.mesh, d, norm))))
    mids = 0.5 * (grid[1:] + grid[:-1])
    d = ia.upper(name, mids) - ib.upper(name, mids)
    return float(np.sqrt(np.sum(np.diff(grid) * _space_norm_sq(a.mesh, d, norm))))


@dataclass
class StudyTable:
    """Delimiter-separated study output with a header row."""

    header: list
    rows: list = field(default_factory=list)
    notes: dict = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        j = self.header.index(name)
        return np.array([r[j] for r in self.rows], dtype=float)

    def to_text(self, sep: str = "\t") -> str:
        lines = [sep.join(self.header)]
        for r in self.rows:
            lines.append(sep.join(f"{v:.10g}" if isinstance(v, float) else str(v) for v in r))
        for k, v in self.notes.items():
            lines.append(f"# {k}: {v}")
        return "\n".join(lines) + "\n"


DISTANCES = (
    ("theta", "L2", "L2", "theta_L2L2"),
    ("theta", "H1", "L2", "theta_L2H1"),
    ("v", "L2", "L2", "v_L2L2"),
    ("v", "H1", "L2", "v_L2H1"),
    ("chi", "L2", "C0", "chi_C0L2"),
)


def _run_verified(config, verify=True):
    from .config import run_simulation

    traj = run_simulation(config)
    rep = verify_trajectory(traj) if verify else None
    if rep is not None and not rep.passed:
        failed = [r.name for r in rep.records if r.applicable and not r.passed]
        raise StudyError(f"verification failed: {failed}", rep)
    return traj, rep


def tau_refinement_study(config, levels: int = 5, tau0: float | None = None, verify: bool = True) -> StudyTable:
    """Run ``levels`` halvings of the time step and tabulate inter-level distances and monitors."""
    if levels < 3:
        raise ValueError("at least 3 levels are required")
    tau0 = config.time.tau if tau0 is None else tau0
    trajs, monitors = [], []
    for j in range(levels):
        cfg = config.with_tau(tau0 / 2**j)
        traj, _ = _run_verified(cfg, verify)
        trajs.append(traj)
        monitors.append(apriori_monitors(traj))
    mon_names = sorted(monitors[0])
    header = ["level", "tau"] + [d[3] for d in DISTANCES] + mon_names
    table = StudyTable(header)
    for j, traj in enumerate(trajs):
        if j == 0:
            dists = [float("nan")] * len(DISTANCES)
        else:
            dists = [interpolant_distance(trajs[j - 1], traj, f, nrm, kind) for f, nrm, kind, _ in DISTANCES]
        table.rows.append([j, tau0 / 2**j] + dists + [monitors[j][k] for k in mon_names])
    table.notes["monitor_max_rel_change"] = max_relative_change(monitors)
    return table


def max_relative_change(monitors: list) -> float:
    worst = 0.0
    for a, b in zip(monitors[:-1], monitors[1:]):
        for k in a:
            den = max(abs(a[k]), abs(b[k]), 1e-12)
            worst = max(worst, abs(a[k] - b[k]) / den)
    return worst


def delta_study(config, deltas=(1e-1, 1e-2, 1e-3, 0.0), verify: bool = True) -> StudyTable:
    """Distances of runs with weight delta on the p-Laplacian to the delta = 0 run.

    The configuration must use the Laplacian gradient mode with mu = 1 and a
    nondecreasing b; the initial internal variable must lie in [0, 1].
    """
    p = config.material
    if p.gradient_mode != "laplacian" or p.mu_flag != 1:
        raise ValueError("delta study requires gradient_mode = laplacian and mu = 1")
    if np.min(p.b_prime(np.linspace(0.0, 1.0, 201))) < 0:
        raise ValueError("delta study requires b' >= 0")
    deltas = list(deltas)
    if 0.0 not in deltas:
        deltas.append(0.0)
    runs = {}
    for dl in deltas:
        cfg = config.with_material(delta=dl)
        traj, _ = _run_verified(cfg, verify)
        chi0 = traj.states[0].chi
        if np.min(chi0) < 0 or np.max(chi0) > 1:
            raise StudyError("initial internal variable outside [0, 1]")
        runs[dl] = traj
    ref = runs[0.0]
    header = ["delta"] + [d[3] for d in DISTANCES] + ["u_C0H1"]
    table = StudyTable(header)
    for dl in deltas:
        tr = runs[dl]
        row = [dl] + [interpolant_distance(tr, ref, f, nrm, kind) for f, nrm, kind, _ in DISTANCES]
        row.append(interpolant_distance(tr, ref, "u", "H1", "C0"))
        table.rows.append(row)
    return table


def regularization_study(config, nus=(1e-2, 1e-3, 1e-4), Ms=None, higher_order: bool = False, verify: bool = True) -> StudyTable:
    """Distances to the exact-constraint run along a Yosida schedule and a truncation schedule.

    With ``higher_order`` the ``|chi|^eta`` and ``|eps(u)|^eta`` terms are
    switched on with the same weight as the Yosida parameter.
    """
    ref, _ = _run_verified(config, verify)
    header = ["parameter", "value", "chi_C0L2", "theta_L2L2", "v_L2L2", "M_final"]
    table = StudyTable(header)
    for nu in nus:
        cfg = config.with_options(nu=nu, reg_nu=nu if higher_order else 0.0)
        tr, _ = _run_verified(cfg, verify)
        table.rows.append(
            ["nu", nu]
            + [interpolant_distance(tr, ref, "chi", "L2", "C0"), interpolant_distance(tr, ref, "theta", "L2", "L2"), interpolant_distance(tr, ref, "v", "L2", "L2")]
            + [max(s.diagnostics.get("M", 0.0) for s in tr.states[1:])]
        )
    for M in Ms or ():
        cfg = config.with_options(M0=M)
        tr, _ = _run_verified(cfg, verify)
        table.rows.append(
            ["M", M]
            + [interpolant_distance(tr, ref, "chi", "L2", "C0"), interpolant_distance(tr, ref, "theta", "L2", "L2"), interpolant_distance(tr, ref, "v", "L2", "L2")]
            + [max(s.diagnostics.get("M", 0.0) for s in tr.states[1:])]
        )
    return table


# --- manufactured solutions for the decoupled heat equation ------------------------

def _frozen_heat_run(n_nodes: int, tau: float, T: float, exact, source, conductivity: float = 1.0):
    mesh = build_mesh([(0.0, 1.0)], n_nodes)
    params = MaterialParams(conductivity_law="constant", c0=conductivity, rho=0.0)
    disc = Discretization(mesh, params, PotentialW(gamma_kind="zero"), SchemeOptions())
    x = mesh.nodes[:, 0]
    zeros_u = np.zeros((mesh.n_nodes, 1))
    chi = np.full(mesh.n_nodes, 0.5)
    theta = exact(x, 0.0)
    K = int(round(T / tau))
    times = np.linspace(0.0, T, K + 1)
    out = [theta]
    M = 1e6
    for a, b in zip(times[:-1], times[1:]):
        g = local_means(lambda t: 0.0, lambda t: source(x, t), lambda t: 0.0, [a, b], validate=False)
        step = StepData(np.zeros((mesh.n_nodes, 1)), g[0].g, np.zeros(mesh.n_nodes))
        theta, _ = solve_heat_subsystem(disc, theta, chi, chi, zeros_u, zeros_u, b - a, M, step)
        out.append(theta)
    return mesh, times, np.array(out)


def _l2l2_error(mesh, times, thetas, exact) -> float:
    """Discrete L2(0,T;L2) error sqrt(sum_k tau_k ||theta_k - theta(t_k)||^2), nodal rule in space."""
    x = mesh.nodes[:, 0]
    m = mesh.lumped_mass
    acc = 0.0
    for k in range(1, len(times)):
        acc += (times[k] - times[k - 1]) * np.dot(m, (thetas[k] - exact(x, times[k])) ** 2)
    return float(np.sqrt(acc))


MANUFACTURED_PROFILES = {
    # name: (exact(x, t), source(x, t)) for theta_t - theta_xx = g with zero flux
    "quadratic": (
        lambda x, t: 2.0 + t**2 * np.cos(np.pi * x),
        lambda x, t: (2.0 * t + np.pi**2 * t**2) * np.cos(np.pi * x),
    ),
    "linear": (
        lambda x, t: 2.0 + t * np.cos(np.pi * x),
        lambda x, t: (1.0 + np.pi**2 * t) * np.cos(np.pi * x),
    ),
    "exponential": (
        lambda x, t: 2.0 + np.exp(-t) * np.cos(np.pi * x),
        lambda x, t: (np.pi**2 - 1.0) * np.exp(-t) * np.cos(np.pi * x),
    ),
}


def manufactured_heat_study(kind: str = "time", levels: int = 3, profile: str = "quadratic") -> StudyTable:
    """Observed convergence orders of the decoupled linear heat subproblem.

    ``kind='time'``: the exact solution ``MANUFACTURED_PROFILES[profile]`` on a
    fine mesh (1025 nodes) with tau = 1/4, 1/8, ... halved per level.
    ``kind='space'``: theta = t + cos(pi x), whose source is time independent,
    with the mesh size halved at a fixed small step.

    Backward Euler is first order; the quadratic-in-time profile reaches the
    asymptotic regime from above while the linear and exponential profiles
    approach order one from below at these step sizes.
    """
    if kind == "time":
        if profile not in MANUFACTURED_PROFILES:
            raise ValueError(f"profile must be one of {sorted(MANUFACTURED_PROFILES)}")
        exact, source = MANUFACTURED_PROFILES[profile]
        params = [(1025, 0.25 / 2**j) for j in range(levels)]
    elif kind == "space":
        def exact(x, t):
            return t + np.cos(np.pi * x)

        def source(x, t):
            return 1.0 + np.pi**2 * np.cos(np.pi * x)

        params = [(8 * 2**j + 1, 1.0 / 64) for j in range(levels)]
    else:
        raise ValueError("kind must be 'time' or 'space'")
    table = StudyTable(["n_nodes", "tau", "h", "error_L2L2", "order"])
    prev = None
    for n, tau in params:
        mesh, times, thetas = _frozen_heat_run(n, tau, 1.0, exact, source)
        err = _l2l2_error(mesh, times, thetas, exact)
        order = float("nan") if prev is None else float(np.log2(prev / err))
        table.rows.append([n, tau, 1.0 / (n - 1), err, order])
        prev = err
    return table
