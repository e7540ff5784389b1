"""Checks of the discrete energy, entropy and dissipation inequalities on trajectories.

Every inequality here is evaluated with the same nodal quadrature that the
scheme uses, so in exact arithmetic each defect is nonpositive and the
tolerances only absorb solver and rounding residue.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .assembly import (
    assemble_heat_residual,
    gradient_energy,
    nodal_dissipation,
    nodal_divergence,
    strain_energy_density,
)
from .chi_step import ChiStepContext, chi_objective
from .material import yosida_alpha_hat
from .stepper import Discretization, State, Trajectory, floor_at, structural_floor_constant

REL_TOL = 1e-8


@dataclass
class CheckRecord:
    """Outcome of one check.

    ``worst`` is the largest defect found (positive means violated),
    ``location`` the (s, t, test) triple or step where it occurred.
    """

    name: str
    worst: float
    location: tuple
    tolerance: float
    passed: bool
    applicable: bool = True
    detail: str = ""

    @property
    def status(self) -> str:
        if not self.applicable:
            return "n/a"
        return "pass" if self.passed else "fail"


@dataclass
class VerificationReport:
    records: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.records if r.applicable)

    def __getitem__(self, name: str) -> CheckRecord:
        for r in self.records:
            if r.name == name:
                return r
        raise KeyError(name)

    def names(self) -> list:
        return [r.name for r in self.records]

    def to_table(self) -> str:
        rows = [f"{'check':<32} {'status':<6} {'worst':>14} {'tolerance':>12}  location"]
        for r in self.records:
            rows.append(f"{r.name:<32} {r.status:<6} {r.worst:>14.6e} {r.tolerance:>12.3e}  {r.location}")
        rows.append(f"summary: {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(rows) + "\n"

    def to_kv(self) -> str:
        lines = [f"summary.passed={int(self.passed)}"]
        for r in self.records:
            lines += [
                f"{r.name}.status={r.status}",
                f"{r.name}.worst={r.worst:.17g}",
                f"{r.name}.tolerance={r.tolerance:.17g}",
                f"{r.name}.location={' '.join(map(str, r.location))}",
            ]
        return "\n".join(lines) + "\n"


# --- energy functional ----------------------------------------------------------

def total_energy(state: State, disc: Discretization, quadrature: str = "lumped", n_quad: int = 5) -> float:
    """Thermal + kinetic + elastic + gradient + potential energy of a state.

    ``quadrature='lumped'`` uses the nodal rule of the scheme (the quantity in
    the discrete balances); ``'gauss'`` integrates the P1 interpolants with an
    ``n_quad`` Gauss rule.  Returns ``inf`` for an infeasible internal variable.
    """
    mesh, par, pot = disc.mesh, disc.params, disc.potential
    chi = np.asarray(state.chi, float)
    if not np.all(pot.feasible(chi)):
        return np.inf
    v = np.asarray(state.v, float).reshape(mesh.n_nodes, mesh.dim)
    elastic = 0.5 * float(np.dot(mesh.element_mean(par.b(chi)) * mesh.measures, strain_energy_density(mesh, state.u, disc.D)))
    grad = gradient_energy(mesh, chi, par.p_exponent, par.delta, par.gradient_mode)
    m = mesh.lumped_mass
    if quadrature == "lumped":
        bulk = np.dot(m, state.theta) + 0.5 * np.dot(m, (v**2).sum(axis=1)) + np.dot(m, pot.gamma_hat(chi) + pot.beta_hat(chi))
    elif quadrature == "gauss":
        bary, w = mesh.quadrature(n_quad)
        vol = mesh.measures[:, None] * w[None, :]
        tq = mesh.interpolate_at(state.theta, bary)
        cq = mesh.interpolate_at(chi, bary)
        vq = sum(mesh.interpolate_at(v[:, c], bary) ** 2 for c in range(mesh.dim))
        bulk = np.sum(vol * (tq + 0.5 * vq + pot.gamma_hat(cq) + pot.beta_hat(cq)))
    else:
        raise ValueError(f"unknown quadrature {quadrature!r}")
    total = float(bulk) + elastic + grad
    o = disc.options
    if o.reg_nu:
        total += o.reg_nu / o.reg_eta * float(np.dot(m, np.abs(chi) ** o.reg_eta))
        total += disc.reg_strain_terms(np.asarray(state.u, float).reshape(-1), 0)
    return total


# --- helpers --------------------------------------------------------------------

def sample_pairs(n_states: int, max_points: int = 33):
    """Ordered pairs (s, t), s < t, on a sub-grid plus all consecutive pairs."""
    if n_states <= max_points:
        idx = np.arange(n_states)
    else:
        idx = np.unique(np.round(np.linspace(0, n_states - 1, max_points)).astype(int))
    pairs = {(int(s), int(t)) for i, s in enumerate(idx) for t in idx[i + 1 :]}
    pairs |= {(k - 1, k) for k in range(1, n_states)}
    return sorted(pairs)


def _pair_check(name, lhs_cum, rhs_cum, n_states, extra=None, max_points=33):
    """Generic check of lhs(s,t) <= rhs(s,t) given callables over pairs."""
    worst, loc, worst_ratio = -np.inf, (0, 0), -np.inf
    ok = True
    for s, t in sample_pairs(n_states, max_points):
        lhs, rhs = lhs_cum(s, t), rhs_cum(s, t)
        tol = REL_TOL * (1.0 + abs(lhs) + abs(rhs))
        defect = lhs - rhs
        if defect > tol:
            ok = False
        if defect / tol > worst_ratio:
            worst_ratio, worst, loc = defect / tol, defect, (s, t) + (() if extra is None else (extra,))
    return CheckRecord(name, float(worst), loc, REL_TOL, ok)


def _step_rates(traj: Trajectory, k: int):
    s, sp_ = traj.states[k], traj.states[k - 1]
    return (s.chi - sp_.chi) / s.tau


# --- total energy ---------------------------------------------------------------

def energy_work(traj: Trajectory) -> np.ndarray:
    """Per-step external work tau_k (int g + int_{dOmega} h + f . v) in the scheme's quadrature."""
    disc = traj.disc
    n = disc.mesh.n_nodes
    out = np.zeros(len(traj.states) - 1)
    for k in range(1, len(traj.states)):
        st, data = traj.states[k], traj.step_data[k - 1]
        g = np.broadcast_to(np.asarray(data.g, float), (n,))
        h = np.broadcast_to(np.asarray(data.h, float), (n,))
        fv = np.dot(disc.load_vector(data.f), np.asarray(st.v).reshape(-1))
        out[k - 1] = st.tau * (np.dot(disc.m, g) + np.dot(disc.bw, h) + fv)
    return out


def check_total_energy_inequality(traj: Trajectory, max_points: int = 33) -> CheckRecord:
    """E(t) <= E(s) + work over (s, t] for all sampled pairs."""
    E = np.array([total_energy(s, traj.disc) for s in traj.states])
    cw = np.concatenate([[0.0], np.cumsum(energy_work(traj))])
    return _pair_check(
        "total_energy_inequality",
        lambda s, t: E[t],
        lambda s, t: E[s] + cw[t] - cw[s],
        len(E),
        max_points=max_points,
    )


def energy_balance_defects(traj: Trajectory) -> np.ndarray:
    """Per-step defect of the exact discrete energy identity.

    ``E_k - E_{k-1} - work_k`` equals minus the sum of the numerical
    dissipations (velocity jump, displacement jump, decrease of the frozen
    internal-variable functional and the Yosida term); the returned value is
    the mismatch, which is pure solver residue.
    """
    disc = traj.disc
    par, pot, o = disc.params, disc.potential, disc.options
    mesh = disc.mesh
    work = energy_work(traj)
    out = np.zeros(len(traj.states) - 1)
    for k in range(1, len(traj.states)):
        st, pr = traj.states[k], traj.states[k - 1]
        tau = st.tau
        dv = (st.v - pr.v).reshape(mesh.n_nodes, -1)
        du = (st.u - pr.u).reshape(-1)
        kin_gap = 0.5 * np.dot(disc.m, (dv**2).sum(axis=1))
        el_gap = 0.5 * float(np.dot(mesh.element_mean(par.b(st.chi)) * mesh.measures, strain_energy_density(mesh, du, disc.D)))
        ctx = ChiStepContext(
            mesh, par, pot, pr.chi, st.theta, tau, strain_energy=disc.strain_energy(pr.u),
            nu=o.nu, reg_nu=o.reg_nu, reg_eta=o.reg_eta,
        )
        r = (st.chi - pr.chi) / tau
        dF = chi_objective(st.chi, ctx, frozen_rate=r) - chi_objective(pr.chi, ctx, frozen_rate=r)
        yos = 0.0
        if par.mu_flag == 1 and o.nu > 0:
            yos = tau * float(np.dot(disc.m, yosida_alpha_hat(r, o.nu)))
        reg_gap = 0.0
        if o.reg_nu:
            up, uk = pr.u.reshape(-1), st.u.reshape(-1)
            reg_gap = np.dot(disc.reg_strain_terms(uk, 1), uk - up) - (
                disc.reg_strain_terms(uk, 0) - disc.reg_strain_terms(up, 0)
            )
        dE = total_energy(st, disc) - total_energy(pr, disc)
        out[k - 1] = dE - work[k - 1] + kin_gap + el_gap + reg_gap - dF + yos
    return out


def check_energy_balance(traj: Trajectory) -> CheckRecord:
    d = energy_balance_defects(traj)
    E = np.array([total_energy(s, traj.disc) for s in traj.states])
    worst_k, worst, ok = 0, 0.0, True
    for k, dk in enumerate(d, start=1):
        tol = REL_TOL * (1.0 + abs(E[k]) + abs(E[k - 1]))
        if abs(dk) > tol:
            ok = False
        if abs(dk) > abs(worst):
            worst, worst_k = dk, k
    return CheckRecord("energy_balance_identity", float(abs(worst)), (worst_k,), REL_TOL, ok)


# --- entropy --------------------------------------------------------------------

def _unit_profile(t):
    return 1.0


@dataclass
class EntropyTest:
    """Nonnegative test function: nodal spatial profile times a time profile."""

    name: str
    spatial: np.ndarray
    profile: Callable[[float], float] = None

    def __post_init__(self):
        if self.profile is None:
            self.profile = _unit_profile

    def at(self, t: float) -> np.ndarray:
        return self.spatial * float(self.profile(t))


def default_test_bank(mesh, T: float = 1.0) -> list:
    """Constant, interior and boundary hats, a cos^2 bump, and two linear time profiles."""
    n = mesh.n_nodes
    x = mesh.nodes
    centre = 0.5 * (x.min(axis=0) + x.max(axis=0))
    mid = int(np.argmin(np.linalg.norm(x - centre, axis=1)))
    bnd = int(mesh.boundary_nodes("neumann_theta")[0]) if len(mesh.facets) else 0
    hat_mid = np.zeros(n)
    hat_mid[mid] = 1.0
    hat_bnd = np.zeros(n)
    hat_bnd[bnd] = 1.0
    width = 0.5 * float(np.max(x.max(axis=0) - x.min(axis=0)))
    dist = np.linalg.norm(x - (centre + 0.1 * width), axis=1)
    bump = np.where(dist < width, np.cos(0.5 * np.pi * dist / width) ** 2, 0.0)
    Tn = max(T, 1e-300)
    return [
        EntropyTest("constant", np.ones(n)),
        EntropyTest("hat_interior", hat_mid),
        EntropyTest("hat_boundary", hat_bnd),
        EntropyTest("cos2_bump", bump),
        EntropyTest("constant_increasing", np.ones(n), lambda t: 1.0 + t / Tn),
        EntropyTest("bump_decreasing", bump, lambda t: 1.0 - 0.5 * t / Tn),
    ]


def entropy_terms(traj: Trajectory, test: EntropyTest):
    """Per-step pieces of the discrete entropy inequality for one test.

    Returns ``(L, lhs_step, src_step)`` where ``L[k] = sum m (log theta_k + chi_k) phi_k``,
    ``lhs_step[k-1]`` is the step-k contribution to the left-hand side
    (time-derivative, divergence and diffusion terms) and ``src_step[k-1]``
    the dissipative sources divided by temperature.
    """
    disc = traj.disc
    mesh, par = disc.mesh, disc.params
    m = disc.m
    for s in traj.states:
        if np.min(s.theta) <= 0:
            raise ValueError(f"non-positive temperature at t={s.t:.6g}: entropy undefined")
    phis = [test.at(s.t) for s in traj.states]
    ell = [np.log(s.theta) + s.chi for s in traj.states]
    L = np.array([np.dot(m, e * p) for e, p in zip(ell, phis)])
    N = len(traj.states) - 1
    lhs = np.zeros(N)
    src = np.zeros(N)
    for k in range(1, N + 1):
        st, pr, data = traj.states[k], traj.states[k - 1], traj.step_data[k - 1]
        tau = st.tau
        phi = phis[k]
        v = st.v.reshape(-1)
        r = (st.chi - pr.chi) / tau
        term_t = np.dot(m, ell[k - 1] * (phis[k] - phis[k - 1]))
        term_rho = tau * par.rho * np.dot(nodal_divergence(mesh, v), phi)
        Rd, _ = assemble_heat_residual(mesh, st.theta, np.inf, 0.0, par, disc.options.n_quad)
        term_diff = tau * np.dot(Rd, phi / st.theta)
        g = np.broadcast_to(np.asarray(data.g, float), (mesh.n_nodes,))
        h = np.broadcast_to(np.asarray(data.h, float), (mesh.n_nodes,))
        S = nodal_dissipation(mesh, v, par.a(pr.chi), disc.D, par.omega)
        sources = m * g + S + (1.0 + 0.5 * np.sqrt(tau)) * m * r**2 + disc.bw * h
        lhs[k - 1] = term_t - term_rho - term_diff
        src[k - 1] = tau * np.dot(sources, phi / st.theta)
    return L, lhs, src


def check_entropy_inequality(traj: Trajectory, test_bank: Sequence[EntropyTest] | None = None, max_points: int = 33) -> CheckRecord:
    """Discrete entropy inequality for every test in the bank and all sampled pairs."""
    if test_bank is None:
        test_bank = default_test_bank(traj.mesh, traj.times[-1])
    n = len(traj.states)
    records = []
    for j, test in enumerate(test_bank):
        L, lhs, src = entropy_terms(traj, test)
        cl = np.concatenate([[0.0], np.cumsum(lhs)])
        cs = np.concatenate([[0.0], np.cumsum(src)])
        rec = _pair_check(
            "entropy_inequality",
            lambda s, t: cl[t] - cl[s],
            lambda s, t: L[t] - L[s] - (cs[t] - cs[s]),
            n,
            extra=test.name,
            max_points=max_points,
        )
        records.append(rec)
    ok = all(r.passed for r in records)
    worst = max(records, key=lambda r: r.worst)
    return CheckRecord("entropy_inequality", worst.worst, worst.location, REL_TOL, ok, detail=f"{len(records)} tests")


# --- internal variable ------------------------------------------------------------

def chi_dissipation_constant(traj: Trajectory) -> float:
    """Slack constant: max |gamma_hat''| over the attained range of chi."""
    chi = traj.field("chi")
    grid = np.linspace(chi.min(), chi.max(), 201)
    return float(np.max(np.abs(traj.potential.gamma_prime(grid))))


def check_chi_energy_dissipation(traj: Trajectory, max_points: int = 33) -> CheckRecord:
    """Energy-dissipation inequality of the flow rule, with slack C tau ||rate||^2."""
    disc = traj.disc
    mesh, par, pot, o = disc.mesh, disc.params, disc.potential, disc.options
    m = disc.m
    C = chi_dissipation_constant(traj)

    def G(st):
        val = gradient_energy(mesh, st.chi, par.p_exponent, par.delta, par.gradient_mode)
        val += float(np.dot(m, pot.gamma_hat(st.chi) + pot.beta_hat(st.chi)))
        if o.reg_nu:
            val += o.reg_nu / o.reg_eta * float(np.dot(m, np.abs(st.chi) ** o.reg_eta))
        return val

    Gs = np.array([G(s) for s in traj.states])
    N = len(traj.states) - 1
    diss, force, slack = np.zeros(N), np.zeros(N), np.zeros(N)
    for k in range(1, N + 1):
        st, pr = traj.states[k], traj.states[k - 1]
        tau = st.tau
        r = (st.chi - pr.chi) / tau
        rr = np.dot(m, r**2)
        diss[k - 1] = tau * (1.0 + np.sqrt(tau)) * rr
        E_prev = disc.strain_energy(pr.u)
        force[k - 1] = tau * np.dot(r, -par.b_prime(st.chi) * E_prev + m * st.theta)
        slack[k - 1] = C * tau * tau * rr
    cd, cf, cs = (np.concatenate([[0.0], np.cumsum(a)]) for a in (diss, force, slack))
    rec = _pair_check(
        "chi_energy_dissipation",
        lambda s, t: cd[t] - cd[s] + Gs[t],
        lambda s, t: Gs[s] + cf[t] - cf[s] + cs[t] - cs[s],
        N + 1,
        max_points=max_points,
    )
    rec.detail = f"C={C:.6g}"
    return rec


def check_chi_descent(traj: Trajectory) -> CheckRecord:
    worst, loc, ok = -np.inf, (0,), True
    for k, st in enumerate(traj.states[1:], start=1):
        d = st.diagnostics.get("chi_descent")
        if d is None:
            continue
        tol = 1e-12 * st.diagnostics["chi_descent_scale"]
        if d > tol:
            ok = False
        if d > worst:
            worst, loc = d, (k,)
    return CheckRecord("chi_descent", float(worst if np.isfinite(worst) else 0.0), loc, 1e-12, ok)


def check_constraints(traj: Trajectory) -> list:
    """Nodal constraint checks; records that do not apply are marked n/a."""
    disc = traj.disc
    par, pot, o = disc.params, disc.potential, disc.options
    states = traj.states
    recs = []
    C = structural_floor_constant(par, disc.mesh.dim)
    worst, loc = -np.inf, (0,)
    for k, s in enumerate(states):
        d = float(floor_at(traj.theta_star, C, s.t) - np.min(s.theta))
        if d > worst:
            worst, loc = d, (k,)
    pos_ok = worst <= 0 and all(np.min(s.theta) > 0 for s in states)
    recs.append(CheckRecord("positivity_floor", worst, loc, 0.0, pos_ok, detail=f"C={C:.6g}"))

    exact_irr = par.mu_flag == 1 and o.nu == 0
    worst, loc = 0.0, (0,)
    for k in range(1, len(states)):
        d = float(np.max(states[k].chi - states[k - 1].chi))
        if d > worst or k == 1:
            worst, loc = d, (k,)
    recs.append(CheckRecord("irreversibility", worst, loc, 0.0, worst <= 0.0, applicable=exact_irr))

    box_app = exact_irr and pot.beta_kind == "indicator"
    chi = traj.field("chi")
    viol = float(max(-chi.min(), chi.max() - 1.0))
    recs.append(CheckRecord("box_constraint", viol, (int(np.argmax(np.maximum(-chi, chi - 1.0).max(axis=1))),), 1e-10, viol <= 1e-10, applicable=box_app))

    bn = disc.mesh.boundary_nodes("dirichlet_u")
    dv = max(float(np.max(np.abs(s.u.reshape(disc.mesh.n_nodes, -1)[bn]), initial=0.0)) for s in states)
    recs.append(CheckRecord("dirichlet_u", dv, (), 0.0, dv == 0.0))

    comp_app = pot.beta_kind == "indicator"
    wc, sign = 0.0, 0.0
    for s in states:
        wc = max(wc, float(np.max(np.abs(s.xi * s.chi), initial=0.0)))
        sign = max(sign, float(np.max(s.xi, initial=0.0)))
    recs.append(CheckRecord("xi_complementarity", max(wc, sign), (), 1e-10, wc <= 1e-10 and sign <= 0, applicable=comp_app))
    if exact_irr:
        wz, sz = 0.0, 0.0
        for k in range(1, len(states)):
            s, p = states[k], states[k - 1]
            wz = max(wz, float(np.max(np.abs(s.zeta * (s.chi - p.chi)), initial=0.0)))
            sz = max(sz, float(np.max(-s.zeta, initial=0.0)))
        recs.append(CheckRecord("zeta_complementarity", max(wz, sz), (), 1e-10, wz <= 1e-10 and sz <= 0))
    else:
        recs.append(CheckRecord("zeta_complementarity", 0.0, (), 1e-10, True, applicable=False))

    wm = max((np.max(s.theta) - s.diagnostics.get("M", np.inf) for s in states[1:]), default=-np.inf)
    recs.append(CheckRecord("truncation_inactive", float(wm), (), 0.0, wm <= 0))
    return recs


# --- a-priori monitors ------------------------------------------------------------

def _h1_sq(mesh, f):
    g = mesh.element_gradient(f)
    return float(np.dot(mesh.lumped_mass, f**2) + np.dot(mesh.measures, (g**2).sum(axis=1)))


def apriori_monitors(traj: Trajectory, alpha: float = 0.75, test_bank=None) -> dict:
    """Discrete analogues of the a-priori norms, computed on the piecewise-constant interpolants."""
    disc = traj.disc
    mesh, par = disc.mesh, disc.params
    m = disc.m
    st = traj.states
    taus = traj.taus
    d = mesh.dim
    p = par.p_exponent

    def vcomp(s):
        return s.v.reshape(mesh.n_nodes, d)

    out = {"sup_L1_theta": max(float(np.dot(m, np.abs(s.theta))) for s in st)}
    out["L2H1_theta"] = float(np.sqrt(sum(t * _h1_sq(mesh, s.theta) for t, s in zip(taus, st[1:]))))
    out["L2H1_log_theta"] = float(np.sqrt(sum(t * _h1_sq(mesh, np.log(s.theta)) for t, s in zip(taus, st[1:]))))
    acc = 0.0
    for t, s in zip(taus, st[1:]):
        ga = mesh.element_gradient(s.theta ** (0.5 * alpha))
        acc += t * float(np.dot(mesh.measures * par.K(mesh.element_mean(s.theta)), (ga**2).sum(axis=1)))
    out["K_grad_theta_alpha"] = acc
    out["L2H1_v"] = float(np.sqrt(sum(t * sum(_h1_sq(mesh, vcomp(s)[:, c]) for c in range(d)) for t, s in zip(taus, st[1:]))))
    out["LinfL2_v"] = max(float(np.sqrt(np.dot(m, (vcomp(s) ** 2).sum(axis=1)))) for s in st)
    out["LinfW1p_chi"] = max(
        float((np.dot(m, np.abs(s.chi) ** p) + np.dot(mesh.measures, (mesh.element_gradient(s.chi) ** 2).sum(axis=1) ** (p / 2))) ** (1 / p))
        for s in st
    )
    out["L2L2_chi_rate"] = float(np.sqrt(sum(s.tau * np.dot(m, ((s.chi - q.chi) / s.tau) ** 2) for s, q in zip(st[1:], st[:-1]))))
    bank = test_bank if test_bank is not None else default_test_bank(mesh, traj.times[-1])
    out["log_theta_variation"] = max(
        sum(abs(float(np.dot(m, (np.log(s.theta) - np.log(q.theta)) * b.spatial))) for s, q in zip(st[1:], st[:-1]))
        for b in bank
    ) if len(st) > 1 else 0.0
    return out


def verify_trajectory(traj: Trajectory, test_bank=None, max_points: int = 33) -> VerificationReport:
    """Run every check and collect the records."""
    rep = VerificationReport()
    rep.records.append(check_total_energy_inequality(traj, max_points))
    rep.records.append(check_energy_balance(traj))
    rep.records.append(check_entropy_inequality(traj, test_bank, max_points))
    rep.records.append(check_chi_energy_dissipation(traj, max_points))
    rep.records.append(check_chi_descent(traj))
    rep.records.extend(check_constraints(traj))
    return rep
