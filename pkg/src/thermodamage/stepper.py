"""Fully implicit coupled time stepping for temperature, displacement and internal variable.

Each step solves, in a staggered fixed-point loop,

* the internal-variable update (:mod:`thermodamage.chi_step`) with the
  current temperature iterate,
* the linear momentum balance with viscosity weighted by ``a(chi_prev)`` and
  elasticity weighted by ``b(chi_k)``,
* the nonlinear heat balance with truncated conductivity ``K_M`` and
  truncated temperature ``T_M`` in the rate couplings,

until the relative increments of all three fields drop below ``tol_fp``.
Steps that fail are retried on two half steps.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import (
    assemble_heat_residual,
    assemble_weighted_form,
    coupling_matrix,
    element_strains,
    element_dofs,
    nodal_dissipation,
    nodal_divergence,
    nodal_strain_energy,
    strain_matrices,
)
from .chi_step import ChiStepContext, ChiStepFailure, chi_objective, solve_chi_step
from .material import MaterialParams, PotentialW, truncate_value
from .mesh import Mesh

log = logging.getLogger(__name__)


class StepFailure(RuntimeError):
    """A time step could not be completed with the current step size."""


class SimulationAbort(RuntimeError):
    """Step size fell below the minimum; carries the trajectory computed so far."""

    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory


class TruncationInsufficient(RuntimeError):
    """The heat solution exceeded the truncation level M."""

    def __init__(self, message, theta=None):
        super().__init__(message)
        self.theta = theta


@dataclass
class SchemeOptions:
    """Solver tolerances and scheme switches."""

    tol_fp: float = 1e-9
    tol_heat: float = 1e-10
    tol_chi: float = 1e-10
    tol_lin: float = 1e-12
    max_outer: int = 100
    max_newton: int = 60
    min_tau: float = 1e-6
    nu: float = 0.0
    reg_nu: float = 0.0
    reg_eta: float = 5.0
    M0: float | None = None
    n_quad: int = 4


@dataclass
class StepData:
    """Local means of the data over one step: nodal f (n, d), g (n,), h (n,)."""

    f: np.ndarray
    g: np.ndarray
    h: np.ndarray

    def validate(self):
        if np.any(np.asarray(self.g) < 0):
            raise ValueError("heat source g must be nonnegative")
        if np.any(np.asarray(self.h) < 0):
            raise ValueError("boundary flux h must be nonnegative")
        return self


@dataclass
class State:
    """Nodal fields at one time level."""

    t: float
    theta: np.ndarray
    u: np.ndarray
    v: np.ndarray
    chi: np.ndarray
    xi: np.ndarray
    zeta: np.ndarray
    tau: float = 0.0
    diagnostics: dict = field(default_factory=dict)

    def copy(self) -> "State":
        return State(
            self.t,
            self.theta.copy(),
            self.u.copy(),
            self.v.copy(),
            self.chi.copy(),
            self.xi.copy(),
            self.zeta.copy(),
            self.tau,
            dict(self.diagnostics),
        )


@dataclass
class SourceTerms:
    """Time-dependent data evaluated at the mesh nodes.

    Each callable maps a time to a nodal array: ``f(t)`` of shape (n, d),
    ``g(t)`` and ``h(t)`` of shape (n,).
    """

    f: Callable[[float], np.ndarray]
    g: Callable[[float], np.ndarray]
    h: Callable[[float], np.ndarray]


def _time_mean(fun, a: float, b: float, n_sub: int = 4):
    """Mean of fun over (a, b] with composite 3-point Gauss quadrature."""
    x, w = np.polynomial.legendre.leggauss(3)
    edges = np.linspace(a, b, n_sub + 1)
    acc = None
    for lo, hi in zip(edges[:-1], edges[1:]):
        for xi, wi in zip(x, w):
            val = np.asarray(fun(0.5 * (lo + hi) + 0.5 * (hi - lo) * xi), dtype=float) * (0.5 * wi * (hi - lo))
            acc = val if acc is None else acc + val
    return acc / (b - a)


def local_means(f, g, h, partition: Sequence[float], n_sub: int = 4, validate: bool = True) -> list[StepData]:
    """Step data as (1/tau_k) * integral over (t_{k-1}, t_k] of f, g, h.

    ``f``, ``g``, ``h`` are callables of time returning arrays or scalars.
    Raises ``ValueError`` when a mean of g or h is negative, unless
    ``validate`` is false (manufactured solutions need signed sources).
    """
    t = np.asarray(partition, dtype=float)
    if np.any(np.diff(t) <= 0):
        raise ValueError("partition must be strictly increasing")
    out = []
    for a, b in zip(t[:-1], t[1:]):
        sd = StepData(_time_mean(f, a, b, n_sub), _time_mean(g, a, b, n_sub), _time_mean(h, a, b, n_sub))
        out.append(sd.validate() if validate else sd)
    return out


def positivity_floor(theta_star: float, C_est: float, T: float, tau: float):
    """Lower temperature bound from the comparison recursion.

    Returns ``(floor, v)`` where ``floor = theta_star / (1 + C T theta_star)`` and
    ``v`` is the sequence v_k = (-1 + sqrt(1 + 4 C tau v_{k-1})) / (2 C tau),
    v_0 = theta_star, over ``round(T / tau)`` steps.
    """
    if not theta_star > 0:
        raise ValueError("theta_star must be positive")
    if C_est < 0:
        raise ValueError("C_est must be nonnegative")
    K = int(round(T / tau))
    v = np.empty(K + 1)
    v[0] = theta_star
    for k in range(1, K + 1):
        if C_est == 0:
            v[k] = v[k - 1]
        else:
            # rationalised root, stable for small C tau v
            v[k] = 2.0 * v[k - 1] / (1.0 + np.sqrt(1.0 + 4.0 * C_est * tau * v[k - 1]))
    floor = theta_star / (1.0 + C_est * T * theta_star)
    return floor, v


def floor_at(theta_star: float, C: float, t) -> np.ndarray:
    """Closed-form floor theta_star / (1 + C t theta_star) at time(s) t."""
    return theta_star / (1.0 + C * np.asarray(t, dtype=float) * theta_star)


def structural_floor_constant(params: MaterialParams, dim: int) -> float:
    """Constant C with m_i (theta_i - theta_prev_i) / tau + (A theta)_i >= -C m_i theta_i^2 nodewise.

    The negative couplings are absorbed by the quadratic sources through
    Young's inequality: ``|r| theta <= r^2 + theta^2 / 4`` and
    ``rho |div v| theta <= c2 omega k_E (div v)^2 + rho^2 theta^2 / (4 c2 omega k_E)``
    with ``k_E = lambda + 2 mu / d``.
    """
    kE = params.bulk_like_modulus(dim)
    return 0.25 + params.rho**2 / (4.0 * params.c2 * params.omega * kE)


class Discretization:
    """Mesh, material data and the step-independent operators."""

    def __init__(self, mesh: Mesh, params: MaterialParams, potential: PotentialW, options: SchemeOptions | None = None):
        self.mesh = mesh
        self.params = params
        self.potential = potential
        self.options = options or SchemeOptions()
        d = mesh.dim
        self.D = params.elastic_matrix(d)
        self.m = mesh.lumped_mass
        self.bw = mesh.boundary_weights("neumann_theta")
        self.mass_vec = np.repeat(self.m, d)
        fixed = np.zeros(mesh.n_nodes * d, dtype=bool)
        bn = mesh.boundary_nodes("dirichlet_u")
        for c in range(d):
            fixed[bn * d + c] = True
        self.free = ~fixed
        self.C = coupling_matrix(mesh, params.rho)

    # --- elastic pieces -------------------------------------------------------
    def elastic_form(self, eta_nodal):
        return assemble_weighted_form(self.mesh, eta_nodal, 1.0, D=self.D).matrix

    def viscous_form(self, eta_nodal):
        return assemble_weighted_form(self.mesh, eta_nodal, self.params.omega, D=self.D).matrix

    def strain_energy(self, u):
        return nodal_strain_energy(self.mesh, u, self.D)

    def load_vector(self, f_nodal) -> np.ndarray:
        f = np.broadcast_to(np.asarray(f_nodal, dtype=float), (self.mesh.n_nodes, self.mesh.dim))
        return (self.m[:, None] * f).reshape(-1)

    def reg_strain_terms(self, u, order):
        """Value / gradient / Hessian of (reg_nu / eta) sum_e |e| |eps_e|^eta."""
        o = self.options
        mesh = self.mesh
        eps = element_strains(mesh, u)
        W = np.ones(eps.shape[1])
        if mesh.dim == 2:
            W[2] = 0.5  # Frobenius norm with engineering shear
        n2 = np.einsum("ev,v,ev->e", eps, W, eps)
        eta = o.reg_eta
        if order == 0:
            return o.reg_nu / eta * float(np.dot(mesh.measures, n2 ** (0.5 * eta)))
        B = strain_matrices(mesh)
        WB = W[None, :, None] * B
        a = o.reg_nu * n2 ** (0.5 * (eta - 2.0)) * mesh.measures
        if order == 1:
            loc = np.einsum("e,ev,evk->ek", a, eps, WB)
            out = np.zeros(mesh.n_nodes * mesh.dim)
            np.add.at(out, element_dofs(mesh), loc)
            return out
        c = o.reg_nu * (eta - 2.0) * (n2 + 1e-300) ** (0.5 * (eta - 4.0)) * mesh.measures
        Weps = np.einsum("v,ev->ev", W, eps)
        local = np.einsum("e,evk,vw,ewl->ekl", a, B, np.diag(W), B) + np.einsum(
            "e,ek,el->ekl", c, np.einsum("ev,evk->ek", Weps, B), np.einsum("ev,evk->ek", Weps, B)
        )
        dofs = element_dofs(mesh)
        k = dofs.shape[1]
        rows = np.repeat(dofs, k, axis=1).ravel()
        cols = np.tile(dofs, (1, k)).ravel()
        n = mesh.n_nodes * mesh.dim
        return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))


def solve_momentum_subsystem(
    disc: Discretization,
    u_prev,
    v_prev,
    chi_prev,
    chi_k,
    theta_k,
    f_k,
    tau: float,
):
    """Momentum balance of one step written for v = (u_k - u_prev) / tau.

    Solves ``M (v - v_prev) / tau + V_{a(chi_prev)} v + E_{b(chi_k)} (u_prev + tau v)
    + C_rho(theta_k) = f_k`` on the free dofs and returns ``(u_k, v_k)``.
    This is the usual second difference form with u_prev2 = u_prev - tau v_prev.
    """
    p = disc.params
    u_prev = np.asarray(u_prev, dtype=float).reshape(-1)
    v_prev = np.asarray(v_prev, dtype=float).reshape(-1)
    Va = disc.viscous_form(p.a(chi_prev))
    Eb = disc.elastic_form(p.b(chi_k))
    A = sp.diags(disc.mass_vec / tau) + Va + tau * Eb
    rhs = disc.load_vector(f_k) - disc.C @ np.broadcast_to(np.asarray(theta_k, float), (disc.mesh.n_nodes,))
    rhs = rhs - Eb @ u_prev + disc.mass_vec * v_prev / tau
    fr = disc.free
    v = np.zeros_like(u_prev)
    if fr.any():
        Aff = A[fr][:, fr].tocsc()
        if disc.options.reg_nu > 0:
            v = _momentum_newton(disc, Aff, rhs, u_prev, tau)
        else:
            v[fr] = spla.spsolve(Aff, rhs[fr])
            res = np.linalg.norm(Aff @ v[fr] - rhs[fr])
            if not np.isfinite(res) or res > max(disc.options.tol_lin, 1e-9) * max(1.0, np.linalg.norm(rhs[fr])):
                raise StepFailure(f"momentum solve inaccurate (residual {res:.3e})")
    u = u_prev + tau * v
    shape = (disc.mesh.n_nodes, disc.mesh.dim)
    return u.reshape(shape), v.reshape(shape)


def _momentum_newton(disc, Aff, rhs, u_prev, tau):
    fr = disc.free
    v = np.zeros_like(u_prev)
    for _ in range(disc.options.max_newton):
        u = u_prev + tau * v
        G = Aff @ v[fr] + disc.reg_strain_terms(u, 1)[fr] - rhs[fr]
        if np.max(np.abs(G)) <= disc.options.tol_heat:
            return v
        H = Aff + tau * disc.reg_strain_terms(u, 2)[fr][:, fr]
        v[fr] -= spla.spsolve(H.tocsc(), G)
    raise StepFailure("regularised momentum Newton did not converge")


@dataclass
class HeatTerms:
    """Step-frozen ingredients of the nodal heat residual."""

    theta_prev: np.ndarray
    rate_chi: np.ndarray
    div_v: np.ndarray
    source: np.ndarray  # m g + S + (1 + sqrt(tau) / 2) m r^2 + bw h


def heat_terms(disc: Discretization, theta_prev, chi_prev, chi_k, u_prev, u_k, tau, step: StepData) -> HeatTerms:
    mesh, p = disc.mesh, disc.params
    v = (np.asarray(u_k, float) - np.asarray(u_prev, float)).reshape(-1) / tau
    r = (np.asarray(chi_k, float) - np.asarray(chi_prev, float)) / tau
    S = nodal_dissipation(mesh, v, p.a(chi_prev), disc.D, p.omega)
    g = np.broadcast_to(np.asarray(step.g, float), (mesh.n_nodes,))
    h = np.broadcast_to(np.asarray(step.h, float), (mesh.n_nodes,))
    src = disc.m * g + S + (1.0 + 0.5 * np.sqrt(tau)) * disc.m * r**2 + disc.bw * h
    return HeatTerms(np.asarray(theta_prev, float), r, nodal_divergence(mesh, v), src)


def heat_residual(disc: Discretization, theta, terms: HeatTerms, tau: float, M: float, jacobian: bool = True):
    """Nodal residual of the truncated heat balance (and its Jacobian)."""
    p, m = disc.params, disc.m
    Rd, Jd = assemble_heat_residual(disc.mesh, theta, M, 0.0, p, disc.options.n_quad)
    Tm = truncate_value(theta, M)
    coef = m * terms.rate_chi + p.rho * terms.div_v
    R = m * (theta - terms.theta_prev) / tau + coef * Tm + Rd - terms.source
    if not jacobian:
        return R, None
    dT = (np.abs(theta) <= M).astype(float)
    J = Jd + sp.diags(m / tau + coef * dT)
    return R, J.tocsr()


def solve_heat_subsystem(
    disc: Discretization,
    theta_prev,
    chi_prev,
    chi_k,
    u_prev,
    u_k,
    tau: float,
    M: float,
    step: StepData,
    theta_init=None,
):
    """Newton solve of the truncated heat balance; returns ``(theta_k, stats)``.

    Raises :class:`StepFailure` if Newton does not converge and
    :class:`TruncationInsufficient` if the solution exceeds ``M``.
    """
    terms = heat_terms(disc, theta_prev, chi_prev, chi_k, u_prev, u_k, tau, step)
    theta = np.array(terms.theta_prev if theta_init is None else theta_init, dtype=float)
    tol = disc.options.tol_heat
    R, J = heat_residual(disc, theta, terms, tau, M)
    nr = np.max(np.abs(R))
    it = 0
    while nr > tol:
        if it >= disc.options.max_newton:
            raise StepFailure(f"heat Newton stalled at residual {nr:.3e}")
        it += 1
        d = spla.spsolve(J.tocsc(), -R)
        if not np.all(np.isfinite(d)):
            raise StepFailure("heat Newton produced non-finite update")
        alpha = 1.0
        while True:
            tn = theta + alpha * d
            Rn, _ = heat_residual(disc, tn, terms, tau, M, jacobian=False)
            nn = np.max(np.abs(Rn))
            if nn < (1.0 - 1e-4 * alpha) * nr or alpha < 1e-3 or nn <= tol:
                break
            alpha *= 0.5
        if nn >= nr and alpha < 1e-3:
            if nr < 1e3 * tol:
                break  # roundoff floor
            raise StepFailure(f"heat Newton line search failed at residual {nr:.3e}")
        theta = tn
        R, J = heat_residual(disc, theta, terms, tau, M)
        nr = np.max(np.abs(R))
    if np.max(np.abs(theta)) > M:
        raise TruncationInsufficient(f"max temperature {np.max(theta):.6g} exceeds M = {M:.6g}", theta)
    return theta, {"newton_iterations": it, "residual": float(nr)}


def solve_time_step(
    disc: Discretization,
    state_prev: State,
    step: StepData,
    tau: float,
    M: float,
):
    """One fully implicit step by staggered fixed-point iteration.

    Returns ``(state, M)``, with ``M`` possibly doubled so that the truncation
    is inactive on the accepted temperature.
    """
    o = disc.options
    p = disc.params
    theta_p, chi_p = state_prev.theta, state_prev.chi
    u_p, v_p = state_prev.u, state_prev.v
    E_prev = disc.strain_energy(u_p)
    theta_it, chi_it, u_it = theta_p.copy(), chi_p.copy(), u_p.copy()
    n_chi = n_heat = 0
    converged = False
    for outer in range(1, o.max_outer + 1):
        ctx = ChiStepContext(
            disc.mesh, p, disc.potential, chi_p, theta_it, tau,
            strain_energy=E_prev, nu=o.nu, reg_nu=o.reg_nu, reg_eta=o.reg_eta, tol=o.tol_chi,
        )
        chi_new, xi, zeta, cstats = solve_chi_step(ctx, chi0=chi_it)
        n_chi += cstats["iterations"]
        u_new, v_new = solve_momentum_subsystem(disc, u_p, v_p, chi_p, chi_new, theta_it, step.f, tau)
        while True:
            try:
                theta_new, hstats = solve_heat_subsystem(
                    disc, theta_p, chi_p, chi_new, u_p, u_new, tau, M, step, theta_init=theta_it
                )
                break
            except TruncationInsufficient:
                M *= 2.0
                log.info("doubling truncation level to %g", M)
                if M > 1e12:
                    raise StepFailure("truncation level diverged")
        n_heat += hstats["newton_iterations"]

        def rel(a, b):
            return np.max(np.abs(a - b)) / (1.0 + np.max(np.abs(a)))

        incr = max(rel(theta_new, theta_it), rel(chi_new, chi_it), rel(u_new, u_it))
        theta_it, chi_it, u_it = theta_new, chi_new, u_new
        if incr < o.tol_fp:
            converged = True
            break
    if not converged:
        raise StepFailure(f"fixed-point iteration did not converge (last increment {incr:.3e})")
    if np.min(theta_it) <= 0:
        raise StepFailure("non-positive temperature")
    r = (chi_it - chi_p) / tau
    descent = chi_objective(chi_it, ctx, frozen_rate=r) - chi_objective(chi_p, ctx, frozen_rate=r)
    scale = 1.0 + abs(chi_objective(chi_p, ctx, frozen_rate=r))
    diag = {
        "outer_iterations": outer,
        "chi_iterations": n_chi,
        "heat_iterations": n_heat,
        "fp_increment": float(incr),
        "M": float(M),
        "chi_descent": float(descent),
        "chi_descent_scale": float(scale),
        "chi_residual": cstats["residual"],
        "heat_residual": hstats["residual"],
    }
    new = State(state_prev.t + tau, theta_it, u_it, v_new, chi_it, xi, zeta, tau, diag)
    return new, M


@dataclass
class Trajectory:
    """Sequence of accepted states together with the data needed to verify them."""

    disc: Discretization
    states: list
    step_data: list
    theta_star: float
    sources: SourceTerms | None = None
    failed_steps: int = 0

    @property
    def mesh(self) -> Mesh:
        return self.disc.mesh

    @property
    def params(self) -> MaterialParams:
        return self.disc.params

    @property
    def potential(self) -> PotentialW:
        return self.disc.potential

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.states])

    @property
    def taus(self) -> np.ndarray:
        return np.array([s.tau for s in self.states[1:]])

    def field(self, name: str) -> np.ndarray:
        """Stacked nodal values of one field over all states."""
        return np.stack([getattr(s, name) for s in self.states])

    def interpolants(self):
        from .studies import Interpolants

        return Interpolants(self)

    def copy(self) -> "Trajectory":
        return replace(self, states=[s.copy() for s in self.states], step_data=list(self.step_data))


def initial_state(disc: Discretization, theta0, u0, v0, chi0) -> State:
    n, d = disc.mesh.n_nodes, disc.mesh.dim
    theta0 = np.broadcast_to(np.asarray(theta0, float), (n,)).copy()
    chi0 = np.broadcast_to(np.asarray(chi0, float), (n,)).copy()
    u0 = np.broadcast_to(np.asarray(u0, float), (n, d)).copy()
    v0 = np.broadcast_to(np.asarray(v0, float), (n, d)).copy()
    fixed = ~disc.free.reshape(n, d)
    u0[fixed] = 0.0
    v0[fixed] = 0.0
    return State(0.0, theta0, u0, v0, chi0, np.zeros(n), np.zeros(n), 0.0, {})


def max_stable_tau(potential: PotentialW) -> float:
    """Largest tau with 1 / (2 sqrt(tau)) > lambda (uniqueness of the internal-variable step)."""
    lam = potential.lambda_conv
    return np.inf if lam == 0 else 1.0 / (4.0 * lam * lam) * (1.0 - 1e-12)


def simulate(
    disc: Discretization,
    state0: State,
    sources: SourceTerms,
    T: float,
    tau: float,
    theta_star: float | None = None,
) -> Trajectory:
    """Advance from ``state0`` to time ``T`` with nominal step ``tau``.

    Failed steps are retried on two halves recursively down to
    ``options.min_tau``; every accepted sub-step becomes a state of the
    trajectory.
    """
    if theta_star is None:
        theta_star = float(np.min(state0.theta))
    if np.min(state0.theta) < theta_star or not theta_star > 0:
        raise ValueError("initial temperature must satisfy theta_0 >= theta_star > 0")
    o = disc.options
    M = o.M0 if o.M0 is not None else 10.0 * (1.0 + float(np.max(state0.theta)))
    K = int(round(T / tau)) if T > 0 else 0
    if K > 0 and abs(K * tau - T) > 1e-9 * max(1.0, T):
        raise ValueError("T must be an integer multiple of tau")
    n_split = 0
    tmax = max_stable_tau(disc.potential)
    while tau / 2**n_split >= tmax:
        n_split += 1
    traj = Trajectory(disc, [state0], [], theta_star, sources)
    grid = np.linspace(0.0, T, K + 1) if K > 0 else np.array([0.0])

    def advance(state, a, b, M):
        h = b - a
        data = local_means(sources.f, sources.g, sources.h, [a, b])[0]
        try:
            new, M = solve_time_step(disc, state, data, h, M)
            new.t = b
            traj.states.append(new)
            traj.step_data.append(data)
            return new, M
        except (StepFailure, ChiStepFailure, np.linalg.LinAlgError) as exc:
            traj.failed_steps += 1
            if h / 2 < o.min_tau:
                raise SimulationAbort(f"step size below min_tau at t={a:.6g}: {exc}", traj) from exc
            log.info("step failure at t=%g with tau=%g (%s); halving", a, h, exc)
            mid = 0.5 * (a + b)
            state, M = advance(state, a, mid, M)
            return advance(state, mid, b, M)

    state = state0
    for a, b in zip(grid[:-1], grid[1:]):
        sub = np.linspace(a, b, 2**n_split + 1)
        for sa, sb in zip(sub[:-1], sub[1:]):
            state, M = advance(state, sa, sb, M)
    return traj
