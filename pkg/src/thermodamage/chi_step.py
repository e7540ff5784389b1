"""Per-step update of the internal variable as a bound-constrained convex minimisation.

The nodal Euler-Lagrange system solved here is

    m_i [ (1 + sqrt(tau)) r_i + mu zeta_i + xi_i + gamma(chi_i) - theta_i ]
        + b'(chi_i) E_i + (grad P(chi))_i = 0,         r = (chi - chi_prev) / tau,

with ``xi`` in the subdifferential of beta_hat at ``chi`` and ``zeta`` in the
subdifferential of the indicator of (-inf, 0] at ``r`` (or its Yosida
approximation when ``nu > 0``).  ``m`` is the lumped mass, ``E_i`` the nodal
share of half the elastic energy of the previous displacement and ``P`` the
gradient energy.  The system is the optimality condition of the convex
functional evaluated by :func:`chi_objective`; constraints become simple
bounds, so a projected Newton method solves it exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import assemble_gradient_flow, gradient_energy, nodal_strain_energy
from .material import MaterialParams, PotentialW, yosida_alpha, yosida_alpha_hat
from .mesh import Mesh


class ChiStepFailure(RuntimeError):
    """Projected Newton did not converge; carries the last iterate."""

    def __init__(self, message, chi=None, residual=np.inf):
        super().__init__(message)
        self.chi = chi
        self.residual = residual


@dataclass
class ChiStepContext:
    """Data of one internal-variable update.

    Parameters
    ----------
    chi_prev, theta_k : nodal arrays
    tau : step size
    u_prev : displacement of the previous step (used for the driving force)
        unless ``strain_energy`` (nodal shares E_i) is passed directly.
    nu : Yosida parameter for the irreversibility constraint, 0 for exact.
    reg_nu, reg_eta : weight and exponent of the optional ``|chi|^eta``
        regularisation (off when ``reg_nu == 0``).
    """

    mesh: Mesh
    params: MaterialParams
    potential: PotentialW
    chi_prev: np.ndarray
    theta_k: np.ndarray
    tau: float
    u_prev: np.ndarray | None = None
    strain_energy: np.ndarray | None = None
    nu: float = 0.0
    reg_nu: float = 0.0
    reg_eta: float = 5.0
    tol: float = 1e-10
    max_iter: int = 200
    mass: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        n = self.mesh.n_nodes
        self.chi_prev = np.asarray(self.chi_prev, dtype=float).reshape(n)
        self.theta_k = np.broadcast_to(np.asarray(self.theta_k, dtype=float), (n,)).copy()
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.nu < 0:
            raise ValueError("nu must be nonnegative")
        if self.strain_energy is None:
            if self.u_prev is None:
                self.strain_energy = np.zeros(n)
            else:
                D = self.params.elastic_matrix(self.mesh.dim)
                self.strain_energy = nodal_strain_energy(self.mesh, self.u_prev, D)
        self.strain_energy = np.asarray(self.strain_energy, dtype=float)
        self.mass = self.mesh.lumped_mass
        lo, _ = self.bounds()
        if np.any(self.chi_prev < lo):
            raise ValueError("previous internal variable is infeasible")

    @property
    def sqrt_tau(self) -> float:
        return float(np.sqrt(self.tau))

    @property
    def exact_irreversibility(self) -> bool:
        return self.params.mu_flag == 1 and self.nu == 0.0

    def bounds(self):
        n = self.mesh.n_nodes
        lo = np.full(n, self.potential.lower_bound_chi)
        hi = self.chi_prev.copy() if self.exact_irreversibility else np.full(n, np.inf)
        return lo, hi

    def driving_force(self, chi=None) -> np.ndarray:
        """Nodal density b'(chi) eps(u_prev):E eps(u_prev) / 2."""
        chi = self.chi_prev if chi is None else chi
        return self.params.b_prime(chi) * self.strain_energy / self.mass

    def gradient_term(self, chi):
        p = self.params
        return assemble_gradient_flow(self.mesh, chi, p.p_exponent, p.delta, p.gradient_mode)

    def gradient_energy(self, chi) -> float:
        p = self.params
        return gradient_energy(self.mesh, chi, p.p_exponent, p.delta, p.gradient_mode)


class ChiStepResult(NamedTuple):
    chi: np.ndarray
    xi: np.ndarray
    zeta: np.ndarray
    stats: dict


def _local_terms(chi, ctx: ChiStepContext, order: int):
    """Nodal (lumped) part of the objective: value, gradient or Hessian diagonal."""
    pot, par, m, tau = ctx.potential, ctx.params, ctx.mass, ctx.tau
    E = ctx.strain_energy
    dchi = chi - ctx.chi_prev
    c = (1.0 + ctx.sqrt_tau) / tau
    mu_reg = par.mu_flag == 1 and ctx.nu > 0
    if order == 0:
        val = m * (0.5 * c * dchi**2 + pot.gamma_hat(chi) + pot.beta_hat(chi) - ctx.theta_k * chi) + par.b(chi) * E
        if mu_reg:
            val = val + m * tau * yosida_alpha_hat(dchi / tau, ctx.nu)
        if ctx.reg_nu:
            val = val + m * ctx.reg_nu / ctx.reg_eta * np.abs(chi) ** ctx.reg_eta
        return val
    if order == 1:
        g = m * (c * dchi + pot.gamma(chi) + pot.beta(chi) - ctx.theta_k) + par.b_prime(chi) * E
        if mu_reg:
            g = g + m * yosida_alpha(dchi / tau, ctx.nu)
        if ctx.reg_nu:
            g = g + m * ctx.reg_nu * np.abs(chi) ** (ctx.reg_eta - 2.0) * chi
        return g
    h = m * (c + pot.gamma_prime(chi) + pot.beta_prime(chi)) + par.b_second(chi) * E
    if mu_reg:
        h = h + m * np.where(dchi > 0, 1.0 / (ctx.nu * tau), 0.0)
    if ctx.reg_nu:
        h = h + m * ctx.reg_nu * (ctx.reg_eta - 1.0) * np.abs(chi) ** (ctx.reg_eta - 2.0)
    return h


def chi_objective(chi, ctx: ChiStepContext, frozen_rate=None) -> float:
    """Convex functional whose minimiser is the internal-variable update.

    With ``frozen_rate=None`` the inertial term is ``(1 + sqrt(tau)) / (2 tau)
    |chi - chi_prev|^2``.  Passing the (already computed) rate ``r`` instead
    evaluates the competitor form with quadratic weight ``sqrt(tau) / (2 tau)``
    plus the linear term ``r chi``; both forms share the same minimiser and
    the second one is the one compared against ``chi_prev`` in the energy
    balance.  Returns ``inf`` outside the constraint set.
    """
    chi = np.asarray(chi, dtype=float)
    lo, hi = ctx.bounds()
    if np.any(chi < lo) or np.any(chi > hi):
        return np.inf
    val = float(np.sum(_local_terms(chi, ctx, 0))) + ctx.gradient_energy(chi)
    if frozen_rate is not None:
        dchi = chi - ctx.chi_prev
        m = ctx.mass
        val += float(np.sum(m * (-0.5 / ctx.tau * dchi**2 + np.asarray(frozen_rate) * chi)))
    return val


def chi_gradient(chi, ctx: ChiStepContext) -> np.ndarray:
    """Gradient of :func:`chi_objective` (the unconstrained Euler-Lagrange residual)."""
    R, _ = ctx.gradient_term(chi)
    return _local_terms(np.asarray(chi, dtype=float), ctx, 1) + R


def chi_hessian(chi, ctx: ChiStepContext) -> sp.csr_matrix:
    _, J = ctx.gradient_term(chi)
    return (J + sp.diags(_local_terms(np.asarray(chi, dtype=float), ctx, 2))).tocsr()


def projected_residual(chi, g, ctx: ChiStepContext) -> np.ndarray:
    """Nodal stationarity measure chi - P(chi - g / m) in equation units."""
    lo, hi = ctx.bounds()
    return chi - np.clip(chi - g / ctx.mass, lo, hi)


def _multipliers(chi, g, ctx: ChiStepContext):
    lo, hi = ctx.bounds()
    m = ctx.mass
    n = len(chi)
    xi = np.zeros(n)
    zeta = np.zeros(n)
    at_lo = chi <= lo
    at_hi = chi >= hi
    lam = -g / m
    xi[at_lo & (g > 0)] = lam[at_lo & (g > 0)]
    zeta[at_hi & (g < 0)] = lam[at_hi & (g < 0)]
    if ctx.potential.beta_kind == "penalty":
        xi = ctx.potential.beta(chi)
    if ctx.params.mu_flag == 1 and ctx.nu > 0:
        zeta = yosida_alpha((chi - ctx.chi_prev) / ctx.tau, ctx.nu)
    return xi, zeta


def solve_chi_step(ctx: ChiStepContext, chi0=None) -> ChiStepResult:
    """Projected Newton method with Armijo search along the projection arc.

    Returns the minimiser and the multipliers ``xi`` (lower bound, <= 0) and
    ``zeta`` (irreversibility, >= 0).  Raises :class:`ChiStepFailure` after
    ``ctx.max_iter`` iterations without reaching ``ctx.tol``.
    """
    lo, hi = ctx.bounds()
    x = np.clip(ctx.chi_prev if chi0 is None else np.asarray(chi0, dtype=float), lo, hi)
    sigma = 1e-4
    f = chi_objective(x, ctx)
    g = chi_gradient(x, ctx)
    pg = np.max(np.abs(projected_residual(x, g, ctx)), initial=0.0)
    it = 0
    n_ls = 0
    while pg > ctx.tol:
        if it >= ctx.max_iter:
            raise ChiStepFailure(f"internal-variable solve stalled at residual {pg:.3e}", x, pg)
        it += 1
        eps = min(1e-3, pg)
        act_lo = (x <= lo + eps) & (g > 0)
        act_hi = (x >= hi - eps) & (g < 0)
        active = act_lo | act_hi
        free = ~active
        H = chi_hessian(x, ctx)
        d = np.zeros_like(x)
        hdiag = H.diagonal()
        d[active] = -g[active] / hdiag[active]
        if free.any():
            Hff = H[free][:, free]
            d[free] = spla.spsolve(Hff.tocsc(), -g[free]) if Hff.shape[0] > 1 else -g[free] / Hff.toarray().ravel()
        alpha = 1.0
        accepted = False
        while alpha > 1e-14:
            xn = np.clip(x + alpha * d, lo, hi)
            fn = chi_objective(xn, ctx)
            pred = -alpha * np.dot(g[free], d[free]) + np.dot(g[active], x[active] - xn[active])
            if f - fn >= sigma * pred:
                accepted = True
                break
            # when the objective is flat at round-off level, accept a halved residual
            if fn <= f + 1e-12 * (1.0 + abs(f)):
                gn = chi_gradient(xn, ctx)
                if np.max(np.abs(projected_residual(xn, gn, ctx))) < 0.5 * pg:
                    accepted = True
                    break
            alpha *= 0.5
            n_ls += 1
        if not accepted:
            raise ChiStepFailure(f"line search failed at residual {pg:.3e}", x, pg)
        x, f = xn, fn
        g = chi_gradient(x, ctx)
        pg = np.max(np.abs(projected_residual(x, g, ctx)), initial=0.0)
    xi, zeta = _multipliers(x, g, ctx)
    stats = {"iterations": it, "line_search_cuts": n_ls, "residual": float(pg), "objective": float(f)}
    return ChiStepResult(x, xi, zeta, stats)


def xi_from_complementarity(chi, force_terms, tol_zero=None) -> np.ndarray:
    """Explicit multiplier -1{chi = 0} (force)^+ with force = gamma + b' eps:E eps / 2 - theta."""
    chi = np.asarray(chi, dtype=float)
    force = np.broadcast_to(np.asarray(force_terms, dtype=float), chi.shape)
    if tol_zero is None:
        tol_zero = 1e-10 * (1.0 + np.max(np.abs(chi), initial=0.0))
    return np.where(chi <= tol_zero, -np.maximum(force, 0.0), 0.0)


def one_sided_vi_residual(ctx: ChiStepContext, chi_k, xi_k, psi) -> float:
    """Weak flow-rule residual tested with a nonpositive nodal function psi.

    Returns ``sum_i psi_i (m_i [(1 + sqrt(tau)) r_i + xi_i + gamma(chi_i) - theta_i]
    + b'(chi_i) E_i) + grad P(chi_k) . psi``, which is ``-sum m zeta psi >= 0``
    on an exact solution.
    """
    psi = np.asarray(psi, dtype=float)
    if np.any(psi > 0):
        raise ValueError("one-sided test functions must be nonpositive")
    chi_k = np.asarray(chi_k, dtype=float)
    m = ctx.mass
    r = (chi_k - ctx.chi_prev) / ctx.tau
    local = m * ((1.0 + ctx.sqrt_tau) * r + xi_k + ctx.potential.gamma(chi_k) - ctx.theta_k)
    local = local + ctx.params.b_prime(chi_k) * ctx.strain_energy
    if ctx.reg_nu:
        local = local + m * ctx.reg_nu * np.abs(chi_k) ** (ctx.reg_eta - 2.0) * chi_k
    R, _ = ctx.gradient_term(chi_k)
    return float(np.dot(local + R, psi))
