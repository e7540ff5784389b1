"""Assembly of the discrete spatial operators on P1 elements.

Conventions
-----------
* Vector fields are stored node-major, ``u.reshape(n_nodes, dim)``; the
  flat dof index of component ``c`` at node ``i`` is ``i * dim + c``.
* Strains use Voigt notation with engineering shear in 2D, so the elastic
  energy density is ``eps @ D @ eps`` with ``D`` from
  :meth:`MaterialParams.elastic_matrix`.
* Coefficient fields given at nodes enter element integrals through their
  element average.
* Zeroth-order terms of the scalar equations use nodal (lumped) quadrature;
  the nodal weights below are chosen so that every cancellation used by the
  energy and entropy balances holds exactly at the discrete level.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .material import MaterialParams, truncate_conductivity, truncate_conductivity_prime
from .mesh import Mesh

KINDS = ("mass", "elastic_e_eta", "viscous_v_eta", "coupling", "heat", "grad_flow", "stiffness")


class AssemblyError(ValueError):
    """Raised when inputs would break coercivity or shape conventions."""


@dataclass
class AssembledOperator:
    """Sparse matrix or residual/Jacobian pair tagged with its kind."""

    kind: str
    matrix: sp.csr_matrix | None = None
    residual: np.ndarray | None = None
    jacobian: sp.csr_matrix | Callable | None = None

    def __matmul__(self, other):
        return self.matrix @ other


# --- element kinematics -------------------------------------------------------

def element_dofs(mesh: Mesh) -> np.ndarray:
    d = mesh.dim
    return (mesh.elems[:, :, None] * d + np.arange(d)[None, None, :]).reshape(mesh.n_elems, -1)


def strain_matrices(mesh: Mesh) -> np.ndarray:
    """Voigt strain operators B_e with eps_e = B_e u_e, shape (n_elems, n_voigt, (d+1) d)."""
    g = mesh.grads
    ne, nv = mesh.n_elems, mesh.dim + 1
    if mesh.dim == 1:
        return g[:, :, 0][:, None, :].copy()
    B = np.zeros((ne, 3, 2 * nv))
    B[:, 0, 0::2] = g[:, :, 0]
    B[:, 1, 1::2] = g[:, :, 1]
    B[:, 2, 0::2] = g[:, :, 1]
    B[:, 2, 1::2] = g[:, :, 0]
    return B


def divergence_rows(mesh: Mesh) -> np.ndarray:
    """Row vectors giving div_e(u) = row_e . u_e, shape (n_elems, (d+1) d)."""
    return mesh.grads.reshape(mesh.n_elems, -1)


def element_strains(mesh: Mesh, u: np.ndarray) -> np.ndarray:
    ue = np.asarray(u, dtype=float).reshape(-1)[element_dofs(mesh)]
    return np.einsum("evk,ek->ev", strain_matrices(mesh), ue)


def element_divergence(mesh: Mesh, u: np.ndarray) -> np.ndarray:
    ue = np.asarray(u, dtype=float).reshape(-1)[element_dofs(mesh)]
    return np.einsum("ek,ek->e", divergence_rows(mesh), ue)


def strain_energy_density(mesh: Mesh, u: np.ndarray, D: np.ndarray) -> np.ndarray:
    """Element values of eps(u) : E eps(u)."""
    eps = element_strains(mesh, u)
    return np.einsum("ev,vw,ew->e", eps, D, eps)


def _scatter_elem_to_nodes(mesh: Mesh, per_elem: np.ndarray) -> np.ndarray:
    out = np.zeros(mesh.n_nodes)
    np.add.at(out, mesh.elems, np.repeat(per_elem[:, None], mesh.dim + 1, axis=1))
    return out


def nodal_strain_energy(mesh: Mesh, u: np.ndarray, D: np.ndarray) -> np.ndarray:
    """E_i with sum_i eta_i E_i = (1/2) int eta_h-average eps:E eps, i.e. half the weighted form."""
    e = strain_energy_density(mesh, u, D) * mesh.measures / (2.0 * (mesh.dim + 1))
    return _scatter_elem_to_nodes(mesh, e)


def nodal_divergence(mesh: Mesh, v: np.ndarray) -> np.ndarray:
    """D_i with sum_i theta_i D_i = int theta_h div(v_h)."""
    return _scatter_elem_to_nodes(mesh, element_divergence(mesh, v) * mesh.measures / (mesh.dim + 1))


def nodal_dissipation(mesh: Mesh, v: np.ndarray, eta_nodal: np.ndarray, D: np.ndarray, omega: float) -> np.ndarray:
    """S_i with sum_i S_i = v^T V_eta v (viscous dissipation shared among vertices)."""
    eta_e = mesh.element_mean(eta_nodal)
    s = omega * eta_e * strain_energy_density(mesh, v, D) * mesh.measures / (mesh.dim + 1)
    return _scatter_elem_to_nodes(mesh, s)


# --- linear operators ---------------------------------------------------------

def assemble_mass(mesh: Mesh, vector: bool = False, lumped: bool = True) -> AssembledOperator:
    """Lumped (default) or consistent P1 mass matrix."""
    if lumped:
        m = mesh.lumped_mass
        if vector:
            m = np.repeat(m, mesh.dim)
        return AssembledOperator("mass", sp.diags(m).tocsr())
    nv = mesh.dim + 1
    local = (np.ones((nv, nv)) + np.eye(nv)) / ((nv) * (nv + 1))
    vals = mesh.measures[:, None, None] * local[None]
    rows = np.repeat(mesh.elems, nv, axis=1)
    cols = np.tile(mesh.elems, (1, nv))
    M = sp.csr_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=(mesh.n_nodes,) * 2)
    if vector:
        M = sp.kron(M, sp.identity(mesh.dim)).tocsr()
    return AssembledOperator("mass", M)


def _assemble_elementwise(mesh: Mesh, dofs: np.ndarray, local: np.ndarray, n: int) -> sp.csr_matrix:
    k = dofs.shape[1]
    rows = np.repeat(dofs, k, axis=1).ravel()
    cols = np.tile(dofs, (1, k)).ravel()
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))


def assemble_weighted_form(
    mesh: Mesh,
    eta_field,
    tensor_scale: float = 1.0,
    params: MaterialParams | None = None,
    D: np.ndarray | None = None,
) -> AssembledOperator:
    """Matrix of the form (u, w) -> int eta eps(u) : (scale E) eps(w).

    ``eta_field`` is nodal (or a scalar); it enters elementwise through its
    element average.  ``tensor_scale = omega`` yields the viscous form.
    """
    eta = np.broadcast_to(np.asarray(eta_field, dtype=float), (mesh.n_nodes,))
    if np.any(eta < 0):
        raise AssemblyError("negative coefficient in weighted form breaks coercivity")
    if D is None:
        D = (params or MaterialParams()).elastic_matrix(mesh.dim)
    eta_e = mesh.element_mean(eta) * tensor_scale
    B = strain_matrices(mesh)
    local = np.einsum("e,evk,vw,ewl->ekl", eta_e * mesh.measures, B, D, B)
    A = _assemble_elementwise(mesh, element_dofs(mesh), local, mesh.n_nodes * mesh.dim)
    kind = "elastic_e_eta" if tensor_scale == 1.0 else "viscous_v_eta"
    return AssembledOperator(kind, A)


def assemble_coupling(mesh: Mesh, theta_field, rho: float) -> np.ndarray:
    """Load vector F with F . w = -rho int theta_h div(w_h)."""
    theta_e = mesh.element_mean(np.broadcast_to(np.asarray(theta_field, dtype=float), (mesh.n_nodes,)))
    local = -rho * (theta_e * mesh.measures)[:, None] * divergence_rows(mesh)
    out = np.zeros(mesh.n_nodes * mesh.dim)
    np.add.at(out, element_dofs(mesh), local)
    return out


def coupling_matrix(mesh: Mesh, rho: float) -> sp.csr_matrix:
    """Matrix G with G @ theta = assemble_coupling(mesh, theta, rho)."""
    nv = mesh.dim + 1
    local = -rho * (mesh.measures / nv)[:, None, None] * divergence_rows(mesh)[:, :, None] * np.ones((1, 1, nv))
    rows = np.repeat(element_dofs(mesh), nv, axis=1).reshape(mesh.n_elems, -1, nv)
    cols = np.broadcast_to(mesh.elems[:, None, :], rows.shape)
    return sp.csr_matrix((local.ravel(), (rows.ravel(), cols.ravel())), shape=(mesh.n_nodes * mesh.dim, mesh.n_nodes))


def scalar_stiffness(mesh: Mesh, coef_e=1.0) -> sp.csr_matrix:
    """P1 stiffness matrix int c grad(phi_i) . grad(phi_j) with element-constant c."""
    c = np.broadcast_to(np.asarray(coef_e, dtype=float), (mesh.n_elems,))
    local = np.einsum("e,eid,ejd->eij", c * mesh.measures, mesh.grads, mesh.grads)
    return _assemble_elementwise(mesh, mesh.elems, local, mesh.n_nodes)


# --- nonlinear heat operator --------------------------------------------------

def element_conductivity(mesh: Mesh, theta: np.ndarray, M: float, params: MaterialParams, n_quad: int = 4):
    """Element means of K_M(theta_h) and their derivatives with respect to nodal values.

    Returns ``(K_e, dK_e)`` with ``dK_e`` of shape (n_elems, d+1).
    """
    bary, w = mesh.quadrature(n_quad)
    tq = mesh.interpolate_at(theta, bary)
    K_e = truncate_conductivity(tq, M, params) @ w
    dK_e = (truncate_conductivity_prime(tq, M, params) * w[None, :]) @ bary
    return K_e, dK_e


def assemble_heat_residual(
    mesh: Mesh,
    theta_field,
    M: float,
    h,
    params: MaterialParams,
    n_quad: int = 4,
):
    """Residual and Jacobian of theta -> int K_M(theta) grad theta . grad psi - int_{dOmega} h psi.

    ``h`` is a nodal array (only boundary values matter) or a scalar, applied
    through the lumped boundary mass of the ``neumann_theta`` facets.
    """
    theta = np.asarray(theta_field, dtype=float)
    K_e, dK_e = element_conductivity(mesh, theta, M, params, n_quad)
    G = mesh.grads
    grad = mesh.element_gradient(theta)
    flux = (K_e * mesh.measures)[:, None] * grad  # (ne, d)
    loc = np.einsum("ed,eid->ei", flux, G)
    R = np.zeros(mesh.n_nodes)
    np.add.at(R, mesh.elems, loc)
    hv = np.broadcast_to(np.asarray(h, dtype=float), (mesh.n_nodes,))
    R -= mesh.boundary_weights("neumann_theta") * hv
    # d loc_i / d theta_j = K_e |e| G_i.G_j + |e| (grad.G_i) dK_e_j
    lin = np.einsum("e,eid,ejd->eij", K_e * mesh.measures, G, G)
    nonlin = np.einsum("e,ei,ej->eij", mesh.measures, np.einsum("ed,eid->ei", grad, G), dK_e)
    J = _assemble_elementwise(mesh, mesh.elems, lin + nonlin, mesh.n_nodes)
    return R, J


# --- gradient regularisation of the internal variable --------------------------

def _grad_potential(g2, p, delta, mode, order, eps_reg=0.0):
    """phi, phi'(s)/|g|-type coefficients in terms of s = |g|^2.

    order 0: phi;  order 1: a with phi'(g) = a g;  order 2: (a_reg, c) with
    Hessian a_reg I + c g g^T.
    """
    if mode == "laplacian":
        w0, wp = 1.0, delta
    else:
        w0, wp = 0.0, 1.0
    if order == 0:
        return 0.5 * w0 * g2 + wp * g2 ** (0.5 * p) / p
    if order == 1:
        return w0 + wp * g2 ** (0.5 * (p - 2.0))
    s = g2 + eps_reg
    a = w0 + wp * s ** (0.5 * (p - 2.0))
    c = wp * (p - 2.0) * s ** (0.5 * (p - 4.0)) if p != 2.0 else 0.0 * s
    return a, c


def gradient_energy(mesh: Mesh, chi, p: float, delta: float = 0.0, mode: str = "p_laplacian") -> float:
    """int |grad chi|^p / p, or int |grad chi|^2 / 2 + delta |grad chi|^p / p in Laplacian mode."""
    g = mesh.element_gradient(chi)
    return float(np.dot(mesh.measures, _grad_potential((g**2).sum(axis=1), p, delta, mode, 0)))


def assemble_gradient_flow(
    mesh: Mesh,
    chi_field,
    p: float,
    delta: float = 0.0,
    mode: str = "p_laplacian",
    eps_reg: float = 1e-12,
):
    """Residual and Jacobian of the (regularised) p-Laplacian with natural boundary conditions.

    The residual is exact; the Jacobian evaluates ``|grad chi|^(p-2)`` as
    ``(|grad chi|^2 + eps_reg)^((p-2)/2)`` to stay nonsingular where the
    gradient vanishes.
    """
    chi = np.asarray(chi_field, dtype=float)
    G = mesh.grads
    g = mesh.element_gradient(chi)
    g2 = (g**2).sum(axis=1)
    a = _grad_potential(g2, p, delta, mode, 1)
    loc = np.einsum("e,ed,eid->ei", a * mesh.measures, g, G)
    R = np.zeros(mesh.n_nodes)
    np.add.at(R, mesh.elems, loc)
    areg, c = _grad_potential(g2, p, delta, mode, 2, eps_reg)
    Gg = np.einsum("ed,eid->ei", g, G)
    local = np.einsum("e,eid,ejd->eij", areg * mesh.measures, G, G) + np.einsum(
        "e,ei,ej->eij", c * mesh.measures, Gg, Gg
    )
    J = _assemble_elementwise(mesh, mesh.elems, local, mesh.n_nodes)
    return R, J
