"""Constitutive functions: conductivity, truncations, damage coefficients, potential.

All functions are vectorised over numpy arrays and pure.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

A_CHOICES = ("damage", "phase", "constant", "quadratic")
B_CHOICES = ("damage", "phase", "constant", "quadratic")
GRADIENT_MODES = ("p_laplacian", "laplacian")


class ParameterError(ValueError):
    """Raised for parameter blocks violating the structural hypotheses."""


class DomainError(ValueError):
    """Raised when a function is evaluated outside its domain."""


def smooth_positive_part(x, width):
    """C^1 convex regularisation of max(x, 0) over the band [-width/2, width/2]."""
    x = np.asarray(x, dtype=float)
    h = 0.5 * width
    inner = (x + h) ** 2 / (2.0 * width)
    return np.where(x <= -h, 0.0, np.where(x >= h, x, inner))


def _smooth_positive_part_d1(x, width):
    x = np.asarray(x, dtype=float)
    h = 0.5 * width
    return np.where(x <= -h, 0.0, np.where(x >= h, 1.0, (x + h) / width))


def _smooth_positive_part_d2(x, width):
    x = np.asarray(x, dtype=float)
    h = 0.5 * width
    return np.where((x > -h) & (x < h), 1.0 / width, 0.0)


@dataclass(frozen=True)
class MaterialParams:
    """Material constants and coefficient choices.

    The elastic tensor is isotropic with Lame constants ``lame_lambda`` and
    ``lame_mu``; in one dimension it reduces to the scalar modulus
    ``lame_lambda + 2 * lame_mu``.  The viscosity tensor is ``omega`` times the
    elastic one.  ``gradient_mode='laplacian'`` selects the regularised
    operator ``-Laplace(chi) - delta * p-Laplace(chi)``; in ``'p_laplacian'``
    mode only the p-Laplacian acts and ``delta`` is unused.
    """

    kappa: float = 2.0
    c0: float = 1.0
    c1: float | None = None
    c2: float = 0.1
    rho: float = 0.5
    omega: float = 1.0
    p_exponent: float = 2.0
    delta: float = 0.0
    mu_flag: int = 1
    theta_star: float = 0.1
    lame_lambda: float = 1.0
    lame_mu: float = 1.0
    a_choice: str = "damage"
    b_choice: str = "damage"
    gradient_mode: str = "p_laplacian"
    smoothing_width: float = 1e-3
    conductivity_law: str = "power"

    @property
    def c1_value(self) -> float:
        return self.c0 if self.c1 is None else self.c1

    def validate(self, dim: int = 1, kappa_upper: bool = False) -> list[str]:
        """Return human-readable violations (empty list when admissible)."""
        errs = []
        if self.conductivity_law not in ("power", "constant"):
            errs.append(f"conductivity_law must be 'power' or 'constant', got {self.conductivity_law!r}")
        if self.conductivity_law == "power" and not self.kappa > 1.0:
            errs.append(f"conductivity growth: kappa > 1 required, got {self.kappa}")
        if kappa_upper:
            bound = 2.0 if dim <= 2 else 5.0 / 3.0
            if not self.kappa < bound:
                errs.append(f"conductivity growth cap: kappa < {bound} required, got {self.kappa}")
        if not self.c0 > 0:
            errs.append(f"conductivity bounds: c0 > 0 required, got {self.c0}")
        if self.c1_value < self.c0:
            errs.append("conductivity bounds: c1 >= c0 required")
        if not self.c2 > 0:
            errs.append(f"coefficient floor: c2 > 0 required, got {self.c2}")
        if not self.omega > 0:
            errs.append(f"viscosity: omega > 0 required, got {self.omega}")
        if self.mu_flag not in (0, 1):
            errs.append(f"mu_flag must be 0 or 1, got {self.mu_flag}")
        if not self.theta_star > 0:
            errs.append(f"theta_star > 0 required, got {self.theta_star}")
        if self.delta < 0:
            errs.append(f"delta >= 0 required, got {self.delta}")
        if self.p_exponent < 2:
            errs.append(f"p >= 2 required, got {self.p_exponent}")
        if self.gradient_mode not in GRADIENT_MODES:
            errs.append(f"gradient_mode must be one of {GRADIENT_MODES}")
        elif self.gradient_mode == "p_laplacian" and not self.p_exponent > dim:
            errs.append(f"p > d required for the p-Laplacian, got p={self.p_exponent}, d={dim}")
        if self.a_choice not in A_CHOICES or self.b_choice not in B_CHOICES:
            errs.append(f"a_choice/b_choice must be in {A_CHOICES}")
            return errs
        if self.lame_mu <= 0 or self.lame_lambda + 2.0 * self.lame_mu / max(dim, 1) <= 0:
            errs.append("elastic tensor must be positive definite (mu > 0, lambda + 2 mu / d > 0)")
        grid = np.linspace(-2.0, 3.0, 501)
        if np.min(self.a(grid)) < self.c2 * (1 - 1e-12) or np.min(self.b(grid)) < self.c2 * (1 - 1e-12):
            errs.append("coefficient floor: a, b >= c2 violated on [-2, 3]")
        if np.min(np.diff(self.b(grid), 2)) < -1e-12:
            errs.append("coefficient convexity: b must be convex")
        if self.gradient_mode == "laplacian":
            if self.mu_flag != 1:
                errs.append("Laplacian gradient mode requires mu_flag = 1")
            # the internal variable stays in [0, 1] in this mode
            if np.min(self.b_prime(np.linspace(0.0, 1.0, 201))) < 0:
                errs.append("Laplacian gradient mode requires b' >= 0 on [0, 1]")
        return errs

    # --- conductivity ---------------------------------------------------------
    def K(self, theta):
        t = np.abs(np.asarray(theta, dtype=float))
        if self.conductivity_law == "constant":
            return np.full_like(t, self.c0)
        return self.c0 * (1.0 + t**self.kappa)

    def K_prime(self, theta):
        theta = np.asarray(theta, dtype=float)
        if self.conductivity_law == "constant":
            return np.zeros_like(theta)
        t = np.abs(theta)
        return np.sign(theta) * self.c0 * self.kappa * t ** (self.kappa - 1.0)

    # --- damage coefficients --------------------------------------------------
    def _coef(self, choice, chi, order):
        w = self.smoothing_width
        chi = np.asarray(chi, dtype=float)
        if choice == "constant":
            return np.full_like(chi, 1.0) if order == 0 else np.zeros_like(chi)
        if choice == "quadratic":
            return (self.c2 + 0.5 * chi**2, chi, np.ones_like(chi))[order]
        if choice == "damage":
            fn = (smooth_positive_part, _smooth_positive_part_d1, _smooth_positive_part_d2)[order]
            return (self.c2 if order == 0 else 0.0) + fn(chi, w)
        raise ParameterError(f"unknown coefficient choice {choice!r}")

    def a(self, chi):
        if self.a_choice == "phase":
            return self.c2 + smooth_positive_part(1.0 - np.asarray(chi, dtype=float), self.smoothing_width)
        return self._coef(self.a_choice, chi, 0)

    def b(self, chi):
        if self.b_choice == "phase":
            return self.c2 + smooth_positive_part(chi, self.smoothing_width)
        return self._coef(self.b_choice, chi, 0)

    def b_prime(self, chi):
        if self.b_choice == "phase":
            return _smooth_positive_part_d1(chi, self.smoothing_width)
        return self._coef(self.b_choice, chi, 1)

    def b_second(self, chi):
        if self.b_choice == "phase":
            return _smooth_positive_part_d2(chi, self.smoothing_width)
        return self._coef(self.b_choice, chi, 2)

    # --- elasticity -----------------------------------------------------------
    def elastic_matrix(self, dim: int) -> np.ndarray:
        """Voigt matrix of the elastic tensor (engineering shear strain in 2D)."""
        lam, mu = self.lame_lambda, self.lame_mu
        if dim == 1:
            return np.array([[lam + 2.0 * mu]])
        return np.array([[lam + 2.0 * mu, lam, 0.0], [lam, lam + 2.0 * mu, 0.0], [0.0, 0.0, mu]])

    def bulk_like_modulus(self, dim: int) -> float:
        """Largest m with eps:E eps >= m (tr eps)^2 for symmetric eps."""
        return self.lame_lambda + 2.0 * self.lame_mu / dim


@dataclass(frozen=True)
class PotentialW:
    """Mixing potential W = beta_hat + gamma_hat.

    ``gamma_kind``: ``'double_well'`` (scale * chi^2 (chi-1)^2), ``'quadratic'``
    (scale * chi^2 / 2) or ``'zero'``.  ``beta_kind``: ``'indicator'`` of
    [0, inf), ``'none'``, or ``'penalty'`` (penalty/2 * min(chi, 0)^2).
    """

    gamma_kind: str = "double_well"
    gamma_scale: float = 1.0
    beta_kind: str = "indicator"
    beta_penalty: float = 100.0
    _lambda: float = field(default=-1.0, repr=False, compare=False)

    def validate(self, mu_flag: int) -> list[str]:
        errs = []
        if self.gamma_kind not in ("double_well", "quadratic", "zero"):
            errs.append(f"unknown gamma_kind {self.gamma_kind!r}")
        if self.beta_kind not in ("indicator", "none", "penalty"):
            errs.append(f"unknown beta_kind {self.beta_kind!r}")
        if mu_flag == 1 and self.beta_kind != "indicator":
            errs.append("irreversibility constraint: mu = 1 requires beta_hat = indicator of [0, inf)")
        if self.gamma_scale < 0:
            errs.append("gamma_scale must be >= 0")
        if self.beta_kind == "penalty" and self.beta_penalty <= 0:
            errs.append("beta_penalty must be > 0")
        return errs

    def gamma_hat(self, chi):
        chi = np.asarray(chi, dtype=float)
        s = self.gamma_scale
        if self.gamma_kind == "double_well":
            return s * chi**2 * (chi - 1.0) ** 2
        if self.gamma_kind == "quadratic":
            return 0.5 * s * chi**2
        return np.zeros_like(chi)

    def gamma(self, chi):
        chi = np.asarray(chi, dtype=float)
        s = self.gamma_scale
        if self.gamma_kind == "double_well":
            return s * 2.0 * chi * (chi - 1.0) * (2.0 * chi - 1.0)
        if self.gamma_kind == "quadratic":
            return s * chi
        return np.zeros_like(chi)

    def gamma_prime(self, chi):
        chi = np.asarray(chi, dtype=float)
        s = self.gamma_scale
        if self.gamma_kind == "double_well":
            return s * (12.0 * chi**2 - 12.0 * chi + 2.0)
        if self.gamma_kind == "quadratic":
            return np.full_like(chi, s)
        return np.zeros_like(chi)

    @property
    def lambda_conv(self) -> float:
        """max(0, -min gamma_hat'') over [-1, 2]."""
        grid = np.linspace(-1.0, 2.0, 3001)
        return float(max(0.0, -np.min(self.gamma_prime(grid))))

    def lipschitz_gamma(self, lo: float, hi: float) -> float:
        """Lipschitz constant of gamma on [lo, hi] (sampled)."""
        grid = np.linspace(lo, hi, 2001)
        return float(np.max(np.abs(self.gamma_prime(grid))))

    def lower_bound(self) -> float:
        """c_W: lower bound of W on dom(beta_hat), sampled on [-2, 3]."""
        grid = np.linspace(-2.0, 3.0, 5001)
        feas = self.feasible(grid)
        return float(np.min(self.beta_hat(grid[feas]) + self.gamma_hat(grid[feas])))

    def feasible(self, chi):
        chi = np.asarray(chi, dtype=float)
        if self.beta_kind == "indicator":
            return chi >= 0.0
        return np.ones(chi.shape, dtype=bool)

    def beta_hat(self, chi):
        """Finite part of beta_hat (the indicator contributes 0 on its domain)."""
        chi = np.asarray(chi, dtype=float)
        if self.beta_kind == "penalty":
            return 0.5 * self.beta_penalty * np.minimum(chi, 0.0) ** 2
        return np.zeros_like(chi)

    def beta(self, chi):
        """Single-valued part of the subdifferential for the smooth beta choices."""
        chi = np.asarray(chi, dtype=float)
        if self.beta_kind == "penalty":
            return self.beta_penalty * np.minimum(chi, 0.0)
        return np.zeros_like(chi)

    def beta_prime(self, chi):
        chi = np.asarray(chi, dtype=float)
        if self.beta_kind == "penalty":
            return np.where(chi < 0.0, self.beta_penalty, 0.0)
        return np.zeros_like(chi)

    @property
    def lower_bound_chi(self) -> float:
        return 0.0 if self.beta_kind == "indicator" else -np.inf


def heat_conductivity(theta, params: MaterialParams):
    """K(theta) = c0 (1 + theta^kappa) for theta >= 0."""
    theta = np.asarray(theta, dtype=float)
    if np.any(theta < 0):
        raise DomainError("heat_conductivity called with negative temperature")
    return params.K(theta)


def conductivity_primitive(theta, params: MaterialParams):
    """Primitive of K vanishing at 0."""
    theta = np.asarray(theta, dtype=float)
    if np.any(theta < 0):
        raise DomainError("conductivity_primitive called with negative temperature")
    if params.conductivity_law == "constant":
        return params.c0 * theta
    k = params.kappa
    return params.c0 * (theta + theta ** (k + 1.0) / (k + 1.0))


def truncate_value(theta, M: float):
    """Clamp to [-M, M]."""
    return np.clip(theta, -M, M)


def truncate_conductivity(theta, M: float, params: MaterialParams):
    """K evaluated at the clamped argument; bounded by K(M) and below by c0."""
    return params.K(truncate_value(np.asarray(theta, dtype=float), M))


def truncate_conductivity_prime(theta, M: float, params: MaterialParams):
    theta = np.asarray(theta, dtype=float)
    return np.where(np.abs(theta) <= M, params.K_prime(theta), 0.0)


def yosida_alpha(r, nu: float):
    """Yosida approximation of the subdifferential of the indicator of (-inf, 0]."""
    if not nu > 0:
        raise ParameterError(f"Yosida parameter must be positive, got {nu}")
    return np.maximum(np.asarray(r, dtype=float), 0.0) / nu


def yosida_alpha_hat(r, nu: float):
    """Moreau envelope of the indicator of (-inf, 0]; its derivative is yosida_alpha."""
    if not nu > 0:
        raise ParameterError(f"Yosida parameter must be positive, got {nu}")
    return np.maximum(np.asarray(r, dtype=float), 0.0) ** 2 / (2.0 * nu)


def eval_potential(chi, pot: PotentialW):
    """Return (W(chi), gamma(chi), feasible) with W = inf where infeasible."""
    chi = np.asarray(chi, dtype=float)
    feas = pot.feasible(chi)
    value = np.where(feas, pot.beta_hat(chi) + pot.gamma_hat(chi), np.inf)
    if value.ndim == 0:
        return float(value), float(pot.gamma(chi)), bool(feas)
    return value, pot.gamma(chi), feas
