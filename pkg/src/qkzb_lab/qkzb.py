"""qKZB difference operators and the diagonal dressing operators.

K_j acts on vector-valued functions of the dynamical variable as an
ordered product of dynamical R-matrices around the lambda-shift operator:

    K_j = R_{j,j-1}(z_j - z_{j-1} + step) ... R_{j,1}(z_j - z_1 + step)
          * Gamma_j * R_{j,n}(z_j - z_n) ... R_{j,j+1}(z_j - z_{j+1}),

where R_{k,m}(z) carries the dynamical argument lam - 2 eta sum h^(s)
over s < m, s != k, and Gamma_j substitutes lam -> lam - 2 eta mu on
h^(j)-eigenvectors of eigenvalue mu.  The shift is realized exactly by
argument substitution, never by interpolation.
"""

from __future__ import annotations

import cmath
import math
import warnings

import numpy as np

from .errors import BranchWarning
from .rmatrix import TensorBlock, embed_pair_operator
from .types import DEFAULT_SERIES, SeriesConfig, SystemParams, WeightIndex
from .weights import admissibility, enumerate_indices, is_nonneg_integer


def zero_weight_basis(sp: SystemParams, admissible_only: bool = False,
                      tol: float = 1e-9) -> list[WeightIndex]:
    """Basis of the zero-weight block: all compositions of l into n parts.

    Requires sum(Lambda) = 2 l within ``tol``; with ``admissible_only``
    the over-filled indices (relative to integral weights) are dropped.
    """
    if sp.weight_sum_defect() > tol:
        raise ValueError(f"sum(Lambda) - 2l = {sum(sp.Lambda) - 2 * sp.l} is not zero")
    basis = enumerate_indices(sp.n, sp.l)
    if admissible_only:
        basis = [b for b in basis if not admissibility(b, sp.Lambda)]
    return basis


def _truncations(sp: SystemParams, admissible_only: bool):
    if not admissible_only:
        return None
    return tuple(round(complex(L).real) if is_nonneg_integer(L) else None for L in sp.Lambda)


class KOperator:
    """The j-th qKZB operator as a difference operator in the dynamical variable.

    ``modulus`` is the elliptic modulus of the R-matrices (tau for the
    step-p family, p for the step-tau family) and ``step`` the shift
    added to the z-arguments of the factors left of Gamma_j.  The
    operator acts through :meth:`apply`, which takes a callable
    lam -> array (dim, ...) and the evaluation point.
    """

    def __init__(self, j: int, modulus: complex, step: complex, sp: SystemParams,
                 admissible_only: bool = False, cfg: SeriesConfig = DEFAULT_SERIES,
                 shift_convention: str = "printed"):
        if not 1 <= j <= sp.n:
            raise IndexError(f"j must be in 1..{sp.n}, got {j}")
        if shift_convention not in ("printed", "all-spectators"):
            raise ValueError(f"unknown shift convention {shift_convention!r}")
        self.j = j
        self.modulus = complex(modulus)
        self.step = complex(step)
        self.sp = sp
        self.cfg = cfg
        self.admissible_only = admissible_only
        self.shift_convention = shift_convention
        self.basis = zero_weight_basis(sp, admissible_only)
        self.dim = len(self.basis)
        self._truncs = _truncations(sp, admissible_only)

    def _shift_set(self, k: int, m: int):
        # "printed": s < m, s != k (0-based transcription of the stated range);
        # "all-spectators": every s outside {k, m}, the plausible alternative.
        if self.shift_convention == "printed":
            return tuple(s for s in range(m) if s != k)
        return tuple(s for s in range(self.sp.n) if s not in (k, m))

    def _factor(self, m: int, lam: complex, with_step: bool) -> np.ndarray:
        j0 = self.j - 1
        z_arg = self.sp.z[j0] - self.sp.z[m] + (self.step if with_step else 0.0)
        return embed_pair_operator(self.basis, j0, m, lam, self.modulus, self.sp.eta,
                                   z_arg, self.sp.Lambda, self._shift_set(j0, m),
                                   self.cfg, truncations=self._truncs)

    def left_matrix(self, lam: complex) -> np.ndarray:
        """R_{j,j-1}(z_j-z_{j-1}+step) ... R_{j,1}(z_j-z_1+step) at lam.

        Descending factor order, R_{j,1} rightmost.
        """
        out = np.eye(self.dim, dtype=complex)
        for m in range(self.j - 2, -1, -1):
            out = out @ self._factor(m, lam, with_step=True)
        return out

    def right_matrix(self, lam: complex) -> np.ndarray:
        """R_{j,n}(z_j-z_n) ... R_{j,j+1}(z_j-z_{j+1}) at lam."""
        mats = [self._factor(m, lam, with_step=False) for m in range(self.sp.n - 1, self.j - 1, -1)]
        out = np.eye(self.dim, dtype=complex)
        for mat in mats:
            out = out @ mat
        return out

    def gamma_shift(self, idx: WeightIndex) -> complex:
        """Gamma_j substitution lam -> lam + shift on the basis vector idx."""
        mu = self.sp.Lambda[self.j - 1] - 2 * idx[self.j - 1]
        return -2 * self.sp.eta * mu

    def apply(self, fn, lam: complex) -> np.ndarray:
        """Evaluate (K_j f)(lam) for f given as a callable lam -> array (dim, ...).

        Distinct h^(j) eigenvalues are grouped so f is evaluated once per
        shifted argument.
        """
        shifts = {}
        for i, idx in enumerate(self.basis):
            shifts.setdefault(complex(lam + self.gamma_shift(idx)), []).append(i)
        probe = None
        rows = {}
        for lam_s, members in shifts.items():
            g = self.right_matrix(lam_s) @ np.asarray(fn(lam_s), dtype=complex)
            probe = g
            for i in members:
                rows[i] = g[i]
        stacked = np.stack([rows[i] for i in range(self.dim)], axis=0)
        return self.left_matrix(lam) @ stacked

    def matrix(self, lam: complex) -> TensorBlock:
        """K_j(lam) collapsed onto constant vectors, as a single matrix."""
        ent = self.apply(lambda _lam: np.eye(self.dim, dtype=complex), lam)
        labels = tuple(idx.coords for idx in self.basis)
        return TensorBlock(labels, labels, ent, self.sp.l)


def K_op(j: int, lam: complex, modulus: complex, step: complex, sp: SystemParams,
         admissible_only: bool = False, cfg: SeriesConfig = DEFAULT_SERIES,
         shift_convention: str = "printed") -> TensorBlock:
    """Matrix of K_j at lam on the zero-weight basis (constant-vector action)."""
    return KOperator(j, modulus, step, sp, admissible_only, cfg, shift_convention).matrix(lam)


def alpha_fn(lam: complex, eta: complex) -> complex:
    """alpha(lam, eta) = exp(-pi i lam^2 / (4 eta))."""
    return cmath.exp(-1j * math.pi * complex(lam) ** 2 / (4 * complex(eta)))


def d_diagonal(k: int, lam: complex, eta: complex, sp: SystemParams, basis) -> np.ndarray:
    """Diagonal of D_k(lam, eta; a) on ``basis`` (k is 1-based).

    On e_lbar the entry is alpha(lam - 2 eta S_k) / alpha(lam - 2 eta S_{k-1})
    times exp(pi i eta Lambda_k (sum_{m<k} Lambda_m - sum_{m>k} Lambda_m)),
    with S_k the partial sums of the h-eigenvalues Lambda_m - 2 l_m.
    """
    if not 1 <= k <= sp.n:
        raise IndexError(f"k must be in 1..{sp.n}, got {k}")
    const = cmath.exp(1j * math.pi * eta * sp.Lambda[k - 1]
                      * (sum(sp.Lambda[:k - 1]) - sum(sp.Lambda[k:])))
    out = np.empty(len(basis), dtype=complex)
    for i, idx in enumerate(basis):
        eig = [sp.Lambda[m] - 2 * idx[m] for m in range(sp.n)]
        s_k = sum(eig[:k])
        s_km1 = sum(eig[:k - 1])
        out[i] = alpha_fn(lam - 2 * eta * s_k, eta) / alpha_fn(lam - 2 * eta * s_km1, eta) * const
    return out


def D_op(k: int, lam: complex, eta: complex, sp: SystemParams,
         admissible_only: bool = False) -> TensorBlock:
    """D_k(lam, eta; a) as a diagonal TensorBlock on the zero-weight basis."""
    basis = zero_weight_basis(sp, admissible_only)
    diag = d_diagonal(k, lam, eta, sp, basis)
    labels = tuple(idx.coords for idx in basis)
    return TensorBlock(labels, labels, np.diag(diag), sp.l)


def D_total(mu: complex, p: complex, eta: complex, sp: SystemParams,
            admissible_only: bool = False, branch_guard: float = 1e-6) -> TensorBlock:
    """D(mu, p, eta; z, a) = prod_j D_j(mu, eta; a)^(z_j / p), entrywise.

    Non-integer powers use the principal logarithm of each diagonal entry;
    a BranchWarning is emitted when an entry argument comes within
    ``branch_guard`` of the cut.
    """
    basis = zero_weight_basis(sp, admissible_only)
    out = np.ones(len(basis), dtype=complex)
    for j in range(1, sp.n + 1):
        diag = d_diagonal(j, mu, eta, sp, basis)
        if np.any(np.abs(np.abs(np.angle(diag)) - math.pi) < branch_guard):
            warnings.warn(f"D_{j} diagonal entry near the principal branch cut", BranchWarning)
        out = out * np.exp((sp.z[j - 1] / p) * np.log(diag))
    labels = tuple(idx.coords for idx in basis)
    return TensorBlock(labels, labels, np.diag(out), sp.l)


def F_scalar(j: int, p: complex, eta: complex, sp: SystemParams) -> complex:
    """F_j(p, eta; z, a) = exp(2 pi i eta sum_{m != j} (z_m - z_j) Lambda_m Lambda_j / p)."""
    if not 1 <= j <= sp.n:
        raise IndexError(f"j must be in 1..{sp.n}, got {j}")
    j0 = j - 1
    s = sum((sp.z[m] - sp.z[j0]) * sp.Lambda[m] * sp.Lambda[j0]
            for m in range(sp.n) if m != j0)
    return cmath.exp(2j * math.pi * eta * s / p)


def B_op(j: int, lam: complex, p: complex, eta: complex, sp: SystemParams,
         admissible_only: bool = False) -> TensorBlock:
    """B_j(lam, p, eta; z, a) = F_j(p, eta; z, a) * D_j(lam, eta; a)."""
    d = D_op(j, lam, eta, sp, admissible_only)
    return TensorBlock(d.row_indices, d.col_indices,
                       F_scalar(j, p, eta, sp) * d.entries, d.weight_level)
