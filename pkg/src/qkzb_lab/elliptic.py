"""Jacobi theta function, the two-modulus phase function, and lattice diagnostics.

The theta function used everywhere is the odd entire function

    theta(t, tau) = -sum_j exp(pi*i*(j+1/2)^2*tau + 2*pi*i*(j+1/2)*(t+1/2)),

with multipliers -1 and -exp(-2*pi*i*t - pi*i*tau) under t -> t+1 and
t -> t+tau.  The phase function Omega(t, a) is the double product over the
nomes r = exp(2*pi*i*p), q = exp(2*pi*i*tau)

    Omega(t, a) = prod_{j,k>=0} (1 - r^j q^k E(t-a)) (1 - r^{j+1} q^{k+1} / E(t+a))
                               / (1 - r^j q^k E(t+a)) / (1 - r^{j+1} q^{k+1} / E(t-a))

with E(x) = exp(2*pi*i*x).  Complex powers of the nomes are always formed
as exponentials of linear forms, never by powering q or r directly.

All evaluators broadcast over numpy arrays in the t argument.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidModulus, NonConvergent, PoleHit
from .types import DEFAULT_SERIES, ModularParams, SeriesConfig, SystemParams

TWO_PI = 2.0 * math.pi
TWO_PI_I = 2j * math.pi


def _prepare(t):
    """Coerce t to a complex array, remembering whether it was scalar."""
    arr = np.asarray(t, dtype=complex)
    return arr, arr.ndim == 0


def theta(t, tau: complex, cfg: SeriesConfig = DEFAULT_SERIES):
    """Evaluate theta(t, tau) with an adaptive symmetric summation window.

    The window half-width J is grown until the first dropped terms are
    below cfg.eps relative to the partial sum; NonConvergent is raised if
    that requires more than cfg.max_terms terms.
    """
    tau = complex(tau)
    if not tau.imag > 0:
        raise InvalidModulus(f"Im tau must be positive, got {tau}")
    arr, scalar = _prepare(t)
    flat = arr.reshape(-1)
    a_im = float(np.max(np.abs(flat.imag))) if flat.size else 0.0
    # |term| <= exp(-pi h^2 Im(tau) + 2 pi |h| max|Im t|); solve the tail bound for h.
    budget = -math.log(DEFAULT_SERIES.eps if cfg is None else cfg.eps) + 3.0
    J = int(math.ceil((a_im + math.sqrt(a_im * a_im + tau.imag * budget / math.pi)) / tau.imag)) + 2
    while True:
        if 2 * J > cfg.max_terms:
            raise NonConvergent(f"theta window 2J={2 * J} exceeds max_terms={cfg.max_terms}")
        h = np.arange(-J, J) + 0.5
        terms = np.exp(
            (1j * math.pi * tau) * (h * h)[:, None] + TWO_PI_I * h[:, None] * (flat + 0.5)[None, :]
        )
        val = -terms.sum(axis=0)
        scale = max(1.0, float(np.max(np.abs(val))) if val.size else 1.0)
        tail = max(float(np.max(np.abs(terms[0]))), float(np.max(np.abs(terms[-1])))) if val.size else 0.0
        if tail <= cfg.eps * scale:
            break
        J *= 2
    out = val.reshape(arr.shape)
    return complex(out) if scalar else out


def theta_deriv(t, tau: complex, cfg: SeriesConfig = DEFAULT_SERIES):
    """d/dt of theta(t, tau), term-by-term with the same adaptive window."""
    tau = complex(tau)
    if not tau.imag > 0:
        raise InvalidModulus(f"Im tau must be positive, got {tau}")
    arr, scalar = _prepare(t)
    flat = arr.reshape(-1)
    a_im = float(np.max(np.abs(flat.imag))) if flat.size else 0.0
    budget = -math.log(cfg.eps) + 3.0
    J = int(math.ceil((a_im + math.sqrt(a_im * a_im + tau.imag * budget / math.pi)) / tau.imag)) + 2
    while True:
        if 2 * J > cfg.max_terms:
            raise NonConvergent(f"theta window 2J={2 * J} exceeds max_terms={cfg.max_terms}")
        h = np.arange(-J, J) + 0.5
        terms = np.exp(
            (1j * math.pi * tau) * (h * h)[:, None] + TWO_PI_I * h[:, None] * (flat + 0.5)[None, :]
        )
        terms = (TWO_PI_I * h)[:, None] * terms
        val = -terms.sum(axis=0)
        scale = max(1.0, float(np.max(np.abs(val))) if val.size else 1.0)
        tail = max(float(np.max(np.abs(terms[0]))), float(np.max(np.abs(terms[-1])))) if val.size else 0.0
        if tail <= cfg.eps * scale:
            break
        J *= 2
    out = val.reshape(arr.shape)
    return complex(out) if scalar else out


def _phase_window(mp: ModularParams, max_im: float, cfg: SeriesConfig) -> tuple[int, int]:
    """Factor counts (J, K) so every dropped factor differs from 1 by < eps."""
    budget = -math.log(cfg.eps)
    J = int(math.ceil((budget + TWO_PI * max_im) / (TWO_PI * complex(mp.p).imag))) + 1
    K = int(math.ceil((budget + TWO_PI * max_im) / (TWO_PI * complex(mp.tau).imag))) + 1
    if (J + 1) * (K + 1) > cfg.max_terms:
        raise NonConvergent(f"phase product needs {(J + 1) * (K + 1)} factors, cap is {cfg.max_terms}")
    return J, K


def _phase_factors(flat, mp: ModularParams, a: complex, cfg: SeriesConfig, skip=None):
    """All four factor families of Omega on the flattened t array.

    Returns (num, den) products over the truncated (j, k) grid.  ``skip``
    names one factor to omit, as (family, j, k) with family in
    {"num1", "num2", "den1", "den2"}; used for regularized diagonal limits.
    """
    max_im = float(np.max(np.abs(flat.imag))) + abs(complex(a).imag) if flat.size else abs(complex(a).imag)
    J, K = _phase_window(mp, max_im, cfg)
    jj, kk = np.meshgrid(np.arange(J + 1), np.arange(K + 1), indexing="ij")
    lin = (jj * mp.p + kk * mp.tau).reshape(-1)
    c1 = np.exp(TWO_PI_I * lin)                          # r^j q^k
    c2 = np.exp(TWO_PI_I * (lin + mp.p + mp.tau))        # r^{j+1} q^{k+1}
    e_tm = np.exp(TWO_PI_I * (flat - a))
    e_tp = np.exp(TWO_PI_I * (flat + a))

    def family(c, e, name):
        f = 1.0 - c[:, None] * e[None, :]
        if skip is not None and skip[0] == name:
            idx = skip[1] * (K + 1) + skip[2]
            f[idx, :] = 1.0
        return f

    num = family(c1, e_tm, "num1") * family(c2, 1.0 / e_tp, "num2")
    den = family(c1, e_tp, "den1") * family(c2, 1.0 / e_tm, "den2")
    small = np.min(np.abs(den), axis=0)
    if flat.size and float(np.min(small)) < cfg.eps:
        raise PoleHit(
            f"phase denominator factor below eps={cfg.eps} at t={flat[int(np.argmin(small))]}",
            factor="phase1 denominator",
        )
    return num.prod(axis=0), den.prod(axis=0)


def phase1(t, mp: ModularParams, a: complex, cfg: SeriesConfig = DEFAULT_SERIES):
    """One-variable phase function Omega(t, tau, p; a)."""
    arr, scalar = _prepare(t)
    flat = arr.reshape(-1)
    num, den = _phase_factors(flat, mp, a, cfg)
    out = (num / den).reshape(arr.shape)
    return complex(out) if scalar else out


def phase1_deriv(t, mp: ModularParams, a: complex, cfg: SeriesConfig = DEFAULT_SERIES):
    """d/dt Omega(t, a) via per-factor product rule.

    Stable at simple zeros of the numerator (where the plain logarithmic
    derivative would be 0 * inf); denominators must stay off their poles.
    """
    arr, scalar = _prepare(t)
    flat = arr.reshape(-1)
    max_im = float(np.max(np.abs(flat.imag))) + abs(complex(a).imag) if flat.size else abs(complex(a).imag)
    J, K = _phase_window(mp, max_im, cfg)
    jj, kk = np.meshgrid(np.arange(J + 1), np.arange(K + 1), indexing="ij")
    lin = (jj * mp.p + kk * mp.tau).reshape(-1)
    c1 = np.exp(TWO_PI_I * lin)
    c2 = np.exp(TWO_PI_I * (lin + mp.p + mp.tau))
    e_tm = np.exp(TWO_PI_I * (flat - a))
    e_tp = np.exp(TWO_PI_I * (flat + a))

    # factors and t-derivatives, stacked over one factor axis
    f_num = np.concatenate([1.0 - c1[:, None] * e_tm[None, :], 1.0 - c2[:, None] / e_tp[None, :]])
    d_num = np.concatenate(
        [-TWO_PI_I * c1[:, None] * e_tm[None, :], TWO_PI_I * c2[:, None] / e_tp[None, :]]
    )
    f_den = np.concatenate([1.0 - c1[:, None] * e_tp[None, :], 1.0 - c2[:, None] / e_tm[None, :]])
    d_den = np.concatenate(
        [-TWO_PI_I * c1[:, None] * e_tp[None, :], TWO_PI_I * c2[:, None] / e_tm[None, :]]
    )
    if flat.size and float(np.min(np.abs(f_den))) < cfg.eps:
        raise PoleHit("phase denominator factor below eps in phase1_deriv", factor="phase1 denominator")

    def prod_and_deriv(f, d):
        # P = prod f_i, P' = sum_i d_i prod_{j != i} f_j  via prefix/suffix products
        pre = np.cumprod(np.vstack([np.ones((1, f.shape[1]), dtype=complex), f[:-1]]), axis=0)
        suf = np.cumprod(np.vstack([np.ones((1, f.shape[1]), dtype=complex), f[::-1][:-1]]), axis=0)[::-1]
        return pre[-1] * f[-1], np.sum(d * pre * suf, axis=0)

    n_val, n_der = prod_and_deriv(f_num, d_num)
    d_val, d_der = prod_and_deriv(f_den, d_den)
    out = ((n_der * d_val - n_val * d_der) / (d_val * d_val)).reshape(arr.shape)
    return complex(out) if scalar else out


def phase1_pair_diagonal(a: complex, mp: ModularParams, cfg: SeriesConfig = DEFAULT_SERIES) -> complex:
    """The removable-singularity limit of Omega(t, a) * Omega(-t, a) at t = a.

    Omega(t, a) has a simple zero at t = a (numerator factor 1 - E(t-a))
    and Omega(-t, a) a simple pole there (denominator factor 1 - E(a-t));
    the ratio of the two vanishing factors tends to -1, the remaining
    factors are evaluated directly.
    """
    a = complex(a)
    if abs(a) < 1e-15:
        return 1.0 + 0j
    pt = np.asarray([a], dtype=complex)
    mt = np.asarray([-a], dtype=complex)
    num1, den1 = _phase_factors(pt, mp, a, cfg, skip=("num1", 0, 0))
    num2, den2 = _phase_factors(mt, mp, a, cfg, skip=("den1", 0, 0))
    return complex(-(num1[0] / den1[0]) * (num2[0] / den2[0]))


def phase_multi(t, sp: SystemParams, mp: ModularParams, cfg: SeriesConfig = DEFAULT_SERIES):
    """l-variable phase function.

    t is an array of shape (l, ...); the result is the product of
    Omega(t_j - z_m, a_m) over all j, m and Omega(t_i - t_j, -2*eta)
    over i < j.  l = 0 gives the empty product 1.
    """
    tl = np.asarray(t, dtype=complex)
    if tl.ndim == 1:
        tl = tl[:, None]
        squeeze = True
    else:
        squeeze = False
    lvars = tl.shape[0]
    out = np.ones(tl.shape[1:], dtype=complex)
    a = sp.a
    for j in range(lvars):
        for m in range(sp.n):
            try:
                out = out * phase1(tl[j] - sp.z[m], mp, a[m], cfg)
            except PoleHit as exc:
                raise PoleHit(f"phase_multi factor Omega(t_{j + 1} - z_{m + 1}, a_{m + 1}): {exc}",
                              factor=f"Omega(t_{j + 1}-z_{m + 1})") from exc
    for i in range(lvars):
        for j in range(i + 1, lvars):
            try:
                out = out * phase1(tl[i] - tl[j], mp, -2 * sp.eta, cfg)
            except PoleHit as exc:
                raise PoleHit(f"phase_multi factor Omega(t_{i + 1} - t_{j + 1}, -2 eta): {exc}",
                              factor=f"Omega(t_{i + 1}-t_{j + 1})") from exc
    return out[..., 0] if squeeze and out.ndim else out


# ---------------------------------------------------------------------------
# bounded lattice diagnostics


@dataclass(frozen=True)
class ConditionRow:
    condition: str
    label: str
    distance: float
    violated: bool
    vacuous: bool = False

    def to_dict(self):
        return {
            "condition": self.condition,
            "label": self.label,
            "distance": self.distance,
            "violated": self.violated,
            "vacuous": self.vacuous,
        }


@dataclass(frozen=True)
class ConditionReport:
    rows: tuple[ConditionRow, ...]
    bound: int
    delta: float

    @property
    def ok(self) -> bool:
        return not any(r.violated for r in self.rows)

    def min_distance(self, condition: str) -> float:
        dists = [r.distance for r in self.rows if r.condition == condition and not r.vacuous]
        return min(dists) if dists else math.inf

    def to_dict(self):
        return {
            "bound": self.bound,
            "delta": self.delta,
            "ok": self.ok,
            "rows": [r.to_dict() for r in self.rows],
        }


def lattice_points(tau: complex, p: complex, bound: int):
    """All m + s*tau + s'*p with |m|, |s|, |s'| <= bound, plus the (s, s') mask."""
    rng = np.arange(-bound, bound + 1)
    m, s, sp_ = np.meshgrid(rng, rng, rng, indexing="ij")
    pts = m + s * tau + sp_ * p
    nontrivial = (s != 0) | (sp_ != 0)
    return pts.reshape(-1), nontrivial.reshape(-1)


def lattice_distance(x, tau: complex, p: complex, bound: int = 6) -> float:
    """Minimum distance from x to the bounded lattice {m + s tau + s' p}."""
    pts, _ = lattice_points(tau, p, bound)
    return float(np.min(np.abs(complex(x) - pts)))


def check_conditions(sp: SystemParams, mp: ModularParams, bound: int = 6, delta: float = 1e-6) -> ConditionReport:
    """Bounded-search diagnostics for the parameter genericity conditions.

    Reports, for each protected quantity (multiples of 2*eta, the shifted
    weights 2*a_k - 2*s*eta, and pairwise point separations), its minimum
    distance to the lattice Z + tau*Z + p*Z searched with coefficients up
    to ``bound``; a quantity closer than ``delta`` is flagged.  The
    Z-independence of tau and p is only checked in the same bounded sense.
    """
    pts, nontrivial = lattice_points(mp.tau, mp.p, bound)
    rows: list[ConditionRow] = []

    def dist(x) -> float:
        return float(np.min(np.abs(complex(x) - pts)))

    # sign conditions: margin is the distance to the closed half plane boundary
    for name, margin in (
        ("im", complex(mp.tau).imag),
        ("im", complex(mp.p).imag),
        ("im", -complex(mp.eta).imag),
    ):
        rows.append(ConditionRow(name, "Im tau > 0, Im p > 0, Im eta < 0", float(margin), margin <= 0))

    # bounded Z-independence of tau and p
    d_indep = float(np.min(np.abs(pts[nontrivial])))
    rows.append(ConditionRow("indep", f"s*tau + s'*p + m, coeffs <= {bound}", d_indep, d_indep < delta))

    l = max(sp.l, 1)
    max_re = max((L.real for L in sp.Lambda), default=0.0)

    # multiples of 2*eta: the Theorem-1 range s = 1..l and the sharper range
    for s in range(1, l + 1):
        d = dist(2 * sp.eta * s)
        rows.append(ConditionRow("eta", f"2*eta*{s}", d, d < delta))
    s_hi = int(math.ceil(max(2.0, max_re)))
    emitted = False
    for s in range(1, min(s_hi, sp.l + 1)):
        if s >= max(2.0, max_re) or s > sp.l:
            continue
        d = dist(2 * sp.eta * s)
        rows.append(ConditionRow("eta1", f"2*eta*{s}", d, d < delta))
        emitted = True
    if not emitted:
        rows.append(ConditionRow("eta1", "no constraints", math.inf, False, vacuous=True))

    a = sp.a
    for k in range(sp.n):
        for s in range(1 - l, l):
            d = dist(2 * a[k] + 2 * s * sp.eta)
            rows.append(ConditionRow("a", f"2*a_{k + 1} + 2*eta*{s}", d, d < delta))
    emitted = False
    for k in range(sp.n):
        for s in range(1, l):
            if s >= max_re:
                continue
            d = dist(2 * a[k] - 2 * s * sp.eta)
            rows.append(ConditionRow("a1", f"2*a_{k + 1} - 2*eta*{s}", d, d < delta))
            emitted = True
    if not emitted:
        rows.append(ConditionRow("a1", "no constraints", math.inf, False, vacuous=True))

    if sp.n == 1:
        rows.append(ConditionRow("z", "no constraints (n = 1)", math.inf, False, vacuous=True))
        rows.append(ConditionRow("z1", "no constraints (n = 1)", math.inf, False, vacuous=True))
    else:
        for k in range(sp.n):
            for m in range(sp.n):
                if m == k:
                    continue
                for s in range(1 - l, l):
                    for s1 in (+1, -1):
                        for s2 in (+1, -1):
                            x = sp.z[k] + s1 * a[k] - sp.z[m] + s2 * a[m] + 2 * s * sp.eta
                            d = dist(x)
                            rows.append(
                                ConditionRow("z", f"z_{k + 1}{'+' if s1 > 0 else '-'}a_{k + 1}"
                                                  f"-z_{m + 1}{'+' if s2 > 0 else '-'}a_{m + 1}+2*eta*{s}",
                                             d, d < delta))
                for s in range(1 - l, l):
                    for sgn in (+1, -1):
                        x = sp.z[k] - sp.z[m] + sgn * (a[k] + a[m]) + 2 * s * sp.eta
                        d = dist(x)
                        rows.append(
                            ConditionRow("z1", f"z_{k + 1}-z_{m + 1}{'+' if sgn > 0 else '-'}(a_{k + 1}+a_{m + 1})"
                                               f"+2*eta*{s}", d, d < delta))
    return ConditionReport(tuple(rows), bound, delta)
