"""Elliptic weight functions and the elliptic symmetric-group action.

Index bookkeeping (compositions of l, admissibility sets), the one-point
weight, the n-point symmetrized weight function, and the collocation
matrices used to solve transition systems between weight-function bases.
Coordinates, variable slots and point labels are 0-based throughout.
"""

from __future__ import annotations

import itertools

import numpy as np

from .elliptic import theta
from .errors import IllConditioned, PoleHit
from .types import DEFAULT_SERIES, ModularParams, SeriesConfig, SystemParams, WeightIndex


def enumerate_indices(n: int, l: int) -> list[WeightIndex]:
    """All compositions of l into n nonnegative parts.

    The order (first coordinate largest first, recursively) is the
    canonical basis order for every matrix built on weight blocks:
    (n, l) = (2, 1) enumerates as (1,0), (0,1).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if l < 0:
        raise ValueError("l must be >= 0")
    out: list[WeightIndex] = []

    def rec(prefix, remaining, slots):
        if slots == 1:
            out.append(WeightIndex(tuple(prefix) + (remaining,)))
            return
        for c in range(remaining, -1, -1):
            rec(prefix + [c], remaining - c, slots - 1)

    rec([], l, n)
    return out


def is_nonneg_integer(value: complex, int_tol: float = 1e-9) -> bool:
    """True when value is within int_tol of a nonnegative integer."""
    r = round(complex(value).real)
    return r >= 0 and abs(complex(value) - r) < int_tol


def admissibility(idx: WeightIndex, Lambda, int_tol: float = 1e-9) -> frozenset[int]:
    """Set of coordinates (0-based) where the index over-fills an integral weight.

    Coordinate i is bad iff Lambda_i is a nonnegative integer and
    l_i > Lambda_i; the index is admissible iff the set is empty.
    """
    bad = set()
    for i, (li, L) in enumerate(zip(idx.coords, Lambda)):
        if is_nonneg_integer(L, int_tol) and li > round(complex(L).real):
            bad.add(i)
    return frozenset(bad)


# ---------------------------------------------------------------------------
# the elliptic action of the symmetric group


def _swap(seq, i):
    out = list(seq)
    out[i], out[i + 1] = out[i + 1], out[i]
    return out


def elliptic_action(f, word, tau: complex, eta: complex, cfg: SeriesConfig = DEFAULT_SERIES):
    """Transform f by the elliptic action along a word of simple transpositions.

    ``word`` is a sequence of 0-based generator indices i, each standing for
    the transposition (i, i+1); the rule for one generator is

        [f]_(i,i+1)(t) = f(..., t_{i+1}, t_i, ...) * theta(t_i - t_{i+1} - 2 eta)
                                                   / theta(t_i - t_{i+1} + 2 eta)

    and longer words are composed generator by generator.  The result is a
    callable of the same signature as f (one array argument of shape (l, ...)).
    """
    g = f
    for i in word:
        g = _act_generator(g, i, tau, eta, cfg)
    return g


def _act_generator(f, i: int, tau, eta, cfg):
    def g(t):
        t = np.asarray(t, dtype=complex)
        u = t[i] - t[i + 1]
        den = theta(u + 2 * eta, tau, cfg)
        if np.min(np.abs(den)) < 1e-12:
            raise PoleHit(f"elliptic action denominator theta(t_{i + 1}-t_{i + 2}+2 eta) vanished",
                          factor="action denominator")
        swapped = np.concatenate([t[:i], t[i + 1:i + 2], t[i:i + 1], t[i + 2:]], axis=0)
        return f(swapped) * theta(u - 2 * eta, tau, cfg) / den

    return g


def action_factor(perm, t, tau: complex, eta: complex, cfg: SeriesConfig = DEFAULT_SERIES):
    """Permuted argument tuple and cocycle factor of the elliptic action.

    For the permutation ``perm`` (a tuple pi of 0..l-1), the action takes
    f to f(t_{pi(0)}, ..., t_{pi(l-1)}) times theta-ratio factors, one per
    pair (i < j) whose order pi reverses.  Equivalent to composing the
    generator rule along any word realizing the rearrangement.
    """
    t = np.asarray(t, dtype=complex)
    factor = np.ones(t.shape[1:], dtype=complex)
    l = len(perm)
    for pos1 in range(l):
        for pos2 in range(pos1 + 1, l):
            i, j = perm[pos1], perm[pos2]
            if i > j:
                u = t[j] - t[i]
                den = theta(u + 2 * eta, tau, cfg)
                if np.min(np.abs(den)) < 1e-12:
                    raise PoleHit("action factor denominator vanished", factor="action denominator")
                factor = factor * theta(u - 2 * eta, tau, cfg) / den
    return t[list(perm)], factor


# ---------------------------------------------------------------------------
# weight functions


def one_point_weight(t, lam: complex, tau: complex, eta: complex, z: complex, a: complex,
                     cfg: SeriesConfig = DEFAULT_SERIES):
    """One-point weight on l variables (t has shape (l, ...)).

    prod_{i<j} theta(t_i - t_j) / theta(t_i - t_j + 2 eta)
      * prod_j theta(t_j - z - a + lam + 2 eta l) / theta(t_j - z - a).
    """
    t = np.asarray(t, dtype=complex)
    lvars = t.shape[0]
    out = np.ones(t.shape[1:], dtype=complex)
    if lvars == 0:
        return out
    for i in range(lvars):
        for j in range(i + 1, lvars):
            den = theta(t[i] - t[j] + 2 * eta, tau, cfg)
            if np.min(np.abs(den)) < 1e-12:
                raise PoleHit(f"one_point_weight pair denominator theta(t_{i + 1}-t_{j + 1}+2 eta)",
                              factor="pair denominator")
            out = out * theta(t[i] - t[j], tau, cfg) / den
    shift = lam + 2 * eta * lvars
    for j in range(lvars):
        den = theta(t[j] - z - a, tau, cfg)
        if np.min(np.abs(den)) < 1e-12:
            raise PoleHit(f"one_point_weight point denominator theta(t_{j + 1}-z-a)",
                          factor="point denominator")
        out = out * theta(t[j] - z - a + shift, tau, cfg) / den
    return out


def _bracket_product(idx: WeightIndex, t, lam: complex, sp: SystemParams, tau: complex,
                     cfg: SeriesConfig):
    """The per-group product inside the symmetrized weight-function sum.

    Group i (0-based) owns the variable slots l^i..l^{i+1}-1 and carries the
    one-point weight at lambda shifted by -2*eta*(mu_0 + ... + mu_{i-1}),
    mu_j = Lambda_j - 2 l_j, times the cross factors against all preceding
    points: prod_{m<i} prod_{s in group i} theta(t_s - z_m + a_m) / theta(t_s - z_m - a_m).
    """
    t = np.asarray(t, dtype=complex)
    eta = sp.eta
    a = sp.a
    out = np.ones(t.shape[1:], dtype=complex)
    mu = [sp.Lambda[i] - 2 * idx[i] for i in range(sp.n)]
    for i in range(sp.n):
        lo = idx.lsum(i)
        hi = idx.lsum(i + 1)
        lam_i = lam - 2 * eta * sum(mu[:i])
        out = out * one_point_weight(t[lo:hi], lam_i, tau, eta, sp.z[i], a[i], cfg)
        for m in range(i):
            for s in range(lo, hi):
                den = theta(t[s] - sp.z[m] - a[m], tau, cfg)
                if np.min(np.abs(den)) < 1e-12:
                    raise PoleHit(f"cross factor denominator theta(t_{s + 1}-z_{m + 1}-a_{m + 1})",
                                  factor="cross denominator")
                out = out * theta(t[s] - sp.z[m] + a[m], tau, cfg) / den
    return out


def weight_function(idx: WeightIndex, t, lam: complex, sp: SystemParams, tau: complex,
                    cfg: SeriesConfig = DEFAULT_SERIES):
    """Elliptic weight function w_idx(t, lam, tau, eta; z, a).

    t has shape (l, ...) with l = idx.level; the permutation sum over the
    elliptic action is enumerated explicitly (desk scale, l <= 4).  The
    modulus is the ``tau`` argument, so the same routine evaluates both
    the tau-side and the p-side weight functions.
    """
    t = np.asarray(t, dtype=complex)
    lvars = idx.level
    if t.shape[0] != lvars:
        raise ValueError(f"t has {t.shape[0]} rows, index level is {lvars}")
    if lvars == 0:
        return np.ones(t.shape[1:], dtype=complex)
    total = np.zeros(t.shape[1:], dtype=complex)
    for perm in itertools.permutations(range(lvars)):
        try:
            args, factor = action_factor(perm, t, tau, sp.eta, cfg)
            term = _bracket_product(idx, args, lam, sp, tau, cfg)
        except PoleHit as exc:
            raise PoleHit(f"weight_function term sigma={perm}: {exc}", factor=exc.factor) from exc
        total = total + term * factor
    norm = 1.0
    for li in idx.coords:
        for k in range(2, li + 1):
            norm *= k
    return total / norm


# ---------------------------------------------------------------------------
# collocation


def sample_points(lvars: int, count: int, sp: SystemParams, tau: complex, seed: int = 0,
                  reject_tol: float = 1e-3, max_draws: int = 500):
    """Deterministic sample tuples for collocation, away from pole hyperplanes.

    Draws t uniformly from [0, 1)^l with a fixed imaginary offset 0.1i per
    variable and rejects draws whose theta-denominator arguments come
    within ``reject_tol`` of the lattice Z + tau Z.
    """
    rng = np.random.default_rng(seed)
    out = np.empty((count, lvars), dtype=complex)
    got = 0
    draws = 0
    while got < count:
        if draws >= max_draws:
            raise IllConditioned("sample_points could not find pole-free samples")
        draws += 1
        cand = rng.uniform(0.0, 1.0, size=lvars) + 0.1j
        ok = True
        args = []
        for i in range(lvars):
            for j in range(i + 1, lvars):
                args.append(cand[i] - cand[j] + 2 * sp.eta)
                args.append(cand[i] - cand[j])
            for m in range(sp.n):
                args.append(cand[i] - sp.z[m] - sp.a[m])
        for x in args:
            s = round((complex(x).imag) / complex(tau).imag)
            m = round((complex(x) - s * tau).real)
            if abs(complex(x) - (m + s * tau)) < reject_tol:
                ok = False
                break
        if ok:
            out[got] = cand
            got += 1
    return out


def weight_basis_matrix(indices, t_samples, lam: complex, sp: SystemParams, tau: complex,
                        cfg: SeriesConfig = DEFAULT_SERIES):
    """Matrix of weight-function values, rows = samples, columns = indices."""
    t_samples = np.asarray(t_samples, dtype=complex)
    rows = t_samples.shape[0]
    mat = np.empty((rows, len(indices)), dtype=complex)
    for c, idx in enumerate(indices):
        mat[:, c] = weight_function(idx, t_samples.T, lam, sp, tau, cfg)
    return mat


def collocation_matrix(indices, lam: complex, sp: SystemParams, tau: complex,
                       cfg: SeriesConfig = DEFAULT_SERIES, seed: int = 0,
                       oversample: int = 2, cond_cap: float = 1e10, attempts: int = 3):
    """Sampled collocation matrix with conditioning control.

    Returns (samples, matrix); resamples up to ``attempts`` times when the
    condition number exceeds cond_cap and raises IllConditioned after that.
    """
    lvars = indices[0].level if indices else 0
    count = max(oversample * len(indices), len(indices))
    last_cond = None
    for k in range(attempts):
        samples = sample_points(lvars, count, sp, tau, seed=seed + 101 * k)
        mat = weight_basis_matrix(indices, samples, lam, sp, tau, cfg)
        cond = float(np.linalg.cond(mat))
        if cond <= cond_cap:
            return samples, mat
        last_cond = cond
    raise IllConditioned(f"collocation matrix condition {last_cond:.3e} exceeds {cond_cap:.1e}")
