"""q-hypergeometric integrals, solution tensors, and their identities.

The integrand is N-periodic and meromorphic with first-order poles on the
hyperplanes  t_i - z_k = +-(a_k + r p + s tau) + m  and
t_i - t_j = +-(2 eta - r p - s tau) + m.  Values are defined on the
contour class continued from the dominance regime where the plain torus
converges: every "+" point column lies above the contour, every "-"
column below, and the pair hyperplanes keep the sign of Im(t_i - t_j).

That class is generally not realizable by a constant-offset torus once
weights have positive real part, so the integral is computed as the
offset-torus quadrature plus explicit residue corrections ("wraps") for
each column sitting on the wrong side of its line, iterated (variable 0
innermost) for the double corrections that arise in two dimensions.  The
computed value is then independent of the chosen offsets even across
column crossings, which the test suite exercises directly.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field

import numpy as np

from .elliptic import phase1, phase1_deriv, phase1_pair_diagonal, phase_multi, theta, theta_deriv
from .errors import DivergentEntry, NotConverged, PlanInfeasible, QkzbError
from .qkzb import KOperator, d_diagonal, zero_weight_basis
from .types import DEFAULT_SERIES, ModularParams, SeriesConfig, SystemParams, WeightIndex
from .weights import admissibility, enumerate_indices, weight_function

TWO_PI_I = 2j * math.pi


# ---------------------------------------------------------------------------
# xi functions


@dataclass(frozen=True)
class XiSpec:
    """Periodic weight ascribed to the dynamical variables in the integrand.

    kind "constant" is identically 1 (periodic with every period);
    kind "exponential" is exp(2 pi i k x / (4 eta N)) with integer k,
    which is 4*eta*N-periodic by construction.
    """

    kind: str = "constant"
    k: int = 1
    eta: complex = 0.0
    N: int = 1

    def __post_init__(self):
        if self.kind not in ("constant", "exponential"):
            raise ValueError(f"unknown xi kind {self.kind!r}")
        if self.kind == "exponential" and self.N < 1:
            raise ValueError("exponential xi needs N >= 1")

    def __call__(self, x):
        if self.kind == "constant":
            x = np.asarray(x)
            return np.ones(x.shape, dtype=complex) if x.ndim else 1.0 + 0j
        return np.exp(TWO_PI_I * self.k * np.asarray(x, dtype=complex) / (4 * self.eta * self.N))

    def verify_period(self, eta: complex, N: int, tol: float = 1e-12, points: int = 10) -> float:
        """Largest relative defect of xi(x + 4 eta N) = xi(x) over sample points."""
        rng = np.random.default_rng(3)
        xs = rng.uniform(-1, 1, points) + 1j * rng.uniform(-0.3, 0.3, points)
        base = np.asarray(self(xs))
        shift = np.asarray(self(xs + 4 * eta * N))
        worst = float(np.max(np.abs(shift - base) / np.maximum(np.abs(base), 1e-300)))
        if worst > tol:
            raise QkzbError(f"xi fails 4*eta*N periodicity: defect {worst:.3e}")
        return worst

    def is_2a_periodic(self, sp: SystemParams, tol: float = 1e-10) -> bool:
        """Whether xi is 2*a_l-periodic for every point l (needed for z_j -> z_j + 1)."""
        if self.kind == "constant":
            return True
        for a in sp.a:
            ratio = cmath.exp(TWO_PI_I * self.k * 2 * a / (4 * self.eta * self.N))
            if abs(ratio - 1) > tol:
                return False
        return True


# ---------------------------------------------------------------------------
# contour planning


@dataclass(frozen=True)
class IntegrationPlan:
    """Offset-torus description: domain [0, N)^l, M nodes per dimension,
    constant imaginary offsets per variable, and the clearance every node
    keeps from the pole hyperplanes."""

    N: int
    M: int
    offsets: tuple[float, ...]
    pole_clearance: float
    quad_tol: float = 1e-6

    def __post_init__(self):
        if self.M < 8:
            raise ValueError("M must be at least 8")
        if self.N < 1:
            raise ValueError("N must be at least 1")


@dataclass(frozen=True)
class _Column:
    """One pole column of the integrand in a single t variable."""

    position: complex
    required_above: bool  # True: contour must pass below (column above it)
    label: str


def _point_columns(sp: SystemParams, mp: ModularParams, lo: float, hi: float) -> list[_Column]:
    """Point columns z_k +- (a_k + r p + s tau) with Im in [lo, hi]."""
    cols = []
    imp = complex(mp.p).imag
    imt = complex(mp.tau).imag
    for k in range(sp.n):
        for sign, req in ((+1, True), (-1, False)):
            base = sp.z[k] + sign * sp.a[k]
            rmax = int(math.ceil((hi - lo) / imp)) + 2
            smax = int(math.ceil((hi - lo) / imt)) + 2
            for r in range(rmax + 1):
                for s in range(smax + 1):
                    pos = base + sign * (r * mp.p + s * mp.tau)
                    if lo <= pos.imag <= hi:
                        cols.append(_Column(pos, req,
                                            f"z{k + 1}{'+' if sign > 0 else '-'}(a{k + 1}+{r}p+{s}tau)"))
    return cols


def _pair_levels(sp: SystemParams, mp: ModularParams, span: float) -> list[float]:
    """Im levels of the pair hyperplanes +-(2 eta - r p - s tau) within span."""
    levels = []
    imp = complex(mp.p).imag
    imt = complex(mp.tau).imag
    base = 2 * complex(sp.eta).imag
    r = 0
    while base - r * imp >= -span - imp:
        s = 0
        while base - r * imp - s * imt >= -span - imt:
            lv = base - r * imp - s * imt
            if abs(lv) <= span:
                levels.extend([lv, -lv])
            s += 1
        r += 1
    return levels


def plan_contour(sp: SystemParams, mp: ModularParams, lvars: int, N: int = 1, M: int = 64,
                 pole_clearance: float = 0.03, extra_margin: float = 0.0,
                 quad_tol: float = 1e-6, window: float = 0.45) -> IntegrationPlan:
    """Search constant imaginary offsets clearing all pole columns.

    Offsets are scanned on a grid over [-window, window] * Im(tau), equal
    for all variables (pairwise differences stay inside the first pair
    gap).  The best-clearing offset is kept; PlanInfeasible is raised when
    nothing clears ``pole_clearance + extra_margin``.
    """
    if lvars == 0:
        return IntegrationPlan(N, M, (), pole_clearance, quad_tol)
    imt = complex(mp.tau).imag
    need = pole_clearance + extra_margin
    if lvars > 1:
        gap = 2 * abs(complex(sp.eta).imag)
        if gap < need:
            raise PlanInfeasible(f"pair hyperplane gap {gap:.4f} below clearance {need:.4f}")
    lo, hi = -window * imt, window * imt
    cols = _point_columns(sp, mp, lo - 0.2, hi + 0.2)
    if not cols:
        offsets = (0.0,) * lvars
        return IntegrationPlan(N, M, offsets, pole_clearance, quad_tol)
    ims = np.array([c.position.imag for c in cols])
    grid = np.linspace(lo, hi, 361)
    dists = np.min(np.abs(grid[:, None] - ims[None, :]), axis=1)
    best = int(np.argmax(dists))
    if dists[best] < need:
        raise PlanInfeasible(
            f"no offset in [{lo:.3f}, {hi:.3f}] clears {need:.4f}; best {dists[best]:.4f}")
    c = float(grid[best])
    return IntegrationPlan(N, M, (c,) * lvars, pole_clearance, quad_tol)


# ---------------------------------------------------------------------------
# the integrand


def integrand(t, lbar: WeightIndex, mbar: WeightIndex, lam: complex, mu: complex,
              sp: SystemParams, mp: ModularParams, xi: XiSpec,
              cfg: SeriesConfig = DEFAULT_SERIES):
    """xi factor * l-variable phase * tau-side weight * p-side weight.

    t has shape (l, ...); the second weight function runs on the modulus p.
    """
    t = np.asarray(t, dtype=complex)
    arg = mp.p * lam + mp.tau * mu - 2 * sum(a * z for a, z in zip(sp.a, sp.z))
    if t.shape[0]:
        arg = arg + 4 * sp.eta * t.sum(axis=0)
    out = np.asarray(xi(arg), dtype=complex)
    out = out * phase_multi(t, sp, mp, cfg)
    out = out * weight_function(lbar, t, lam, sp, mp.tau, cfg)
    out = out * weight_function(mbar, t, mu, sp, mp.p, cfg)
    return out


# ---------------------------------------------------------------------------
# wraps: residue corrections restoring the continued contour class


def _missided_point_columns(sp, mp, c: float, clearance: float) -> list[tuple[complex, float, str]]:
    """Columns on the wrong side of the line Im t = c, with correction signs.

    Returns (position, sign, label): sign +1 for a column required above
    the contour but lying below it, -1 for the mirror case.
    """
    imp = complex(mp.p).imag
    imt = complex(mp.tau).imag
    out = []
    for k in range(sp.n):
        base = sp.z[k] + sp.a[k]
        r = 0
        while (base + r * mp.p).imag < c + imp:
            s = 0
            while True:
                pos = base + r * mp.p + s * mp.tau
                if pos.imag >= c:
                    break
                if c - pos.imag < clearance:
                    raise PlanInfeasible(f"column {pos} within clearance of offset {c}")
                out.append((pos, +1.0, f"z{k + 1}+(a{k + 1}+{r}p+{s}tau)"))
                s += 1
            r += 1
        base = sp.z[k] - sp.a[k]
        r = 0
        while (base - r * mp.p).imag > c - imp:
            s = 0
            while True:
                pos = base - r * mp.p - s * mp.tau
                if pos.imag <= c:
                    break
                if pos.imag - c < clearance:
                    raise PlanInfeasible(f"column {pos} within clearance of offset {c}")
                out.append((pos, -1.0, f"z{k + 1}-(a{k + 1}+{r}p+{s}tau)"))
                s += 1
            r += 1
    return out


def _pair_offset_family(sp, mp, span: float = 1.2):
    """The pair-hyperplane offsets +-(2 eta - r p - s tau) with |Im| <= span."""
    out = []
    imp = complex(mp.p).imag
    imt = complex(mp.tau).imag
    rmax = int(math.ceil(span / imp)) + 1
    smax = int(math.ceil(span / imt)) + 1
    for r in range(rmax + 1):
        for s in range(smax + 1):
            d = 2 * sp.eta - r * mp.p - s * mp.tau
            if abs(d.imag) <= span + imt:
                out.append((+1, d, r, s))
                out.append((-1, -d, r, s))
    return out


def _induced_pair_wraps(pin: complex, pinned_is_lower: bool, sp, mp,
                        c_other: float, clearance: float):
    """Mis-sided pair poles induced in the free variable by a pinned one.

    For the plane t_lower - t_upper = +-(2 eta - r p - s tau) + m, returns
    (offset, sign, label) with the pole at pinned-value + offset; the free
    variable's residue circle must ride the pinned value.
    """
    out = []
    for plane_sign, d, r, s in _pair_offset_family(sp, mp):
        if plane_sign < 0:
            continue  # both orientations handled through the +- branches below
        for branch in (+1, -1):
            # plane: t_lower - t_upper = branch * d (+ integer)
            if pinned_is_lower:
                off = -branch * d
                required_above = branch > 0
            else:
                off = branch * d
                required_above = branch < 0
            pos_im = pin.imag + off.imag
            missided = (required_above and pos_im < c_other) or \
                       (not required_above and pos_im > c_other)
            if not missided:
                continue
            if abs(pos_im - c_other) < clearance:
                raise PlanInfeasible(
                    f"induced pair pole at Im {pos_im:.4f} within clearance of line {c_other:.4f}")
            sign = +1.0 if required_above else -1.0
            out.append((off, sign, f"pair{'+' if branch > 0 else '-'}({r}p+{s}tau)"))
    return out


def _point_positions_near(center: complex, sp, mp, span: float = 1.1):
    pos = []
    for col in _point_columns(sp, mp, center.imag - span, center.imag + span):
        base = col.position
        m0 = round((center - base).real)
        for m in (m0 - 1, m0, m0 + 1):
            pos.append(base + m)
    return pos


def _min_distance(center: complex, positions, floor: float = 1e-14) -> float:
    dists = [abs(center - p) for p in positions if abs(center - p) > floor]
    return min(dists) if dists else math.inf


def _guard_radius(rad: float, where) -> float:
    if not rad > 1e-7:
        raise PlanInfeasible(f"residue circle at {where} pinched (radius {rad:.2e})")
    return min(rad, 0.3)


def _radius_line_context(center: complex, sp, mp, other_line_offsets) -> float:
    """Circle radius at a point column with the other variables on lines.

    Keeps clear of neighboring point columns, the integer translates of
    its own column, and the moving pair poles attached to each line.
    """
    cands = [_min_distance(center, _point_positions_near(center, sp, mp)), 1.0]
    for c_o in other_line_offsets:
        for _sgn, d, _r, _s in _pair_offset_family(sp, mp):
            cands.append(abs(center.imag - (c_o + d.imag)))
    return _guard_radius(0.4 * min(cands), center)


def _radius_pinned_context(center: complex, sp, mp, pins) -> float:
    """Circle radius at a point column with other variables pinned.

    ``pins`` holds (value, radius) of the other circles; their co-moving
    pair poles shrink the admissible radius accordingly.
    """
    cands = [_min_distance(center, _point_positions_near(center, sp, mp)), 1.0]
    for value, rad_o in pins:
        for _sgn, d, _r, _s in _pair_offset_family(sp, mp):
            p0 = value + d
            m0 = round((center - p0).real)
            for m in (m0 - 1, m0, m0 + 1):
                dd = abs(center - (p0 + m)) - rad_o
                if dd > 1e-14:
                    cands.append(dd)
                elif abs(center - (p0 + m)) > 1e-14:
                    raise PlanInfeasible(f"pair pole overlaps residue circle at {center}")
    return _guard_radius(0.4 * min(cands), center)


def _radius_comoving(offset: complex, base_center: complex, base_rad: float, sp, mp) -> float:
    """Radius for a circle riding a pinned variable at ``offset`` from it."""
    cands = [1.0]
    for _sgn, d, _r, _s in _pair_offset_family(sp, mp):
        m0 = round((offset - d).real)
        for m in (m0 - 1, m0, m0 + 1):
            sep = abs(offset - (d + m))
            if sep > 1e-14:
                cands.append(sep)
    for p in _point_positions_near(base_center + offset, sp, mp):
        dd = abs(base_center + offset - p) - base_rad
        if dd > 1e-14:
            cands.append(dd)
    return _guard_radius(0.4 * min(cands), f"offset {offset}")


def _circle_nodes(center: complex, radius: float, K: int):
    th = np.exp(TWO_PI_I * np.arange(K) / K)
    return center + radius * th, th


# ---------------------------------------------------------------------------
# the integral


@dataclass
class IntegralValue:
    value: complex
    error: float

    def __iter__(self):
        return iter((self.value, self.error))


def _line_nodes(plan: IntegrationPlan):
    return plan.N * np.arange(plan.M) / plan.M


def _halved(total_axis_sums: np.ndarray):
    """Full-grid and stride-2 sums along every axis of a value grid."""
    full = total_axis_sums.sum()
    sub = total_axis_sums
    for ax in range(total_axis_sums.ndim):
        sub = np.take(sub, np.arange(0, sub.shape[ax], 2), axis=ax)
    return full, sub.sum()


def integral(lbar: WeightIndex, mbar: WeightIndex, lam: complex, mu: complex,
             sp: SystemParams, mp: ModularParams, xi: XiSpec, plan: IntegrationPlan,
             cfg: SeriesConfig = DEFAULT_SERIES, res_nodes: int = 32) -> IntegralValue:
    """Hypergeometric integral on the continued contour class.

    Offset-torus quadrature (spectrally accurate rectangle rule for the
    periodic analytic integrand) plus residue wrap corrections; the error
    estimate combines the M-vs-M/2 grid defect with the K-vs-K/2 defect
    of every residue circle.  NotConverged is raised when the estimate
    exceeds plan.quad_tol relative to the value.
    """
    lvars = lbar.level
    if mbar.level != lvars:
        raise ValueError("row and column indices must have equal level")
    if lvars > 2:
        raise PlanInfeasible("wrapped contours implemented for l <= 2 only")

    def X(t):
        return integrand(t, lbar, mbar, lam, mu, sp, mp, xi, cfg)

    if lvars == 0:
        val = complex(np.asarray(X(np.zeros((0, 1), dtype=complex)))[0])
        return IntegralValue(val, 0.0)

    nodes = _line_nodes(plan)
    weight = plan.N / plan.M
    total = 0.0 + 0j
    err = 0.0
    K = res_nodes

    def window_copies(pos):
        base = pos - math.floor(pos.real)
        return [base + m for m in range(plan.N)]

    if lvars == 1:
        c = plan.offsets[0]
        grid = (nodes + 1j * c)[None, :]
        vals = X(grid)
        full, half = vals.sum(), vals[::2].sum()
        total += weight * full
        err += abs(weight * full - 2 * weight * half)
        for pos, sign, _label in _missided_point_columns(sp, mp, c, plan.pole_clearance):
            for center in window_copies(pos):
                rad = _radius_line_context(center, sp, mp, ())
                cn, th = _circle_nodes(center, rad, K)
                f = X(cn[None, :]) * th
                res_full = (rad / K) * f.sum()
                res_half = (rad / (K // 2)) * f[::2].sum()
                total += sign * TWO_PI_I * res_full
                err += abs(TWO_PI_I * (res_full - res_half))
    else:
        c0, c1 = plan.offsets
        g0 = nodes + 1j * c0
        g1 = nodes + 1j * c1
        t0, t1 = np.meshgrid(g0, g1, indexing="ij")
        vals = X(np.stack([t0.reshape(-1), t1.reshape(-1)])).reshape(plan.M, plan.M)
        full, half = _halved(vals)
        total += weight ** 2 * full
        err += abs(weight ** 2 * full - (2 * weight) ** 2 * half)

        miss0 = _missided_point_columns(sp, mp, c0, plan.pole_clearance)
        miss1 = _missided_point_columns(sp, mp, c1, plan.pole_clearance)

        # single wraps: residue in one variable, line in the other
        for var, (miss, c_other) in enumerate(((miss0, c1), (miss1, c0))):
            other_nodes = nodes + 1j * c_other
            for pos, sign, _label in miss:
                for center in window_copies(pos):
                    rad = _radius_line_context(center, sp, mp, (c_other,))
                    cn, th = _circle_nodes(center, rad, K)
                    tv = np.repeat(cn, plan.M)
                    to = np.tile(other_nodes, K)
                    stack = np.stack([tv, to]) if var == 0 else np.stack([to, tv])
                    f = (X(stack).reshape(K, plan.M)) * th[:, None]
                    res_line = (rad / K) * f.sum(axis=0)
                    res_half_k = (rad / (K // 2)) * f[::2].sum(axis=0)
                    v_full = weight * res_line.sum()
                    v_half_m = 2 * weight * res_line[::2].sum()
                    v_half_k = weight * res_half_k.sum()
                    total += sign * TWO_PI_I * v_full
                    err += abs(TWO_PI_I * (v_full - v_half_m)) + abs(TWO_PI_I * (v_full - v_half_k))

        def add_double(stack0, stack1, th0, th1, rad0, rad1, sign):
            f = (X(np.stack([stack0, stack1])).reshape(K, K)) * th0[:, None] * th1[None, :]
            rr = (rad0 * rad1 / K ** 2) * f.sum()
            rr_half = (rad0 * rad1 / (K // 2) ** 2) * f[::2, ::2].sum()
            nonlocal total, err
            total += sign * (TWO_PI_I ** 2) * rr
            err += abs((TWO_PI_I ** 2) * (rr - rr_half))

        # double wraps, point x point (independent centers)
        for pos0, sign0, _l0 in miss0:
            for center0 in window_copies(pos0):
                for pos1, sign1, _l1 in miss1:
                    for center1 in window_copies(pos1):
                        rad1 = _radius_pinned_context(center1, sp, mp, [(center0, 0.0)])
                        rad0 = _radius_pinned_context(center0, sp, mp, [(center1, rad1)])
                        cn0, th0 = _circle_nodes(center0, rad0, K)
                        cn1, th1 = _circle_nodes(center1, rad1, K)
                        add_double(np.repeat(cn0, K), np.tile(cn1, K), th0, th1,
                                   rad0, rad1, sign0 * sign1)

        # double wraps, point x pair: the pair circle rides the pinned variable
        for pos0, sign0, _l0 in miss0:
            for center0 in window_copies(pos0):
                rad0 = _radius_line_context(center0, sp, mp, ())
                for off, sign1, _l1 in _induced_pair_wraps(center0, True, sp, mp, c1,
                                                           plan.pole_clearance):
                    for m in range(plan.N):
                        rad1 = _radius_comoving(off + m, center0, rad0, sp, mp)
                        cn0, th0 = _circle_nodes(center0, rad0, K)
                        tt0 = np.repeat(cn0, K)
                        tt1 = tt0 + (off + m) + rad1 * np.tile(np.exp(TWO_PI_I * np.arange(K) / K), K)
                        th1 = np.exp(TWO_PI_I * np.arange(K) / K)
                        add_double(tt0, tt1, th0, th1, rad0, rad1, sign0 * sign1)
        for pos1, sign1, _l1 in miss1:
            for center1 in window_copies(pos1):
                rad1 = _radius_line_context(center1, sp, mp, ())
                for off, sign0, _l0 in _induced_pair_wraps(center1, False, sp, mp, c0,
                                                           plan.pole_clearance):
                    for m in range(plan.N):
                        rad0 = _radius_comoving(off + m, center1, rad1, sp, mp)
                        cn1, th1 = _circle_nodes(center1, rad1, K)
                        tt1 = np.repeat(cn1, K)
                        tt0 = tt1 + (off + m) + rad0 * np.tile(np.exp(TWO_PI_I * np.arange(K) / K), K)
                        th0 = np.exp(TWO_PI_I * np.arange(K) / K)
                        add_double(tt1, tt0, th1, th0, rad1, rad0, sign0 * sign1)

    scale = max(abs(total), 1e-300)
    if err / scale > plan.quad_tol:
        raise NotConverged(f"quadrature estimate {err / scale:.3e} above {plan.quad_tol:.1e}",
                           estimate=err / scale)
    return IntegralValue(complex(total), float(err))


# ---------------------------------------------------------------------------
# solution tensors


@dataclass
class SolutionTensor:
    """Coefficients of e_lbar (x) e_mbar, with quadrature error estimates."""

    row_indices: tuple
    col_indices: tuple
    entries: np.ndarray
    errors: np.ndarray
    kind: str
    lam: complex
    mu: complex

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.entries))

    def error_budget(self) -> float:
        return float(np.sum(self.errors))


def _u_tensor(rows, cols, lam, mu, sp, mp, xi, plan, cfg, kind) -> SolutionTensor:
    pref = cmath.exp(-1j * math.pi * mu * lam / (2 * sp.eta))
    ent = np.empty((len(rows), len(cols)), dtype=complex)
    errs = np.empty((len(rows), len(cols)))
    for i, lb in enumerate(rows):
        for j, mb in enumerate(cols):
            val, err = integral(lb, mb, lam, mu, sp, mp, xi, plan, cfg)
            ent[i, j] = pref * val
            errs[i, j] = abs(pref) * err
    labels_r = tuple(r.coords for r in rows)
    labels_c = tuple(c.coords for c in cols)
    return SolutionTensor(labels_r, labels_c, ent, errs, kind, lam, mu)


def u_full(lam, mu, sp: SystemParams, mp: ModularParams, xi: XiSpec, plan: IntegrationPlan,
           cfg: SeriesConfig = DEFAULT_SERIES) -> SolutionTensor:
    """Full solution tensor over all index pairs (generic weights).

    Raises DivergentEntry when integral weights make an entry violate the
    disjoint-bad-set hypothesis.
    """
    idx = enumerate_indices(sp.n, sp.l)
    for lb in idx:
        for mb in idx:
            if admissibility(lb, sp.Lambda) & admissibility(mb, sp.Lambda):
                raise DivergentEntry(
                    f"entry ({lb.coords}, {mb.coords}) diverges at integral weights",
                    row=lb.coords, col=mb.coords)
    return _u_tensor(idx, idx, lam, mu, sp, mp, xi, plan, cfg, "full")


def u_adm(lam, mu, sp: SystemParams, mp: ModularParams, xi: XiSpec, plan: IntegrationPlan,
          cfg: SeriesConfig = DEFAULT_SERIES) -> SolutionTensor:
    """Admissible solution tensor (rows and columns with empty bad set)."""
    idx = [w for w in enumerate_indices(sp.n, sp.l) if not admissibility(w, sp.Lambda)]
    return _u_tensor(idx, idx, lam, mu, sp, mp, xi, plan, cfg, "adm")


def u_B(lam, mu, sp: SystemParams, mp: ModularParams, xi: XiSpec, plan: IntegrationPlan,
        B, Lambda0=None, cfg: SeriesConfig = DEFAULT_SERIES) -> SolutionTensor:
    """Fixed-bad-set square sub-block: indices with B(lbar) = B(mbar) = B.

    The classification uses ``Lambda0`` (defaults to sp.Lambda) so the
    index set stays fixed while the actual weights move off the integers.
    """
    B = frozenset(B)
    L0 = tuple(Lambda0) if Lambda0 is not None else sp.Lambda
    idx = [w for w in enumerate_indices(sp.n, sp.l) if admissibility(w, L0) == B]
    if not idx:
        raise DivergentEntry(f"no indices with bad set {sorted(B)}")
    return _u_tensor(idx, idx, lam, mu, sp, mp, xi, plan, cfg, f"B={sorted(B)}")


# ---------------------------------------------------------------------------
# qKZB relations


def _u_adm_fn(mu, sp, mp, xi, plan, cfg):
    """lam -> entries matrix of u_adm, cached on rounded lam."""
    cache = {}

    def fn(lam_val):
        key = (round(complex(lam_val).real, 12), round(complex(lam_val).imag, 12))
        if key not in cache:
            cache[key] = u_adm(lam_val, mu, sp, mp, xi, plan, cfg).entries
        return cache[key]

    return fn


@dataclass
class RelationCheck:
    residual: float
    error_budget: float
    lhs_norm: float

    def to_dict(self):
        return {"residual": self.residual, "error_budget": self.error_budget,
                "lhs_norm": self.lhs_norm}


def qkzb_residual_step_p(j: int, lam, mu, sp: SystemParams, mp: ModularParams,
                         xi: XiSpec, plan: IntegrationPlan,
                         cfg: SeriesConfig = DEFAULT_SERIES) -> RelationCheck:
    """Defect of u_adm(.., z_j + p, ..) = K_j(lam, tau, p) (x) D_j^{-1}(mu) u_adm."""
    sp_shift = sp.shifted_z(j - 1, mp.p)
    plan_l = plan_contour(sp_shift, mp, sp.l, plan.N, plan.M, plan.pole_clearance,
                          quad_tol=plan.quad_tol)
    lhs = u_adm(lam, mu, sp_shift, mp, xi, plan_l, cfg)
    K = KOperator(j, mp.tau, mp.p, sp, admissible_only=True, cfg=cfg)
    rhs = K.apply(_u_adm_fn(mu, sp, mp, xi, plan, cfg), lam)
    dinv = 1.0 / d_diagonal(j, mu, sp.eta, sp, K.basis)
    rhs = rhs * dinv[None, :]
    resid = float(np.linalg.norm(lhs.entries - rhs) / np.linalg.norm(lhs.entries))
    budget = (lhs.error_budget() + float(np.sum(np.abs(dinv)))
              * u_adm(lam, mu, sp, mp, xi, plan, cfg).error_budget()) / max(lhs.norm, 1e-300)
    return RelationCheck(resid, budget, lhs.norm)


def qkzb_residual_step_tau(j: int, lam, mu, sp: SystemParams, mp: ModularParams,
                           xi: XiSpec, plan: IntegrationPlan,
                           cfg: SeriesConfig = DEFAULT_SERIES) -> RelationCheck:
    """Defect of u_adm(.., z_j + tau, ..) = D_j^{-1}(lam) (x) K_j(mu, p, tau) u_adm."""
    sp_shift = sp.shifted_z(j - 1, mp.tau)
    plan_l = plan_contour(sp_shift, mp, sp.l, plan.N, plan.M, plan.pole_clearance,
                          quad_tol=plan.quad_tol)
    lhs = u_adm(lam, mu, sp_shift, mp, xi, plan_l, cfg)
    K = KOperator(j, mp.p, mp.tau, sp, admissible_only=True, cfg=cfg)
    cache = {}

    def fn(mu_val):
        key = (round(complex(mu_val).real, 12), round(complex(mu_val).imag, 12))
        if key not in cache:
            cache[key] = u_adm(lam, mu_val, sp, mp, xi, plan, cfg).entries.T
        return cache[key]

    rhs = K.apply(fn, mu).T
    dinv = 1.0 / d_diagonal(j, lam, sp.eta, sp, K.basis)
    rhs = dinv[:, None] * rhs
    resid = float(np.linalg.norm(lhs.entries - rhs) / np.linalg.norm(lhs.entries))
    budget = lhs.error_budget() / max(lhs.norm, 1e-300)
    return RelationCheck(resid, budget, lhs.norm)


def qkzb_residual_step_1(j: int, lam, mu, sp: SystemParams, mp: ModularParams,
                         xi: XiSpec, plan: IntegrationPlan,
                         cfg: SeriesConfig = DEFAULT_SERIES) -> RelationCheck:
    """Defect of u_adm(.., z_j + 1, ..) = u_adm(.., z_j, ..) (2a-periodic xi)."""
    if not xi.is_2a_periodic(sp):
        raise QkzbError("the z_j -> z_j + 1 relation needs a 2*a_l-periodic xi")
    sp_shift = sp.shifted_z(j - 1, 1.0)
    plan_l = plan_contour(sp_shift, mp, sp.l, plan.N, plan.M, plan.pole_clearance,
                          quad_tol=plan.quad_tol)
    lhs = u_adm(lam, mu, sp_shift, mp, xi, plan_l, cfg)
    rhs = u_adm(lam, mu, sp, mp, xi, plan, cfg)
    resid = float(np.linalg.norm(lhs.entries - rhs.entries) / np.linalg.norm(lhs.entries))
    budget = (lhs.error_budget() + rhs.error_budget()) / max(lhs.norm, 1e-300)
    return RelationCheck(resid, budget, lhs.norm)


def psi_solution(f_coeffs, lam, mu, sp, mp, xi, plan, cfg: SeriesConfig = DEFAULT_SERIES):
    """(1 (x) f)(1 (x) D(mu, p, eta; z, a)) u_adm, a vector over the row basis."""
    u = u_adm(lam, mu, sp, mp, xi, plan, cfg)
    basis = zero_weight_basis(sp, admissible_only=True)
    dtot = _dtotal_diag(mu, mp.p, sp, basis)
    f = np.asarray(f_coeffs, dtype=complex)
    return u.entries @ (dtot * f)


def phi_solution(f_coeffs, lam, mu, sp, mp, xi, plan, cfg: SeriesConfig = DEFAULT_SERIES):
    """(f (x) 1)(D(lam, tau, eta; z, a) (x) 1) u_adm, a vector over the column basis."""
    u = u_adm(lam, mu, sp, mp, xi, plan, cfg)
    basis = zero_weight_basis(sp, admissible_only=True)
    dtot = _dtotal_diag(lam, mp.tau, sp, basis)
    f = np.asarray(f_coeffs, dtype=complex)
    return (dtot * f) @ u.entries


def _dtotal_diag(mu, step, sp, basis) -> np.ndarray:
    """Diagonal of prod_j D_j(mu)^{z_j/step} on ``basis``."""
    out = np.ones(len(basis), dtype=complex)
    for j in range(1, sp.n + 1):
        dj = d_diagonal(j, mu, sp.eta, sp, basis)
        out = out * np.exp((sp.z[j - 1] / step) * np.log(dj))
    return out


# ---------------------------------------------------------------------------
# residue constants and the functoriality check


def x_constant(k: int, tau: complex, eta: complex, cfg: SeriesConfig = DEFAULT_SERIES) -> complex:
    """The theta-product constant x_k(tau, eta).

    The printed double product includes vanishing theta factors at
    adjacent pairs j = i + 1; the reading validated by the numeric residue
    identity restricts the double product to j >= i + 2, mirroring the
    companion product in y_k.
    """
    if k < 0:
        raise ValueError("k must be nonnegative")
    val = 1.0 / (math.factorial(k + 1) * theta_deriv(0.0, tau, cfg))
    for i in range(0, k - 1):
        for j in range(i + 2, k + 1):
            val *= theta(2 * (i - j) * eta, tau, cfg) / theta(2 * (i - j + 1) * eta, tau, cfg)
    for i in range(1, k + 1):
        val /= theta(2 * i * eta, tau, cfg)
    return complex(val)


def y_constant(k: int, mp: ModularParams, cfg: SeriesConfig = DEFAULT_SERIES) -> complex:
    """The phase-product constant y_k(tau, p, eta)."""
    if k < 0:
        raise ValueError("k must be nonnegative")
    eta = mp.eta
    d_k = phase1_pair_diagonal(k * eta, mp, cfg)
    val = d_k / math.factorial(k + 1)
    if k:
        val *= phase1_deriv(-2 * eta, mp, -2 * eta, cfg) ** k
    for i in range(0, k - 1):
        for j in range(i + 2, k + 1):
            val *= phase1(2 * (i - j) * eta, mp, -2 * eta, cfg)
    for i in range(1, k):
        val *= phase1(k * eta - 2 * i * eta, mp, k * eta, cfg)
    return complex(val)


def n_constant(j: int, k: int, sp: SystemParams, mp: ModularParams,
               cfg: SeriesConfig = DEFAULT_SERIES) -> complex:
    """The cross-point constant N_{j,k} (j is 1-based; i runs over the other points)."""
    if not 1 <= j <= sp.n:
        raise IndexError(f"j must be in 1..{sp.n}")
    a = sp.a
    val = 1.0 + 0j
    for s in range(0, k + 1):
        for i in range(0, j - 1):
            val *= phase1(sp.z[i] - sp.z[j - 1], mp, a[i] + a[j - 1] - 2 * s * sp.eta, cfg)
        for i in range(j, sp.n):
            val *= phase1(sp.z[j - 1] - sp.z[i], mp, a[i] + a[j - 1] - 2 * s * sp.eta, cfg)
    return complex(val)


def residue_constants(B, sp: SystemParams, mp: ModularParams,
                      cfg: SeriesConfig = DEFAULT_SERIES) -> dict:
    """c_B and its factors; every weight named by B must be a nonnegative integer."""
    from .weights import is_nonneg_integer

    parts = {}
    total = 1.0 + 0j
    for s in sorted(B):
        L = sp.Lambda[s]
        if not is_nonneg_integer(L):
            raise QkzbError(f"residue constant needs integral Lambda_{s + 1}, got {L}")
        k = round(complex(L).real)
        x_t = x_constant(k, mp.tau, sp.eta, cfg)
        x_p = x_constant(k, mp.p, sp.eta, cfg)
        y = y_constant(k, mp, cfg)
        nj = n_constant(s + 1, k, sp, mp, cfg)
        parts[s] = {"x_tau": x_t, "x_p": x_p, "y": y, "N": nj}
        total *= x_t * x_p * y * nj
    return {"c_B": total, "parts": parts}


def reflected_system(B, sp: SystemParams) -> tuple[SystemParams, int]:
    """Weights reflected on B (Lambda -> -Lambda - 2) and the reduced level."""
    Lt = list(sp.Lambda)
    drop = 0
    for s in B:
        drop += round(complex(sp.Lambda[s]).real) + 1
        Lt[s] = -sp.Lambda[s] - 2
    l_prime = sp.l - drop
    if l_prime < 0:
        raise QkzbError(f"reduced level {l_prime} negative for B={sorted(B)}")
    return SystemParams(tuple(Lt), sp.z, sp.eta, l_prime), l_prime


def reflect_index(idx: WeightIndex, B, sp: SystemParams) -> WeightIndex:
    """Index map lbar -> lbar' subtracting Lambda_i + 1 on the B coordinates."""
    coords = list(idx.coords)
    for s in B:
        coords[s] = coords[s] - round(complex(sp.Lambda[s]).real) - 1
    return WeightIndex(tuple(coords))


def weight_conservation_defect(B, sp: SystemParams) -> float:
    """|weight(reflected) - weight(original)|; conserved by the residue map."""
    spt, l_prime = reflected_system(B, sp)
    w0 = sum(sp.Lambda) - 2 * sp.l
    w1 = sum(spt.Lambda) - 2 * l_prime
    return abs(w1 - w0)


def numeric_residue_u_B(B, lam, mu, sp0: SystemParams, mp: ModularParams, xi: XiSpec,
                        plan: IntegrationPlan, rho: float, K: int = 64,
                        cfg: SeriesConfig = DEFAULT_SERIES) -> SolutionTensor:
    """Iterated numeric residue of u_B at a = a^0, innermost coordinate first.

    Each named coordinate b is integrated over the circle |a_b - a^0_b| = rho
    (trapezoid, K nodes) divided by 2 pi i, the remaining B coordinates held
    at a^0; the weights on the circle are fed back through Lambda_b = a_b/eta.
    Convergence is checked by comparing the K and K/2 node sets.
    """
    B = sorted(B)
    if not B:
        raise ValueError("numeric residue needs a nonempty bad set")
    if len(B) > 1:
        raise PlanInfeasible("iterated residues implemented for |B| = 1")
    b = B[0]
    a0 = sp0.a[b]
    nodes, th = _circle_nodes(a0, rho, K)
    vals = []
    for a_b in nodes:
        sp_c = sp0.with_lambda(b, a_b / sp0.eta)
        u = u_B(lam, mu, sp_c, mp, xi, plan, B, Lambda0=sp0.Lambda, cfg=cfg)
        vals.append(u.entries)
    stack = np.stack(vals)  # (K, rows, cols)
    res_full = (rho / K) * np.tensordot(th, stack, axes=(0, 0))
    res_half = (rho / (K // 2)) * np.tensordot(th[::2], stack[::2], axes=(0, 0))
    defect = float(np.linalg.norm(res_full - res_half))
    if defect > max(1e-14, 1e-4 * float(np.linalg.norm(res_full))):
        raise NotConverged(f"residue circle K vs K/2 defect {defect:.3e}", estimate=defect)
    uref = u_B(lam, mu, sp0.with_lambda(b, (a0 + rho) / sp0.eta), mp, xi, plan, B,
               Lambda0=sp0.Lambda, cfg=cfg)
    return SolutionTensor(uref.row_indices, uref.col_indices, res_full,
                          np.full_like(res_full, defect, dtype=float), f"res B={B}", lam, mu)


def residue_functoriality_check(B, lam, mu, sp0: SystemParams, mp: ModularParams,
                                xi: XiSpec, plan: IntegrationPlan, rho: float,
                                K: int = 64, cfg: SeriesConfig = DEFAULT_SERIES) -> dict:
    """Both sides of the residue identity for u_B, with their mismatch.

    LHS: iterated numeric residue of u_B at a^0.  RHS: the theta prefactor
    prod_{s=l'+1}^{l} theta_tau(lam + 2 s eta) theta_p(mu + 2 s eta) / s
    times c_B times u_adm at the reflected weights.
    """
    lhs = numeric_residue_u_B(B, lam, mu, sp0, mp, xi, plan, rho, K, cfg)
    spt, l_prime = reflected_system(B, sp0)
    plan_t = plan_contour(spt, mp, l_prime, plan.N, plan.M, plan.pole_clearance,
                          quad_tol=plan.quad_tol) if l_prime else plan
    rhs_u = u_adm(lam, mu, spt, mp, xi, plan_t, cfg)
    pref = 1.0 + 0j
    for s in range(l_prime + 1, sp0.l + 1):
        pref *= theta(lam + 2 * s * sp0.eta, mp.tau, cfg) * theta(mu + 2 * s * sp0.eta, mp.p, cfg) / s
    c_B = residue_constants(B, sp0, mp, cfg)
    rhs_map = {}
    for i, rc in enumerate(rhs_u.row_indices):
        for j, cc in enumerate(rhs_u.col_indices):
            rhs_map[(rc, cc)] = pref * c_B["c_B"] * rhs_u.entries[i, j]
    rhs = np.empty_like(lhs.entries)
    for i, rc in enumerate(lhs.row_indices):
        for j, cc in enumerate(lhs.col_indices):
            key = (reflect_index(WeightIndex(rc), B, sp0).coords,
                   reflect_index(WeightIndex(cc), B, sp0).coords)
            rhs[i, j] = rhs_map[key]
    rel = float(np.linalg.norm(lhs.entries - rhs) / np.linalg.norm(rhs))
    return {
        "lhs": lhs,
        "rhs": rhs,
        "relative_error": rel,
        "weight_defect": weight_conservation_defect(B, sp0),
        "constants": c_B,
        "theta_prefactor": pref,
    }


# ---------------------------------------------------------------------------
# monodromy under z_j -> z_j + tau


def monodromy_tau_shift_residual(j: int, lam, mu, sp: SystemParams, mp: ModularParams,
                                 xi: XiSpec, plan: IntegrationPlan,
                                 cfg: SeriesConfig = DEFAULT_SERIES) -> RelationCheck:
    """Defect of the tau-shift monodromy relation for Psi = (1 (x) D) u_adm.

    LHS: (B_j(lam, p, eta; z, a) (x) 1) Psi(.., z_j + tau, ..).
    RHS: (1 (x) F_j D(mu; .., z_j + tau, ..) K_j(mu, p, tau) D^{-1}(mu; z)) Psi(z).
    """
    from .qkzb import F_scalar, d_diagonal as _dd

    basis = zero_weight_basis(sp, admissible_only=True)
    sp_shift = sp.shifted_z(j - 1, mp.tau)
    plan_l = plan_contour(sp_shift, mp, sp.l, plan.N, plan.M, plan.pole_clearance,
                          quad_tol=plan.quad_tol)

    def psi_entries(sp_at, plan_at, mu_val):
        u = u_adm(lam, mu_val, sp_at, mp, xi, plan_at, cfg)
        return u.entries @ np.diag(_dtotal_diag(mu_val, mp.p, sp_at, basis))

    # LHS
    bj = F_scalar(j, mp.p, sp.eta, sp) * _dd(j, lam, sp.eta, sp, basis)
    lhs = bj[:, None] * psi_entries(sp_shift, plan_l, mu)

    # RHS: slot-2 difference operator applied to Psi(z)
    K = KOperator(j, mp.p, mp.tau, sp, admissible_only=True, cfg=cfg)
    cache = {}

    def fn(mu_val):
        key = (round(complex(mu_val).real, 12), round(complex(mu_val).imag, 12))
        if key not in cache:
            dinv = 1.0 / _dtotal_diag(mu_val, mp.p, sp, basis)
            cache[key] = (psi_entries(sp, plan, mu_val) * dinv[None, :]).T
        return cache[key]

    rhs = K.apply(fn, mu).T
    dsh = _dtotal_diag(mu, mp.p, sp_shift, basis)
    rhs = F_scalar(j, mp.p, sp.eta, sp) * (rhs * dsh[None, :])
    resid = float(np.linalg.norm(lhs - rhs) / np.linalg.norm(lhs))
    return RelationCheck(resid, 0.0, float(np.linalg.norm(lhs)))
