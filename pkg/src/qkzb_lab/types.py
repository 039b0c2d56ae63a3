"""Parameter containers used throughout the package.

All values are plain complex numbers; derived quantities (the nomes q, r
and the shifted weights a_j) are always recomputed from the primary fields
so the objects cannot drift out of sync.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field

from .errors import InvalidModulus

TWO_PI_I = 2j * math.pi


@dataclass(frozen=True)
class SeriesConfig:
    """Truncation control for theta series and phase products.

    eps is an absolute tail threshold, max_terms a hard cap on the number
    of retained terms/factors.
    """

    eps: float = 1e-14
    max_terms: int = 100_000

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.max_terms < 1:
            raise ValueError("max_terms must be at least 1")


DEFAULT_SERIES = SeriesConfig()


@dataclass(frozen=True)
class ModularParams:
    """The modular triple (tau, p, eta) with Im tau > 0, Im p > 0, Im eta < 0."""

    tau: complex
    p: complex
    eta: complex

    def __post_init__(self):
        if not complex(self.tau).imag > 0:
            raise InvalidModulus(f"Im tau must be positive, got tau={self.tau}")
        if not complex(self.p).imag > 0:
            raise InvalidModulus(f"Im p must be positive, got p={self.p}")
        if not complex(self.eta).imag < 0:
            raise InvalidModulus(f"Im eta must be negative, got eta={self.eta}")

    @property
    def q(self) -> complex:
        """Nome of tau, q = exp(2 pi i tau); |q| < 1 by construction."""
        return cmath.exp(TWO_PI_I * self.tau)

    @property
    def r(self) -> complex:
        """Nome of p, r = exp(2 pi i p); |r| < 1 by construction."""
        return cmath.exp(TWO_PI_I * self.p)

    def swapped(self) -> "ModularParams":
        """Exchange the roles of tau and p (eta unchanged)."""
        return ModularParams(tau=self.p, p=self.tau, eta=self.eta)


@dataclass(frozen=True)
class WeightIndex:
    """A composition of l into n nonnegative parts, with partial sums."""

    coords: tuple[int, ...]

    def __post_init__(self):
        if any((not isinstance(c, int)) or c < 0 for c in self.coords):
            raise ValueError(f"coords must be nonnegative integers, got {self.coords}")

    @property
    def n(self) -> int:
        return len(self.coords)

    @property
    def level(self) -> int:
        """Total weight l = sum of the coordinates."""
        return sum(self.coords)

    def lsum(self, m: int) -> int:
        """Partial sum l^m = l_1 + ... + l_m (m from 0 to n)."""
        return sum(self.coords[:m])

    def __iter__(self):
        return iter(self.coords)

    def __getitem__(self, i):
        return self.coords[i]


@dataclass(frozen=True)
class SystemParams:
    """Points, highest weights and the derived shifts a_j = eta * Lambda_j.

    The weight level l is carried explicitly; solution-tensor routines
    additionally require sum(Lambda) == 2*l.
    """

    Lambda: tuple[complex, ...]
    z: tuple[complex, ...]
    eta: complex
    l: int = 0

    def __post_init__(self):
        if len(self.Lambda) != len(self.z):
            raise ValueError("Lambda and z must have the same length")
        if len(self.Lambda) < 1:
            raise ValueError("need at least one point")
        if self.l < 0:
            raise ValueError("l must be nonnegative")
        object.__setattr__(self, "Lambda", tuple(complex(v) for v in self.Lambda))
        object.__setattr__(self, "z", tuple(complex(v) for v in self.z))

    @property
    def n(self) -> int:
        return len(self.Lambda)

    @property
    def a(self) -> tuple[complex, ...]:
        """Derived shifts a_j = eta * Lambda_j, never stored independently."""
        return tuple(self.eta * L for L in self.Lambda)

    def weight_sum_defect(self) -> float:
        """|sum(Lambda) - 2 l|, zero for valid solution-tensor systems."""
        return abs(sum(self.Lambda) - 2 * self.l)

    def shifted_z(self, j: int, delta: complex) -> "SystemParams":
        """Return a copy with z_j replaced by z_j + delta (0-based j)."""
        z = list(self.z)
        z[j] = z[j] + delta
        return SystemParams(self.Lambda, tuple(z), self.eta, self.l)

    def with_lambda(self, j: int, value: complex) -> "SystemParams":
        """Return a copy with Lambda_j replaced (0-based j); a follows."""
        lam = list(self.Lambda)
        lam[j] = value
        return SystemParams(tuple(lam), self.z, self.eta, self.l)
