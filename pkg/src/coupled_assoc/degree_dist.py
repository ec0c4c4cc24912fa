"""Edge-perspective degree-distribution polynomials.

Coefficients are listed by node degree, starting at degree 1.  The exponent
attached to a degree is fixed by an explicit :class:`Convention`, because the
pattern-side and cluster-side polynomials use different maps:

* ``PATTERN_SIDE``: degree ``j`` contributes ``c_j * x**j``
* ``CLUSTER_SIDE``: degree ``i`` contributes ``c_i * x**(i - 1)``
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
from numpy.polynomial import polynomial as P

SUM_TOL = 1e-9
DOMAIN_SLACK = 1e-12


class Convention(enum.Enum):
    PATTERN_SIDE = "pattern_side"
    CLUSTER_SIDE = "cluster_side"

    @property
    def shift(self) -> int:
        """Exponent of the degree-1 coefficient."""
        return 1 if self is Convention.PATTERN_SIDE else 0


class DegreeDistError(ValueError):
    pass


def _check_unit(x, name="x"):
    arr = np.asarray(x, dtype=float)
    if np.any(arr < -DOMAIN_SLACK) or np.any(arr > 1 + DOMAIN_SLACK):
        raise DegreeDistError(f"{name} must lie in [0, 1], got {x!r}")
    return np.clip(arr, 0.0, 1.0)


@dataclass(frozen=True)
class EdgePolynomial:
    coeffs: tuple[float, ...]
    convention: Convention

    def __post_init__(self):
        c = tuple(float(v) for v in self.coeffs)
        object.__setattr__(self, "coeffs", c)
        if not c:
            raise DegreeDistError("empty coefficient list")
        if min(c) < 0:
            raise DegreeDistError("coefficients must be nonnegative")
        if abs(sum(c) - 1.0) > SUM_TOL:
            raise DegreeDistError(f"coefficients sum to {sum(c)!r}, expected 1")

    @classmethod
    def from_rounded(cls, coeffs, convention, tol=1e-3):
        """Build from published, rounded coefficients by renormalising.

        Raises if the coefficients miss 1 by more than ``tol``.
        """
        c = np.asarray(coeffs, dtype=float)
        s = c.sum()
        if abs(s - 1.0) > tol:
            raise DegreeDistError(f"coefficients sum to {s!r}, more than {tol} away from 1")
        return cls(tuple(c / s), Convention(convention))

    @property
    def max_degree(self) -> int:
        return len(self.coeffs)

    def degrees(self) -> np.ndarray:
        return np.arange(1, len(self.coeffs) + 1)

    def exponents(self) -> np.ndarray:
        return self.degrees() - 1 + self.convention.shift

    def monomial(self) -> np.ndarray:
        """Dense coefficients indexed by exponent (numpy polynomial order)."""
        out = np.zeros(self.exponents()[-1] + 1)
        out[self.exponents()] = self.coeffs
        return out

    def __call__(self, x):
        return evaluate(self, x)


def evaluate(p: EdgePolynomial, x):
    x = _check_unit(x)
    return P.polyval(x, p.monomial())


def derivative(p: EdgePolynomial | np.ndarray, order: int = 1) -> np.ndarray:
    """Coefficients (by exponent) of the ``order``-th derivative."""
    if order < 1:
        raise DegreeDistError("derivative order must be >= 1")
    c = p.monomial() if isinstance(p, EdgePolynomial) else np.asarray(p, dtype=float)
    if order >= len(c):
        return np.zeros(1)
    return P.polyder(c, order)


def antiderivative_eval(p: EdgePolynomial, x):
    """Closed-form integral of ``p`` from 0 to ``x``."""
    x = _check_unit(x)
    return P.polyval(x, P.polyint(p.monomial()))


@dataclass(frozen=True)
class DistributionPair:
    lam: EdgePolynomial
    rho: EdgePolynomial
    e: int | None = None


def _convention(obj, key, default):
    return Convention(obj.get(key, default.value))


def pair_from_dict(obj: dict) -> DistributionPair:
    """Parse ``{"lambda": [...], "rho": [...], "e": int}``.

    Optional ``lambda_convention`` / ``rho_convention`` keys override the
    defaults (pattern side for lambda, cluster side for rho).
    """
    for key in ("lambda", "rho"):
        if key not in obj:
            raise DegreeDistError(f"missing field {key!r}")
        if not isinstance(obj[key], list) or not obj[key]:
            raise DegreeDistError(f"field {key!r} must be a nonempty list")
    lam = EdgePolynomial.from_rounded(
        obj["lambda"], _convention(obj, "lambda_convention", Convention.PATTERN_SIDE))
    rho = EdgePolynomial.from_rounded(
        obj["rho"], _convention(obj, "rho_convention", Convention.CLUSTER_SIDE))
    e = obj.get("e")
    if e is not None and (not isinstance(e, int) or isinstance(e, bool)):
        raise DegreeDistError("field 'e' must be an integer")
    return DistributionPair(lam, rho, e)


def pair_to_dict(pair: DistributionPair) -> dict:
    out = {
        "lambda": list(pair.lam.coeffs),
        "lambda_convention": pair.lam.convention.value,
        "rho": list(pair.rho.coeffs),
        "rho_convention": pair.rho.convention.value,
    }
    if pair.e is not None:
        out["e"] = pair.e
    return out


def load_pair(path: str | Path) -> DistributionPair:
    with open(path) as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DegreeDistError(f"{path}: malformed JSON ({exc})") from exc
    return pair_from_dict(obj)


def default_pair_path() -> Path:
    return Path(str(resources.files("coupled_assoc") / "data" / "default_dist.json"))


def default_pair() -> DistributionPair:
    """The 64x64 / window 8 / stride 2 network: 16-entry lambda, rho_64 = 1."""
    return load_pair(default_pair_path())
