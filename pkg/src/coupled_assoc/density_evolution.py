"""Density evolution, potentials and thresholds for the coupled memory.

Pattern neurons track an average error probability ``z`` per plane.  A
cluster whose other neighbours carry ``e`` or more errors fails, which gives

    g(z) = 1 - sum_{k<e} z**k / k! * rho^(k)(1 - z)
    f(z; p) = p * lambda(z)

and the coupled recursion over a chain of ``L`` planes with window ``2*omega+1``

    z_l <- f( avg_{|i|<=omega} g( zbar_{l-i} ); p ),  zbar_k = avg_{|j|<=omega} z_{k-j}

with ``z = 0`` outside the chain.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import polynomial as P
from scipy import optimize, special

from .degree_dist import Convention, DegreeDistError, EdgePolynomial, DistributionPair, derivative

CLAMP_TOL = 1e-12
GAP_GRID = 4096
DAGGER_GRID = 8192
BISECT_TOL = 1e-6
GOLDEN_TOL = 1e-10


class Mode(enum.Enum):
    CONSTRAINED = "constrained"
    UNCONSTRAINED = "unconstrained"


@dataclass(frozen=True)
class DEModel:
    lam: EdgePolynomial
    rho: EdgePolynomial
    e: int = 2
    omega: int = 0
    chain_len: int = 1
    _rho_mono: np.ndarray = field(init=False, repr=False, compare=False)
    _rho_ders: tuple = field(init=False, repr=False, compare=False)
    _lam_mono: np.ndarray = field(init=False, repr=False, compare=False)
    _lam_int: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.lam.convention is not Convention.PATTERN_SIDE:
            raise DegreeDistError("lambda must use the pattern-side convention")
        if self.e < 1:
            raise ValueError(f"e must be >= 1, got {self.e}")
        if self.chain_len < 1:
            raise ValueError(f"chain_len must be >= 1, got {self.chain_len}")
        if self.omega < 0:
            raise ValueError(f"omega must be >= 0, got {self.omega}")
        rho_mono = self.rho.monomial()
        if self.e > len(rho_mono) - 1:
            raise ValueError(
                f"e={self.e} exceeds the top exponent of rho ({len(rho_mono) - 1}); g would vanish")
        ders = [rho_mono] + [derivative(rho_mono, k) for k in range(1, self.e + 1)]
        object.__setattr__(self, "_rho_mono", rho_mono)
        object.__setattr__(self, "_rho_ders", tuple(ders))
        object.__setattr__(self, "_lam_mono", self.lam.monomial())
        object.__setattr__(self, "_lam_int", P.polyint(self.lam.monomial()))

    @classmethod
    def from_pair(cls, pair: DistributionPair, e: int | None = None, omega: int = 0,
                  chain_len: int = 1) -> "DEModel":
        e = e if e is not None else (pair.e if pair.e is not None else 2)
        return cls(pair.lam, pair.rho, e=e, omega=omega, chain_len=chain_len)

    def with_coupling(self, omega: int, chain_len: int) -> "DEModel":
        return DEModel(self.lam, self.rho, self.e, omega, chain_len)


@dataclass(frozen=True)
class CouplingOperator:
    """The (L + 2*omega) x L window-average matrix of the coupled chain."""

    omega: int
    chain_len: int
    mode: Mode = Mode.UNCONSTRAINED

    @property
    def matrix(self) -> np.ndarray:
        w = 2 * self.omega + 1
        a = np.zeros((self.chain_len + 2 * self.omega, self.chain_len))
        for j in range(self.chain_len):
            a[j:j + w, j] = 1.0 / w
        return a


@dataclass(frozen=True)
class Thresholds:
    p_dagger: float
    p_star: float


@dataclass(frozen=True)
class EnergyGap:
    value: float
    z: float
    degenerate: bool


class DegenerateGapError(ValueError):
    pass


def _unit(x, name):
    arr = np.asarray(x, dtype=float)
    if np.any(arr < -CLAMP_TOL) or np.any(arr > 1 + CLAMP_TOL):
        raise DegreeDistError(f"{name} must lie in [0, 1]")
    return np.clip(arr, 0.0, 1.0)


def _clamp(v):
    lo = np.min(v) if np.size(v) else 0.0
    hi = np.max(v) if np.size(v) else 0.0
    assert lo > -CLAMP_TOL and hi < 1 + CLAMP_TOL, (lo, hi)
    return np.clip(v, 0.0, 1.0)


# -- component maps ---------------------------------------------------------

def g_func(model: DEModel, z):
    z = _unit(z, "z")
    x = 1.0 - z
    acc = np.zeros_like(z)
    for k in range(model.e):
        acc = acc + z ** k / math.factorial(k) * P.polyval(x, model._rho_ders[k])
    # g(0) = 1 - rho(1) = 0 exactly; avoid the rounding residue
    return np.where(z == 0.0, 0.0, _clamp(1.0 - acc))[()]


def g_prime(model: DEModel, z):
    """Telescoped Taylor remainder: g'(z) = z**(e-1)/(e-1)! * rho^(e)(1-z)."""
    z = _unit(z, "z")
    e = model.e
    return z ** (e - 1) / math.factorial(e - 1) * P.polyval(1.0 - z, model._rho_ders[e])


def g_antiderivative(model: DEModel, z):
    """Closed form of the integral of g from 0 to z.

    With rho(x) = sum_a c_a x**a, the subtracted Taylor terms are binomial
    probabilities and integrate to
    int_0^z C(a,k) u^k (1-u)^(a-k) du = P(Bin(a+1, z) >= k+1) / (a+1).
    """
    z = _unit(z, "z")
    out = np.array(z, dtype=float, copy=True)
    for a, c in enumerate(model._rho_mono):
        if c == 0.0:
            continue
        for k in range(min(model.e - 1, a) + 1):
            out = out - c / (a + 1) * special.bdtrc(k, a + 1, z)
    return out


def f_func(model: DEModel, z, p_e):
    z = _unit(z, "z")
    p_e = float(_unit(p_e, "p_e"))
    return p_e * P.polyval(z, model._lam_mono)


def f_antiderivative(model: DEModel, z, p_e):
    z = _unit(z, "z")
    return float(p_e) * P.polyval(z, model._lam_int)


def de_step_scalar(model: DEModel, z, p_e):
    return f_func(model, g_func(model, z), p_e)


# -- coupled chain ----------------------------------------------------------

def _check_profile(model: DEModel, profile) -> np.ndarray:
    z = np.asarray(profile, dtype=float)
    if z.shape != (model.chain_len,):
        raise ValueError(f"profile has shape {z.shape}, expected ({model.chain_len},)")
    return _unit(z, "profile")


def _pin(z: np.ndarray, omega: int) -> np.ndarray:
    if omega:
        z[:omega] = 0.0
        z[-omega:] = 0.0
    return z


def de_step_coupled(model: DEModel, profile, p_e, constrained: bool = False) -> np.ndarray:
    """One step of the coupled recursion by explicit padded window sums."""
    z = _check_profile(model, profile)
    om, n = model.omega, model.chain_len
    w = 2 * om + 1
    # zbar for planes -omega .. n-1+omega; chain padded with 2*omega zeros each side
    padded = np.concatenate([np.zeros(2 * om), z, np.zeros(2 * om)])
    zbar = np.array([padded[k:k + w].sum() / w for k in range(n + 2 * om)])
    gz = g_func(model, _clamp(zbar))
    gbar = np.array([gz[l:l + w].sum() / w for l in range(n)])
    out = f_func(model, _clamp(gbar), p_e)
    return _pin(out, om) if constrained else out


def de_step_matrix(op: CouplingOperator, model: DEModel, profile, p_e) -> np.ndarray:
    """The same step written with the coupling matrix: f(A^T g(A z))."""
    z = np.asarray(profile, dtype=float)
    if op.chain_len != z.shape[0] or op.chain_len != model.chain_len or op.omega != model.omega:
        raise ValueError("coupling operator does not match the model/profile dimensions")
    a = op.matrix
    out = f_func(model, _clamp(a.T @ g_func(model, _clamp(a @ _unit(z, "profile")))), p_e)
    return _pin(out, op.omega) if op.mode is Mode.CONSTRAINED else out


def de_step_outer_average(op: CouplingOperator, model: DEModel, profile, p_e) -> np.ndarray:
    """A^T f(A g(z)): averaging after f instead of before g.

    This is the generic coupled-code form.  It shares the zero fixed point
    with :func:`de_step_coupled` but is a different map once omega >= 1.
    """
    z = _unit(np.asarray(profile, dtype=float), "profile")
    a = op.matrix
    return a.T @ f_func(model, _clamp(a @ g_func(model, z)), p_e)


def constrained_start(model: DEModel, p_e: float) -> np.ndarray:
    return _pin(np.full(model.chain_len, float(p_e)), model.omega)


@dataclass
class DETrace:
    profiles: list
    converged: bool
    iterations: int


def iterate_scalar(model: DEModel, p_e: float, z0: float | None = None, max_iter: int = 100_000,
                   tol: float = 1e-9) -> tuple[float, int]:
    z = float(p_e if z0 is None else z0)
    for it in range(1, max_iter + 1):
        nz = float(de_step_scalar(model, z, p_e))
        if nz < tol or abs(nz - z) < 1e-15:
            return nz, it
        z = nz
    return z, max_iter


def iterate_coupled(model: DEModel, p_e: float, constrained: bool = False, max_iter: int = 100_000,
                    tol: float = 1e-6, record: bool = False, start=None) -> DETrace:
    z = constrained_start(model, p_e) if start is None else np.asarray(start, dtype=float)
    if constrained:
        z = _pin(z.copy(), model.omega)
    profiles = [z.copy()] if record else []
    for it in range(1, max_iter + 1):
        nz = de_step_coupled(model, z, p_e, constrained=constrained)
        if record:
            profiles.append(nz.copy())
        if nz.max() < tol:
            return DETrace(profiles or [nz], True, it)
        if np.max(np.abs(nz - z)) < 1e-15:
            return DETrace(profiles or [nz], False, it)
        z = nz
    return DETrace(profiles or [z], False, max_iter)


# -- potentials -------------------------------------------------------------

def potential_scalar(model: DEModel, z, p_e):
    """U_s(z) = z g(z) - G(z) - F(g(z); p)."""
    z = _unit(z, "z")
    gz = g_func(model, z)
    return z * gz - g_antiderivative(model, z) - f_antiderivative(model, gz, p_e)


def potential_vector(op: CouplingOperator, model: DEModel, profiles, p_e):
    """g(z)^T z - sum G(z_i) - sum F((A g(z))_k); rows of ``profiles`` are evaluated independently."""
    z = np.atleast_2d(_unit(profiles, "profile"))
    gz = g_func(model, z)
    ag = _clamp(gz @ op.matrix.T)
    out = (gz * z).sum(1) - g_antiderivative(model, z).sum(1) - f_antiderivative(model, ag, p_e).sum(1)
    return out if np.ndim(profiles) == 2 else out[0]


def _first_fixed_point(model: DEModel, p_e: float) -> float | None:
    """Smallest z in (0, 1] with f(g(z)) >= z, or None."""
    zs = np.linspace(0.0, 1.0, GAP_GRID + 1)[1:]
    d = de_step_scalar(model, zs, p_e) - zs
    hit = np.nonzero(d >= 0)[0]
    if hit.size == 0:
        return None
    i = hit[0]
    if i == 0:
        return float(zs[0])
    fn = lambda z: float(de_step_scalar(model, z, p_e)) - z
    return optimize.brentq(fn, zs[i - 1], zs[i], xtol=1e-14)


def _golden_min(fn, a: float, b: float, tol: float = GOLDEN_TOL) -> tuple[float, float]:
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    fc, fd = fn(c), fn(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = fn(d)
    z = 0.5 * (a + b)
    return z, fn(z)


def energy_gap(model: DEModel, p_e: float) -> EnergyGap:
    """Minimum of U_s over the non-trivial region.

    The search starts at the smallest non-zero fixed point of the scalar map;
    below it U_s is increasing from U_s(0) = 0.  When no such fixed point
    exists (p_e <= p_dagger) the result is flagged degenerate with value 0.
    """
    z_lo = _first_fixed_point(model, p_e)
    if z_lo is None:
        return EnergyGap(0.0, 0.0, True)
    zs = np.linspace(z_lo, 1.0, GAP_GRID)
    us = potential_scalar(model, zs, p_e)
    i = int(np.argmin(us))
    best_z, best_u = float(zs[i]), float(us[i])
    if 0 < i < len(zs) - 1:
        z_ref, u_ref = _golden_min(lambda z: float(potential_scalar(model, z, p_e)), zs[i - 1], zs[i + 1])
        if u_ref < best_u:
            best_z, best_u = z_ref, u_ref
    return EnergyGap(best_u, best_z, False)


# -- thresholds -------------------------------------------------------------

def _bisect(pred, lo=0.0, hi=1.0, tol=BISECT_TOL):
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if pred(mid):
            lo = mid
        else:
            hi = mid
    return lo


def _contracts(model: DEModel, p_e: float) -> bool:
    """f(g(z); p) < z for every z in (0, p]."""
    if p_e <= 0:
        return True
    zs = p_e * np.arange(1, DAGGER_GRID + 1) / DAGGER_GRID
    ratio = de_step_scalar(model, zs, p_e) / zs
    i = int(np.argmax(ratio))
    worst = float(ratio[i])
    if worst >= 1.0:
        return False
    lo = zs[i - 1] if i > 0 else zs[0] * 1e-3
    hi = zs[min(i + 1, len(zs) - 1)]
    if hi > lo:
        res = optimize.minimize_scalar(lambda z: -float(de_step_scalar(model, z, p_e)) / z,
                                       bounds=(lo, hi), method="bounded", options={"xatol": 1e-12})
        worst = max(worst, -res.fun)
    return worst < 1.0


def threshold_uncoupled(model: DEModel) -> float:
    if not _contracts(model, 1e-6):
        return 0.0
    if _contracts(model, 1.0):
        return 1.0
    return _bisect(lambda p: _contracts(model, p))


def _gap_nonnegative(model: DEModel, p_e: float) -> bool:
    gap = energy_gap(model, p_e)
    return gap.degenerate or gap.value >= 0.0


def threshold_coupled(model: DEModel) -> float:
    if _gap_nonnegative(model, 1.0):
        return 1.0
    return _bisect(lambda p: _gap_nonnegative(model, p))


def thresholds(model: DEModel) -> Thresholds:
    return Thresholds(threshold_uncoupled(model), threshold_coupled(model))


def sufficient_coupling(model: DEModel, p_e: float, profile_grid: int = 17, h: float = 1e-4,
                        chain_len: int | None = None) -> float:
    """Estimate of ||U''||_inf / Delta E for the chain described by ``model``.

    The Hessian of the vector potential is taken by central differences at
    constant profiles c*1; the row-sum norm is maximised over c by a uniform
    grid plus golden-section refinement around the best grid point.  This is an estimate, not a certificate.
    """
    gap = energy_gap(model, p_e)
    if gap.degenerate or gap.value <= 0.0:
        raise DegenerateGapError(f"energy gap at p_e={p_e} is {gap.value} (degenerate={gap.degenerate})")
    n = chain_len or model.chain_len
    m = model.with_coupling(model.omega, n)
    op = CouplingOperator(m.omega, n)
    eye = np.eye(n) * h

    def norm_at(c):
        z = np.full(n, c)
        pp = z + eye[:, None, :] + eye[None, :, :]
        pm = z + eye[:, None, :] - eye[None, :, :]
        mp = z - eye[:, None, :] + eye[None, :, :]
        mm = z - eye[:, None, :] - eye[None, :, :]
        batch = np.clip(np.concatenate([pp, pm, mp, mm]).reshape(-1, n), 0.0, 1.0)
        u = potential_vector(op, m, batch, p_e).reshape(4, n, n)
        hess = (u[0] - u[1] - u[2] + u[3]) / (4 * h * h)
        return float(np.abs(hess).sum(1).max())

    cs = np.linspace(h, 1.0 - h, profile_grid)
    vals = [norm_at(c) for c in cs]
    i = int(np.argmax(vals))
    lo, hi = cs[max(i - 1, 0)], cs[min(i + 1, len(cs) - 1)]
    _, neg = _golden_min(lambda c: -norm_at(c), lo, hi, tol=1e-4)
    norm = max(vals[i], -neg)
    return norm / gap.value
