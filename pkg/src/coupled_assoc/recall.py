"""Recall: intra-cluster message passing and the coupled accept/revert sweep.

Two routes compute the same thing.  ``engine="python"`` is a plain numpy
reference that also records a per-visit trace; ``engine="numba"`` runs the
compiled kernels and is what the Monte Carlo harness uses.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .memory import ClusterWeights
from .topology import CoupledTopology

SAT_TOL = _kernels.SAT_TOL


class Mode(enum.Enum):
    CONSTRAINED = "constrained"
    UNCONSTRAINED = "unconstrained"


@dataclass(frozen=True)
class RecallConfig:
    phi: float = 0.999
    t_max_inner: int = 10
    t_max_outer: int = 10
    mode: Mode = Mode.UNCONSTRAINED
    frozen: frozenset = field(default_factory=frozenset)
    alphabet: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "frozen", frozenset(int(i) for i in self.frozen))
        object.__setattr__(self, "mode", Mode(self.mode))
        if not 0.0 < self.phi <= 1.0:
            raise ValueError(f"phi must lie in (0, 1], got {self.phi}")
        if self.t_max_inner < 1 or self.t_max_outer < 1:
            raise ValueError("t_max_inner and t_max_outer must be positive")
        if self.mode is Mode.CONSTRAINED and not self.frozen:
            raise ValueError("constrained mode needs a nonempty frozen set")
        if self.mode is Mode.UNCONSTRAINED and self.frozen:
            raise ValueError("unconstrained mode must not freeze neurons")

    def frozen_mask(self, n: int) -> np.ndarray:
        mask = np.zeros(n, dtype=bool)
        if self.frozen:
            mask[np.fromiter(self.frozen, dtype=np.int64)] = True
        return mask


def corner_patches(height: int, width: int, patch: int = 3) -> frozenset:
    """Flat indices of ``patch x patch`` squares at the four grid corners."""
    out = set()
    for r0 in (0, height - patch):
        for c0 in (0, width - patch):
            for r in range(patch):
                for c in range(patch):
                    out.add((r0 + r) * width + c0 + c)
    return frozenset(out)


def boundary_planes(height: int, width: int, rows: int) -> frozenset:
    """Flat indices of the top and bottom ``rows`` grid rows."""
    idx = [r * width + c for r in (*range(rows), *range(height - rows, height)) for c in range(width)]
    return frozenset(idx)


def satisfied(W: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Per-constraint flag |h_i| <= tol * (1 + sum_j |W_ij||x_j|)."""
    h = W @ x
    return np.abs(h) <= SAT_TOL * (1.0 + np.abs(W) @ np.abs(x))


def cluster_correct(weights: ClusterWeights, sub_state, cfg: RecallConfig,
                    frozen_local: np.ndarray | None = None) -> tuple[np.ndarray, bool]:
    """Alg. 1 on one cluster's sub-state.  Returns (new sub-state, satisfied)."""
    W, absum = weights.rows, weights.absum
    x = np.asarray(sub_state, dtype=float).copy()
    if frozen_local is None:
        frozen_local = np.zeros(x.size, dtype=bool)
    movable = ~frozen_local & (absum > 0)
    safe = np.where(absum > 0, absum, 1.0)
    for _ in range(cfg.t_max_inner):
        ok = satisfied(W, x)
        if ok.all():
            return x, True
        h = W @ x
        y = np.where(ok, 0.0, np.where(h < 0, 1.0, -1.0))
        g = (W.T @ y) / safe
        step = movable & (np.abs(g) > cfg.phi)
        x[step] += np.sign(g[step])
    return x, bool(satisfied(W, x).all())


@dataclass
class RecallResult:
    state: np.ndarray
    sweeps: int
    trace: list[tuple[int, int, int, bool, int]] = field(default_factory=list)

    def clamped(self, alphabet: int) -> np.ndarray:
        return np.clip(self.state, 0, alphabet - 1)


TRACE_COLUMNS = ("sweep", "plane", "cluster", "committed", "residual_errors")


def _check_aligned(weights, topo):
    if len(weights) != topo.num_clusters:
        raise ValueError(f"{len(weights)} weight blocks for {topo.num_clusters} clusters")


def coupled_correct(weights: list[ClusterWeights], topo: CoupledTopology, noisy, cfg: RecallConfig,
                    reference=None, engine: str = "numba") -> RecallResult:
    """Alg. 2: lexicographic sweep over (plane, cluster), commit only when satisfied.

    ``reference`` (the stored pattern) is used only to fill the trace's
    residual_errors column; the numba engine records no trace.
    """
    _check_aligned(weights, topo)
    x = np.asarray(noisy, dtype=float).copy()
    if x.shape != (topo.n,):
        raise ValueError(f"state has shape {x.shape}, expected ({topo.n},)")
    frozen = cfg.frozen_mask(topo.n)
    if engine == "numba":
        Ws, absums = pack_weights(weights)
        sweeps = _kernels.coupled_kernel(Ws, absums, topo.members, x, frozen, cfg.phi,
                                         cfg.t_max_inner, cfg.t_max_outer)
        return _finish(RecallResult(x, int(sweeps)), cfg)
    if engine != "python":
        raise ValueError(f"unknown engine {engine!r}")
    ref = None if reference is None else np.asarray(reference, dtype=float)
    frozen_vals = x[frozen].copy()
    trace = []
    sweeps = 0
    for t in range(cfg.t_max_outer):
        sweeps += 1
        changed = False
        for c, cw in enumerate(weights):
            idx = cw.neuron_map
            before = x[idx].copy()
            sub, ok = cluster_correct(cw, before, cfg, frozen[idx])
            committed = ok and bool(np.any(sub != before))
            if committed:
                x[idx] = sub
                changed = True
            residual = -1 if ref is None else int(np.count_nonzero(x != ref))
            plane, cl = topo.location(c)
            trace.append((t + 1, plane, cl, committed, residual))
        assert np.array_equal(x[frozen], frozen_vals), "frozen neuron modified"
        if not changed:
            break
    return _finish(RecallResult(x, sweeps, trace), cfg)


def _finish(res: RecallResult, cfg: RecallConfig) -> RecallResult:
    if cfg.alphabet is not None:
        res.state = res.clamped(cfg.alphabet)
    return res


def pack_weights(weights: list[ClusterWeights]) -> tuple[np.ndarray, np.ndarray]:
    """Stack equally shaped cluster matrices for the compiled kernel."""
    shapes = {cw.rows.shape for cw in weights}
    if len(shapes) != 1:
        raise ValueError(f"clusters have differing weight shapes {sorted(shapes)}")
    return (np.ascontiguousarray(np.stack([cw.rows for cw in weights])),
            np.ascontiguousarray(np.stack([cw.absum for cw in weights])))


def unsatisfied_clusters(weights: list[ClusterWeights], state) -> int:
    x = np.asarray(state, dtype=float)
    return sum(not satisfied(cw.rows, x[cw.neuron_map]).all() for cw in weights)


def inject_noise(pattern, p_e: float, seed, frozen=None) -> np.ndarray:
    """Add +1 or -1 to each entry with probability p_e/2 each; frozen indices exempt."""
    if not 0.0 <= p_e <= 1.0:
        raise ValueError(f"p_e must lie in [0, 1], got {p_e}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    x = np.asarray(pattern)
    u = rng.random(x.shape)
    noise = np.where(u < p_e / 2, 1, np.where(u < p_e, -1, 0)).astype(x.dtype)
    if frozen is not None and len(frozen):
        noise[np.fromiter(frozen, dtype=np.int64)] = 0
    return x + noise
