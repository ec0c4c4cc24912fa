"""Stored content: subspace datasets and per-cluster weight matrices.

Patterns are ``x = u . G`` for a non-negative integer generator ``G`` with a
block-staircase layout, so every cluster sees a proper subspace.  Weights are
either exact orthogonal complements of those subspaces (``nullspace``) or
sparse random bipartite graphs paired with the all-zero pattern (``random``).
"""
from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import linalg
from sympy import QQ, ZZ
from sympy.polys.matrices import DomainMatrix

from .topology import CoupledTopology, GridSpec

EXACT_MAX_N = 256
ORTHO_TOL = 1e-9


class InfeasibleSpecError(ValueError):
    pass


class NullSpaceEmptyError(ValueError):
    pass


@dataclass(frozen=True)
class GeneratorSpec:
    k: int
    n: int
    gamma: int = 2
    upsilon: int = 2
    S: int = 11
    d_star: int = 10
    planes: int = 1
    clusters: int = 1

    def __post_init__(self):
        if min(self.k, self.n, self.planes, self.clusters, self.d_star) < 1:
            raise InfeasibleSpecError("k, n, planes, clusters and d_star must be positive")
        if self.gamma < 2 or self.upsilon < 2 or self.S < 2:
            raise InfeasibleSpecError("gamma, upsilon and S must be >= 2")
        if self.k > self.n:
            raise InfeasibleSpecError(f"k={self.k} exceeds n={self.n}")
        blocks = self.planes * self.clusters
        if self.k % blocks or self.n % blocks:
            raise InfeasibleSpecError(f"planes*clusters={blocks} must divide k={self.k} and n={self.n}")
        if self.S - 1 < self.d_star * (self.gamma - 1) * (self.upsilon - 1):
            raise InfeasibleSpecError(
                f"S-1={self.S - 1} < d*(gamma-1)(upsilon-1)="
                f"{self.d_star * (self.gamma - 1) * (self.upsilon - 1)}")

    @property
    def block_rows(self) -> int:
        return self.k // (self.planes * self.clusters)

    @property
    def block_cols(self) -> int:
        return self.n // (self.planes * self.clusters)

    def to_dict(self) -> dict:
        return {f: getattr(self, f) for f in
                ("k", "n", "gamma", "upsilon", "S", "d_star", "planes", "clusters")}

    @classmethod
    def from_dict(cls, obj: dict) -> "GeneratorSpec":
        try:
            return cls(**{k: int(v) for k, v in obj.items()})
        except TypeError as exc:
            raise InfeasibleSpecError(f"bad generator spec: {exc}") from None

    def digest(self) -> str:
        return spec_hash(self.to_dict())


def spec_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class StoredDataset:
    patterns: np.ndarray
    S: int
    generator: np.ndarray | None = None
    spec: GeneratorSpec | None = None
    rank: int | None = None

    @classmethod
    def zero(cls, n: int, S: int = 2) -> "StoredDataset":
        return cls(np.zeros((1, n), dtype=np.int64), S)

    @property
    def n(self) -> int:
        return self.patterns.shape[1]


@dataclass(frozen=True)
class ClusterWeights:
    rows: np.ndarray
    neuron_map: np.ndarray
    plane: int = 0
    cluster: int = 0
    absum: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "rows", np.ascontiguousarray(self.rows, dtype=float))
        object.__setattr__(self, "neuron_map", np.asarray(self.neuron_map, dtype=np.int64))
        object.__setattr__(self, "absum", np.abs(self.rows).sum(0))
        if self.rows.shape[1] != self.neuron_map.shape[0]:
            raise ValueError("weight columns do not match the neuron map")

    def degrees(self) -> np.ndarray:
        """Number of constraints touching each pattern neuron."""
        return (self.rows != 0).sum(0)

    def to_dict(self) -> dict:
        return {"plane": self.plane, "cluster": self.cluster,
                "neuron_map": self.neuron_map.tolist(), "rows": self.rows.tolist()}

    @classmethod
    def from_dict(cls, obj: dict) -> "ClusterWeights":
        return cls(np.array(obj["rows"], dtype=float), np.array(obj["neuron_map"]),
                   int(obj.get("plane", 0)), int(obj.get("cluster", 0)))


# -- exact linear algebra ---------------------------------------------------

def exact_rank(mat) -> int:
    mat = np.asarray(mat)
    if mat.size == 0:
        return 0
    return DomainMatrix.from_list(mat.astype(object).tolist(), ZZ).convert_to(QQ).rank()


def _null_basis(mat: np.ndarray) -> np.ndarray:
    """Orthonormal basis (columns) of {w : mat @ w = 0}."""
    k, n = mat.shape
    if n <= EXACT_MAX_N and np.issubdtype(mat.dtype, np.integer):
        dm = DomainMatrix.from_list(mat.astype(object).tolist(), ZZ).convert_to(QQ)
        ns = dm.nullspace().to_Matrix()
        if ns.rows == 0:
            return np.zeros((n, 0))
        basis = np.array(ns.tolist(), dtype=float).T
        q, _ = np.linalg.qr(basis)
        return q
    return linalg.null_space(np.asarray(mat, dtype=float))


# -- generator construction ---------------------------------------------------

def _full_row_rank_block(spec: GeneratorSpec, rng) -> np.ndarray:
    br, bc = spec.block_rows, spec.block_cols
    for _ in range(1000):
        blk = rng.integers(0, spec.gamma, size=(br, bc))
        if exact_rank(blk) == br:
            return blk
    raise InfeasibleSpecError("could not draw a full-row-rank block")


def _cap_column_weight(gen: np.ndarray, d_star: int) -> None:
    for j in range(gen.shape[1]):
        nz = np.flatnonzero(gen[:, j])
        if nz.size > d_star:
            order = nz[np.argsort(gen[nz, j], kind="stable")]
            gen[order[:nz.size - d_star], j] = 0


def build_generator(spec: GeneratorSpec, seed: int) -> StoredDataset:
    """Staircase generator: block row i holds random blocks in block columns i and i+1."""
    rng = np.random.default_rng(seed)
    nb = spec.planes * spec.clusters
    br, bc = spec.block_rows, spec.block_cols
    for _ in range(100):
        gen = np.zeros((spec.k, spec.n), dtype=np.int64)
        for i in range(nb):
            for b in (i, i + 1):
                if b < nb:
                    gen[i * br:(i + 1) * br, b * bc:(b + 1) * bc] = _full_row_rank_block(spec, rng)
        _cap_column_weight(gen, spec.d_star)
        r = exact_rank(gen) if spec.n <= EXACT_MAX_N else int(np.linalg.matrix_rank(gen))
        if r == spec.k:
            return StoredDataset(np.zeros((0, spec.n), dtype=np.int64), spec.S, gen, spec, r)
    raise InfeasibleSpecError("generator never reached full rank under the column-weight cap")


def enumerate_patterns(dataset: StoredDataset, limit: int, seed: int = 0) -> np.ndarray:
    """Admissible patterns x = u.G with entries in [0, S-1], for distinct u.

    Exhaustive (lexicographic in u) when upsilon**k <= limit, otherwise a
    random sample of distinct u vectors.
    """
    spec, gen = dataset.spec, dataset.generator
    if gen is None or spec is None:
        return dataset.patterns[:limit]
    total = spec.upsilon ** spec.k
    if total <= limit:
        us = np.array(list(itertools.product(range(spec.upsilon), repeat=spec.k)), dtype=np.int64)
    else:
        rng = np.random.default_rng(seed)
        seen: set[bytes] = set()
        rows = []
        while len(rows) < limit:
            u = rng.integers(0, spec.upsilon, size=spec.k)
            key = u.tobytes()
            if key not in seen:
                seen.add(key)
                rows.append(u)
        us = np.array(rows, dtype=np.int64)
    xs = us @ gen
    ok = xs.max(axis=1) <= spec.S - 1
    return xs[ok][:limit]


def with_patterns(dataset: StoredDataset, patterns: np.ndarray) -> StoredDataset:
    return replace(dataset, patterns=np.asarray(patterns, dtype=np.int64))


# -- weights ------------------------------------------------------------------

def null_space_weights(dataset: StoredDataset, topo: CoupledTopology, m_per_cluster: int,
                       seed: int, support: int = 3) -> list[ClusterWeights]:
    """Rows orthogonal to every stored sub-pattern of each cluster.

    Each row is a random combination of ``support`` vectors of an orthonormal
    basis of the cluster's null space.
    """
    span = dataset.generator if dataset.generator is not None else dataset.patterns
    out = []
    for idx, members in enumerate(topo.members):
        plane, cl = topo.location(idx)
        basis = _null_basis(span[:, members])
        dim = basis.shape[1]
        if dim == 0:
            raise NullSpaceEmptyError(f"cluster ({plane}, {cl}) has a full-dimensional sub-pattern space")
        rng = np.random.default_rng([seed, idx])
        rows = np.empty((m_per_cluster, len(members)))
        for r in range(m_per_cluster):
            pick = rng.choice(dim, size=min(support, dim), replace=False)
            row = basis[:, pick] @ rng.standard_normal(pick.size)
            rows[r] = row / np.abs(row).max()
        rows[np.abs(rows) < 1e-13] = 0.0
        out.append(ClusterWeights(rows, members, plane, cl))
    return out


def random_cluster_matrix(n_c: int, m: int, row_degree: float, rng) -> np.ndarray:
    """Sparse random rows with +-1 * U[0.5, 1.5] weights; every neuron touched."""
    p = min(1.0, row_degree / n_c)
    rows = np.zeros((m, n_c))
    for r in range(m):
        while True:
            mask = rng.random(n_c) < p
            if mask.sum() >= 2:
                break
        rows[r, mask] = rng.choice((-1.0, 1.0), size=mask.sum()) * rng.uniform(0.5, 1.5, mask.sum())
    for j in np.flatnonzero(~rows.any(axis=0)):
        rows[rng.integers(m), j] = rng.choice((-1.0, 1.0)) * rng.uniform(0.5, 1.5)
    return rows


def random_weights(topo: CoupledTopology, m_per_cluster: int = 48, row_degree: float = 8.0,
                   seed: int = 0) -> list[ClusterWeights]:
    out = []
    for idx, members in enumerate(topo.members):
        rng = np.random.default_rng([seed, idx])
        plane, cl = topo.location(idx)
        out.append(ClusterWeights(random_cluster_matrix(len(members), m_per_cluster, row_degree, rng),
                                  members, plane, cl))
    return out


def orthogonality_residual(weights: list[ClusterWeights], patterns: np.ndarray) -> float:
    worst = 0.0
    for cw in weights:
        if patterns.size:
            worst = max(worst, float(np.abs(patterns[:, cw.neuron_map] @ cw.rows.T).max()))
    return worst


def single_error_bound(cw: ClusterWeights) -> float:
    """1 - (d_avg / m) ** d_min for the pattern-neuron degrees of one cluster."""
    deg = cw.degrees()
    return 1.0 - (deg.mean() / cw.rows.shape[0]) ** deg.min()


# -- artifacts ------------------------------------------------------------------

def write_artifacts(out_dir, dataset: StoredDataset, weights: list[ClusterWeights],
                    topo: CoupledTopology, seed: int, digest: str, mode: str) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    head = {"seed": seed, "spec_hash": digest}
    if dataset.generator is not None:
        p = out / "generator.json"
        p.write_text(json.dumps({**head, "spec": dataset.spec.to_dict(), "rank": dataset.rank,
                                 "generator": dataset.generator.tolist()}))
        paths.append(p)
    p = out / "patterns.i32"
    dataset.patterns.astype("<i4").tofile(p)
    paths.append(p)
    p = out / "patterns.json"
    p.write_text(json.dumps({**head, "dtype": "<i4", "order": "row-major",
                             "shape": list(dataset.patterns.shape), "S": dataset.S}))
    paths.append(p)
    p = out / "weights.json"
    p.write_text(json.dumps({**head, "mode": mode, "n": topo.n, "planes": topo.planes,
                             "clusters_per_plane": topo.clusters_per_plane,
                             "grid": topo.grid.to_dict() if topo.grid else None,
                             "clusters": [cw.to_dict() for cw in weights]}))
    paths.append(p)
    return paths


def read_artifacts(in_dir) -> tuple[StoredDataset, list[ClusterWeights], CoupledTopology]:
    d = Path(in_dir)
    for name in ("weights.json", "patterns.json", "patterns.i32"):
        if not (d / name).exists():
            raise FileNotFoundError(f"missing artifact {d / name}")
    wobj = json.loads((d / "weights.json").read_text())
    pmeta = json.loads((d / "patterns.json").read_text())
    pats = np.fromfile(d / "patterns.i32", dtype="<i4").reshape(pmeta["shape"]).astype(np.int64)
    weights = [ClusterWeights.from_dict(c) for c in wobj["clusters"]]
    members = np.array([cw.neuron_map for cw in weights], dtype=np.int64)
    grid = GridSpec.from_dict(wobj["grid"]) if wobj.get("grid") else None
    topo = CoupledTopology(int(wobj["n"]), int(wobj["planes"]), int(wobj["clusters_per_plane"]),
                           members, grid)
    return StoredDataset(pats, int(pmeta["S"])), weights, topo
