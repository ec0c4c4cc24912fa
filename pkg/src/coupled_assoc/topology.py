"""Sliding-window geometry of the coupled network.

Pattern neurons sit on a ``height x width`` grid, flattened row-major.  A
``window x window`` square moved by ``stride`` cells defines the clusters;
the window's row index is its plane.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .degree_dist import Convention, EdgePolynomial


class TopologyError(ValueError):
    pass


@dataclass(frozen=True)
class GridSpec:
    height: int
    width: int
    window: int
    stride: int

    def __post_init__(self):
        for name in ("height", "width", "window", "stride"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise TopologyError(f"{name} must be a positive integer, got {v!r}")
        if self.window > min(self.height, self.width):
            raise TopologyError("window larger than the grid")
        if (self.height - self.window) % self.stride or (self.width - self.window) % self.stride:
            raise TopologyError(
                f"(height - window) and (width - window) must be divisible by stride={self.stride}")

    @property
    def planes(self) -> int:
        return (self.height - self.window) // self.stride + 1

    @property
    def clusters_per_plane(self) -> int:
        return (self.width - self.window) // self.stride + 1

    @property
    def n(self) -> int:
        return self.height * self.width

    @classmethod
    def from_dict(cls, obj: dict) -> "GridSpec":
        try:
            return cls(int(obj["height"]), int(obj["width"]), int(obj["window"]), int(obj["stride"]))
        except KeyError as exc:
            raise TopologyError(f"grid spec is missing field {exc.args[0]!r}") from None

    def to_dict(self) -> dict:
        return {"height": self.height, "width": self.width, "window": self.window, "stride": self.stride}


@dataclass(frozen=True)
class CoupledTopology:
    """Cluster memberships, one row of ``members`` per (plane, cluster) in lexicographic order."""

    n: int
    planes: int
    clusters_per_plane: int
    members: np.ndarray
    grid: GridSpec | None = None

    @property
    def neuron_degrees(self) -> np.ndarray:
        return np.bincount(self.members.ravel(), minlength=self.n)

    @property
    def num_clusters(self) -> int:
        return self.members.shape[0]

    def cluster_index(self, plane: int, cluster: int) -> int:
        return plane * self.clusters_per_plane + cluster

    def location(self, idx: int) -> tuple[int, int]:
        return divmod(idx, self.clusters_per_plane)

    def to_dict(self) -> dict:
        deg = self.neuron_degrees
        hist = np.bincount(deg)
        lam = edge_degree_distribution(self)
        return {
            "indexing": "row-major",
            "grid": self.grid.to_dict() if self.grid else None,
            "n": self.n,
            "planes": self.planes,
            "clusters_per_plane": self.clusters_per_plane,
            "clusters": [
                {"plane": p, "cluster": c, "members": self.members[self.cluster_index(p, c)].tolist()}
                for p in range(self.planes) for c in range(self.clusters_per_plane)
            ],
            "degree_histogram": {str(d): int(k) for d, k in enumerate(hist) if k},
            "lambda": list(lam.coeffs),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "CoupledTopology":
        grid = GridSpec.from_dict(obj["grid"]) if obj.get("grid") else None
        members = np.array([c["members"] for c in obj["clusters"]], dtype=np.int64)
        return cls(int(obj["n"]), int(obj["planes"]), int(obj["clusters_per_plane"]), members, grid)


def build_topology(spec: GridSpec) -> CoupledTopology:
    w, s = spec.window, spec.stride
    rows = []
    offs = (np.arange(w)[:, None] * spec.width + np.arange(w)[None, :]).ravel()
    for plane in range(spec.planes):
        for d in range(spec.clusters_per_plane):
            rows.append(plane * s * spec.width + d * s + offs)
    members = np.sort(np.array(rows, dtype=np.int64), axis=1)
    return CoupledTopology(spec.n, spec.planes, spec.clusters_per_plane, members, spec)


def single_plane_topology(n: int, window: int = 8, stride: int = 2) -> CoupledTopology:
    """All ``n`` neurons laid out as one ``window``-high strip: a single plane of clusters."""
    if n % window:
        raise TopologyError(f"n={n} is not a multiple of the window height {window}")
    return build_topology(GridSpec(window, n // window, window, stride))


def global_topology(n: int) -> CoupledTopology:
    """One cluster holding every neuron (no clustering)."""
    return CoupledTopology(n, 1, 1, np.arange(n, dtype=np.int64)[None, :], None)


def edge_degree_distribution(topo: CoupledTopology) -> EdgePolynomial:
    """lambda_j = j N_j / sum_k k N_k over pattern-neuron degrees (pattern side)."""
    deg = topo.neuron_degrees
    if deg.min() < 1:
        raise TopologyError("some neurons belong to no cluster")
    counts = np.bincount(deg)
    j = np.arange(len(counts))
    edges = j * counts
    coeffs = edges[1:] / edges.sum()
    return EdgePolynomial(tuple(coeffs), Convention.PATTERN_SIDE)


def dump_topology(topo: CoupledTopology, path) -> None:
    with open(path, "w") as fh:
        json.dump(topo.to_dict(), fh, indent=1)
