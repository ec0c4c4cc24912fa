"""Pattern-error-rate experiments over a grid of noise levels."""
from __future__ import annotations

import enum
import io
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.stats import binomtest

from . import _kernels
from .memory import random_weights, read_artifacts
from .recall import Mode, RecallConfig, boundary_planes, corner_patches, inject_noise, pack_weights
from .topology import GridSpec, build_topology, global_topology, single_plane_topology

MASK64 = (1 << 64) - 1
CSV_HEADER = "pe,trials,failures,per,wilson_lo,wilson_hi"


class PlanError(ValueError):
    pass


class Arch(enum.Enum):
    COUPLED = "coupled"
    SINGLE_PLANE = "single_plane"
    UNCLUSTERED = "unclustered"


def splitmix64(x: int) -> int:
    """One splitmix64 output step (Steele, Lea, Flood constants)."""
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def trial_seed(base: int, point: int, trial: int) -> int:
    return splitmix64(splitmix64(splitmix64(base & MASK64) ^ point) ^ trial)


def wilson(failures: int, trials: int) -> tuple[float, float]:
    ci = binomtest(failures, trials).proportion_ci(0.95, method="wilson")
    return float(ci.low), float(ci.high)


@dataclass(frozen=True)
class ExperimentPlan:
    pe_grid: tuple[float, ...]
    trials: int = 200
    arch: Arch = Arch.COUPLED
    mode: Mode = Mode.UNCONSTRAINED
    base_seed: int = 1
    grid: GridSpec = GridSpec(32, 32, 8, 2)
    frozen: dict = field(default_factory=lambda: {"layout": "corners", "patch": 3})
    recall: dict = field(default_factory=dict)
    weights: dict = field(default_factory=lambda: {"mode": "random", "m_per_cluster": 48,
                                                   "row_degree": 8, "seed": 7})
    label: str = ""

    def __post_init__(self):
        grid = tuple(float(p) for p in self.pe_grid)
        object.__setattr__(self, "pe_grid", grid)
        object.__setattr__(self, "arch", Arch(self.arch))
        object.__setattr__(self, "mode", Mode(self.mode))
        if self.trials < 1:
            raise PlanError("field 'trials' must be >= 1")
        if not grid or any(p < 0 or p > 1 for p in grid) or any(b <= a for a, b in zip(grid, grid[1:])):
            raise PlanError("field 'pe_grid' must be strictly increasing within [0, 1]")
        if not self.label:
            object.__setattr__(self, "label", f"{self.arch.value}_{self.mode.value}")

    @classmethod
    def from_dict(cls, obj: dict, base_dir=None) -> "ExperimentPlan":
        if "pe_grid" not in obj:
            raise PlanError("plan is missing field 'pe_grid'")
        known = {"pe_grid", "trials", "arch", "mode", "base_seed", "grid", "frozen", "recall",
                 "weights", "label"}
        extra = set(obj) - known
        if extra:
            raise PlanError(f"unknown plan field {sorted(extra)[0]!r}")
        kw = dict(obj)
        try:
            if "grid" in kw:
                kw["grid"] = GridSpec.from_dict(kw["grid"])
            for key in ("arch", "mode"):
                if key in kw:
                    kw[key] = (Arch if key == "arch" else Mode)(kw[key])
        except ValueError as exc:
            raise PlanError(f"bad plan field: {exc}") from None
        w = kw.get("weights")
        if w and "dir" in w and base_dir is not None:
            kw["weights"] = {**w, "dir": str(Path(base_dir, w["dir"]))}
        return cls(**kw)

    def to_dict(self) -> dict:
        return {"pe_grid": list(self.pe_grid), "trials": self.trials, "arch": self.arch.value,
                "mode": self.mode.value, "base_seed": self.base_seed, "grid": self.grid.to_dict(),
                "frozen": self.frozen, "recall": self.recall, "weights": self.weights,
                "label": self.label}


def load_plan(path) -> ExperimentPlan:
    path = Path(path)
    try:
        obj = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise PlanError(f"{path}: malformed JSON ({exc})") from None
    return ExperimentPlan.from_dict(obj, base_dir=path.parent)


def bundled_plan_path(name: str = "ci_plan.json") -> Path:
    return Path(str(resources.files("coupled_assoc") / "data" / name))


@dataclass(frozen=True)
class PERPoint:
    pe: float
    trials: int
    failures: int

    @property
    def per(self) -> float:
        return self.failures / self.trials

    @property
    def interval(self) -> tuple[float, float]:
        return wilson(self.failures, self.trials)


@dataclass(frozen=True)
class PERResult:
    label: str
    points: tuple[PERPoint, ...]

    def at(self, pe: float) -> PERPoint:
        for p in self.points:
            if abs(p.pe - pe) < 1e-12:
                return p
        raise KeyError(pe)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(CSV_HEADER + "\n")
        for p in sorted(self.points, key=lambda q: q.pe):
            lo, hi = p.interval
            buf.write(f"{p.pe:.6g},{p.trials},{p.failures},{p.per:.6f},{lo:.6f},{hi:.6f}\n")
        return buf.getvalue()


def waterfall_midpoint(result: PERResult, level: float = 0.5) -> float | None:
    """Noise level where PER first crosses ``level`` (linear interpolation)."""
    pts = sorted(result.points, key=lambda q: q.pe)
    for a, b in zip(pts, pts[1:]):
        if a.per < level <= b.per:
            return a.pe + (level - a.per) * (b.pe - a.pe) / (b.per - a.per)
    return None


# -- setup -----------------------------------------------------------------------

def _topology(plan: ExperimentPlan):
    n = plan.grid.n
    if plan.arch is Arch.COUPLED:
        return build_topology(plan.grid)
    if plan.arch is Arch.SINGLE_PLANE:
        return single_plane_topology(n, plan.grid.window, plan.grid.stride)
    return global_topology(n)


def _frozen(plan: ExperimentPlan) -> frozenset:
    if plan.mode is Mode.UNCONSTRAINED:
        return frozenset()
    layout = plan.frozen.get("layout", "corners")
    g = plan.grid
    if layout == "corners":
        return corner_patches(g.height, g.width, int(plan.frozen.get("patch", 3)))
    if layout == "boundary":
        return boundary_planes(g.height, g.width, int(plan.frozen.get("rows", g.window)))
    raise PlanError(f"field 'frozen.layout' has unknown value {layout!r}")


def prepare(plan: ExperimentPlan):
    """Resolve topology, weights, stored patterns and recall config."""
    w = plan.weights
    if "dir" in w:
        dataset, weights, topo = read_artifacts(w["dir"])
        if topo.n != plan.grid.n:
            raise PlanError(f"weights in {w['dir']} cover {topo.n} neurons, plan grid has {plan.grid.n}")
        patterns = dataset.patterns
    else:
        if w.get("mode", "random") != "random":
            raise PlanError("field 'weights.mode' must be 'random' unless 'weights.dir' is given")
        topo = _topology(plan)
        m = int(w.get("m_per_cluster", 48))
        size = topo.members.shape[1]
        ref = plan.grid.window ** 2
        m = max(1, round(m * size / ref))
        weights = random_weights(topo, m, float(w.get("row_degree", 8)), int(w.get("seed", 0)))
        patterns = np.zeros((1, topo.n), dtype=np.int64)
    cfg = RecallConfig(mode=plan.mode, frozen=_frozen(plan), **plan.recall)
    return topo, weights, patterns, cfg


def _trial(plan, packed, pe, j, i):
    topo, Ws, absums, patterns, frozen_mask, frozen, cfg = packed
    rng = np.random.default_rng(trial_seed(plan.base_seed, j, i))
    target = patterns[rng.integers(len(patterns))] if len(patterns) > 1 else patterns[0]
    x = inject_noise(target, pe, rng, frozen).astype(float)
    _kernels.coupled_kernel(Ws, absums, topo.members, x, frozen_mask, cfg.phi,
                            cfg.t_max_inner, cfg.t_max_outer)
    return bool(np.any(x != target))


def run_plan(plan: ExperimentPlan, threads: int | None = None) -> PERResult:
    topo, weights, patterns, cfg = prepare(plan)
    Ws, absums = pack_weights(weights)
    packed = (topo, Ws, absums, patterns, cfg.frozen_mask(topo.n), cfg.frozen, cfg)
    threads = threads or os.cpu_count() or 1
    points = []
    for j, pe in enumerate(plan.pe_grid):
        if threads == 1:
            fails = [_trial(plan, packed, pe, j, i) for i in range(plan.trials)]
        else:
            with ThreadPoolExecutor(threads) as pool:
                fails = list(pool.map(lambda i: _trial(plan, packed, pe, j, i), range(plan.trials)))
        points.append(PERPoint(pe, plan.trials, int(sum(fails))))
    return PERResult(plan.label, tuple(points))


def baseline_architectures(plan: ExperimentPlan, threads: int | None = None) -> dict[str, PERResult]:
    """Same protocol on the coupled, single-plane and unclustered layouts."""
    out = {}
    for arch in Arch:
        d = plan.to_dict()
        d.update(arch=arch.value, label=arch.value)
        if arch is not Arch.COUPLED:
            d["mode"] = Mode.UNCONSTRAINED.value
        out[arch.value] = run_plan(ExperimentPlan.from_dict(d), threads)
    return out


def compare(results: list[PERResult]) -> str:
    """Join several results on p_e; missing points are left blank."""
    grid = sorted({p.pe for r in results for p in r.points})
    cols = ["pe"]
    seen: dict[str, int] = {}
    for r in results:
        seen[r.label] = seen.get(r.label, 0) + 1
        tag = r.label if seen[r.label] == 1 else f"{r.label}_{seen[r.label]}"
        cols += [f"per_{tag}", f"lo_{tag}", f"hi_{tag}"]
    lines = [",".join(cols)]
    for pe in grid:
        row = [f"{pe:.6g}"]
        for r in results:
            try:
                p = r.at(pe)
                lo, hi = p.interval
                row += [f"{p.per:.6f}", f"{lo:.6f}", f"{hi:.6f}"]
            except KeyError:
                row += ["", "", ""]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"
