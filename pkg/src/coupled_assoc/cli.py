"""Command-line entry point.

Every subcommand writes its artifacts plus a JSON manifest listing the
resolved configuration and a sha256 of each output.  ``repro`` replays a
manifest and checks the outputs match.

Exit codes: 0 ok, 1 repro mismatch, 2 configuration error, 3 infeasible spec.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from importlib import metadata
from pathlib import Path

import numpy as np

from . import density_evolution as de
from . import memory, montecarlo, recall, topology
from .degree_dist import DegreeDistError, default_pair_path, load_pair

EXIT_OK, EXIT_MISMATCH, EXIT_CONFIG, EXIT_INFEASIBLE = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _manifest_path(out: Path) -> Path:
    return out / "manifest.json" if out.is_dir() else out.with_name(out.name + ".manifest.json")


def write_manifest(argv, args, outputs, extra=None) -> Path:
    outputs = [Path(p) for p in outputs]
    target = Path(args.out)
    config = {k: v for k, v in vars(args).items() if k not in ("func",) and v is not None}
    man = {
        "subcommand": " ".join(filter(None, (args.command, getattr(args, "action", None)))),
        "argv": list(argv),
        "config": {k: (str(v) if isinstance(v, Path) else v) for k, v in config.items()},
        "seed": getattr(args, "seed", None),
        "artifacts": {str(p): _sha256(p) for p in outputs},
        "version": _version(),
        **(extra or {}),
    }
    path = _manifest_path(target)
    path.write_text(json.dumps(man, indent=1, sort_keys=True) + "\n")
    return path


def _model(args, omega=0, chain_len=1):
    path = args.dist or default_pair_path()
    if not Path(path).exists():
        raise ConfigError(f"--dist: file not found: {path}")
    pair = load_pair(path)
    return de.DEModel.from_pair(pair, e=args.e, omega=omega, chain_len=chain_len)


def _check_e(args):
    if args.e is not None and args.e < 1:
        raise ConfigError(f"--e must satisfy e >= 1, got {args.e}")


def _check_pe(value):
    if not 0.0 <= value <= 1.0:
        raise ConfigError(f"--pe must lie in [0, 1], got {value}")


def _write_text(path, text) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path


# -- subcommands -------------------------------------------------------------------

def cmd_thresholds(args, argv):
    _check_e(args)
    th = de.thresholds(_model(args))
    line = f"p_dagger={th.p_dagger:.6f} p_star={th.p_star:.6f}"
    print(line)
    if args.out:
        body = {"e": args.e, "p_dagger": th.p_dagger, "p_star": th.p_star}
        out = _write_text(args.out, json.dumps(body, indent=1) + "\n")
        write_manifest(argv, args, [out])
    return EXIT_OK


def cmd_potential(args, argv):
    _check_e(args)
    _check_pe(args.pe)
    model = _model(args)
    z = np.linspace(0.0, 1.0, args.points)
    u = de.potential_scalar(model, z, args.pe)
    rows = ["z,U_s"] + [f"{a:.8f},{b:.12e}" for a, b in zip(z, u)]
    out = _write_text(args.out, "\n".join(rows) + "\n")
    gap = de.energy_gap(model, args.pe)
    write_manifest(argv, args, [out], {"energy_gap": gap.value, "degenerate": gap.degenerate})
    print(f"energy_gap={gap.value:.6e} at z={gap.z:.6f}")
    return EXIT_OK


def cmd_de_trace(args, argv):
    _check_e(args)
    _check_pe(args.pe)
    if args.omega < 0 or args.L < 1:
        raise ConfigError("--omega must be >= 0 and --L >= 1")
    model = _model(args, args.omega, args.L)
    tr = de.iterate_coupled(model, args.pe, constrained=args.mode == "constrained",
                            max_iter=args.max_iter, record=True)
    head = "iteration,max," + ",".join(f"z{i}" for i in range(args.L))
    rows = [head] + [f"{k},{p.max():.12e}," + ",".join(f"{v:.12e}" for v in p)
                     for k, p in enumerate(tr.profiles)]
    out = _write_text(args.out, "\n".join(rows) + "\n")
    write_manifest(argv, args, [out], {"converged": tr.converged, "iterations": tr.iterations})
    print(f"converged={tr.converged} iterations={tr.iterations}")
    return EXIT_OK


def _grid_from_args(args) -> topology.GridSpec:
    if args.grid:
        return topology.GridSpec.from_dict(_read_json(args.grid, "--grid"))
    return topology.GridSpec(args.height, args.width, args.window, args.stride)


def cmd_topology_dump(args, argv):
    topo = topology.build_topology(_grid_from_args(args))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    topology.dump_topology(topo, out)
    write_manifest(argv, args, [out])
    print(f"planes={topo.planes} clusters_per_plane={topo.clusters_per_plane}")
    return EXIT_OK


def _read_json(path, flag):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"{flag}: file not found: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{flag}: malformed JSON in {path} ({exc})") from None


def cmd_memory_gen(args, argv):
    spec = _read_json(args.spec, "--spec")
    if "grid" not in spec:
        raise ConfigError("--spec: missing field 'grid'")
    topo = topology.build_topology(topology.GridSpec.from_dict(spec["grid"]))
    wcfg = spec.get("weights", {})
    mode = wcfg.get("mode", "nullspace" if "generator" in spec else "random")
    m = int(wcfg.get("m_per_cluster", 48))
    if "generator" in spec:
        gspec = memory.GeneratorSpec.from_dict(spec["generator"])
        if gspec.n != topo.n:
            raise ConfigError(f"--spec: generator.n={gspec.n} does not match grid size {topo.n}")
        ds = memory.build_generator(gspec, args.seed)
        ds = memory.with_patterns(ds, memory.enumerate_patterns(ds, int(spec.get("pattern_limit", 1024)),
                                                                args.seed))
    else:
        ds = memory.StoredDataset.zero(topo.n, int(spec.get("S", 2)))
    if mode == "nullspace":
        weights = memory.null_space_weights(ds, topo, m, args.seed)
    elif mode == "random":
        weights = memory.random_weights(topo, m, float(wcfg.get("row_degree", 8)), args.seed)
    else:
        raise ConfigError(f"--spec: field 'weights.mode' has unknown value {mode!r}")
    paths = memory.write_artifacts(args.out, ds, weights, topo, args.seed, memory.spec_hash(spec), mode)
    write_manifest(argv, args, paths, {"spec_hash": memory.spec_hash(spec)})
    print(f"patterns={len(ds.patterns)} clusters={len(weights)} mode={mode}")
    return EXIT_OK


def cmd_recall_run(args, argv):
    _check_pe(args.noise_pe)
    ds, weights, topo = memory.read_artifacts(args.weights)
    frozen = frozenset()
    if args.mode == "constrained":
        if topo.grid is None:
            raise ConfigError("--mode constrained needs a grid in the weights artifact")
        frozen = recall.corner_patches(topo.grid.height, topo.grid.width, args.patch)
    cfg = recall.RecallConfig(args.phi, args.tmax, args.tmax, recall.Mode(args.mode), frozen)
    rng = np.random.default_rng(args.seed)
    target = ds.patterns[rng.integers(len(ds.patterns))]
    noisy = recall.inject_noise(target, args.noise_pe, rng, frozen)
    res = recall.coupled_correct(weights, topo, noisy, cfg, reference=target, engine="python")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs = []
    if args.trace:
        rows = [",".join(recall.TRACE_COLUMNS)] + [
            f"{s},{p},{c},{int(k)},{r}" for s, p, c, k, r in res.trace]
        outputs.append(_write_text(args.trace, "\n".join(rows) + "\n"))
    ok = bool(np.array_equal(res.clamped(ds.S), target))
    summary = {"success": ok, "sweeps": res.sweeps,
               "noisy_errors": int(np.count_nonzero(noisy != target)),
               "residual_errors": int(np.count_nonzero(res.state != target))}
    outputs.append(_write_text(out / "recall.json", json.dumps(summary, indent=1) + "\n"))
    write_manifest(argv, args, outputs)
    print(" ".join(f"{k}={v}" for k, v in summary.items()))
    return EXIT_OK


def cmd_mc_run(args, argv):
    plan = montecarlo.load_plan(args.plan) if args.plan else montecarlo.load_plan(
        montecarlo.bundled_plan_path())
    if args.seed is not None:
        plan = montecarlo.ExperimentPlan.from_dict({**plan.to_dict(), "base_seed": args.seed})
    res = montecarlo.run_plan(plan, args.threads)
    out = _write_text(args.out, res.to_csv())
    write_manifest(argv, args, [out], {"plan": plan.to_dict()})
    sys.stdout.write(res.to_csv())
    return EXIT_OK


def cmd_mc_compare(args, argv):
    results = []
    for p in args.plans:
        plan = montecarlo.load_plan(p)
        if args.seed is not None:
            plan = montecarlo.ExperimentPlan.from_dict({**plan.to_dict(), "base_seed": args.seed})
        results.append(montecarlo.run_plan(plan, args.threads))
    table = montecarlo.compare(results)
    out = _write_text(args.out, table)
    write_manifest(argv, args, [out])
    sys.stdout.write(table)
    return EXIT_OK


def cmd_repro(args, argv):
    man = _read_json(args.manifest, "--manifest")
    if "argv" not in man or "artifacts" not in man:
        raise ConfigError("--manifest: missing field 'argv' or 'artifacts'")
    code = main(man["argv"])
    if code != EXIT_OK:
        return code
    bad = [p for p, h in man["artifacts"].items() if not Path(p).exists() or _sha256(Path(p)) != h]
    for p in bad:
        print(f"mismatch: {p}", file=sys.stderr)
    print("reproduced" if not bad else f"{len(bad)} artifact(s) differ")
    return EXIT_MISMATCH if bad else EXIT_OK


# -- parser ------------------------------------------------------------------------

def _dist_args(p):
    p.add_argument("--dist", help="degree-distribution JSON (default: bundled)")
    p.add_argument("--e", type=int, default=2, help="errors correctable per cluster")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="coupled-assoc", description=__doc__.splitlines()[0])
    ap.add_argument("--threads", type=int, default=None, help="worker threads (default: all cores)")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("thresholds", help="uncoupled and coupled noise thresholds")
    _dist_args(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_thresholds)

    p = sub.add_parser("potential-curve", help="scalar potential over z in [0, 1]")
    _dist_args(p)
    p.add_argument("--pe", type=float, required=True)
    p.add_argument("--points", type=int, default=501)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_potential)

    p = sub.add_parser("de-trace", help="coupled density-evolution profiles per iteration")
    _dist_args(p)
    p.add_argument("--pe", type=float, required=True)
    p.add_argument("--omega", type=int, default=2)
    p.add_argument("--L", type=int, default=29)
    p.add_argument("--mode", choices=("constrained", "unconstrained"), default="constrained")
    p.add_argument("--max-iter", type=int, default=100_000)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_de_trace)

    topo = sub.add_parser("topology").add_subparsers(dest="action", required=True)
    p = topo.add_parser("dump", help="write cluster memberships and degree statistics")
    p.add_argument("--grid", help="JSON with height, width, window, stride")
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--window", type=int, default=8)
    p.add_argument("--stride", type=int, default=2)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_topology_dump)

    mem = sub.add_parser("memory").add_subparsers(dest="action", required=True)
    p = mem.add_parser("gen", help="generate patterns and per-cluster weights")
    p.add_argument("--spec", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_memory_gen)

    rec = sub.add_parser("recall").add_subparsers(dest="action", required=True)
    p = rec.add_parser("run", help="one noisy recall with a per-visit trace")
    p.add_argument("--weights", required=True, help="directory written by 'memory gen'")
    p.add_argument("--noise-pe", type=float, required=True)
    p.add_argument("--mode", choices=("constrained", "unconstrained"), default="unconstrained")
    p.add_argument("--phi", type=float, default=0.999)
    p.add_argument("--tmax", type=int, default=10)
    p.add_argument("--patch", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trace")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_recall_run)

    mc = sub.add_parser("mc").add_subparsers(dest="action", required=True)
    p = mc.add_parser("run", help="pattern error rate over a noise grid")
    p.add_argument("--plan", help="plan JSON (default: bundled desk plan)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_mc_run)
    p = mc.add_parser("compare", help="joined table across several plans")
    p.add_argument("--plans", nargs="+", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_mc_compare)

    p = sub.add_parser("repro", help="replay a manifest and verify outputs")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_repro)
    return ap


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    if args.threads is not None and args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    if args.threads is None:
        args.threads = os.cpu_count() or 1
    try:
        return args.func(args, argv)
    except (memory.InfeasibleSpecError, memory.NullSpaceEmptyError) as exc:
        print(f"error: infeasible spec: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ConfigError, DegreeDistError, topology.TopologyError, montecarlo.PlanError,
            FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
