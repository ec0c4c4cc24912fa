import itertools

import numpy as np
import pytest

from coupled_assoc.memory import (
    ClusterWeights,
    GeneratorSpec,
    build_generator,
    enumerate_patterns,
    null_space_weights,
    random_cluster_matrix,
    random_weights,
    single_error_bound,
    with_patterns,
)
from coupled_assoc.recall import (
    Mode,
    RecallConfig,
    cluster_correct,
    corner_patches,
    coupled_correct,
    inject_noise,
    satisfied,
    unsatisfied_clusters,
)
from coupled_assoc.topology import GridSpec, build_topology, global_topology

GRID = GridSpec(16, 16, 8, 2)


@pytest.fixture(scope="module")
def net():
    topo = build_topology(GRID)
    return topo, random_weights(topo, 48, 8, seed=11)


def constrained_cfg(**kw):
    return RecallConfig(mode=Mode.CONSTRAINED, frozen=corner_patches(16, 16, 3), **kw)


# -- config and noise ------------------------------------------------------------

def test_config_invariants():
    with pytest.raises(ValueError, match="frozen"):
        RecallConfig(mode=Mode.CONSTRAINED)
    with pytest.raises(ValueError, match="must not freeze"):
        RecallConfig(frozen={1})
    with pytest.raises(ValueError, match="phi"):
        RecallConfig(phi=0.0)


def test_corner_patches():
    fr = corner_patches(16, 16, 3)
    assert len(fr) == 36
    assert {0, 15, 15 * 16, 255} <= fr


def test_noise_identity_and_full():
    x = np.zeros(10_000, dtype=int)
    assert np.array_equal(inject_noise(x, 0.0, 1), x)
    y = inject_noise(x, 1.0, 2)
    assert np.all(np.abs(y) == 1)
    plus = (y == 1).sum()
    assert abs(plus - 5000) <= 3 * np.sqrt(2500)


def test_noise_binomial_band(seed):
    n, p = 4096, 0.2
    k = np.count_nonzero(inject_noise(np.zeros(n, dtype=int), p, seed))
    assert abs(k - n * p) <= 4 * np.sqrt(n * p * (1 - p))


def test_noise_frozen_exempt(seed):
    fr = corner_patches(16, 16, 3)
    y = inject_noise(np.zeros(256, dtype=int), 1.0, seed, fr)
    assert not y[sorted(fr)].any()
    assert np.count_nonzero(y) == 256 - len(fr)


def test_noise_domain():
    with pytest.raises(ValueError):
        inject_noise(np.zeros(3), 1.5, 0)


# -- cluster level ------------------------------------------------------------------

def test_noise_free_cluster_satisfied(net):
    _, ws = net
    x, ok = cluster_correct(ws[0], np.zeros(64), RecallConfig())
    assert ok and not x.any()


def find_cancelling_cluster():
    """Brute force: a 2x4 weight matrix in {-1,0,1} with a +1/-1 error pair invisible to every row."""
    for flat in itertools.product((-1, 0, 1), repeat=8):
        w = np.array(flat, dtype=float).reshape(2, 4)
        if not np.all(w.any(0)) or not np.all((w != 0).sum(1) >= 2):
            continue
        for i, j in itertools.combinations(range(4), 2):
            err = np.zeros(4)
            err[i], err[j] = 1, -1
            if not np.any(w @ err):
                return w, err
    raise AssertionError("no cancelling example")


def test_false_convergence_example():
    w, err = find_cancelling_cluster()
    cw = ClusterWeights(w, np.arange(4))
    x, ok = cluster_correct(cw, err, RecallConfig())
    assert ok
    assert np.array_equal(x, err) and err.any()


def test_single_error_rate_bound(seed):
    rng = np.random.default_rng(seed)
    cw = ClusterWeights(random_cluster_matrix(64, 48, 8, rng), np.arange(64))
    bound = single_error_bound(cw)
    trials, ok = 2000, 0
    for _ in range(trials):
        x = np.zeros(64)
        x[rng.integers(64)] = rng.choice((-1.0, 1.0))
        out, sat = cluster_correct(cw, x, RecallConfig())
        ok += sat and not out.any()
    assert ok / trials >= bound - 0.03


def test_frozen_local_never_moves():
    rng = np.random.default_rng(0)
    cw = ClusterWeights(random_cluster_matrix(64, 48, 8, rng), np.arange(64))
    x = np.zeros(64)
    x[5] = 1
    frozen = np.zeros(64, dtype=bool)
    frozen[5] = True
    out, ok = cluster_correct(cw, x, RecallConfig(), frozen)
    assert out[5] == 1 and not ok


# -- coupled sweep ---------------------------------------------------------------------

def test_zero_noise_single_sweep(net):
    topo, ws = net
    res = coupled_correct(ws, topo, np.zeros(topo.n), RecallConfig(), reference=np.zeros(topo.n),
                          engine="python")
    assert res.sweeps == 1 and not res.state.any()
    assert not any(row[3] for row in res.trace)
    assert len(res.trace) == topo.num_clusters


def test_engines_agree(net, seed):
    topo, ws = net
    cfg = constrained_cfg() if seed % 2 else RecallConfig()
    x = inject_noise(np.zeros(topo.n, dtype=int), 0.1 + 0.03 * seed, seed, cfg.frozen)
    a = coupled_correct(ws, topo, x, cfg, engine="numba")
    b = coupled_correct(ws, topo, x, cfg, engine="python")
    np.testing.assert_array_equal(a.state, b.state)
    assert a.sweeps == b.sweeps


def test_determinism(net, seed):
    topo, ws = net
    x = inject_noise(np.zeros(topo.n, dtype=int), 0.2, seed)
    r1 = coupled_correct(ws, topo, x, RecallConfig(), reference=np.zeros(topo.n), engine="python")
    r2 = coupled_correct(ws, topo, x, RecallConfig(), reference=np.zeros(topo.n), engine="python")
    assert r1.trace == r2.trace and r1.state.tobytes() == r2.state.tobytes()


def test_frozen_immutable(net, seed):
    topo, ws = net
    cfg = constrained_cfg()
    x = inject_noise(np.zeros(topo.n, dtype=int), 0.3, seed, cfg.frozen).astype(float)
    idx = sorted(cfg.frozen)
    x[idx] = 0.0
    res = coupled_correct(ws, topo, x, cfg, engine="numba")
    assert not res.state[idx].any()


def visit_by_visit(ws, topo, x, cfg):
    """Replays one sweep, yielding (cluster, before, after, satisfied_flag)."""
    x = x.astype(float).copy()
    frozen = cfg.frozen_mask(topo.n)
    for c, cw in enumerate(ws):
        before = x.copy()
        sub, ok = cluster_correct(cw, x[cw.neuron_map], cfg, frozen[cw.neuron_map])
        if ok:
            x[cw.neuron_map] = sub
        yield c, before, x.copy(), ok


def test_revert_safety_and_local_monotonicity(net, seed):
    topo, ws = net
    cfg = RecallConfig()
    x = inject_noise(np.zeros(topo.n, dtype=int), 0.25, seed)
    state = x.astype(float)
    for c, before, after, ok in visit_by_visit(ws, topo, state, cfg):
        if not ok:
            assert before.tobytes() == after.tobytes()
        else:
            own = ws[c]
            assert satisfied(own.rows, after[own.neuron_map]).all()
    final = coupled_correct(ws, topo, x, RecallConfig(t_max_outer=1), engine="python").state
    np.testing.assert_array_equal(final, after)


def test_unsatisfied_visit_reverts_global_cluster():
    topo = global_topology(64)
    ws = random_weights(topo, 48, 8, seed=3)
    x = inject_noise(np.zeros(64, dtype=int), 0.6, 0).astype(float)
    _, ok = cluster_correct(ws[0], x, RecallConfig())
    assert not ok
    res = coupled_correct(ws, topo, x, RecallConfig(), engine="python")
    np.testing.assert_array_equal(res.state, x)


def test_trace_residual_column(net):
    topo, ws = net
    x = inject_noise(np.zeros(topo.n, dtype=int), 0.05, 4)
    res = coupled_correct(ws, topo, x, RecallConfig(), reference=np.zeros(topo.n), engine="python")
    assert res.trace[-1][4] == np.count_nonzero(res.state)
    assert unsatisfied_clusters(ws, res.state) == 0 or res.trace[-1][4] > 0


def test_low_noise_recovery(net):
    topo, ws = net
    fails = 0
    for s in range(100):
        x = inject_noise(np.zeros(topo.n, dtype=int), 0.03, s)
        fails += bool(coupled_correct(ws, topo, x, RecallConfig()).state.any())
    assert fails <= 3


def test_clamp_only_with_alphabet(net):
    topo, ws = net
    x = np.zeros(topo.n)
    x[0] = -1
    x[200] = 1
    raw = coupled_correct(ws, topo, x, RecallConfig(t_max_inner=1, t_max_outer=1), engine="python")
    clamped = coupled_correct(ws, topo, x, RecallConfig(t_max_inner=1, t_max_outer=1, alphabet=2),
                              engine="python")
    np.testing.assert_array_equal(clamped.state, np.clip(raw.state, 0, 1))


def test_bad_engine_and_shape(net):
    topo, ws = net
    with pytest.raises(ValueError, match="engine"):
        coupled_correct(ws, topo, np.zeros(topo.n), RecallConfig(), engine="gpu")
    with pytest.raises(ValueError, match="shape"):
        coupled_correct(ws, topo, np.zeros(3), RecallConfig())


# -- erasures on subspace datasets -------------------------------------------------------

@pytest.fixture(scope="module")
def subspace_net():
    spec = GeneratorSpec(k=8, n=32, gamma=2, upsilon=2, S=11, d_star=10, planes=1, clusters=4)
    ds = build_generator(spec, 2)
    ds = with_patterns(ds, enumerate_patterns(ds, 10 ** 6, 2))
    topo = build_topology(GridSpec(4, 8, 4, 2))
    return ds, topo, null_space_weights(ds, topo, 16, 2)


def test_erasure_is_integer_noise(subspace_net, seed):
    ds, topo, ws = subspace_net
    rng = np.random.default_rng(seed)
    target = ds.patterns[rng.integers(len(ds.patterns))].astype(float)
    noisy = inject_noise(target, 0.05, rng)
    erase = rng.choice(np.flatnonzero(target)) if target.any() else 0
    noisy[erase] = 0.0
    a = coupled_correct(ws, topo, noisy, RecallConfig(), engine="numba")
    b = coupled_correct(ws, topo, noisy, RecallConfig(), engine="python")
    np.testing.assert_array_equal(a.state, b.state)


def test_unit_erasure_equals_minus_one_error(subspace_net):
    ds, topo, ws = subspace_net
    target = next(p for p in ds.patterns if (p == 1).any()).astype(float)
    j = int(np.flatnonzero(target == 1)[0])
    erased = target.copy()
    erased[j] = 0.0
    minus = target + np.eye(len(target))[j] * -1
    np.testing.assert_array_equal(erased, minus)
    r1 = coupled_correct(ws, topo, erased, RecallConfig(), engine="python")
    r2 = coupled_correct(ws, topo, minus, RecallConfig(), engine="python")
    np.testing.assert_array_equal(r1.state, r2.state)


def test_stored_patterns_are_fixed_points(subspace_net):
    ds, topo, ws = subspace_net
    for p in ds.patterns[::17]:
        res = coupled_correct(ws, topo, p, RecallConfig(alphabet=ds.S), engine="numba")
        np.testing.assert_array_equal(res.state, p)
