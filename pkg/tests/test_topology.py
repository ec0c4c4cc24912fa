import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coupled_assoc.topology import (
    GridSpec,
    TopologyError,
    build_topology,
    dump_topology,
    edge_degree_distribution,
    global_topology,
    single_plane_topology,
)


def axis_profile(length, window, stride):
    """Number of windows covering each position along one axis."""
    cover = np.zeros(length, dtype=int)
    for start in range(0, length - window + 1, stride):
        cover[start:start + window] += 1
    return cover


def lambda_oracle(spec):
    rows = axis_profile(spec.height, spec.window, spec.stride)
    cols = axis_profile(spec.width, spec.window, spec.stride)
    deg = np.outer(rows, cols).ravel()
    counts = np.bincount(deg)
    edges = np.arange(len(counts)) * counts
    return edges[1:] / edges.sum()


def test_flagship_shape():
    topo = build_topology(GridSpec(64, 64, 8, 2))
    assert topo.planes == 29 and topo.clusters_per_plane == 29
    assert topo.members.shape == (29 * 29, 64)


def test_flagship_lambda_matches_axis_product():
    spec = GridSpec(64, 64, 8, 2)
    lam = edge_degree_distribution(build_topology(spec))
    np.testing.assert_allclose(lam.coeffs, lambda_oracle(spec), atol=1e-15)
    assert lam.max_degree == 16
    # degree-16 mass is 16 * 52**2 / (29**2 * 64)
    assert lam.coeffs[15] == pytest.approx(16 * 52 ** 2 / (29 ** 2 * 64))


def test_desk_grid_shape():
    topo = build_topology(GridSpec(32, 32, 8, 2))
    assert topo.planes == topo.clusters_per_plane == 13


def test_row_major_membership():
    topo = build_topology(GridSpec(16, 16, 8, 2))
    first = topo.members[topo.cluster_index(0, 0)]
    assert first.tolist() == [r * 16 + c for r in range(8) for c in range(8)]
    second_plane = topo.members[topo.cluster_index(1, 0)]
    assert second_plane[0] == 2 * 16


def test_location_roundtrip():
    topo = build_topology(GridSpec(32, 32, 8, 2))
    for idx in range(topo.num_clusters):
        assert topo.cluster_index(*topo.location(idx)) == idx


def test_grid_validation():
    with pytest.raises(TopologyError, match="stride"):
        GridSpec(64, 64, 8, 3)
    with pytest.raises(TopologyError, match="window"):
        GridSpec(4, 4, 8, 2)
    with pytest.raises(TopologyError, match="'stride'"):
        GridSpec.from_dict({"height": 8, "width": 8, "window": 4})


def test_single_plane_and_global():
    sp = single_plane_topology(1024)
    assert sp.planes == 1 and sp.clusters_per_plane == 61
    assert sp.neuron_degrees.min() >= 1
    gl = global_topology(100)
    assert gl.num_clusters == 1 and np.all(gl.neuron_degrees == 1)
    with pytest.raises(TopologyError):
        single_plane_topology(1001)


def test_dump_roundtrip(tmp_path):
    topo = build_topology(GridSpec(16, 16, 8, 4))
    path = tmp_path / "t.json"
    dump_topology(topo, path)
    obj = json.loads(path.read_text())
    assert obj["indexing"] == "row-major"
    assert sum(int(k) * v for k, v in obj["degree_histogram"].items()) == topo.members.size
    assert sum(obj["lambda"]) == pytest.approx(1.0)
    back = type(topo).from_dict(obj)
    np.testing.assert_array_equal(back.members, topo.members)
    assert back.grid == topo.grid


grids = st.builds(
    lambda w, s, a, b: GridSpec(w + a * s, w + b * s, w, s),
    st.integers(1, 8), st.integers(1, 8), st.integers(0, 6), st.integers(0, 6),
).filter(lambda g: g.stride <= g.window)


@settings(max_examples=60, deadline=None)
@given(grids)
def test_topology_invariants(spec):
    topo = build_topology(spec)
    assert topo.members.size == topo.neuron_degrees.sum()
    assert topo.neuron_degrees.min() >= 1
    assert np.all(np.diff(topo.members, axis=1) > 0)
    np.testing.assert_allclose(edge_degree_distribution(topo).coeffs, lambda_oracle(spec), atol=1e-14)


def test_invariants_seeded(rng):
    w = int(rng.integers(2, 9))
    s = int(rng.integers(1, w + 1))
    spec = GridSpec(w + s * int(rng.integers(0, 8)), w + s * int(rng.integers(0, 8)), w, s)
    topo = build_topology(spec)
    assert topo.members.size == topo.neuron_degrees.sum()
    assert topo.neuron_degrees.min() >= 1
    assert all(len(set(r)) == len(r) for r in topo.members.tolist())
