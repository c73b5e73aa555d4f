import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from crowdsteer import kernels

BACKENDS = kernels.available_backends()


def test_compiled_backend_selected():
    assert kernels.BACKEND in BACKENDS
    if "cython" in BACKENDS:
        assert kernels.BACKEND == "cython"


def _scene(seed):
    rng = np.random.default_rng(seed)
    segs = rng.uniform(-5, 5, (7, 5))
    discs = np.column_stack([rng.uniform(-5, 5, (4, 2)), rng.uniform(0.1, 1.0, 4), np.ones(4)])
    return segs, discs


@pytest.mark.skipif("cython" not in BACKENDS, reason="compiled kernels not built")
@given(st.integers(0, 10_000), st.floats(-4, 4), st.floats(-4, 4))
def test_backends_agree(seed, ox, oy):
    segs, discs = _scene(seed)
    py, cy = BACKENDS["python"], BACKENDS["cython"]
    angles = np.linspace(-np.pi, np.pi, 37)
    np.testing.assert_allclose(cy.ray_hit_matrix(ox, oy, angles, segs, discs),
                               py.ray_hit_matrix(ox, oy, angles, segs, discs), rtol=0, atol=1e-12)
    np.testing.assert_allclose(cy.ray_cast(ox, oy, angles, segs, discs),
                               py.ray_cast(ox, oy, angles, segs, discs), rtol=0, atol=1e-12)
    pts = np.random.default_rng(seed).uniform(-6, 6, (25, 2))
    np.testing.assert_allclose(cy.points_min_distance(pts, segs, discs),
                               py.points_min_distance(pts, segs, discs), rtol=0, atol=1e-12)


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_empty_inputs(name):
    k = BACKENDS[name]
    segs, discs = np.zeros((0, 5)), np.zeros((0, 4))
    assert np.all(np.isinf(k.ray_cast(0.0, 0.0, np.zeros(3), segs, discs)))
    assert k.ray_hit_matrix(0.0, 0.0, np.zeros(3), segs, discs).shape == (3, 0)


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_inside_disc_hits_at_zero(name):
    k = BACKENDS[name]
    out = k.ray_cast(0.0, 0.0, np.array([0.0, 1.0]), np.zeros((0, 5)), np.array([[0.1, 0.0, 0.5, 1.0]]))
    assert np.all(out == 0.0)
