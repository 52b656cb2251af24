import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from facadecity.errors import DegenerateTrimap, SolverDiverged
from facadecity.matting import MattingConfig, binarize_matte, make_trimap, matting_laplacian, solve_matte
from facadecity.raster import BACKGROUND, FOREGROUND, UNKNOWN
from oracles import dense_laplacian, dense_matte


def band_instance(rng, h=10, w=10):
    img = rng.integers(0, 256, size=(h, w)).astype(np.uint8)
    tri = np.full((h, w), UNKNOWN, np.uint8)
    tri[:, :3] = BACKGROUND
    tri[:, -3:] = FOREGROUND
    return img, tri


def test_trimap_thresholds():
    tri = make_trimap(np.array([[0.97, 0.5, 0.02, 0.95, 0.05]]))
    assert tri.tolist() == [[FOREGROUND, UNKNOWN, BACKGROUND, FOREGROUND, BACKGROUND]]
    with pytest.raises(DegenerateTrimap):
        make_trimap(np.zeros((4, 4)))


def test_config_validation():
    with pytest.raises(ValueError):
        MattingConfig(fg_threshold=0.3, bg_threshold=0.5)
    with pytest.raises(ValueError):
        MattingConfig(eps=0)
    with pytest.raises(ValueError):
        MattingConfig(binarize_threshold=1.0)


def test_binarize():
    m = np.array([[0.2, 0.05, 1.0, 0.1]])
    assert binarize_matte(m).tolist() == [[True, False, True, False]]
    assert binarize_matte(np.ones((3, 3))).all()


@settings(max_examples=20, deadline=None)
@given(st.integers(3, 7), st.integers(3, 7), st.integers(0, 2**32 - 1))
def test_laplacian_rows_sum_to_zero_and_symmetric(h, w, seed):
    img = np.random.default_rng(seed).integers(0, 256, size=(h, w)).astype(np.uint8)
    L = matting_laplacian(img).toarray()
    assert np.allclose(L.sum(axis=1), 0.0, atol=1e-9)
    assert np.allclose(L, L.T, atol=1e-9)
    assert np.linalg.eigvalsh(L).min() > -1e-8


def test_sparse_laplacian_matches_dense_oracle(rng):
    img = rng.integers(0, 256, size=(6, 7)).astype(np.uint8)
    assert np.allclose(matting_laplacian(img).toarray(), dense_laplacian(img), atol=1e-9)


def test_iterative_matches_dense_10x10(rng):
    for _ in range(5):
        img, tri = band_instance(rng)
        a = solve_matte(img, tri)
        b = dense_matte(img, tri)
        assert np.abs(a - b).max() < 1e-4


def test_constraints_exact_and_range(rng):
    img, tri = band_instance(rng, 12, 15)
    a = solve_matte(img, tri)
    assert (a[tri == FOREGROUND] == 1.0).all()
    assert (a[tri == BACKGROUND] == 0.0).all()
    assert a.min() >= 0.0 and a.max() <= 1.0


def test_fully_constrained_trimap():
    tri = np.full((4, 4), BACKGROUND, np.uint8)
    tri[:, 2:] = FOREGROUND
    a = solve_matte(np.zeros((4, 4), np.uint8), tri)
    assert np.array_equal(a, (tri == FOREGROUND).astype(float))


def test_uniform_image_band_is_monotone():
    img = np.full((10, 10), 120, np.uint8)
    tri = np.full((10, 10), UNKNOWN, np.uint8)
    tri[:, :2] = BACKGROUND
    tri[:, -2:] = FOREGROUND
    a = solve_matte(img, tri)
    assert (np.diff(a, axis=1) >= -1e-6).all()
    assert np.abs(a - dense_matte(img, tri)).max() < 1e-4


def test_intensity_shift_invariance(rng):
    img, tri = band_instance(rng)
    img = (img // 2).astype(np.uint8)
    a = solve_matte(img, tri)
    b = solve_matte(img + 20, tri)
    assert np.abs(a - b).max() < 1e-5


def test_degenerate_and_diverged(rng):
    img, tri = band_instance(rng)
    no_bg = np.where(tri == BACKGROUND, UNKNOWN, tri).astype(np.uint8)
    with pytest.raises(DegenerateTrimap):
        solve_matte(img, no_bg)
    with pytest.raises(SolverDiverged):
        solve_matte(img, tri, MattingConfig(max_iterations=1, solver_tolerance=1e-14))
