import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from facadecity.errors import DimMismatch, IsolatedRegion, NoSourcePatch, SliceError
from facadecity.inpaint import (
    InpaintBackend, InpaintRequest, PatchConfig, TilerConfig, TileStats, diffusion_backend,
    free_form_mask, get_backend, inpaint_diffusion, inpaint_losses, inpaint_patch, inpaint_tiled,
    patch_backend, run_inpaint, split_for_inpaint,
)
from oracles import dense_harmonic


def stripes(h=240, w=320, period=20):
    x = np.arange(w)
    row = np.where((x // (period // 2)) % 2 == 0, 60, 190).astype(np.uint8)
    return np.tile(row, (h, 1))


# --- request / config ---

def test_request_validation():
    with pytest.raises(DimMismatch):
        InpaintRequest(np.zeros((3, 3), np.uint8), np.zeros((3, 4), bool))
    with pytest.raises(ValueError):
        InpaintRequest(np.zeros((3, 3), np.uint8), np.ones((3, 3), bool))
    with pytest.raises(ValueError):
        TilerConfig(context_radius=-1)
    with pytest.raises(ValueError):
        TilerConfig(context_radius=100, max_chunk=(150, 400))
    with pytest.raises(ValueError):
        PatchConfig(min_patch=10, max_patch=5)
    with pytest.raises(ValueError):
        get_backend("gan")


# --- diffusion ---

def test_constant_restored(rng):
    img = np.full((30, 40), 100, np.uint8)
    mask = rng.random(img.shape) < 0.4
    mask[0, 0] = False
    assert (inpaint_diffusion(InpaintRequest(img, mask)) == 100).all()


def test_linear_gradient_reproduced():
    img = np.tile(np.linspace(20, 220, 60), (40, 1)).round().astype(np.uint8)
    mask = np.zeros(img.shape, bool)
    mask[12:28, 20:40] = True
    out = inpaint_diffusion(InpaintRequest(img, mask))
    assert np.abs(out.astype(int) - img.astype(int))[mask].max() <= 1
    oracle = dense_harmonic(img, mask)
    assert np.abs(out.astype(float) - oracle)[mask].max() <= 0.5 + 1e-9


def test_single_boundary_value():
    img = np.random.default_rng(0).integers(0, 256, (6, 7)).astype(np.uint8)
    mask = np.ones(img.shape, bool)
    mask[3, 4] = False
    out = inpaint_diffusion(InpaintRequest(img, mask))
    assert (out == img[3, 4]).all()


def test_diffusion_matches_dense_oracle(rng):
    img = rng.integers(0, 256, (14, 16)).astype(np.uint8)
    mask = rng.random(img.shape) < 0.5
    mask[0, 0] = False
    out = inpaint_diffusion(InpaintRequest(img, mask))
    oracle = dense_harmonic(img, mask)
    assert np.abs(out.astype(float) - oracle)[mask].max() <= 0.5 + 1e-9


def test_jacobi_route_agrees_with_direct(rng):
    img = rng.integers(0, 256, (20, 20)).astype(np.uint8)
    mask = np.zeros(img.shape, bool)
    mask[5:15, 4:12] = True
    req = InpaintRequest(img, mask)
    direct = inpaint_diffusion(req)
    iterative = inpaint_diffusion(req, iterations=20000, tolerance=1e-6)
    assert np.abs(direct.astype(int) - iterative.astype(int)).max() <= 1


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.3, 0.99))
def test_valid_requests_never_isolated(seed, density):
    # a maximal masked component always borders an unmasked pixel unless it is the whole image
    rng = np.random.default_rng(seed)
    mask = rng.random((12, 12)) < density
    if mask.all():
        mask[rng.integers(12), rng.integers(12)] = False
    img = rng.integers(0, 256, mask.shape).astype(np.uint8)
    with warnings.catch_warnings():
        warnings.simplefilter("error", IsolatedRegion)
        inpaint_diffusion(InpaintRequest(img, mask))


def test_empty_mask_identity(rng):
    img = rng.integers(0, 256, (8, 8)).astype(np.uint8)
    for fill in (inpaint_diffusion, inpaint_patch):
        assert np.array_equal(fill(InpaintRequest(img, np.zeros(img.shape, bool))), img)


# --- patch ---

def test_stripes_continue():
    img = stripes()
    mask = np.zeros(img.shape, bool)
    mask[60:180, 150:170] = True
    out = inpaint_patch(InpaintRequest(img, mask), PatchConfig(seed=0))
    err = np.abs(out.astype(int) - img.astype(int))[mask]
    assert (err < 10).mean() >= 0.95


def test_patch_uniform_exact():
    img = np.full((120, 120), 77, np.uint8)
    mask = np.zeros(img.shape, bool)
    mask[40:60, 50:70] = True
    assert (inpaint_patch(InpaintRequest(img, mask)) == 77).all()


def test_patch_deterministic(rng):
    img = rng.integers(0, 256, (130, 130)).astype(np.uint8)
    mask = np.zeros(img.shape, bool)
    mask[55:75, 60:70] = True
    cfg = PatchConfig(min_patch=9, max_patch=15, search_area=30, seed=3)
    a = inpaint_patch(InpaintRequest(img, mask), cfg)
    b = inpaint_patch(InpaintRequest(img, mask), cfg)
    assert np.array_equal(a, b)


def test_no_source_patch():
    img = np.zeros((60, 60), np.uint8)
    mask = np.zeros(img.shape, bool)
    mask[::4, :] = True
    with pytest.raises(NoSourcePatch):
        inpaint_patch(InpaintRequest(img, mask), PatchConfig(min_patch=8, max_patch=8, search_area=20))


# --- conservation (all backends, tiler) ---

@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["diffusion", "patch", "tiled"]))
def test_unmasked_pixels_bit_identical(seed, route):
    rng = np.random.default_rng(seed)
    img = rng.integers(0, 256, (90, 110)).astype(np.uint8)
    mask, _ = free_form_mask(img.shape, rng, strokes=(1, 2), width=(3, 6), max_step=20)
    if mask.all():
        return
    req = InpaintRequest(img, mask)
    if route == "diffusion":
        out = inpaint_diffusion(req)
    elif route == "patch":
        try:
            out = inpaint_patch(req, PatchConfig(min_patch=5, max_patch=9, search_area=40, seed=seed))
        except NoSourcePatch:
            return
    else:
        out = inpaint_tiled(req, diffusion_backend(), TilerConfig(10, (40, 30)))
    assert np.array_equal(out[~mask], img[~mask])
    assert out.shape == img.shape and out.dtype == np.uint8


# --- tiler ---

def test_single_blob_slice_size():
    img = np.zeros((600, 800), np.uint8)
    mask = np.zeros(img.shape, bool)
    mask[275:325, 375:425] = True
    (tile, sub), = split_for_inpaint(InpaintRequest(img, mask), TilerConfig(100, (600, 400)))
    assert (tile.width, tile.height) == (250, 250)
    assert sub.mask.sum() == mask.sum()


def test_two_far_blobs_two_slices():
    img = np.zeros((600, 900), np.uint8)
    mask = np.zeros(img.shape, bool)
    mask[280:300, 100:120] = True
    mask[280:300, 620:640] = True
    slices = split_for_inpaint(InpaintRequest(img, mask), TilerConfig(100, (600, 400)))
    assert len(slices) == 2
    a, b = slices[0][0], slices[1][0]
    assert a.x1 <= b.x0 or b.x1 <= a.x0


def test_empty_mask_no_slices_no_calls():
    img = np.zeros((50, 50), np.uint8)
    req = InpaintRequest(img, np.zeros(img.shape, bool))
    assert split_for_inpaint(req) == []
    calls = []
    backend = InpaintBackend("spy", True, None, lambda r: calls.append(1) or r.image)
    assert np.array_equal(inpaint_tiled(req, backend), img)
    assert calls == []


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_slice_masks_cover_mask_and_respect_bound(seed):
    rng = np.random.default_rng(seed)
    img = rng.integers(0, 256, (300, 420)).astype(np.uint8)
    mask, _ = free_form_mask(img.shape, rng, width=(4, 30), max_step=120)
    if mask.all():
        return
    cfg = TilerConfig(20, (120, 90))
    union = np.zeros(mask.shape, bool)
    for tile, _ in split_for_inpaint(InpaintRequest(img, mask), cfg):
        assert tile.width <= 120 and tile.height <= 90
        tile.take(union)[...] |= tile.take(mask)
    assert np.array_equal(union, mask)


def test_tiled_equals_whole_image_diffusion(rng):
    img = np.clip(np.add.outer(np.arange(300) * 0.4, np.arange(500) * 0.3) + rng.normal(0, 8, (300, 500)),
                  0, 255).astype(np.uint8)
    mask = np.zeros(img.shape, bool)
    mask[130:170, 220:290] = True
    req = InpaintRequest(img, mask)
    whole = inpaint_diffusion(req)
    tiled = inpaint_tiled(req, diffusion_backend(), TilerConfig(100, (600, 400)))
    assert np.abs(whole.astype(int) - tiled.astype(int))[mask].mean() <= 1.0


def test_far_components_independent(rng):
    img = rng.integers(0, 256, (200, 700)).astype(np.uint8)
    m1 = np.zeros(img.shape, bool)
    m1[80:110, 60:90] = True
    m2 = np.zeros(img.shape, bool)
    m2[90:120, 580:620] = True
    tiled = inpaint_tiled(InpaintRequest(img, m1 | m2), diffusion_backend(), TilerConfig(50, (300, 200)))
    seq = inpaint_diffusion(InpaintRequest(img, m1))
    seq = inpaint_diffusion(InpaintRequest(seq, m2))
    assert np.array_equal(tiled, seq)


def test_large_component_grid_split_and_bound(rng):
    img = rng.integers(0, 256, (500, 900)).astype(np.uint8)
    mask = np.zeros(img.shape, bool)
    mask[150:350, 100:800] = True
    stats = TileStats()
    out = inpaint_tiled(InpaintRequest(img, mask), diffusion_backend(), TilerConfig(100, (600, 400)),
                        stats=stats)
    assert stats.peak_slice_area <= 600 * 400
    assert stats.slice_count > 1
    assert np.array_equal(out[~mask], img[~mask])


def test_slice_error_carries_index():
    def boom(req):
        raise RuntimeError("backend exploded")
    img = np.zeros((40, 40), np.uint8)
    mask = np.zeros(img.shape, bool)
    mask[10:15, 10:15] = True
    with pytest.raises(SliceError) as info:
        inpaint_tiled(InpaintRequest(img, mask), InpaintBackend("boom", True, None, boom), TilerConfig(5, (20, 20)))
    assert info.value.slice_id == 0


def test_workers_do_not_change_result(rng):
    img = rng.integers(0, 256, (200, 300)).astype(np.uint8)
    mask, _ = free_form_mask(img.shape, 4, width=(5, 12), max_step=60)
    req = InpaintRequest(img, mask)
    cfg = TilerConfig(15, (80, 60))
    assert np.array_equal(inpaint_tiled(req, diffusion_backend(), cfg, workers=1),
                          inpaint_tiled(req, diffusion_backend(), cfg, workers=4))


def test_backend_max_dims():
    b = InpaintBackend("tiny", True, (10, 10), lambda r: r.image)
    with pytest.raises(ValueError):
        b(InpaintRequest(np.zeros((20, 20), np.uint8), np.zeros((20, 20), bool)))
    assert patch_backend().name == "patch" and get_backend("patch", 3).deterministic


# --- metrics ---

def test_losses_and_metrics():
    truth = np.full((10, 10), 100, np.uint8)
    pred = truth.copy()
    pred[0, :5] = 151
    mask = np.zeros(truth.shape, bool)
    mask[0, :] = True
    l1, l2 = inpaint_losses(pred, truth, mask)
    assert l1 == pytest.approx(0.1) and l2 == pytest.approx(0.5 * 0.2 ** 2)
    req = InpaintRequest(pred, mask)
    _, m = run_inpaint(req, diffusion_backend(), TilerConfig(2, (10, 10)), truth=truth)
    assert set(m.to_dict()) == {"l1_mean", "l2_mean", "wall_time_ms", "slice_count", "peak_slice_area"}
    assert m.l1_mean == pytest.approx(0.0) and m.slice_count >= 1


def test_free_form_mask_seeded():
    a, log_a = free_form_mask((100, 120), 9)
    b, log_b = free_form_mask((100, 120), 9)
    assert np.array_equal(a, b) and log_a == log_b and a.any()
    assert all({"width", "points"} <= set(s) for s in log_a)
