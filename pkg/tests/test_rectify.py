import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from facadecity.errors import DegenerateQuad, NumericallyUnstable, SingularSystem
from facadecity.rectify import (
    CameraGuess, FacadeQuad, RectifiedFacade, apply_homography, aspect_ratio, bounding_quadrangle,
    estimate_focal, homography_from_points, homography_from_quad, is_convex, normalize_homography,
    output_size, rectify_facade, scale_to_world, warp, warp_mask,
)
from facadecity.synthetic import PinholeCamera, render_facade
from facadecity.vanish import VanishingPoint

FIN = VanishingPoint.finite
INF = VanishingPoint.infinite


def rect_quad(x0, y0, x1, y1):
    return FacadeQuad(np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], float))


def vp_of(h):
    return FIN(h[0] / h[2], h[1] / h[2]) if abs(h[2]) > 1e-12 else INF(np.degrees(np.arctan2(h[1], h[0])))


# --- quadrangle ---

@pytest.mark.parametrize("hull", ["mask", "bbox"])
def test_axis_aligned_pencils_give_bbox(hull):
    m = np.zeros((240, 140), bool)
    m[10:211, 10:111] = True
    q = bounding_quadrangle(m, INF(0), INF(90), hull=hull)
    assert np.allclose(q.corners, [[10.5, 10.5], [110.5, 10.5], [110.5, 210.5], [10.5, 210.5]])


def test_quad_matches_projected_rectangle():
    cam = PinholeCamera(700.0, 640, 480, yaw_deg=25.0, pitch_deg=-15.0, distance=16.0)
    r = render_facade(cam, 12.0, 8.0, rng=0)
    v1, v2 = cam.vanishing_points()
    q = bounding_quadrangle(r.mask, vp_of(v1), vp_of(v2))
    assert np.abs(q.corners - r.corners).max() < 1.0
    ys, xs = np.nonzero(r.mask)
    pts = np.column_stack([xs, ys]) + 0.5
    # every mask pixel lies inside the quad (0.5 px tolerance)
    c = q.corners
    for i in range(4):
        a, b = c[i], c[(i + 1) % 4]
        n = np.array([b[1] - a[1], a[0] - b[0]]) / np.hypot(*(b - a))
        s = (pts - a) @ n
        inner = (c[(i + 2) % 4] - a) @ n
        assert np.all(np.sign(inner) * s >= -0.5)
    assert is_convex(q.corners)


def test_single_pixel_mask_is_degenerate():
    m = np.zeros((20, 20), bool)
    m[5, 5] = True
    with pytest.raises(DegenerateQuad):
        bounding_quadrangle(m, INF(0), INF(90))


def test_identical_vps_degenerate():
    m = np.ones((20, 20), bool)
    with pytest.raises(DegenerateQuad):
        bounding_quadrangle(m, INF(0), INF(0))
    with pytest.raises(DegenerateQuad):
        bounding_quadrangle(np.zeros((5, 5), bool), INF(0), INF(90))


# --- focal ---

def test_focal_example_and_camera_oracle():
    f, approx = estimate_focal(FIN(1000, 0), FIN(-400, 0), (0, 0), 999.0)
    assert f == pytest.approx(math.sqrt(400000)) and not approx
    # a camera with that focal and orthogonal directions yields those VPs
    K = np.array([[f, 0, 0], [0, f, 0], [0, 0, 1.0]])
    d1 = np.array([1000 / f, 0, 1.0])
    d2 = np.array([-400 / f, 0, 1.0])
    assert abs(d1 @ d2) < 1e-12
    v1, v2 = K @ d1, K @ d2
    assert np.allclose(v1[:2] / v1[2], [1000, 0]) and np.allclose(v2[:2] / v2[2], [-400, 0])


def test_focal_fallbacks():
    assert estimate_focal(INF(0), FIN(5, 5), (0, 0), 800.0) == (800.0, True)
    assert estimate_focal(FIN(10, 5), FIN(5, 0), (0, 0), 800.0) == (800.0, True)  # dot = +50


@settings(max_examples=30, deadline=None)
@given(st.floats(400, 1500), st.floats(-35, 35), st.floats(-35, 35))
def test_focal_recovered_from_synthetic_camera(f, yaw, pitch):
    if abs(yaw) < 3 or abs(pitch) < 3:
        return
    cam = PinholeCamera(f, 640, 480, yaw, pitch)
    v1, v2 = (vp_of(v) for v in cam.vanishing_points())
    got, approx = estimate_focal(v1, v2, (320, 240), 800.0)
    assert not approx and got == pytest.approx(f, rel=1e-6)


# --- aspect ---

def test_aspect_fronto_parallel():
    for f in (100.0, 1000.0, 5000.0):
        cam = CameraGuess((50, 50), f)
        assert aspect_ratio(rect_quad(0, 0, 200, 100), cam) == pytest.approx(2.0)
        assert aspect_ratio(rect_quad(3, 3, 4, 4), cam) == pytest.approx(1.0)


def test_aspect_under_yaw():
    cam = PinholeCamera(800.0, 640, 480, yaw_deg=30.0, pitch_deg=0.0, distance=20.0)
    w, h = 9.0, 6.0
    corners = cam.project([[-w / 2, -h / 2, 0], [w / 2, -h / 2, 0], [w / 2, h / 2, 0], [-w / 2, h / 2, 0]])
    r = aspect_ratio(FacadeQuad(corners), CameraGuess((320, 240), 800.0))
    assert r == pytest.approx(1.5, rel=0.02)


def test_aspect_degenerate():
    q = FacadeQuad(np.array([[0, 0], [1, 0], [2, 0], [3, 0]], float))
    with pytest.raises(NumericallyUnstable):
        aspect_ratio(q, CameraGuess((0, 0), 100.0))
    with pytest.raises(ValueError):
        CameraGuess((0, 0), 0.0)


# --- homography ---

def test_target_rectangle_gives_identity():
    H = homography_from_quad(rect_quad(0, 0, 300, 150), 2.0, 150)
    assert np.allclose(H, np.eye(3), atol=1e-12)


def test_homography_round_trip():
    H0 = normalize_homography(np.array([[1.1, 0.2, 30], [-0.1, 0.9, 12], [4e-4, -2e-4, 1.0]]))
    rect = np.array([[0, 0], [200, 0], [200, 100], [0, 100]], float)
    q = FacadeQuad(apply_homography(H0, rect))
    H = homography_from_quad(q, 2.0, 100)
    assert np.allclose(normalize_homography(H @ H0), np.eye(3), atol=1e-6)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(-500, 500), st.floats(-500, 500)), min_size=4, max_size=4))
def test_homography_exact_on_correspondences(pts):
    src = np.array(pts)
    span = max(np.ptp(src[:, 0]), np.ptp(src[:, 1]))
    tri = [abs(np.linalg.det(np.stack([src[b] - src[a], src[c] - src[a]])))
           for a, b, c in ((0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3))]
    if span < 1 or min(tri) < 0.05 * span ** 2:
        return  # near-collinear sets are covered by the SingularSystem test
    dst = np.array([[0, 0], [3, 0], [3, 1], [0, 1]], float)
    H = homography_from_points(src, dst)
    assert np.abs(apply_homography(H, src) - dst).max() < 1e-9


def test_collinear_corners_singular():
    q = FacadeQuad(np.array([[0, 0], [1, 1], [2, 2], [0, 5]], float))
    with pytest.raises(SingularSystem):
        homography_from_quad(q, 1.0, 10)
    with pytest.raises(ValueError):
        homography_from_quad(rect_quad(0, 0, 1, 1), 0.0, 10)


# --- warp ---

def test_identity_warp():
    img = np.random.default_rng(0).integers(0, 256, (20, 30)).astype(np.uint8)
    rf = warp(img, np.ones(img.shape), np.eye(3), (30, 20))
    assert np.array_equal(rf.texture, img)
    assert (rf.matte == 1.0).all()


def bilinear(img, x, y):
    """Bilinear read with pixel centres at integer+0.5 and edge clamping."""
    h, w = img.shape
    x, y = min(max(x - 0.5, 0), w - 1), min(max(y - 0.5, 0), h - 1)
    x0, y0 = int(math.floor(x)), int(math.floor(y))
    x1, y1 = min(x0 + 1, w - 1), min(y0 + 1, h - 1)
    fx, fy = x - x0, y - y0
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def test_scale_two_warp_bilinear_probes():
    rng = np.random.default_rng(1)
    img = rng.integers(0, 256, (16, 24)).astype(np.uint8)
    H = np.diag([2.0, 2.0, 1.0])
    rf = warp(img, np.ones(img.shape), H, (48, 32))
    assert rf.texture.shape == (32, 48)
    f = img.astype(float)
    for u, v in zip(rng.integers(0, 48, 16), rng.integers(0, 32, 16)):
        expect = bilinear(f, (u + 0.5) / 2, (v + 0.5) / 2)
        assert abs(int(rf.texture[v, u]) - math.floor(expect + 0.5)) <= 0


def test_warp_outside_source_transparent():
    img = np.full((10, 10), 200, np.uint8)
    H = np.array([[1, 0, -1000], [0, 1, 0], [0, 0, 1.0]])
    rf = warp(img, np.ones(img.shape), H, (10, 10))
    assert (rf.matte == 0).all()


def test_area_preserving_warp_keeps_mask_count():
    m = np.zeros((200, 200))
    m[50:150, 60:140] = 1.0
    t = np.radians(20)
    H = np.array([[np.cos(t), -np.sin(t), 60], [np.sin(t), np.cos(t), -20], [0, 0, 1.0]])
    out = warp_mask(m, H, (260, 260))
    assert abs((out > 0.5).sum() / m.sum() - 1) < 0.02


# --- scale and sidecar ---

@pytest.mark.parametrize("aspect,width,height", [(2.0, 20.0, 10.0), (0.5, 10.0, 20.0)])
def test_scale_to_world(aspect, width, height):
    rf = RectifiedFacade(np.zeros((2, 2), np.uint8), np.zeros((2, 2)), aspect)
    out = scale_to_world(rf, width)
    assert out.world_width == width and out.world_height == pytest.approx(height)
    assert set(out.sidecar()) == {"aspect", "world_width", "world_height", "focal", "approximate_focal"}
    with pytest.raises(ValueError):
        scale_to_world(rf, 0)


def test_output_size_tracks_aspect():
    for a in (0.37, 1.0, 1.5, 3.2):
        w, h = output_size(a, 123.4)
        assert abs(w - a * h) <= 1


def test_end_to_end_known_camera():
    cam = PinholeCamera(750.0, 640, 480, yaw_deg=-28.0, pitch_deg=18.0, distance=18.0)
    r = render_facade(cam, 12.0, 8.0, rng=3)
    v1, v2 = (vp_of(v) for v in cam.vanishing_points())
    rf, q = rectify_facade(r.image, r.mask.astype(float), r.mask, v2, v1)
    assert rf.aspect == pytest.approx(1.5, rel=0.05)
    assert np.hypot(*(q.corners - r.corners).T).mean() < 1.5
    assert abs(rf.texture.shape[1] - rf.aspect * rf.texture.shape[0]) <= 1
    world = scale_to_world(rf, 12.0)
    assert world.world_height == pytest.approx(8.0, rel=0.02)
    assert rf.focal == pytest.approx(750.0, rel=1e-3) and not rf.approximate_focal


def test_infinite_vp_flags_approximate():
    cam = PinholeCamera(750.0, 640, 480, yaw_deg=0.0, pitch_deg=20.0, distance=18.0)
    r = render_facade(cam, 12.0, 8.0, rng=4)
    v1, v2 = (vp_of(v) for v in cam.vanishing_points())
    rf, _ = rectify_facade(r.image, r.mask.astype(float), r.mask, v1, v2)
    assert rf.approximate_focal and rf.focal == pytest.approx(800.0)
