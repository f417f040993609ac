import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.ndimage import gaussian_filter

from histomri.core.containers import Geometry, RasterImage, VoxelVolume
from histomri.errors import GeometryMismatch, InsufficientOverlap, WindowExceedsImage
from histomri.evaluation import jacobian_report
from histomri.registration import (
    AffineTransform,
    DeformationField,
    RegistrationParams,
    apply_transform,
    chain_to_field,
    entropy_image,
    exp_velocity,
    histogram_entropy,
    jacobian_determinant,
    load_chain,
    map_points,
    mattes_mi,
    register_affine,
    register_diffeo,
    rigid_transform,
    rotation_matrix,
    save_chain,
)


def blob_image(n=96, smooth=True) -> RasterImage:
    """An ellipse with two brighter inclusions on a zero background, optionally blurred."""
    yy, xx = np.mgrid[:n, :n] + 0.5
    c = n / 2
    img = np.zeros((n, n))
    img[((yy - c) / (0.36 * n)) ** 2 + ((xx - c) / (0.28 * n)) ** 2 < 1] = 0.4
    img[((yy - c + 0.12 * n) / (0.1 * n)) ** 2 + ((xx - c - 0.05 * n) / (0.06 * n)) ** 2 < 1] = 0.8
    img[((yy - c - 0.15 * n) / (0.05 * n)) ** 2 + ((xx - c + 0.08 * n) / (0.09 * n)) ** 2 < 1] = 1.0
    if smooth:
        img = gaussian_filter(img, 1.0)
        img[img < 0.02] = 0.0
    return RasterImage(img)


def rot2(deg):
    t = np.deg2rad(deg)
    return np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]])


def angle_of(a):
    return np.rad2deg(np.arctan2(a[1, 0] - a[0, 1], a[0, 0] + a[1, 1]))


# ---------------------------------------------------------------- metrics


def test_entropy_constant_is_zero():
    out = entropy_image(RasterImage(np.full((20, 20), 3.0)), 2, 8)
    assert np.all(out.data == 0)


def two_value_entropy(p):
    return -(p * np.log(p) + (1 - p) * np.log(1 - p))


def test_entropy_checkerboard_closed_form():
    # odd windows on a checkerboard hold 12 / 13 of each phase (2D) and 13 / 14 (3D)
    board = (np.indices((20, 20)).sum(0) % 2).astype(float)
    out = entropy_image(RasterImage(board), 2, 2)
    np.testing.assert_allclose(out.data[2:-2, 2:-2], two_value_entropy(12 / 25), atol=1e-6)
    cube = (np.indices((7, 7, 7)).sum(0) % 2).astype(float)
    v = entropy_image(VoxelVolume(cube), 1, 2)
    np.testing.assert_allclose(v.data[1:-1, 1:-1, 1:-1], two_value_entropy(13 / 27), atol=1e-6)


def test_entropy_bounded_by_log_bins(rng):
    out = entropy_image(RasterImage(rng.random((30, 30))), 2, 8)
    assert out.data.min() >= 0 and out.data.max() <= np.log(8) + 1e-12


def test_entropy_window_too_large():
    with pytest.raises(WindowExceedsImage):
        entropy_image(RasterImage(np.zeros((4, 4))), 3, 8)


def test_mi_self_equals_entropy():
    # grey levels further apart than the B-spline support: the Parzen estimate is exact
    a = blob_image(smooth=False)
    mi, _ = mattes_mi(a, a, AffineTransform.identity(2, a.geometry.center))
    h = histogram_entropy(a.data.ravel(), 32)
    assert abs(mi - h) <= 0.02 * h


def test_mi_against_constant():
    a = blob_image()
    mi, _ = mattes_mi(a, RasterImage(np.ones(a.shape)), AffineTransform.identity(2))
    assert mi <= 1e-3


def test_mi_inverted_image():
    a = blob_image()
    inv = RasterImage(np.where(a.data > 0, 1.2 - a.data, 0.0))
    ident = AffineTransform.identity(2)
    assert mattes_mi(a, inv, ident)[0] >= 0.95 * mattes_mi(a, a, ident)[0]


def test_mi_insufficient_overlap():
    a = blob_image()
    far = AffineTransform(np.eye(2), [500.0, 500.0], [0.0, 0.0])
    with pytest.raises(InsufficientOverlap):
        mattes_mi(a, a, far)


def test_mi_gradient_matches_finite_differences(rng):
    a = blob_image(64)
    b = RasterImage(np.where(a.data > 0, 1.1 - a.data, 0.0))
    c = a.geometry.center
    base = AffineTransform(rot2(3) * 1.02, [1.3, -0.7], c)
    _, grad = mattes_mi(a, b, base)
    for _ in range(3):
        direction = rng.normal(size=6)
        direction /= np.linalg.norm(direction)
        h = 1e-4
        mats = [base.matrix + s * h * direction[:4].reshape(2, 2) for s in (1, -1)]
        trs = [base.translation + s * h * direction[4:] for s in (1, -1)]
        vp = mattes_mi(a, b, AffineTransform(mats[0], trs[0], c))[0]
        vm = mattes_mi(a, b, AffineTransform(mats[1], trs[1], c))[0]
        fd = (vp - vm) / (2 * h)
        an = grad @ direction
        assert abs(an - fd) <= 0.02 * max(abs(fd), 1e-3)


def test_mi_sample_order_invariant(rng):
    a = blob_image(48)
    perm = rng.permutation(a.data.size)
    pa = RasterImage(a.data.ravel()[perm].reshape(a.shape))
    b = RasterImage(np.sqrt(a.data))
    pb = RasterImage(b.data.ravel()[perm].reshape(a.shape))
    ident = AffineTransform.identity(2)
    np.testing.assert_allclose(mattes_mi(a, b, ident)[0], mattes_mi(pa, pb, ident)[0], rtol=1e-12)


# ---------------------------------------------------------------- affine


def test_affine_self_is_identity():
    f = blob_image()
    t = register_affine(f, f)
    assert np.max(np.abs(t.matrix - np.eye(2))) <= 1e-3
    assert np.linalg.norm(t.apply(f.geometry.center) - f.geometry.center) <= 0.1


def test_affine_recovers_rotation_and_shift():
    f = blob_image()
    c = f.geometry.center
    planted = AffineTransform(rot2(7), [5.0, -3.0], c)
    moving = apply_transform(f, planted)
    t = register_affine(f, moving)
    expect = planted.inverse()
    assert abs(angle_of(t.matrix) - angle_of(expect.matrix)) <= 0.5
    assert np.linalg.norm(t.apply(c) - expect.apply(c)) <= 0.5


def test_affine_multimodal():
    f = blob_image()
    c = f.geometry.center
    planted = AffineTransform(rot2(5), [2.0, 1.0], c)
    warped = apply_transform(f, planted)
    moving = RasterImage(np.where(warped.data > 0.02, 3.0 * (1.1 - warped.data), 0.0))
    t = register_affine(f, moving, RegistrationParams(metric="mattes_mi"))
    expect = planted.inverse()
    assert abs(angle_of(t.matrix) - angle_of(expect.matrix)) <= 1.0
    assert np.linalg.norm(t.apply(c) - expect.apply(c)) <= 1.0


def test_affine_entropy_metric():
    f = blob_image()
    c = f.geometry.center
    planted = AffineTransform(rot2(-4), [-2.0, 3.0], c)
    moving = apply_transform(f, planted)
    t = register_affine(f, moving, RegistrationParams(metric="ssd_on_entropy"))
    expect = planted.inverse()
    assert abs(angle_of(t.matrix) - angle_of(expect.matrix)) <= 1.0
    assert np.linalg.norm(t.apply(c) - expect.apply(c)) <= 1.0


def test_affine_inverse_consistent():
    f = blob_image()
    c = f.geometry.center
    g = apply_transform(f, AffineTransform(rot2(6) * 1.03, [3.0, 2.0], c))
    ab = register_affine(f, g)
    ba = register_affine(g, f)
    both = ab.then(ba)
    pts = np.array([c, c + [20, 0], c + [0, 20]])
    residual = map_points([ab, ba], pts) - pts
    assert np.max(np.linalg.norm(residual, axis=-1)) <= 1.0
    assert abs(angle_of(both.matrix)) <= 1.0


# ---------------------------------------------------------------- diffeomorphic


def sinusoid_warp(geom: Geometry, amplitude_vox: float, seed: int) -> DeformationField:
    rng = np.random.default_rng(seed)
    x = geom.points() / geom.extent
    ph = rng.uniform(0, 2 * np.pi, 3)
    d = geom.ndim
    comps = [np.sin(2 * np.pi * x[..., (a + 1) % d] + ph[a]) for a in range(d)]
    u = np.stack(comps, axis=-1)
    u *= amplitude_vox / np.max(np.linalg.norm(u, axis=-1))
    return DeformationField(u * np.asarray(geom.spacing), geom)


def test_exp_zero_velocity_is_identity():
    v = np.zeros((8, 9, 2))
    np.testing.assert_array_equal(exp_velocity(v, 6), 0.0)


def test_diffeo_identity_pair():
    f = blob_image(64)
    phi = register_diffeo(f, f)
    rms = np.sqrt(np.mean(np.sum(phi.displacement**2, axis=-1)))
    assert rms < 0.1


def test_diffeo_recovers_sinusoid_warp():
    f = blob_image(96)
    true = sinusoid_warp(f.geometry, 3.0, seed=3)
    fixed = apply_transform(f, [true])
    phi = register_diffeo(fixed, f, RegistrationParams(metric="ssd"))
    fg = f.data > 0
    err = np.linalg.norm(phi.displacement - true.displacement, axis=-1)
    start = np.linalg.norm(true.displacement, axis=-1)
    assert err[fg].mean() < 1.0
    assert err[fg].mean() < 0.5 * start[fg].mean()
    assert jacobian_report(phi).negative_count == 0


def test_diffeo_forward_inverse_consistent():
    f = blob_image(64)
    fixed = apply_transform(f, [sinusoid_warp(f.geometry, 2.0, seed=5)])
    phi = register_diffeo(fixed, f, RegistrationParams(metric="ssd"))
    pts = f.geometry.points()
    back = phi.inverse.apply(phi.apply(pts))
    assert np.sqrt(np.mean(np.sum((back - pts) ** 2, axis=-1))) < 0.5


def test_diffeo_rejects_mismatched_grids():
    with pytest.raises(ValueError):
        register_diffeo(blob_image(32), blob_image(40))


# ---------------------------------------------------------------- transforms


def test_identity_chain_is_lossless():
    f = blob_image(40)
    out = apply_transform(f, [AffineTransform.identity(2), DeformationField.zeros(f.geometry)])
    np.testing.assert_allclose(out.data, f.data, atol=1e-5)


def test_one_voxel_shift_nearest_is_exact():
    data = np.random.default_rng(0).random((10, 12, 8))
    vol = VoxelVolume(data)
    out = apply_transform(vol, AffineTransform(np.eye(3), [1.0, 0, 0], np.zeros(3)), method="nearest")
    np.testing.assert_array_equal(out.data[:-1], data[1:])


def test_single_pass_close_to_two_pass():
    f = blob_image(80)
    a = AffineTransform(rot2(4), [1.5, -1.0], f.geometry.center)
    w = sinusoid_warp(f.geometry, 1.5, seed=2)
    one = apply_transform(f, [a, w])
    two = apply_transform(apply_transform(f, w), a)
    rms = np.sqrt(np.mean((one.data - two.data) ** 2))
    assert rms / np.ptp(f.data) <= 0.005


def test_apply_transform_dimension_mismatch():
    with pytest.raises(GeometryMismatch):
        apply_transform(blob_image(16), AffineTransform.identity(3))


def test_chain_round_trip(tmp_path):
    f = blob_image(24)
    chain = [AffineTransform(rot2(2), [1, 2], [3, 4]), sinusoid_warp(f.geometry, 1.0, seed=0)]
    save_chain(chain, tmp_path, "c")
    back = load_chain(tmp_path, "c")
    pts = f.geometry.points()
    np.testing.assert_allclose(map_points(back, pts), map_points(chain, pts), atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(-0.5, 0.5), min_size=3, max_size=3), st.lists(st.floats(-10, 10), min_size=3, max_size=3))
def test_rigid_inverse_round_trip(angles, shift):
    t = rigid_transform(angles, shift, [1.0, 2.0, 3.0])
    pts = np.random.default_rng(0).normal(size=(5, 3)) * 10
    np.testing.assert_allclose(t.inverse().apply(t.apply(pts)), pts, atol=1e-9)
    r = rotation_matrix(angles)
    np.testing.assert_allclose(r @ r.T, np.eye(3), atol=1e-12)


def test_jacobian_zero_field():
    g = Geometry((6, 7, 5), (1.0, 2.0, 0.5))
    np.testing.assert_allclose(jacobian_determinant(DeformationField.zeros(g)).data, 1.0)


def test_jacobian_uniform_scale():
    g = Geometry((10, 10, 10), (1.0, 1.5, 2.0))
    scale = AffineTransform(1.2 * np.eye(3), np.zeros(3), g.center)
    det = jacobian_determinant(chain_to_field([scale], g))
    np.testing.assert_allclose(det.data, 1.728, atol=1e-3)


def test_jacobian_detects_fold():
    # u = -2x inside a patch gives I + du/dx = -I, whose 3D determinant is -1
    g = Geometry((20, 20, 20), (1.0, 1.0, 1.0))
    pts = g.points()
    u = np.zeros(pts.shape)
    patch = (slice(6, 14),) * 3
    u[patch] = -2.0 * (pts[patch] - 10.0)
    det = jacobian_determinant(DeformationField(u, g))
    assert np.all(det.data[8:12, 8:12, 8:12] < 0)
    assert jacobian_report(DeformationField(u, g)).negative_count > 0
