import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from histomri.core.containers import BinaryMask, RasterImage, VoxelVolume
from histomri.errors import DegenerateInput, EmptyForeground, EmptyInitMask, NoTissueFound, NotColorImage, TooFewSamples
from histomri.evaluation import dice
from histomri.phantom import BRAIN, PhantomSpec, generate_anatomy, simulate_mri
from histomri.segmentation import (
    YIQ_MATRIX,
    GmmModel,
    classify_pixels,
    extract_brain_3d,
    fit_gmm_em,
    morphological_cleanup,
    refine_chan_vese,
    rgb_to_yiq,
    segment_blockface,
    segment_histology,
    select_tissue_component,
)


def iou(a, b) -> float:
    a, b = np.asarray(a, bool), np.asarray(b, bool)
    return np.count_nonzero(a & b) / max(np.count_nonzero(a | b), 1)


# ---------------------------------------------------------------- colour


def test_yiq_rows_of_the_printed_matrix():
    # pure primaries pick out the matrix columns
    for c in range(3):
        rgb = np.zeros((1, 1, 3))
        rgb[0, 0, c] = 1.0
        yiq = rgb_to_yiq(RasterImage(rgb))
        np.testing.assert_allclose([yiq.Y[0, 0], yiq.I[0, 0], yiq.Q[0, 0]], YIQ_MATRIX[:, c], atol=1e-15)


def test_yiq_white_has_no_chroma():
    yiq = rgb_to_yiq(RasterImage(np.ones((2, 2, 3))))
    np.testing.assert_allclose(yiq.Y, 1.0, atol=1e-12)
    np.testing.assert_allclose(yiq.I, 0.0, atol=1e-12)
    np.testing.assert_allclose(yiq.Q, 0.0, atol=1e-12)


def test_yiq_rejects_gray():
    with pytest.raises(NotColorImage):
        rgb_to_yiq(RasterImage(np.zeros((3, 3))))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=3, max_size=3))
def test_yiq_linear(rgb):
    px = np.asarray(rgb).reshape(1, 1, 3)
    yiq = rgb_to_yiq(RasterImage(px))
    expect = YIQ_MATRIX @ np.asarray(rgb)
    np.testing.assert_allclose([yiq.Y[0, 0], yiq.I[0, 0], yiq.Q[0, 0]], expect, atol=1e-12)


# ---------------------------------------------------------------- GMM


def planted(rng, n=500, mu0=(0.0, 0.0), mu1=(0.3, 0.3), var=0.001):
    a = rng.multivariate_normal(mu0, var * np.eye(2), n)
    b = rng.multivariate_normal(mu1, var * np.eye(2), n)
    return np.vstack([a, b])


def test_gmm_recovers_planted_means(rng):
    x = planted(rng)
    g = fit_gmm_em(x, "random_partition", seed=0)
    means = g.means[np.argsort(g.means[:, 0])]
    np.testing.assert_allclose(means, [[0, 0], [0.3, 0.3]], atol=0.01)
    assert g.converged


def test_gmm_user_labels(rng):
    x = planted(rng)
    labels = np.zeros(len(x), int)
    labels[:10] = 1
    labels[-10:] = 2
    g = fit_gmm_em(x, "user_labels", labels=labels)
    np.testing.assert_allclose(g.means[0], [0, 0], atol=0.01)
    np.testing.assert_allclose(g.means[1], [0.3, 0.3], atol=0.01)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_gmm_trace_non_decreasing(seed):
    r = np.random.default_rng(seed)
    x = r.normal(size=(200, 2)) * r.uniform(0.1, 2, size=2) + r.integers(0, 2, size=(200, 1)) * r.normal(size=2)
    g = fit_gmm_em(x, "random_partition", seed=seed, max_iter=100, tol=0)
    tr = np.asarray(g.log_likelihood_trace)
    assert np.all(np.diff(tr) >= -1e-7)


def test_gmm_errors():
    with pytest.raises(DegenerateInput):
        fit_gmm_em(np.ones((50, 2)), "random_partition")
    with pytest.raises(TooFewSamples):
        fit_gmm_em(np.zeros((3, 2)), "random_partition")
    with pytest.raises(TooFewSamples):
        fit_gmm_em(np.random.default_rng(0).normal(size=(20, 2)), "user_labels", labels=np.r_[1, np.zeros(19)])


def test_gmm_round_trip(tmp_path, rng):
    g = fit_gmm_em(planted(rng), "random_partition", seed=1)
    g2 = GmmModel.load(g.save(tmp_path / "g.json"))
    np.testing.assert_array_equal(g.means, g2.means)


def _symmetric_model():
    cov = np.stack([0.01 * np.eye(2)] * 2)
    return GmmModel(np.array([0.5, 0.5]), np.array([[0.0, 0.0], [0.2, 0.0]]), cov)


def test_classify_tie_goes_to_background():
    g = _symmetric_model()
    yiq = rgb_to_yiq(RasterImage(np.zeros((1, 1, 3))))
    # build a YIQ-like object holding the midpoint chroma (0.1, 0)
    mid = type(yiq)(np.zeros((1, 1)), np.full((1, 1), 0.1), np.zeros((1, 1)))
    assert not classify_pixels(mid, g, 1).data[0, 0]
    at_mean = type(yiq)(np.zeros((1, 1)), np.full((1, 1), 0.2), np.zeros((1, 1)))
    assert classify_pixels(at_mean, g, 1).data[0, 0]


def test_tissue_component_rules():
    g = GmmModel(np.array([0.5, 0.5]), np.array([[0.0, 0.01], [0.15, 0.03]]), np.stack([np.eye(2)] * 2))
    assert select_tissue_component(g, "blockface") == 1
    g2 = GmmModel(np.array([0.5, 0.5]), np.array([[0.0, 0.1], [0.0, -0.05]]), np.stack([np.eye(2)] * 2))
    assert select_tissue_component(g2, "histology") == 0


# ---------------------------------------------------------------- morphology and contours


def test_cleanup_keeps_largest_component():
    m = np.zeros((30, 30), bool)
    m[2:12, 2:12] = True  # 100 px
    m[20:22, 20:23] = True  # 6 px
    m[25, 25] = True
    out = morphological_cleanup(BinaryMask(m), keep_largest=True, fill=False)
    assert out.count == 100


def test_cleanup_fills_annulus():
    yy, xx = np.mgrid[:41, :41]
    r = np.hypot(yy - 20, xx - 20)
    out = morphological_cleanup(BinaryMask((r <= 15) & (r >= 6)), fill=True)
    np.testing.assert_array_equal(out.data, r <= 15)


def test_cleanup_empty():
    assert morphological_cleanup(BinaryMask(np.zeros((5, 5), bool))).is_empty


def test_chan_vese_keeps_exact_partition():
    gray = np.zeros((48, 48))
    gray[12:36, 10:30] = 1.0
    init = BinaryMask(gray > 0.5)
    out = refine_chan_vese(RasterImage(gray), init)
    assert np.count_nonzero(out.data != init.data) <= 0.005 * gray.size


def test_chan_vese_removes_salt_and_pepper(rng):
    yy, xx = np.mgrid[:64, :64]
    clean = np.hypot(yy - 32, xx - 32) < 20
    gray = clean + 0.05 * rng.standard_normal(clean.shape)
    noisy = clean & (rng.random(clean.shape) > 0.05)
    out = refine_chan_vese(RasterImage(gray), BinaryMask(noisy))
    assert dice(out, BinaryMask(clean)) >= 0.99


def test_chan_vese_empty_init():
    with pytest.raises(EmptyInitMask):
        refine_chan_vese(RasterImage(np.zeros((8, 8))), BinaryMask(np.zeros((8, 8), bool)))


# ---------------------------------------------------------------- colour segmentation on phantoms


def test_blockface_segmentation_on_phantom(phantom128):
    truth = phantom128.truth.blockface_masks
    n = len(truth)
    for k in (n // 5, n // 2, 4 * n // 5):
        mask = segment_blockface(phantom128.blockface.slices[k])
        assert iou(mask.data, truth[k]) >= 0.95
        assert np.mean(mask.data == truth[k]) >= 0.99


def test_blockface_tissue_on_black():
    yy, xx = np.mgrid[:80, :80]
    tissue = np.hypot((yy - 40) / 25, (xx - 40) / 30) < 1
    img = np.where(tissue[..., None], [0.82, 0.58, 0.52], [0.02, 0.02, 0.02])
    img = img + 0.01 * np.random.default_rng(0).standard_normal(img.shape)
    mask = segment_blockface(RasterImage(np.clip(img, 0, 1)))
    assert iou(mask.data, tissue) >= 0.99


def test_blockface_uniform_background():
    with pytest.raises(NoTissueFound):
        segment_blockface(RasterImage(np.full((40, 40, 3), 0.1)))


def test_histology_segmentation_on_phantom(phantom128):
    truth = phantom128.truth.histology_masks
    n = len(truth)
    for k in (n // 4, n // 2, 3 * n // 4):
        mask = segment_histology(phantom128.histology.slices[k])
        assert iou(mask.data, truth[k]) >= 0.97


def test_histology_sticker_excluded():
    yy, xx = np.mgrid[:100, :100]
    tissue = np.hypot((yy - 50) / 30, (xx - 45) / 25) < 1
    img = np.ones((100, 100, 3)) * 0.95
    img[tissue] = [0.6, 0.4, 0.75]
    img[85:95, 85:95] = [0.55, 0.35, 0.7]  # label sticker, detached from the tissue
    img = img + 0.01 * np.random.default_rng(1).standard_normal(img.shape)
    mask = segment_histology(RasterImage(np.clip(img, 0, 1)))
    assert not mask.data[85:95, 85:95].any()
    assert iou(mask.data, tissue) >= 0.97


def test_histology_all_white():
    with pytest.raises(NoTissueFound):
        segment_histology(RasterImage(np.ones((40, 40, 3))))


# ---------------------------------------------------------------- brain extraction


def test_brain_extraction_on_phantom_mri():
    spec = PhantomSpec(shape=(64, 64, 64), spacing=2.0)
    labels, _ = generate_anatomy(spec)
    mri = simulate_mri(labels, spec)
    brain = np.isin(labels.data, [1, 3, 4, 5])
    mask = extract_brain_3d(mri, closing_radius_mm=3.0)
    assert dice(mask.data, brain) >= 0.95
    assert not mask.data[labels.data == 2].any()


def test_brain_extraction_two_level_exact():
    data = np.zeros((30, 30, 30))
    data[8:22, 6:24, 10:20] = 1.0
    mask = extract_brain_3d(VoxelVolume(data), closing_radius_mm=2.0)
    np.testing.assert_array_equal(mask.data, data > 0)


def test_brain_extraction_empty():
    with pytest.raises(EmptyForeground):
        extract_brain_3d(VoxelVolume(np.zeros((10, 10, 10))))


def test_brain_label_constant():
    assert BRAIN == 1
