import json

import numpy as np
import pytest
from scipy import ndimage as ndi

from histomri.core.io import load_image, read_nvol
from histomri.errors import OverlappingStructures
from histomri.evaluation import dice
from histomri.phantom import (BRAIN, Ellipsoid, PhantomSpec, generate_anatomy, generate_phantom, simulate_mri,
                              write_phantom)
from histomri.phantom.simulate import (BLOCKFACE_BACKGROUND, BLOCKFACE_TISSUE, SLIDE_WHITE, STAIN_PURPLE,
                                      _section_labels, _tissue_color)
from histomri.pipeline.stages import tissue_gray
from histomri.registration import RegistrationParams, apply_transform, register_affine
from histomri.core.containers import BinaryMask, RasterImage
from histomri.segmentation import SegmentationOptions, segment_blockface, segment_histology

from conftest import coarse_spec

TISSUE = [1, 3, 4, 5]
NO_ARTIFACTS = dict(slice_rotation_deg=0.0, slice_scale=0.0, slice_translation_px=0.0, warp_amplitude_px=0.0,
                    stripe_gain=(1.0, 1.0), stripe_offset=(0.0, 0.0), holes=0)


def angle_deg(m) -> float:
    return float(np.degrees(np.arctan2(m[1, 0] - m[0, 1], m[0, 0] + m[1, 1])))


# ---------------------------------------------------------------- anatomy


def test_same_seed_bitwise_identical():
    spec = coarse_spec()
    a, b = generate_phantom(spec), generate_phantom(spec)
    np.testing.assert_array_equal(a.labels.data, b.labels.data)
    np.testing.assert_array_equal(a.mri.data, b.mri.data)
    for sa, sb in zip(a.blockface.slices + a.histology.slices, b.blockface.slices + b.histology.slices):
        np.testing.assert_array_equal(sa.data, sb.data)
    assert [r.to_dict() for r in a.truth.slice_truth] == [r.to_dict() for r in b.truth.slice_truth]


def test_different_seed_changes_artifacts():
    a = generate_phantom(coarse_spec(seed=1))
    b = generate_phantom(coarse_spec(seed=2))
    assert a.truth.slice_truth[0].rotation_deg != b.truth.slice_truth[0].rotation_deg


def test_structure_volumes_match_ellipsoids(phantom128):
    truth = phantom128.truth
    labels = phantom128.labels.data
    voxel = phantom128.spec.spacing**3
    for st in phantom128.spec.structures:
        vol = np.count_nonzero(labels == st.label) * voxel
        assert vol == pytest.approx(truth.anatomy.analytic_volume(st.name), rel=0.02), st.name


def test_overlapping_structures():
    base = PhantomSpec(shape=(48, 48, 48), spacing=3.0)
    s = base.structures
    clash = [s[0], Ellipsoid("twin", 9, s[0].offset, s[0].semi_axes, s[0].angles_deg)] + list(s[1:])
    with pytest.raises(OverlappingStructures):
        generate_anatomy(PhantomSpec(shape=(48, 48, 48), spacing=3.0, structures=clash))
    outside = [Ellipsoid("far", 9, (60.0, 0.0, 0.0), (5.0, 5.0, 5.0), (0.0, 0.0, 0.0))]
    with pytest.raises(OverlappingStructures):
        generate_anatomy(PhantomSpec(shape=(48, 48, 48), spacing=3.0, structures=outside))


# ---------------------------------------------------------------- MRI


def test_mri_piecewise_constant_without_noise_or_bias():
    spec = PhantomSpec(shape=(48, 48, 48), spacing=3.0, noise_sigma=0.0, bias_amplitude=0.0)
    labels, _ = generate_anatomy(spec)
    mri = simulate_mri(labels, spec)
    names = {1: "brain", 2: "skull", 3: "ventricle", 4: "hippocampus", 5: "caudate"}
    for lab in np.unique(labels.data).astype(int):
        vals = np.unique(mri.data[labels.data == lab])
        assert vals.size == 1
        assert vals[0] == (spec.mri_intensity[names[lab]] if lab else 0.0)


def test_mri_bias_recorded_bitwise():
    spec = PhantomSpec(shape=(48, 48, 48), spacing=3.0, noise_sigma=0.0, bias_amplitude=0.2)
    labels, truth = generate_anatomy(spec)
    mri = simulate_mri(labels, spec, truth)
    flat = simulate_mri(labels, PhantomSpec(shape=(48, 48, 48), spacing=3.0, noise_sigma=0.0, bias_amplitude=0.0))
    np.testing.assert_array_equal(mri.data, flat.data * truth.bias)
    inside = labels.data > 0
    assert truth.bias[inside].min() >= 1 / 1.2 - 1e-9 and truth.bias[inside].max() <= 1.2 + 1e-9


@pytest.mark.parametrize("sigma", [0.02, 0.05])
def test_mri_noise_level(sigma):
    spec = PhantomSpec(shape=(64, 64, 64), spacing=2.0, noise_sigma=sigma, bias_amplitude=0.0)
    labels, _ = generate_anatomy(spec)
    mri = simulate_mri(labels, spec)
    flat = labels.data == BRAIN  # intensity 0.6, far from the clip at 0
    assert mri.data[flat].std() == pytest.approx(sigma, rel=0.05)


# ---------------------------------------------------------------- blockface


def test_blockface_masks_reproduce_anatomy(phantom128):
    truth = phantom128.truth
    geo = truth.stack_geometry
    # stack voxel centres of every section, pulled back into the anatomy
    stacked = np.stack(truth.blockface_masks)
    sampled = np.stack([truth.anatomy.tissue_labels_at(geo.stack_to_world.apply(geo.stack_points(k))) > 0
                        for k in range(geo.n_slices)])
    assert dice(stacked, sampled) >= 0.99


def test_blockface_mask_count_matches_tissue_volume(phantom128):
    truth = phantom128.truth
    geo = truth.stack_geometry
    stack_mm3 = sum(int(m.sum()) for m in truth.blockface_masks) * geo.pixel_mm**2 * geo.thickness
    ref_mm3 = np.isin(truth.labels.data, TISSUE).sum() * phantom128.spec.spacing**3
    assert stack_mm3 == pytest.approx(ref_mm3, rel=0.01)


def test_blockface_transparency_by_construction():
    spec = coarse_spec(transparency=0.3, photo_noise=0.0, clutter=0, ruler=False)
    ph = generate_phantom(spec)
    base = generate_phantom(coarse_spec(photo_noise=0.0, clutter=0, ruler=False))
    geo, masks = ph.truth.stack_geometry, ph.truth.blockface_masks
    hits = 0
    for k in range(len(masks) - 1):
        below = ph.truth.transparency[k]
        np.testing.assert_array_equal(below, masks[k + 1] & ~masks[k])
        img, clean = ph.blockface.slices[k].data, base.blockface.slices[k].data
        np.testing.assert_array_equal(img[~below], clean[~below])
        if below.any():
            hits += 1
            deeper = _tissue_color(_section_labels(ph.truth, geo, k + 1, spec), BLOCKFACE_TISSUE,
                                   BLOCKFACE_BACKGROUND)
            np.testing.assert_allclose(img[below], 0.7 * clean[below] + 0.3 * deeper[below], atol=1e-12)
            assert np.all(img[below].sum(-1) > clean[below].sum(-1))
    assert hits > 0
    assert not ph.truth.transparency[-1].any()


def test_blockface_background_uniform_without_clutter():
    spec = coarse_spec(clutter=0, ruler=False, photo_noise=0.0)
    ph = generate_phantom(spec)
    geo = ph.truth.stack_geometry
    for k, img in enumerate(ph.blockface.slices):
        empty = ~(_section_labels(ph.truth, geo, k, spec) > 0).any(axis=0)
        bg = img.data[empty]
        assert bg.shape[0] > 0
        np.testing.assert_array_equal(bg, np.broadcast_to(BLOCKFACE_BACKGROUND, bg.shape))


def test_blockface_clutter_present_by_default(coarse_phantom):
    img = coarse_phantom.blockface.slices[len(coarse_phantom.blockface) // 2].data
    bg = img[~ndi.binary_dilation(coarse_phantom.truth.blockface_masks[len(coarse_phantom.blockface) // 2], iterations=2)]
    assert np.unique(np.round(bg, 2), axis=0).shape[0] > 2


# ---------------------------------------------------------------- histology


def test_histology_without_artifacts_matches_blockface():
    ph = generate_phantom(coarse_spec(**NO_ARTIFACTS))
    for hm, bm in zip(ph.truth.histology_masks, ph.truth.blockface_masks):
        assert dice(hm, bm) == 1.0
    for rec in ph.truth.slice_truth:
        np.testing.assert_allclose(rec.affine.matrix, np.eye(2), atol=1e-15)
        assert rec.warp is None and rec.holes == []


@pytest.mark.parametrize("count", [1, 3])
def test_hole_count(count):
    spec = coarse_spec(holes=count, hole_radius_px=2.0)
    ph = generate_phantom(spec)
    intact = generate_phantom(coarse_spec(holes=0, hole_radius_px=2.0))
    checked = 0
    for k, rec in enumerate(ph.truth.slice_truth):
        if len(rec.holes) < count:
            continue  # section too small to host every hole
        erased = intact.truth.histology_masks[k] & ~ph.truth.histology_masks[k]
        _, n = ndi.label(erased)
        assert n == count
        checked += 1
    assert checked >= len(ph.truth.slice_truth) // 2


def test_planted_rotation_recovered(phantom128):
    truth = phantom128.truth
    opts = SegmentationOptions(max_samples=10000, n_init=2)
    n = len(truth.slice_truth)
    errors = []
    for k in (n // 3, n // 2, 2 * n // 3):
        fimg = phantom128.blockface.slices[k]
        mimg = phantom128.histology.slices[k]
        fm = segment_blockface(fimg, opts).data
        mm = segment_histology(mimg, opts).data
        t = register_affine(tissue_gray(fimg, fm, False), tissue_gray(mimg, mm, True), RegistrationParams(),
                            fixed_mask=BinaryMask(fm), moving_mask=BinaryMask(mm))
        planted = truth.slice_truth[k].affine.inverse()
        errors.append(abs(angle_deg(t.matrix) - angle_deg(planted.matrix)))
    assert max(errors) <= 0.5, errors


def stain_density(img: np.ndarray) -> np.ndarray:
    """Project a section photo onto the white-to-purple ramp (0 on bare slide)."""
    span = STAIN_PURPLE - SLIDE_WHITE
    return (img - SLIDE_WHITE) @ span / (span @ span)


def test_artifacts_invertible_from_truth():
    spec = coarse_spec(holes=0, stripe_gain=(1.0, 1.0), stripe_offset=(0.0, 0.0), photo_noise=0.0)
    ph = generate_phantom(spec)
    clean = generate_phantom(coarse_spec(**NO_ARTIFACTS, photo_noise=0.0))
    for k in range(0, len(ph.histology), 3):
        hist = RasterImage(stain_density(ph.histology.slices[k].data))
        ref = stain_density(clean.histology.slices[k].data)
        back = apply_transform(hist, ph.truth.slice_truth[k].inverse).data
        # point-sampled label edges alias, so score outside the interpolation support of an edge
        flat = ndi.maximum_filter(ref, 5) - ndi.minimum_filter(ref, 5) < 1e-9
        assert flat.mean() > 0.8
        rms = np.sqrt(np.mean((back - ref)[flat] ** 2)) / np.sqrt(np.mean(ref**2))
        assert rms < 0.01, (k, rms)


def test_stripes_invertible_from_truth():
    spec = coarse_spec(**{**NO_ARTIFACTS, "stripe_gain": (0.85, 1.15), "stripe_offset": (-0.05, 0.05)},
                       photo_noise=0.0)
    ph = generate_phantom(spec)
    clean = generate_phantom(coarse_spec(**NO_ARTIFACTS, photo_noise=0.0))
    geo = ph.truth.stack_geometry
    for k, (img, ref) in enumerate(zip(ph.histology.slices, clean.histology.slices)):
        g, o = ph.truth.stripes["gains"][k], ph.truth.stripes["offsets"][k]
        dens, ref_dens = stain_density(img.data), stain_density(ref.data)
        # single-label pixels below saturation; mixed pixels clip per sub-plane
        sub = _section_labels(ph.truth, geo, k, spec)
        single = (sub > 0).all(axis=0) & (sub == sub[0]).all(axis=0) & (dens < 1.0 - 1e-9)
        np.testing.assert_allclose((dens[single] - o) / g, ref_dens[single], atol=1e-9)


# ---------------------------------------------------------------- writer


def test_written_layout(tmp_path):
    ph = generate_phantom(coarse_spec())
    write_phantom(ph, tmp_path / "ph")
    out = tmp_path / "ph"
    for rel in ("mri.nvol", "labels.nvol", "manifest.json", "pipeline.json", "truth/bias.nvol",
                "truth/stripes.json", "truth/slices.json", "truth/pose.json", "blockface/stack.json",
                "histology/stack.json", "blockface/0000.png", "histology/0000.png"):
        assert (out / rel).exists(), rel
    n = len(ph.blockface)
    assert len(list((out / "blockface").glob("*.png"))) == n
    assert len(list((out / "histology").glob("*.png"))) == n
    assert len(list((out / "truth" / "transforms").glob("slice_*.chain.json"))) == n
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["n_slices"] == n and manifest["seed"] == ph.spec.seed
    data, _ = read_nvol(out / "truth" / "bias.nvol")
    np.testing.assert_allclose(data, ph.truth.bias, rtol=1e-6)  # stored as float32
    mri, _ = read_nvol(out / "mri.nvol")
    np.testing.assert_allclose(mri, ph.mri.data, rtol=1e-6, atol=1e-9)
    png = load_image(out / "blockface" / "0000.png").data
    assert np.max(np.abs(png - ph.blockface.slices[0].data)) <= 0.5 / 255 + 1e-9


def test_spec_round_trip(tmp_path):
    spec = coarse_spec(holes=2, transparency=0.1)
    back = PhantomSpec.load(spec.save(tmp_path / "spec.json"))
    assert back == spec
