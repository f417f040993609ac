import numpy as np
import pytest

from histomri.core.containers import VoxelVolume
from histomri.errors import EmptyMask
from histomri.phantom import PhantomSpec, generate_anatomy, simulate_mri
from histomri.preproc import BiasParams, PreprocParams, correct_bias, head_mask, preprocess_reference

from conftest import scaled_spec

TISSUE = (1, 3, 4, 5)


def planted(amplitude: float, noise: float = 0.0, seed: int = 42):
    spec = PhantomSpec(shape=(64, 64, 64), spacing=2.0, bias_amplitude=amplitude, noise_sigma=noise, seed=seed)
    labels, truth = generate_anatomy(spec)
    mri = simulate_mri(labels, spec, truth)
    return spec, labels, mri, truth.bias


def class_std(data, labels):
    return np.mean([data[labels == v].std() / data[labels == v].mean() for v in TISSUE])


def test_bias_free_field_is_one():
    _, _, mri, _ = planted(0.0)
    _, bias = correct_bias(mri, head_mask(mri))
    assert np.max(np.abs(bias.field.data - 1.0)) <= 0.01


@pytest.mark.parametrize("seed", [42, 7])
def test_planted_field_recovered(seed):
    _, labels, mri, true = planted(0.2, seed=seed)
    assert 0.79 < true[labels.data > 0].min() and true[labels.data > 0].max() < 1.21
    mask = head_mask(mri)
    corrected, bias = correct_bias(mri, mask)
    r = np.corrcoef(bias.field.data[mask], true[mask])[0, 1]
    assert r >= 0.95
    before = class_std(mri.data, labels.data)
    after = class_std(corrected.data, labels.data)
    assert after <= 0.3 * before, (before, after)
    # the gauge is taken over the voxels that have a log intensity
    gauge = mask & (mri.data > 0)
    assert np.exp(np.mean(np.log(bias.field.data[gauge]))) == pytest.approx(1.0, abs=1e-3)


def test_bias_empty_mask():
    vol = VoxelVolume(np.ones((8, 8, 8)))
    with pytest.raises(EmptyMask):
        correct_bias(vol, np.zeros((8, 8, 8), bool))


def test_bias_idempotent():
    _, _, mri, _ = planted(0.2)
    mask = head_mask(mri)
    once, _ = correct_bias(mri, mask)
    _, again = correct_bias(once, mask)
    assert np.max(np.abs(again.field.data - 1.0)) <= 0.02


def test_bias_gain_invariant():
    _, _, mri, _ = planted(0.15)
    mask = head_mask(mri)
    a, _ = correct_bias(mri, mask)
    b, _ = correct_bias(mri.replace(data=mri.data * 4.0), mask)
    np.testing.assert_allclose(b.data[mask] / 4.0, a.data[mask], rtol=0.01)


def test_bias_params_validation():
    with pytest.raises(ValueError):
        BiasParams(fwhm=0)


def test_preprocess_default_spacing():
    spec = scaled_spec(0.375)
    labels, _ = generate_anatomy(spec)
    mri = simulate_mri(labels, spec)
    out = preprocess_reference(mri, PreprocParams(closing_radius_mm=1.5))
    assert out.spacing == pytest.approx((0.33, 0.33, 0.33))
    assert np.all(np.isfinite(out.data)) and out.data.min() >= 0


def test_preprocess_same_spacing_is_masked_input():
    spec = PhantomSpec(shape=(64, 64, 64), spacing=2.0, bias_amplitude=0.0, noise_sigma=0.0)
    labels, _ = generate_anatomy(spec)
    mri = simulate_mri(labels, spec)
    res = preprocess_reference(mri, PreprocParams(correct_bias=False, spacing_mm=2.0), return_details=True)
    m = res.mask.data
    ref = np.where(m, mri.data, 0.0)
    rms = np.sqrt(np.mean((res.volume.data - ref) ** 2)) / np.sqrt(np.mean(ref[m] ** 2))
    assert rms < 0.01
    assert np.all(res.volume.data[~m] == 0.0)


def test_preprocess_zero_outside_brain():
    spec = PhantomSpec(shape=(64, 64, 64), spacing=2.0)
    labels, _ = generate_anatomy(spec)
    mri = simulate_mri(labels, spec)
    res = preprocess_reference(mri, PreprocParams(spacing_mm=2.0), return_details=True)
    assert np.all(res.volume.data[~res.mask.data] == 0.0)
    assert not res.mask.data[labels.data == 2].any()
