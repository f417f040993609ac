import itertools

import numpy as np
import pytest
from scipy import ndimage as ndi

from histomri.core.containers import BinaryMask, Geometry
from histomri.errors import GeometryMismatch, MaskTooSmall, UnpairedLabel
from histomri.evaluation import (
    EvaluationReport,
    dice,
    evaluate_structures,
    format_observer_table,
    inter_observer_dice,
    jacobian_report,
    laplacian_spectrum,
    nwsd,
)
from histomri.evaluation import spectral
from histomri.registration import DeformationField


def brute_force_laplacian(mask: np.ndarray, spacing) -> np.ndarray:
    """Dense Dirichlet Laplacian built voxel by voxel; a boundary face adds 2/h^2 (ghost value -u)."""
    pts = [tuple(p) for p in np.argwhere(mask)]
    index = {p: i for i, p in enumerate(pts)}
    mat = np.zeros((len(pts), len(pts)))
    for p, i in index.items():
        for axis, h in enumerate(spacing):
            for step in (-1, 1):
                q = list(p)
                q[axis] += step
                j = index.get(tuple(q))
                if j is None:
                    mat[i, i] += 2.0 / h**2
                else:
                    mat[i, i] += 1.0 / h**2
                    mat[i, j] -= 1.0 / h**2
    return mat


def small_shapes():
    g = np.indices((12, 12, 12)) - 5.5
    ball = np.sqrt((g**2).sum(0)) < 5.6
    ell = (g[0] / 5.8) ** 2 + (g[1] / 4.0) ** 2 + (g[2] / 3.0) ** 2 < 1
    ell_shape = np.pad(ell, 0)
    lshape = np.zeros((12, 12, 10), bool)
    lshape[1:11, 1:5, 1:9] = True
    lshape[1:5, 1:11, 1:9] = True
    blob = ndi.gaussian_filter(np.random.default_rng(3).random((12, 12, 12)), 2) > 0.5
    blob = ndi.binary_dilation(blob, iterations=1)
    return {"ball": (ball, (1.0, 1.0, 1.0)), "ellipsoid": (ell_shape, (0.8, 1.0, 1.3)),
            "L": (lshape, (1.0, 1.0, 1.0)), "blob": (blob, (1.0, 1.0, 1.0))}


# ---------------------------------------------------------------- dice


def test_dice_identical_and_disjoint():
    a = np.zeros((6, 6, 6), bool)
    a[1:4, 1:4, 1:4] = True
    b = np.zeros_like(a)
    b[4:, 4:, 4:] = True
    assert dice(a, a) == 1.0
    assert dice(a, b) == 0.0


def test_dice_shifted_cube():
    a = np.zeros((10, 10, 10), bool)
    b = np.zeros_like(a)
    a[2:6, 2:6, 2:6] = True
    b[4:8, 2:6, 2:6] = True
    overlap = sum(a[p] and b[p] for p in itertools.product(range(10), repeat=3))
    assert overlap == 32
    assert dice(a, b) == pytest.approx(2 * 32 / 128)


def test_dice_empty_masks():
    z = np.zeros((4, 4), bool)
    o = z.copy()
    o[0, 0] = True
    assert dice(z, z) == 1.0
    assert dice(z, o) == 0.0


def test_dice_shape_mismatch():
    with pytest.raises(GeometryMismatch):
        dice(np.zeros((3, 3), bool), np.zeros((3, 4), bool))


def test_dice_symmetric_and_permutation_invariant(rng):
    a = rng.random((8, 9, 7)) > 0.5
    b = rng.random((8, 9, 7)) > 0.4
    assert dice(a, b) == dice(b, a)
    perm = rng.permutation(a.size)
    assert dice(a.ravel()[perm], b.ravel()[perm]) == pytest.approx(dice(a, b), abs=1e-15)


# ---------------------------------------------------------------- spectrum


@pytest.mark.parametrize("name", list(small_shapes()))
@pytest.mark.parametrize("dense_limit", [None, 0])
def test_spectrum_matches_brute_force(name, dense_limit, monkeypatch):
    if dense_limit is not None:
        monkeypatch.setattr(spectral, "DENSE_LIMIT", dense_limit)
    mask, spacing = small_shapes()[name]
    ev = laplacian_spectrum(BinaryMask(mask, spacing), k=20).eigenvalues
    expect = np.linalg.eigvalsh(brute_force_laplacian(mask, spacing))[:20]
    np.testing.assert_allclose(ev, expect, rtol=1e-6)


def test_cube_first_eigenvalue():
    L = 32
    cube = np.pad(np.ones((L, L, L), bool), 1)
    ev = laplacian_spectrum(BinaryMask(cube), k=10).eigenvalues
    assert ev[0] == pytest.approx(3 * np.pi**2 / L**2, rel=0.05)
    # (1,1,2) family is threefold degenerate in the continuum and on the grid
    np.testing.assert_allclose(ev[1:4], ev[1], rtol=1e-6)
    assert ev[1] == pytest.approx(6 * np.pi**2 / L**2, rel=0.05)
    assert ev[4] > ev[3] * 1.01


def test_spectrum_too_small():
    tiny = np.zeros((5, 5, 5), bool)
    tiny[1:3, 1:3, 1:4] = True  # 12 voxels
    with pytest.raises(MaskTooSmall):
        laplacian_spectrum(BinaryMask(tiny), k=50)


def test_spectrum_spacing_invariance():
    mask, _ = small_shapes()["ellipsoid"]
    a = laplacian_spectrum(BinaryMask(mask, (1.0, 1.2, 0.9)), k=15)
    b = laplacian_spectrum(BinaryMask(mask, (2.5, 3.0, 2.25)), k=15)
    np.testing.assert_allclose(a.normalized, b.normalized, rtol=1e-9)
    np.testing.assert_allclose(a.eigenvalues / b.eigenvalues, 2.5**2, rtol=1e-9)


# ---------------------------------------------------------------- nWSD


def test_nwsd_self_is_zero():
    mask, sp = small_shapes()["blob"]
    m = BinaryMask(mask, sp)
    assert nwsd(m, m, k=20) == 0.0


def test_nwsd_symmetric_and_bounded():
    shapes = small_shapes()
    a = BinaryMask(*shapes["ball"])
    b = BinaryMask(*shapes["L"])
    d = nwsd(a, b, k=20)
    assert d == pytest.approx(nwsd(b, a, k=20), abs=1e-15)
    assert 0.0 < d <= 1.0


def test_nwsd_scale_invariant():
    small = np.pad(np.ones((16, 16, 16), bool), 1)
    large = np.pad(np.ones((32, 32, 32), bool), 1)
    assert nwsd(BinaryMask(small), BinaryMask(large)) < 0.005


def test_nwsd_separates_cube_from_elongated_box():
    cube = np.pad(np.ones((16, 16, 16), bool), 1)
    box = np.pad(np.ones((40, 10, 10), bool), 1)  # 4:1:1, volume within 3% of the cube
    assert abs(box.sum() - cube.sum()) / cube.sum() < 0.03
    assert nwsd(BinaryMask(cube), BinaryMask(box)) > 0.05


# ---------------------------------------------------------------- Jacobians and reports


def test_jacobian_report_zero_field():
    rep = jacobian_report(DeformationField.zeros(Geometry((8, 8, 8), (1.0, 1.0, 1.0))))
    assert rep.min == rep.max == 1.0
    assert rep.negative_count == 0 and rep.zero_count == 0


def test_inter_observer_identical():
    masks = {3: np.ones((4, 4), bool), 4: np.eye(4, dtype=bool)}
    table = inter_observer_dice({"mri": masks}, {"mri": masks})
    assert table == {"mri": {3: 1.0, 4: 1.0}}
    assert "mri" in format_observer_table(table)


def test_inter_observer_dilation(coarse_phantom):
    labels = coarse_phantom.labels.data
    obs1, obs2 = {}, {}
    for lab in (3, 4, 5):
        m = labels == lab
        obs1[lab] = m
        obs2[lab] = ndi.binary_dilation(m, ndi.generate_binary_structure(3, 1))
    table = inter_observer_dice(obs1, obs2)["default"]
    for lab in (3, 4, 5):
        a, b = obs1[lab], obs2[lab]
        both = sum(1 for p in zip(*np.nonzero(b)) if a[p])
        expect = 2 * both / (int(a.sum()) + int(b.sum()))
        assert table[lab] == pytest.approx(expect, abs=1e-12)
        assert table[lab] < 1.0


def test_inter_observer_unpaired():
    with pytest.raises(UnpairedLabel):
        inter_observer_dice({1: np.ones((2, 2), bool)}, {2: np.ones((2, 2), bool)})


def test_evaluate_structures_self(tmp_path):
    labels = np.zeros((20, 20, 20), int)
    labels[3:15, 3:15, 3:15] = 1
    labels[5:13, 5:13, 4:14] = 2
    rep = evaluate_structures(labels, labels, {"outer": 1, "inner": 2}, (1.0, 1.0, 1.0), k=10,
                              field=DeformationField.zeros(Geometry((20, 20, 20), (1.0, 1.0, 1.0))))
    assert rep.structures["inner"]["dice"] == 1.0
    assert rep.structures["inner"]["nwsd"] == 0.0
    back = EvaluationReport.load(rep.save(tmp_path / "r.json"))
    assert back.to_dict() == rep.to_dict()
    assert "inner" in rep.to_table()
