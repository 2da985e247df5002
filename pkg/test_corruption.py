import numpy as np
import pytest
from pydantic import ValidationError

from corruption import corrupt, corrupted_preview, random_mask
from diffops import forward_diff
from exceptions import MissingInput, ShapeMismatch
from grid import GridFunction
from models import Application, CorruptionSettings, OperatorKind


@pytest.fixture
def frame(checkerboard):
    return GridFunction.from_array(0.2 + 0.6 * checkerboard(16, 4))


def test_random_mask_extremes(rng):
    assert not np.any(random_mask((5, 5), 0.0, rng))
    assert np.all(random_mask((5, 5), 1.0, rng))


def test_inpaint_without_masking_keeps_data(frame):
    g, operator = corrupt(Application.INPAINT, frame, CorruptionSettings(mask_prob=0.0))
    assert operator.kind == OperatorKind.MASK
    assert not np.any(operator.mask)
    np.testing.assert_array_equal(g.values, frame.values)


def test_inpaint_full_masking_zeroes_data(frame):
    g, operator = corrupt(Application.INPAINT, frame, CorruptionSettings(mask_prob=1.0))
    assert np.all(operator.mask)
    assert np.all(g.values == 0.0)


def test_masks_are_seeded(frame):
    first = corrupt(Application.INPAINT, frame, CorruptionSettings(seed=42))[1].mask
    second = corrupt(Application.INPAINT, frame, CorruptionSettings(seed=42))[1].mask
    other = corrupt(Application.INPAINT, frame, CorruptionSettings(seed=7))[1].mask
    np.testing.assert_array_equal(first, second)
    assert not np.array_equal(first, other)


def test_masked_pixels_are_zero(frame):
    g, operator = corrupt(Application.INPAINT, frame)
    assert np.all(g.scalar()[operator.mask] == 0.0)
    np.testing.assert_array_equal(g.scalar()[~operator.mask], frame.scalar()[~operator.mask])


def test_denoise_noise_level():
    clean = GridFunction.from_array(np.full((64, 64), 0.5))
    g, operator = corrupt(Application.DENOISE, clean, CorruptionSettings(noise_var=0.01))
    assert operator.kind == OperatorKind.IDENTITY
    assert np.std(g.values - clean.values) == pytest.approx(0.1, rel=0.1)


def test_denoise_without_noise(frame):
    g, _ = corrupt(Application.DENOISE, frame, CorruptionSettings(noise_var=0.0))
    np.testing.assert_array_equal(g.values, frame.values)


def test_wavelet_without_dropped_coefficients(frame):
    g, operator = corrupt(Application.WAVELETINPAINT, frame, CorruptionSettings(mask_prob=0.0))
    assert operator.kind == OperatorKind.WAVELET
    assert np.linalg.norm(g.values) == pytest.approx(np.linalg.norm(frame.values), rel=1e-12)
    preview = corrupted_preview(Application.WAVELETINPAINT, g, operator)
    np.testing.assert_allclose(preview.values, frame.values, atol=1e-12)


def test_wavelet_dropped_coefficients_are_zero(frame):
    g, operator = corrupt(Application.WAVELETINPAINT, frame)
    assert np.any(operator.mask)
    assert np.all(g.scalar()[operator.mask] == 0.0)


def test_optical_flow_data(frame):
    second = GridFunction.from_array(np.roll(frame.scalar(), 1, axis=1))
    g, operator = corrupt(Application.OPTFLOW, frame, second_frame=second)
    assert operator.kind == OperatorKind.FLOW
    np.testing.assert_array_equal(g.scalar(), frame.scalar() - second.scalar())
    for k in range(2):
        np.testing.assert_array_equal(operator.weights[..., k], forward_diff(second, k).scalar())
    preview = corrupted_preview(Application.OPTFLOW, g, operator)
    assert np.all((preview.values >= 0.0) & (preview.values <= 1.0))


def test_optical_flow_needs_second_frame(frame):
    with pytest.raises(MissingInput):
        corrupt(Application.OPTFLOW, frame)


def test_optical_flow_frames_must_match(frame):
    with pytest.raises(ShapeMismatch):
        corrupt(Application.OPTFLOW, frame, second_frame=GridFunction.from_array(np.zeros((8, 16))))


@pytest.mark.parametrize("field,value", [("mask_prob", 1.5), ("mask_prob", -0.1), ("noise_var", -1.0)])
def test_settings_validated(field, value):
    with pytest.raises(ValidationError):
        CorruptionSettings(**{field: value})
