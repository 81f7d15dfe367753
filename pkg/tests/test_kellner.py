import numpy as np
import pytest

from funkan import gibbs
from funkan.errors import NumericError, ShapeError
from funkan.kellner import kellner_dering, subvoxel_shift
from funkan.metrics import total_variation


class TestSubvoxelShift:
    def test_shift_round_trip(self):
        rng = np.random.default_rng(0)
        img = rng.random((17, 23))
        back = subvoxel_shift(subvoxel_shift(img, 1, 0.25), 1, -0.25)
        assert np.abs(back - img).max() < 1e-6

    def test_integer_shift_is_a_roll(self):
        rng = np.random.default_rng(1)
        img = rng.random((9, 12))
        shifted = subvoxel_shift(img, 0, 1.0)
        assert np.abs(shifted - np.roll(img, -1, axis=0)).max() < 1e-9

    def test_zero_shift_is_identity(self):
        rng = np.random.default_rng(2)
        img = rng.random((8, 8))
        assert np.abs(subvoxel_shift(img, 1, 0.0) - img).max() < 1e-12


class TestKellnerDering:
    def test_constant_image_unchanged(self):
        img = np.full((24, 24), 0.6)
        out = kellner_dering(img)
        assert np.abs(out - img).max() < 1e-9

    def test_constant_regions_stay_within_input_range(self):
        img = np.full((32, 32), 0.25)
        out = kellner_dering(img)
        assert out.max() <= img.max() + 1e-6
        assert out.min() >= img.min() - 1e-6

    def test_reduces_tv_on_corrupted_step_edges(self):
        shapes = [gibbs.Rect(cx=0.5, cy=0.5, hw=0.25, hh=0.25, intensity=0.9)]
        hi = gibbs.render(shapes, 95, 95)
        corrupted = gibbs.kspace_crop(hi, 55, 55)
        deringed = kellner_dering(corrupted)
        assert total_variation(deringed) < total_variation(corrupted)

    def test_reduces_tv_on_sampled_phantoms(self):
        for seed in range(5):
            pair = gibbs.make_pair(gibbs.PhantomSpec(canvas=95, crop=55, seed=seed))
            x = pair.input.astype(np.float64)
            assert total_variation(kellner_dering(x)) < total_variation(x)

    def test_rejects_bad_inputs(self):
        with pytest.raises(ShapeError):
            kellner_dering(np.zeros((4, 4, 4)))
        with pytest.raises(NumericError):
            kellner_dering(np.array([[np.nan, 0.0], [0.0, 0.0]]))
        with pytest.raises(ShapeError):
            kellner_dering(np.zeros((8, 8)), m=0)
