import numpy as np
import pytest

from fusionnet import AugmentConfig, augment


def _sample_pair(seed=0, side=20):
    rng = np.random.default_rng(seed)
    image = rng.normal(size=(4, side, side, side)).astype(np.float32)
    mask = np.zeros((side, side, side), dtype=np.int16)
    mask[4:14, 4:14, 4:14] = 1
    mask[6:10, 6:10, 6:10] = 2
    mask[7:9, 7:9, 11:13] = 3
    return image, mask


SPATIAL_ONLY = AugmentConfig(
    rotate_prob=1.0, shear_prob=1.0, translate_prob=1.0, translate_range=3.0,
    scale_prob=1.0, grid_prob=1.0,
    noise_prob=0.0, shift_prob=0.0, scale_intensity_prob=0.0, gibbs_prob=0.0,
)
INTENSITY_ONLY = AugmentConfig(
    rotate_prob=0.0, shear_prob=0.0, translate_prob=0.0, scale_prob=0.0,
    grid_prob=0.0, noise_prob=1.0, shift_prob=1.0,
    scale_intensity_prob=1.0, gibbs_prob=1.0,
)


def test_zero_probabilities_return_inputs_unchanged():
    image, mask = _sample_pair()
    out_image, out_mask = augment(image, mask, seed=11, cfg=AugmentConfig.disabled())
    assert np.array_equal(out_image, image)
    assert np.array_equal(out_mask, mask)


def test_fixed_seed_reproduces_exactly():
    image, mask = _sample_pair()
    a = augment(image, mask, seed=7, cfg=SPATIAL_ONLY)
    b = augment(image, mask, seed=7, cfg=SPATIAL_ONLY)
    c = augment(image, mask, seed=8, cfg=SPATIAL_ONLY)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    assert not np.array_equal(a[0], c[0])


def test_mask_keeps_its_label_set_under_spatial_transform():
    image, mask = _sample_pair()
    for seed in range(10):
        _, out_mask = augment(image, mask, seed=seed, cfg=SPATIAL_ONLY)
        assert out_mask.dtype == mask.dtype
        assert set(np.unique(out_mask)) <= set(np.unique(mask))


def test_image_and_mask_stay_aligned():
    """A pure translation must move image and mask by the same amount."""
    side = 20
    image = np.zeros((1, side, side, side))
    mask = np.zeros((side, side, side), dtype=np.int16)
    image[0, 8:12, 8:12, 8:12] = 1.0
    mask[8:12, 8:12, 8:12] = 1
    cfg = AugmentConfig(
        rotate_prob=0.0, shear_prob=0.0, translate_prob=1.0, translate_range=4.0,
        scale_prob=0.0, grid_prob=0.0, noise_prob=0.0, shift_prob=0.0,
        scale_intensity_prob=0.0, gibbs_prob=0.0,
    )
    out_image, out_mask = augment(image, mask, seed=3, cfg=cfg)
    inside = out_mask == 1
    assert inside.any()
    assert out_image[0][inside].mean() > 0.5
    assert out_image[0][~inside].mean() < 0.1


def test_intensity_perturbations_leave_mask_untouched():
    image, mask = _sample_pair()
    out_image, out_mask = augment(image, mask, seed=5, cfg=INTENSITY_ONLY)
    assert np.array_equal(out_mask, mask)
    assert not np.allclose(out_image, image)
    assert out_image.shape == image.shape
    assert np.isfinite(out_image).all()


def test_shape_mismatch_is_rejected():
    image, mask = _sample_pair()
    with pytest.raises(ValueError):
        augment(image[:, :10], mask, seed=0)
    with pytest.raises(ValueError):
        augment(image[0], mask, seed=0)
