import math

import numpy as np
import pytest

from geomkit import dataset as ds
from geomkit import embed, evaluate
from geomkit.errors import ConfigError, ShapeMismatchError, ValidationError


@pytest.fixture(scope="module")
def world():
    """A small two-axis dataset and a briefly trained mapper."""
    data = ds.make_dataset("chairlike", seed=7, n_train_per_axis=16,
                           n_test_per_axis=32, channels=1, height=24, width=24,
                           axes=("x", "y"), max_angle_deg=40.0)
    cfg = embed.TrainConfig(b=16, n_prime=5, d=3, epochs=20, pca_k=24,
                            hidden=(32,), seed=0)
    mapper, _ = embed.train(data, cfg)
    return data, mapper


@pytest.fixture(scope="module")
def suite(world):
    data, mapper = world
    return evaluate.evaluate_suite(mapper, data, angle_min_deg=10.0,
                                   angle_max_deg=30.0, n_paths=4, t_count=6,
                                   seed=3, n_prime=5, m=24)


# ---------------------------------------------------------------------------
# metrics


def test_image_se_zero_for_identical():
    rng = np.random.default_rng(0)
    frames = rng.uniform(size=(5, 1, 4, 4))
    np.testing.assert_array_equal(evaluate.image_se(frames, frames.copy()), np.zeros(5))


def test_image_se_single_pixel_hand():
    gt = np.zeros((3, 1, 2, 2))
    frames = gt.copy()
    frames[1, 0, 0, 1] += 0.1
    np.testing.assert_allclose(evaluate.image_se(frames, gt), [0.0, 0.01, 0.0],
                               atol=1e-15)


def test_image_se_matches_naive_loop():
    rng = np.random.default_rng(1)
    frames = rng.uniform(size=(6, 2, 5, 3))
    gt = rng.uniform(size=(6, 2, 5, 3))
    naive = [float(((frames[t] - gt[t]) ** 2).sum()) for t in range(6)]
    np.testing.assert_allclose(evaluate.image_se(frames, gt), naive, rtol=1e-12)


def test_image_se_shape_mismatch():
    with pytest.raises(ShapeMismatchError):
        evaluate.image_se(np.zeros((3, 1, 2, 2)), np.zeros((3, 1, 2, 3)))


def test_velocity_se_constant_shift_is_zero():
    # a global offset cancels in the frame differences
    rng = np.random.default_rng(2)
    gt = rng.uniform(size=(7, 1, 3, 3))
    np.testing.assert_allclose(evaluate.velocity_se(gt + 0.3, gt), np.zeros(6),
                               atol=1e-18)


def test_velocity_se_three_frames_hand():
    gt = np.zeros((3, 1, 1, 2))
    frames = np.array([[[[0.0, 0.0]]], [[[0.2, 0.0]]], [[[0.2, 0.1]]]])
    # frame diffs (0.2, 0) and (0, 0.1); gt diffs are zero
    np.testing.assert_allclose(evaluate.velocity_se(frames, gt), [0.04, 0.01],
                               atol=1e-15)


def test_velocity_se_matches_naive_loop():
    rng = np.random.default_rng(3)
    frames = rng.uniform(size=(5, 1, 4, 2))
    gt = rng.uniform(size=(5, 1, 4, 2))
    naive = [
        float((((frames[t + 1] - frames[t]) - (gt[t + 1] - gt[t])) ** 2).sum())
        for t in range(4)
    ]
    np.testing.assert_allclose(evaluate.velocity_se(frames, gt), naive, rtol=1e-12)


def test_velocity_se_needs_two_frames():
    with pytest.raises(ValidationError):
        evaluate.velocity_se(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 2, 2)))


def test_path_result_length_validation():
    with pytest.raises(ValidationError):
        evaluate.PathResult(frames=np.zeros((4, 1, 2, 2)), curve=None,
                            image_se=np.zeros(3), velocity_se=np.zeros(3),
                            pair=(None, None), method="elastica")


# ---------------------------------------------------------------------------
# paths


def test_identity_pair_is_constant(world):
    data, mapper = world
    for res in (
        evaluate.interpolate_path(mapper, data, 4, 4, t_count=5, n_prime=5),
        evaluate.baseline_linear_latent(mapper, data, 4, 4, t_count=5),
        evaluate.baseline_linear_image(data, 4, 4, t_count=5),
    ):
        assert len(res.frames) == 5
        for t in range(5):
            np.testing.assert_array_equal(res.frames[t], data.test[4].image)
        np.testing.assert_array_equal(res.image_se, np.zeros(5))
        np.testing.assert_array_equal(res.velocity_se, np.zeros(4))


def test_endpoints_are_true_images(world):
    data, mapper = world
    i, j = 2, 5
    for res in (
        evaluate.interpolate_path(mapper, data, i, j, t_count=6, n_prime=5, m=24),
        evaluate.baseline_linear_latent(mapper, data, i, j, t_count=6),
        evaluate.baseline_linear_image(data, i, j, t_count=6),
    ):
        np.testing.assert_array_equal(res.frames[0], data.test[i].image)
        np.testing.assert_array_equal(res.frames[-1], data.test[j].image)
        assert res.image_se[0] == 0.0 and res.image_se[-1] == 0.0


def test_path_result_contents(world):
    data, mapper = world
    res = evaluate.interpolate_path(mapper, data, 1, 6, t_count=6, n_prime=5, m=24)
    assert res.method == "elastica"
    assert res.curve is not None and res.curve.points.shape == (25, 3)
    assert res.latent_samples.shape == (6, 3)
    assert res.frames.shape == (6, 1, 24, 24)
    assert res.image_se.shape == (6,) and res.velocity_se.shape == (5,)
    assert res.pair == (data.test[1].rotation, data.test[6].rotation)
    lerp = evaluate.baseline_linear_latent(mapper, data, 1, 6, t_count=6)
    assert lerp.curve is None and lerp.method == "latent-lerp"


def test_pixel_lerp_is_exact_blend(world):
    data, _ = world
    res = evaluate.baseline_linear_image(data, 0, 9, t_count=5)
    a, b = data.test[0].image, data.test[9].image
    np.testing.assert_allclose(res.frames[2], 0.5 * a + 0.5 * b, atol=1e-15)


# ---------------------------------------------------------------------------
# suite


def test_sample_pairs_respect_gap_range(world):
    data, _ = world
    pairs = evaluate.sample_test_pairs(data, 10.0, 30.0, 6, seed=1)
    assert len(set(pairs)) == 6
    for i, j in pairs:
        gap = np.rad2deg(ds.so3_distance(data.test[i].rotation, data.test[j].rotation))
        assert 10.0 <= gap <= 30.0


def test_sample_pairs_insufficient_raises(world):
    data, _ = world
    with pytest.raises(ConfigError):
        evaluate.sample_test_pairs(data, 0.0001, 0.0002, 3, seed=0)


def test_suite_row_schema(suite):
    assert len(suite.rows) == 3 * 6
    assert [r["method"] for r in suite.rows[:6]] == ["elastica"] * 6
    for row in suite.rows:
        assert tuple(row.keys()) == evaluate.SUITE_COLUMNS
        if row["t"] in (0, 5):
            assert row["mean_se"] == 0.0 and row["std_se"] == 0.0
        if row["t"] == 5:
            assert math.isnan(row["mean_ev"]) and math.isnan(row["std_ev"])
        else:
            assert row["mean_ev"] >= 0.0


def test_suite_mean_matches_paths(suite):
    # summary rows are plain averages over the stored per-path metrics
    se = np.stack([p.image_se for p in suite.paths["pixel-lerp"]])
    row = next(r for r in suite.rows if r["method"] == "pixel-lerp" and r["t"] == 3)
    assert row["mean_se"] == pytest.approx(se[:, 3].mean(), rel=1e-12)
    assert row["std_se"] == pytest.approx(se[:, 3].std(), rel=1e-12)


def test_suite_deterministic_across_jobs(world, suite):
    data, mapper = world
    again = evaluate.evaluate_suite(mapper, data, angle_min_deg=10.0,
                                    angle_max_deg=30.0, n_paths=4, t_count=6,
                                    seed=3, n_prime=5, m=24, jobs=2)
    assert again.pairs == suite.pairs
    for r1, r2 in zip(suite.rows, again.rows):
        for key in evaluate.SUITE_COLUMNS:
            v1, v2 = r1[key], r2[key]
            if isinstance(v1, float) and math.isnan(v1):
                assert math.isnan(v2)
            else:
                assert v1 == v2


def test_write_suite_csv(tmp_path, suite):
    out = tmp_path / "suite.csv"
    evaluate.write_suite_csv(out, suite.rows)
    lines = out.read_text().splitlines()
    assert lines[0] == "method,t,mean_se,std_se,mean_ev,std_ev"
    assert len(lines) == 1 + len(suite.rows)


# ---------------------------------------------------------------------------
# denoising


def test_denoise_empty_bank(world):
    _, mapper = world
    with pytest.raises(ConfigError):
        evaluate.denoise(mapper, np.zeros((1, 24, 24)), [])


def test_denoise_recovers_curve_endpoint(world, suite):
    # a clean endpoint's latent sits exactly on the stored curve, so
    # denoising must return its roundtrip image bit for bit
    data, mapper = world
    bank = suite.paths["elastica"]
    i = suite.pairs[0][0]
    clean = data.test[i].image
    out = evaluate.denoise(mapper, clean, bank)
    np.testing.assert_array_equal(out, mapper.phi_inv(mapper.phi(clean)))
    assert out.shape == clean.shape
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_denoise_noisy_input_lands_on_bank(world, suite):
    data, mapper = world
    bank = suite.paths["elastica"]
    rng = np.random.default_rng(11)
    i = suite.pairs[1][0]
    noisy = np.clip(data.test[i].image + rng.normal(0.0, 0.05,
                                                    size=(1, 24, 24)), 0.0, 1.0)
    out = evaluate.denoise(mapper, noisy, bank)
    # output must be the roundtrip of one of the bank latents (batched and
    # single-row matmuls may differ in the last ulp)
    all_latents = np.concatenate([p.latent_samples for p in bank])
    images = mapper.phi_inv_batch(all_latents)
    assert min(float(((images[k] - out) ** 2).sum()) for k in range(len(images))) < 1e-20
