import numpy as np
import pytest

from diestudy.synth import (
    GRADES,
    SyntheticBenchmarkSpec,
    duplicate_pairs,
    generate_synthetic_benchmark,
    render_die_template,
)


def zero_degradation_spec(**kw):
    return SyntheticBenchmarkSpec(
        n_dies=kw.pop("n_dies", 2),
        coins_per_die_mean=kw.pop("coins_per_die_mean", 3.0),
        coins_per_die_variance=kw.pop("coins_per_die_variance", 2.1),
        wear_blur_range=(0.0, 0.0),
        noise_level=0.0,
        contrast_jitter=0.0,
        rotation_jitter_deg=0.0,
        **kw,
    )


class TestGenerator:
    def test_zero_degradation_pixel_identical(self):
        images, records = generate_synthetic_benchmark(zero_degradation_spec(), seed=5)
        by_die = {}
        for rec in records:
            by_die.setdefault(rec.die_id, []).append(rec.image_id)
        for die, image_ids in by_die.items():
            base = images[image_ids[0]].values
            for image_id in image_ids[1:]:
                np.testing.assert_array_equal(images[image_id].values, base)

    def test_two_dies_one_coin_each(self):
        spec = SyntheticBenchmarkSpec(
            n_dies=2, coins_per_die_mean=1.0, coins_per_die_variance=0.0
        )
        images, records = generate_synthetic_benchmark(spec, seed=1)
        assert len(images) == 2
        assert {r.die_id for r in records} == {"die000", "die001"}

    def test_duplicate_probability_one(self):
        spec = SyntheticBenchmarkSpec(
            n_dies=3, coins_per_die_mean=2.0, coins_per_die_variance=1.5, duplicate_prob=1.0
        )
        images, records = generate_synthetic_benchmark(spec, seed=2)
        coins = {r.coin_id for r in records}
        assert len(records) == 2 * len(coins)  # every coin appears twice
        pairs = duplicate_pairs(records)
        assert len(pairs) == len(coins)
        for a, b in pairs:
            assert a in images and b in images

    def test_deterministic(self):
        spec = SyntheticBenchmarkSpec(n_dies=3)
        img_a, rec_a = generate_synthetic_benchmark(spec, seed=9)
        img_b, rec_b = generate_synthetic_benchmark(spec, seed=9)
        assert [r.image_id for r in rec_a] == [r.image_id for r in rec_b]
        for image_id in img_a:
            np.testing.assert_array_equal(img_a[image_id].values, img_b[image_id].values)

    def test_grades_valid(self):
        spec = SyntheticBenchmarkSpec(n_dies=4)
        _, records = generate_synthetic_benchmark(spec, seed=3)
        assert all(r.grade in GRADES for r in records)

    def test_dies_differ(self):
        tpl_a = render_die_template(128, type_seed=1, die_seed=10)
        tpl_b = render_die_template(128, type_seed=1, die_seed=11)
        assert np.abs(tpl_a - tpl_b).max() > 0.1

    def test_invalid_spec(self):
        with pytest.raises(ValueError):
            SyntheticBenchmarkSpec(n_dies=1)
        with pytest.raises(ValueError):
            SyntheticBenchmarkSpec(duplicate_prob=1.5)
        with pytest.raises(ValueError):
            SyntheticBenchmarkSpec(wear_blur_range=(2.0, 1.0))
