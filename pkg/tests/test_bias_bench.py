import numpy as np
import pytest

from darkaction.bias_bench import (
    BiasSettings, SyntheticSpec, draw_length, from_config, generate_dataset, length_mi, mutual_information,
    observed_length, run_bias_experiment,
)
from darkaction.head import HeadConfig
from darkaction.media_io import validate_config
from darkaction.rng import Rng
from darkaction.sampling import DatasetStats, SamplingParams, plan_sampling


def test_mi_constant_is_zero():
    assert mutual_information([(5, i % 2) for i in range(100)]) == 0


def test_mi_disjoint_is_one_bit():
    assert mutual_information([(i % 2 + 10, i % 2) for i in range(100)]) == pytest.approx(1.0, abs=1e-12)


def test_mi_independent_is_small():
    r = Rng(0)
    pairs = [(r.randbelow(8), r.randbelow(2)) for _ in range(10_000)]
    assert mutual_information(pairs) <= 0.05


def test_mi_needs_samples():
    with pytest.raises(ValueError):
        mutual_information([(1, 1)])


def test_zero_std_lengths():
    spec = SyntheticSpec(length_means=(50, 90), length_stds=(0, 0), samples_per_class=5, dim=4)
    clips = generate_dataset(spec, Rng(0))
    assert [c.n_frames for c in clips] == [50] * 5 + [90] * 5


def test_lengths_are_truncated():
    r = Rng(1)
    vals = [draw_length(r, 40, 30, 33, 60) for _ in range(500)]
    assert min(vals) >= 33 and max(vals) <= 60


def test_reproducible_lengths():
    spec = SyntheticSpec(length_means=(60, 120), samples_per_class=100, seed=0)
    lengths = [c.n_frames for c in generate_dataset(spec, Rng(0))]
    # frozen regression values for this seed
    assert lengths[:5] == [41, 44, 80, 74, 65] and lengths[100:105] == [132, 114, 129, 114, 105]
    assert sum(lengths[:100]) == 5897 and sum(lengths[100:]) == 11919
    again = [c.n_frames for c in generate_dataset(spec, Rng(0))]
    assert again == lengths


def test_zero_signal_frames_carry_no_label():
    spec = SyntheticSpec(length_stds=(0, 0), length_means=(64, 64), samples_per_class=200, dim=4)
    clips = generate_dataset(spec, Rng(2))
    means = [np.mean([c.features.mean(axis=0) for c in clips if c.label == y], axis=0) for y in (0, 1)]
    np.testing.assert_allclose(means[0], means[1], atol=0.05)


def test_observed_length():
    p = SamplingParams()
    stats = DatasetStats(33, 160)
    assert observed_length(plan_sampling(97, "length_adjusted", p, Rng(0))) == 64
    assert observed_length(plan_sampling(160, "constant", p, Rng(0), stats)) == 64
    assert observed_length(plan_sampling(80, "constant", p, Rng(0), stats)) == 32


def test_length_adjusted_leaks_nothing():
    spec = SyntheticSpec()
    mi = length_mi(spec, "length_adjusted", SamplingParams(), DatasetStats(33, 160), 2000, Rng(0))
    assert mi == 0


def test_disjoint_lengths_constant_strategy():
    spec = SyntheticSpec(length_means=(50, 140), length_stds=(5, 5), dim=16, samples_per_class=40)
    report = run_bias_experiment(
        spec, ["constant"], head_config=HeadConfig(dim=16, heads=2, classes=2, t_len=16),
        settings=BiasSettings(test_per_class=20, epochs=15, mi_draws=2000),
    )
    r = report.results["constant"]
    assert r.mi_bits == pytest.approx(1.0, abs=1e-12)
    assert r.in_dist_accuracy >= 0.95 and r.shifted_accuracy <= 0.05
    assert (r.n_train, r.n_test, r.n_shifted) == (80, 40, 40)


def test_report_shapes_and_workers():
    spec = SyntheticSpec(dim=4, samples_per_class=6)
    kw = dict(head_config=HeadConfig(dim=4, heads=2, classes=2, t_len=16),
              settings=BiasSettings(test_per_class=3, epochs=1, mi_draws=50))
    a = run_bias_experiment(spec, ["constant", "delta"], workers=1, **kw)
    b = run_bias_experiment(spec, ["constant", "delta"], workers=2, **kw)
    assert a.to_json() == b.to_json()
    for r in a.results.values():
        assert 0 <= r.in_dist_accuracy <= 1 and 0 <= r.shifted_accuracy <= 1 and r.mi_bits >= 0
    assert a.table().splitlines()[0].startswith("strategy")


def test_unknown_strategy():
    with pytest.raises(ValueError):
        run_bias_experiment(SyntheticSpec(dim=4), ["psychic"])


def test_from_config_defaults():
    spec, strategies, sampling, head, settings = from_config(validate_config({}))
    assert spec.length_means == (80.0, 120.0) and spec.signal == 0 and spec.offset == 1.0
    assert sampling == SamplingParams() and settings.n_max == 160
    assert head.dim == spec.dim and head.t_len == 16
    assert strategies == ["constant", "length_adjusted", "variable", "delta"]


# Exact population values, by enumerating the discretized truncated-normal
# lengths and a fine grid over delta; plug-in estimates sit slightly above.
@pytest.mark.parametrize("strategy,population", [("constant", 0.9117), ("delta", 0.1478)])
def test_mi_estimate_near_population_value(strategy, population):
    mi = length_mi(SyntheticSpec(), strategy, SamplingParams(), DatasetStats(33, 160), 5000, Rng(11))
    assert population - 0.01 <= mi <= population + 0.04
