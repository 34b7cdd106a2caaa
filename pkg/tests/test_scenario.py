import numpy as np
import pytest

from driftline.errors import ConfigError
from driftline.scenario import DriftInjection, GeneratorSpec, apply_feature_injections, generate, inject_records

SPEC = GeneratorSpec(events=4000, dims=3)


def test_generator_deterministic_and_separated():
    a, b = generate(SPEC, 5), generate(SPEC, 5)
    assert np.array_equal(a.features, b.features) and np.array_equal(a.labels, b.labels)
    means = [a.features[a.labels == c, 0].mean() for c in (0, 1)]
    assert means[1] - means[0] == pytest.approx(3.0, abs=0.15)


def test_events_are_time_ordered_and_complete():
    s = generate(GeneratorSpec(events=500, feedback_rate=0.8), 1)
    recs = list(s.events())
    ts = [r["ts"] for r in recs]
    assert ts == sorted(ts)
    assert sum("features" in r for r in recs) == 500
    assert sum("label" in r for r in recs) == int((s.feedback_delay >= 0).sum())
    first_seen = {}
    for r in recs:
        if "features" in r:
            first_seen[r["key"]] = r["ts"]
        else:
            assert r["key"] in first_seen  # feedback never precedes its primary in event time


def test_magnitude_zero_is_identity():
    base = generate(SPEC, 2)
    for kind in ("covariate_mean_shift", "abrupt_changepoint", "anomaly_burst", "gradual_linear"):
        dur = 0 if kind in ("covariate_mean_shift", "abrupt_changepoint") else 100
        inj = DriftInjection(kind, 1000, dur, magnitude=0.0)
        assert np.array_equal(generate(SPEC, 2, [inj]).features, base.features)


def test_covariate_shift_adds_sigma():
    base = generate(SPEC, 3)
    moved = generate(SPEC, 3, [DriftInjection("covariate_mean_shift", 1000, magnitude=2.0, dims=(1,))])
    diff = moved.features - base.features
    assert np.all(diff[:1000] == 0)
    assert np.allclose(diff[1000:, 1], 2.0) and np.all(diff[1000:, [0, 2]] == 0)


def test_gradual_ramp_then_hold():
    x = np.zeros((100, 1))
    out = apply_feature_injections(x, [DriftInjection("gradual_linear", 10, 20, magnitude=4.0)], 1.0)
    assert out[9, 0] == 0
    assert out[19, 0] == pytest.approx(2.0)
    assert np.allclose(out[29:, 0], 4.0)


def test_prior_rebalance_proportions():
    inj = DriftInjection("prior_rebalance", 0, proportions=(0.9, 0.1))
    s = generate(GeneratorSpec(events=10_000), 4, [inj])
    assert np.mean(s.labels == 0) == pytest.approx(0.9, abs=0.02)


def test_record_level_prior_rebalance_keeps_conditionals():
    s = generate(GeneratorSpec(events=6000, dims=2), 5)
    recs = list(s.events())
    out = inject_records(recs, [DriftInjection("prior_rebalance", 3000, proportions=(0.9, 0.1))], seed=1)
    labels = {r["key"]: r["label"] for r in out if "label" in r}
    late = [r for r in out if "features" in r and int(r["key"][1:]) >= 3000]
    y = np.array([labels[r["key"]] for r in late])
    assert np.mean(y == 0) == pytest.approx(0.9, abs=0.02)
    x0 = np.array([r["features"][0] for r in late])
    assert x0[y == 0].mean() == pytest.approx(-1.5, abs=0.1)


def test_anomaly_burst_reverts():
    x = np.zeros((1000, 2))
    out = apply_feature_injections(x, [DriftInjection("anomaly_burst", 100, 200, magnitude=6.0, dims=(0, 1))], 1.0)
    hits = np.any(out != 0, axis=1)
    assert not hits[:100].any() and not hits[300:].any()
    assert hits[100:300].mean() == pytest.approx(0.2, abs=0.07)
    assert set(np.abs(out[hits]).ravel().tolist()) == {6.0}


def test_composition_follows_list_order():
    x = np.random.default_rng(0).normal(size=(400, 1))
    ab = [DriftInjection("abrupt_changepoint", 100, magnitude=1.0), DriftInjection("gradual_linear", 200, 50, 2.0)]
    one = apply_feature_injections(x, ab, 1.0)
    assert np.array_equal(one, apply_feature_injections(x, ab, 1.0))
    assert not np.array_equal(one, apply_feature_injections(x, ab[::-1], 1.0))


@pytest.mark.parametrize("kwargs", [
    dict(kind="sideways", start=0),
    dict(kind="gradual_linear", start=0, duration=0),
    dict(kind="abrupt_changepoint", start=0, duration=5),
    dict(kind="prior_rebalance", start=0, proportions=(0.5, 0.6)),
    dict(kind="covariate_mean_shift", start=-1),
])
def test_injection_validation(kwargs):
    with pytest.raises(ConfigError):
        DriftInjection(**kwargs)


def test_dims_out_of_range():
    with pytest.raises(ConfigError):
        generate(SPEC, 0, [DriftInjection("covariate_mean_shift", 0, dims=(7,))])
