import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from driftline.errors import (
    DomainError,
    EmptySummaryError,
    IncompatibleSketchError,
    SaturationError,
    UnsupportedOperationError,
)
from driftline.hashing import derive_seeds, hash64, hash64_array, item_key, keys_array
from driftline.sketch import (
    BloomFilter,
    CountMinSketch,
    DampedReservoir,
    DyadicCountMin,
    HyperLogLog,
    Membership,
    SketchBundle,
    SpaceSaving,
    SparseRandomProjection,
    TDigest,
    bloom_plan,
    hll_plan,
    ingest,
    loads,
    merge,
)

from conftest import zipf_stream


# -- hashing -------------------------------------------------------------------

def test_vector_hash_matches_scalar():
    items = [0, 1, 2**40, -5, 12345678901]
    keys = keys_array(np.asarray(items, dtype=np.int64))
    vec = hash64_array(keys, 99)
    assert [int(v) for v in vec] == [hash64(item_key(i), 99) for i in items]


def test_str_and_bytes_hash_alike():
    assert item_key("abc") == item_key(b"abc")


def test_derive_seeds_distinct_and_stable():
    a = derive_seeds(7, 16)
    assert len(set(a)) == 16
    assert a == derive_seeds(7, 16)


# -- bloom ---------------------------------------------------------------------

def test_bloom_empty_and_single():
    f = BloomFilter(1024, 3)
    assert f.contains("zzz") is Membership.DEFINITELY_ABSENT
    ingest(f, "a")
    assert f.contains("a") is Membership.MAYBE_PRESENT
    assert "a" in f


def test_bloom_plan_paper_point():
    k, fpr = bloom_plan(10**5, 10**6)
    assert k == 7
    assert fpr < 0.01
    assert fpr == pytest.approx((1 - math.exp(-0.7)) ** 7, abs=1e-12)
    assert fpr == pytest.approx(0.00819, abs=5e-6)


def test_bloom_plan_small_n_clamps_and_simulates():
    k, fpr = bloom_plan(1, 64)
    assert k == 44
    assert fpr < 1e-9
    f = BloomFilter(64, k, seed=3)
    f.add(123456789)
    probes = np.arange(10**6, 2 * 10**6, dtype=np.int64)
    assert int(f.contains_many(probes).sum()) == 0


def test_bloom_plan_rejects_bad_sizes():
    with pytest.raises(DomainError):
        bloom_plan(10, 0)
    with pytest.raises(DomainError):
        bloom_plan(0, 10)


def test_bloom_no_false_negatives_exhaustive():
    n = 10**5
    f = BloomFilter(10 * n, 7, seed=1)
    items = np.arange(n, dtype=np.int64) * 7919
    f.add_many(items)
    assert f.contains_many(items).all()


def test_bloom_merge_is_or_and_identity():
    a, b = BloomFilter(4096, 4, 2), BloomFilter(4096, 4, 2)
    a.add_many(np.arange(100))
    b.add_many(np.arange(100, 200))
    m = merge(a, b)
    assert np.array_equal(m.bits, a.bits | b.bits)
    assert np.array_equal(merge(a, BloomFilter(4096, 4, 2)).bits, a.bits)
    with pytest.raises(IncompatibleSketchError):
        a.merge(BloomFilter(4096, 4, 3))


# -- count-min -----------------------------------------------------------------

def test_cms_trivial():
    s = CountMinSketch(64, 3)
    assert s.estimate("never") == 0
    for _ in range(5):
        ingest(s, "x")
    assert s.estimate("x") >= 5


def test_cms_rows_sum_to_total():
    s = CountMinSketch(128, 4, seed=5)
    s.add_many(zipf_stream(5000, seed=1))
    assert (s.grid.sum(axis=1) == s.total).all()


def test_cms_zipf_bound_against_exact_counts():
    stream = zipf_stream(10**5, seed=2)
    s = CountMinSketch(2000, 5, seed=11)
    s.add_many(stream)
    exact = Counter(stream.tolist())
    keys = np.fromiter(exact.keys(), dtype=np.int64)
    est = s.estimate_many(keys)
    truth = np.fromiter(exact.values(), dtype=np.int64)
    assert (est >= truth).all()
    assert (est - truth).max() <= math.e / 2000 * 10**5


def test_cms_from_error_sizing():
    s = CountMinSketch.from_error(0.01, 0.01)
    assert s.width == math.ceil(math.e / 0.01)
    assert s.depth == math.ceil(math.log(1 / 0.01))


def test_cms_inner_product():
    a, b = CountMinSketch(4096, 5, seed=1), CountMinSketch(4096, 5, seed=1)
    assert a.inner_product(b) == 0
    x = zipf_stream(10**4, seed=3)
    y = zipf_stream(10**4, seed=4)
    a.add_many(x)
    b.add_many(y)
    fx, fy = Counter(x.tolist()), Counter(y.tolist())
    exact = sum(c * fy.get(k, 0) for k, c in fx.items())
    est = a.inner_product(b)
    assert est >= exact
    assert (est - exact) / exact < 0.10
    with pytest.raises(IncompatibleSketchError):
        a.inner_product(CountMinSketch(4096, 5, seed=2))


def test_cms_single_item_inner_product():
    a, b = CountMinSketch(64, 2), CountMinSketch(64, 2)
    a.add("x")
    b.add("x")
    assert a.inner_product(b) >= 1


def test_cms_split_merge_equals_single_stream():
    stream = zipf_stream(20_000, seed=6)
    whole = CountMinSketch(500, 4, seed=9)
    whole.add_many(stream)
    left, right = CountMinSketch(500, 4, seed=9), CountMinSketch(500, 4, seed=9)
    left.add_many(stream[:7000])
    right.add_many(stream[7000:])
    assert np.array_equal(merge(left, right).grid, whole.grid)


def test_cms_saturates():
    s = CountMinSketch(8, 1)
    s.add("a", 2**64 - 2)
    with pytest.raises(SaturationError):
        s.add("a", 5)
    assert s.estimate("a") == 2**64 - 1


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(min_value=0, max_value=300), min_size=1, max_size=400))
def test_cms_never_underestimates(items):
    s = CountMinSketch(32, 3, seed=4)
    for it in items:
        s.add(it)
    for it, c in Counter(items).items():
        assert s.estimate(it) >= c


# -- dyadic --------------------------------------------------------------------

def test_dyadic_levels_and_trivial():
    d = DyadicCountMin(256, 4, universe=1024)
    assert len(d.levels) == 11
    assert d.range_count(0, 1023) == 0
    d.add_many([3, 3, 5])
    assert d.range_count(3, 5) >= 3
    with pytest.raises(DomainError):
        d.range_count(5, 3)


def test_dyadic_range_against_exact(rng):
    d = DyadicCountMin(1024, 5, universe=1024, seed=2)
    xs = rng.integers(0, 1024, size=10**4)
    d.add_many(xs)
    prefix = np.concatenate([[0], np.cumsum(np.bincount(xs, minlength=1024))])
    rel = []
    for _ in range(100):
        lo, hi = sorted(rng.integers(0, 1024, size=2).tolist())
        exact = int(prefix[hi + 1] - prefix[lo])
        est = d.range_count(lo, hi)
        assert est >= exact
        if exact:
            rel.append((est - exact) / exact)
    assert np.mean(rel) < 0.05


# -- hyperloglog ---------------------------------------------------------------

def test_hll_empty_and_tiny():
    h = HyperLogLog(12)
    assert h.cardinality() == 0
    for _ in range(3):
        ingest(h, "a")
    # one occupied register: linear counting gives m ln(m / (m - 1)) ~ 1
    m = 2**12
    assert h.cardinality() == pytest.approx(m * math.log(m / (m - 1)))
    assert round(h.cardinality()) == 1


def test_hll_plan_memory_anchor():
    plan = hll_plan(0.011)
    assert plan["precision"] == 13
    assert plan["registers"] == 8192
    assert plan["memory_bytes_exact"] == pytest.approx(5600, rel=0.01)


def test_hll_merge_equals_union():
    a, b, u = HyperLogLog(10, 1), HyperLogLog(10, 1), HyperLogLog(10, 1)
    a.add_many(np.arange(0, 5000))
    b.add_many(np.arange(3000, 9000))
    u.add_many(np.arange(0, 9000))
    m = merge(a, b)
    assert np.array_equal(m.registers, u.registers)
    assert m.cardinality() == u.cardinality()
    with pytest.raises(IncompatibleSketchError):
        a.merge(HyperLogLog(11, 1))


def test_hll_registers_monotone(rng):
    h = HyperLogLog(8)
    prev = h.registers.copy()
    for chunk in np.array_split(rng.integers(0, 2**40, size=5000), 10):
        h.add_many(chunk)
        assert (h.registers >= prev).all()
        prev = h.registers.copy()


# -- space-saving --------------------------------------------------------------

def test_space_saving_examples():
    assert SpaceSaving(4).heavy_hitters(2) == []
    s = SpaceSaving(2)
    for _ in range(9):
        ingest(s, "a")
    ingest(s, "b")
    top = s.heavy_hitters(1)
    assert (top[0].item, top[0].count, top[0].guaranteed) == ("a", 9, True)
    with pytest.raises(DomainError):
        s.heavy_hitters(3)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(min_value=0, max_value=50), min_size=1, max_size=500),
       st.integers(min_value=1, max_value=20))
def test_space_saving_bound_property(items, capacity):
    s = SpaceSaving(capacity)
    for it in items:
        s.add(it)
    exact = Counter(items)
    assert len(s) <= capacity
    assert sum(c for _, c, _ in s.counters) == s.total == len(items)
    for item, count, err in s.counters:
        assert abs(count - exact[item]) <= len(items) / capacity
        assert count - err <= exact[item] <= count


def test_space_saving_guarantee_flag_is_sound(rng):
    stream = zipf_stream(20_000, seed=8)
    s = SpaceSaving(50)
    s.add_many(stream)
    exact = Counter(stream.tolist())
    k = 10
    true_top = {item for item, _ in exact.most_common(k)}
    for hh in s.heavy_hitters(k):
        if hh.guaranteed:
            assert hh.item in true_top


def test_space_saving_merge_bounded(rng):
    a, b = SpaceSaving(40), SpaceSaving(40)
    xa, xb = zipf_stream(5000, seed=1), zipf_stream(5000, seed=2)
    a.add_many(xa)
    b.add_many(xb)
    m = merge(a, b)
    exact = Counter(xa.tolist()) + Counter(xb.tolist())
    n = len(xa) + len(xb)
    assert m.total == n
    for item, count, _ in m.counters:
        assert count >= exact[item]
        assert count - exact[item] <= n / 40 * 2


# -- t-digest ------------------------------------------------------------------

def test_tdigest_single_value():
    d = TDigest()
    ingest(d, 7.0)
    for q in (0.0, 0.3, 0.5, 1.0):
        assert d.quantile(q) == 7.0
    d2 = TDigest()
    d2.add(42)
    assert d2.quantile(0.5) == 42


def test_tdigest_empty_raises():
    with pytest.raises(EmptySummaryError):
        TDigest().quantile(0.5)


def test_tdigest_uniform_accuracy(rng):
    x = rng.random(10**5)
    d = TDigest(100)
    d.add_many(x)
    xs = np.sort(x)
    assert abs(d.quantile(0.5) - np.quantile(xs, 0.5)) < 0.01
    assert abs(d.quantile(0.99) - np.quantile(xs, 0.99)) < 0.005
    assert d.quantile(0) == xs[0] and d.quantile(1) == xs[-1]


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(min_value=-1e6, max_value=1e6, allow_nan=False), min_size=1, max_size=300))
def test_tdigest_monotone_and_conserves_weight(values):
    d = TDigest(50)
    d.add_many(np.asarray(values))
    qs = np.linspace(0, 1, 41)
    out = [d.quantile(q) for q in qs]
    assert all(b >= a - 1e-9 for a, b in zip(out, out[1:]))
    assert sum(w for _, w in d.centroids) == pytest.approx(len(values))
    assert out[0] == min(values) and out[-1] == max(values)


def test_tdigest_merge_conserves_weight(rng):
    a, b = TDigest(), TDigest()
    a.add_many(rng.normal(size=3000))
    b.add_many(rng.normal(2, 1, size=2000))
    m = merge(a, b)
    assert m.total_weight == 5000
    assert sum(w for _, w in m.centroids) == pytest.approx(5000)


# -- projection ----------------------------------------------------------------

def test_projection_linear_and_zero(rng):
    p = SparseRandomProjection(300, 40, seed=4)
    assert np.all(p.project(np.zeros(300)) == 0)
    x, y = rng.normal(size=300), rng.normal(size=300)
    assert np.allclose(p.project(x + y), p.project(x) + p.project(y), atol=1e-9)
    assert np.allclose(p.project(2.5 * x - y), 2.5 * p.project(x) - p.project(y), atol=1e-9)
    with pytest.raises(DomainError):
        p.project(np.zeros(299))


def test_projection_entry_distribution():
    p = SparseRandomProjection(600, 100, seed=1)
    block = p._block(0, 100)
    frac = np.array([(block == 1).mean(), (block == 0).mean(), (block == -1).mean()])
    assert np.allclose(frac, [1 / 6, 2 / 3, 1 / 6], atol=0.01)


def test_projection_distance_preservation(rng):
    p = SparseRandomProjection(1000, 100, seed=7)
    x, y = rng.normal(size=(500, 1000)), rng.normal(size=(500, 1000))
    ratio = np.sum((p.project(x) - p.project(y)) ** 2, axis=1) / np.sum((x - y) ** 2, axis=1)
    assert abs(ratio.mean() - 1) < 0.10


def test_projection_deterministic_bytes(rng):
    x = rng.normal(size=200)
    a = SparseRandomProjection(200, 20, seed=5).project(x)
    b = SparseRandomProjection(200, 20, seed=5).project(x)
    assert a.tobytes() == b.tobytes()


# -- reservoir -----------------------------------------------------------------

def test_reservoir_under_capacity():
    r = DampedReservoir(10)
    for i in range(5):
        ingest(r, i)
    assert sorted(r.snapshot()) == [0, 1, 2, 3, 4]


def test_reservoir_merge_unsupported():
    with pytest.raises(UnsupportedOperationError):
        merge(DampedReservoir(3), DampedReservoir(3))


def test_reservoir_uniform_inclusion_within_3_sigma():
    s, n, trials = 10, 50, 10_000
    counts = np.zeros(n)
    for t in range(trials):
        r = DampedReservoir(s, seed=t)
        for i in range(n):
            r.step(i)
        counts[r.snapshot()] += 1
    p = s / n
    sigma = math.sqrt(trials * p * (1 - p))
    assert np.all(np.abs(counts - trials * p) <= 3 * sigma + 1)


def test_reservoir_decay_favours_latest_period():
    trials, cap, period = 2000, 20, 100
    latest = older = 0
    for t in range(trials):
        r = DampedReservoir(cap, decay_factor=0.5, decay_period=period, seed=t)
        for i in range(5 * period):
            r.step(i)
        snap = np.asarray(r.snapshot())
        latest += np.sum(snap >= 4 * period)
        older += np.sum((snap >= 3 * period) & (snap < 4 * period))
    # forward decay doubles the insertion weight each period: ratio 2 in expectation
    assert latest / older == pytest.approx(2.0, rel=0.1)


def test_reservoir_round_trip_continues_identically():
    a = DampedReservoir(8, decay_factor=0.9, decay_period=5, seed=3)
    for i in range(40):
        a.step({"i": i})
    b = DampedReservoir.from_bytes(a.to_bytes())
    for i in range(40, 80):
        a.step({"i": i})
        b.step({"i": i})
    assert a.snapshot() == b.snapshot()


# -- serialization and dispatch ------------------------------------------------

@pytest.mark.parametrize("make", [
    lambda: BloomFilter(1000, 3, 1),
    lambda: CountMinSketch(100, 3, 1),
    lambda: DyadicCountMin(64, 2, universe=256, seed=1),
    lambda: HyperLogLog(8, 1),
    lambda: SpaceSaving(10),
    lambda: TDigest(),
])
def test_byte_exact_round_trip(make):
    s = make()
    for i in range(200):
        ingest(s, i % 37)
    data = s.to_bytes()
    assert data[:4] == b"DLSK"
    again = loads(data)
    assert type(again) is type(s)
    assert again.to_bytes() == data


def test_projection_round_trip():
    p = SparseRandomProjection(50, 10, seed=2)
    assert loads(p.to_bytes()).to_bytes() == p.to_bytes()


def test_ingest_type_mismatch():
    with pytest.raises(DomainError):
        ingest(BloomFilter(64, 2), 1.5)
    with pytest.raises(DomainError):
        ingest(TDigest(), "text")


def test_csv_exports():
    d = TDigest()
    d.add_many(np.arange(10.0))
    assert d.to_csv().splitlines()[0] == "mean,weight"
    s = SpaceSaving(3)
    s.add("a")
    assert s.to_csv().splitlines()[0].startswith("item,count")


def test_bundle_serializes_every_member():
    b = SketchBundle.preset(10_000, seed=1)
    b.add_many(np.arange(20_000) % 10_000)
    parts = b.serialized()
    assert set(parts) == {"bloom", "cms", "space_saving", "hll"}
    assert b.serialized_size() == sum(len(v) for v in parts.values())
