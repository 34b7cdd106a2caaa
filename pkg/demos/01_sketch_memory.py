"""How much of a ten-million-item stream survives in well under a megabyte.

We push 10^7 integer keys (10^6 distinct) through the default sketch preset
and then ask the questions a sampled copy of the stream would answer:
how many distinct keys, how often did a key occur, which keys dominate,
have we seen this key before.  Exact answers come from numpy for comparison.
"""

import time

import numpy as np

from driftline.sketch import SketchBundle, uniform_downsample

rng = np.random.default_rng(0)
N, D = 10**7, 10**6

ranks = np.arange(1, D + 1, dtype=np.float64)
p = ranks ** -1.05
p /= p.sum()
stream = rng.choice(D, size=N, p=p).astype(np.int64)

t = time.perf_counter()
bundle = SketchBundle.preset(D, seed=0)
for chunk in np.array_split(stream, 20):
    bundle.add_many(chunk)
print(f"ingested {N:,} keys in {time.perf_counter() - t:.1f} s")

sizes = {name: len(blob) for name, blob in bundle.serialized().items()}
print(f"serialized sketches: {sum(sizes.values()):,} bytes {sizes}")
print(f"raw 32-bit keys:     {N * 4:,} bytes")

keys, counts = np.unique(stream, return_counts=True)
print(f"\ndistinct keys: exact {len(keys):,}, HyperLogLog {bundle.hll.cardinality():,.0f}")

# Space-Saving keeps only 25 counters, so anything below ~N/25 is noise;
# the `guaranteed` flag says which entries are certainly in the top k.
print("\ntop keys (exact count / count-min / space-saving, guaranteed?):")
for hh in bundle.heavy.heavy_hitters(5):
    exact = int(counts[np.searchsorted(keys, hh.item)])
    print(f"  key {hh.item:>6}: {exact:>8} / {bundle.cms.estimate(hh.item):>8} / {hh.count:>8}  {hh.guaranteed}")
print(f"  count-min overestimate bound eps*N = {bundle.cms.epsilon * N:,.0f}")

unseen = np.arange(D, D + 100_000, dtype=np.int64)
fp = float(np.mean(bundle.bloom.contains_many(unseen)))
print(f"\nBloom false positives on unseen keys: {fp:.3%}")

# the sampling alternative: a uniform sample of 1000 keys, same question
sample = uniform_downsample(stream, 1000, rng)
true_share = float(np.mean(stream == 0))
print(f"\nshare of key 0: exact {true_share:.4f}, 1000-key sample {np.mean(sample == 0):.4f}, "
      f"count-min {bundle.cms.estimate(0) / N:.4f}")
