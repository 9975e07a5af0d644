"""
Latency and memory as the sequence grows
========================================

A short sweep: the softmax score matrix makes SA quadratic in time and
memory, while the recurrent mechanisms grow linearly in time with a flat
memory high-water mark. Frames are 20 ms, so 4096 tokens is about 80 s of
speech.
"""

from effattn import bench
from effattn.pipeline import seconds_to_frames

print("400 s of speech at 50 frames/s is", seconds_to_frames(400), "tokens")

config = bench.BenchConfig(mechanisms=("sa", "retnet", "kda"), lengths=(256, 512, 1024, 2048, 4096),
                           model_dim=128, num_heads=4, repeats=3, warmup=1, seed=0)
result = bench.run_sweep(config, progress=lambda name, mode, L, ms, peak: print(
    f"  {name:7s} L={L:5d} {ms:9.2f} ms {peak / 2**20:9.2f} MiB"))

summary = bench.summarize(result.records)

# slope of log latency against log length: ~2 for SA, ~1 for the others
for fit in summary.fits:
    print(f"{fit.mechanism:7s} slope {fit.slope:.2f} ({fit.classification}, r2 {fit.r2:.3f})")

# how much SA costs relative to each bounded mechanism at the longest length
for ratio in summary.ratios:
    print(f"SA / {ratio['mechanism']}: {ratio['latency_ratio']:.1f}x time, "
          f"{ratio['memory_ratio']:.0f}x memory at L={ratio['seq_len']}")
