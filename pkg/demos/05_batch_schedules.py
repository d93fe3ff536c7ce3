"""Compare the three batch-render schedules.

Sequential rendering, naive per-item synchronization, and the two-stage
schedule with a single barrier per batch. Prints throughput and the
instrumented barrier counts; results are bitwise identical across schemes
and worker counts.

    python3 demos/05_batch_schedules.py
"""

import numpy as np

from headsplat import BatchRenderer
from headsplat.scheduler import SCHEMES, benchmark_schemes, make_benchmark_items


def main():
    items = make_benchmark_items(num_gaussians=3000, image_size=64, batch_size=10, seed=0)

    # bitwise identity across schemes and worker counts
    reference = None
    for scheme in SCHEMES:
        for workers in (1, 4):
            with BatchRenderer(workers=workers, scheme=scheme) as r:
                out = r.render_batch(items)
            if reference is None:
                reference = out
            else:
                assert all(np.array_equal(a[0], b[0]) for a, b in zip(reference, out))
    print("all schemes and worker counts agree bitwise")

    results = benchmark_schemes(items, batches=40, workers=4)
    print(f"{'scheme':>12} {'frames/s':>10} {'barriers/batch':>15}")
    for scheme in SCHEMES:
        r = results[scheme]
        print(f"{scheme:>12} {r['frames_per_s']:>10.1f} {r['barriers_per_batch']:>15.1f}")


if __name__ == "__main__":
    main()
