"""Batch-parallel rendering schedule.

A render batch is B independent (world Gaussians, camera, background) items.
Projection and compositing are split into two stages so that a whole batch
needs exactly one synchronization between them:

  * ``sequential``: one item at a time, no pool, no barrier;
  * ``naive``: items fan out to workers, but each item's compositing waits on
    its own projection through the coordinator (one sync per item);
  * ``two_stage``: all projections are issued, one barrier, then all
    compositing. This is the default and the scheme the training loop uses.

Outputs are bitwise identical across schemes and worker counts: each item is
a pure function computed by exactly one worker.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

from .render import Camera, preprocess, rasterize

SCHEMES = ("sequential", "naive", "two_stage")


class BatchRenderer:
    def __init__(self, workers: int = 1, scheme: str = "two_stage"):
        if scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {scheme!r}, expected one of {SCHEMES}")
        self.workers = max(1, int(workers))
        self.scheme = scheme
        self.barrier_count = 0
        self.batches_rendered = 0
        self._pool = None
        if scheme != "sequential" and self.workers >= 1:
            self._pool = ThreadPoolExecutor(max_workers=self.workers)

    def close(self):
        if self._pool is not None:
            self._pool.shutdown(wait=True)
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def render_batch(self, items):
        """items: list of (GaussianSet, Camera, background). Returns a list of
        (image, RenderAux) in item order."""
        if len(items) < 1:
            raise ValueError("batch must contain at least one item")
        if self.scheme == "sequential":
            out = [rasterize(preprocess(g, cam), cam, bg) for g, cam, bg in items]
        elif self.scheme == "naive":
            futures = [self._pool.submit(preprocess, g, cam) for g, cam, bg in items]
            raster_futures = []
            for f, (g, cam, bg) in zip(futures, items):
                splats = f.result()          # per-item inter-stage sync
                self.barrier_count += 1
                raster_futures.append(self._pool.submit(rasterize, splats, cam, bg))
            out = [f.result() for f in raster_futures]
        else:
            futures = [self._pool.submit(preprocess, g, cam) for g, cam, bg in items]
            splats = [f.result() for f in futures]
            self.barrier_count += 1          # the single inter-stage barrier
            raster_futures = [
                self._pool.submit(rasterize, s, cam, bg)
                for s, (g, cam, bg) in zip(splats, items)
            ]
            out = [f.result() for f in raster_futures]
        self.batches_rendered += 1
        return out

    def map_items(self, fn, items):
        """Deterministic parallel map over independent items (used by the
        trainer for per-item backward passes)."""
        if self._pool is None or len(items) == 1:
            return [fn(*args) for args in items]
        futures = [self._pool.submit(fn, *args) for args in items]
        return [f.result() for f in futures]


def render_batch(items, workers: int = 1, scheme: str = "two_stage"):
    """One-shot convenience wrapper around BatchRenderer."""
    with BatchRenderer(workers=workers, scheme=scheme) as r:
        return r.render_batch(items)


def make_benchmark_items(num_gaussians: int, image_size: int, batch_size: int, seed: int = 0):
    """Random render workload: batch_size items of num_gaussians activated
    Gaussians in front of a frontal camera."""
    import numpy as np

    from .gaussians import GaussianSet

    rng = np.random.default_rng(seed)
    camera = Camera.frontal(image_size)
    items = []
    for _ in range(batch_size):
        q = rng.normal(size=(num_gaussians, 4))
        q /= np.linalg.norm(q, axis=-1, keepdims=True)
        world = GaussianSet(
            rng.uniform(-1.0, 1.0, size=(num_gaussians, 3)),
            q,
            rng.uniform(0.01, 0.05, size=(num_gaussians, 3)),
            rng.uniform(0.2, 0.9, size=num_gaussians),
            rng.uniform(0.0, 1.0, size=(num_gaussians, 3)),
        )
        items.append((world, camera, rng.uniform(0.0, 1.0, size=3)))
    return items


def benchmark_schemes(items, batches: int = 100, workers: int = 4, schemes=SCHEMES):
    """Throughput (frames/s) of each schedule over a repeated-batch run.

    The sequential scheme ignores the worker pool by construction. Returns
    {scheme: {"frames_per_s", "seconds", "barriers_per_batch"}}.
    """
    import time

    results = {}
    for scheme in schemes:
        with BatchRenderer(workers=workers, scheme=scheme) as renderer:
            renderer.render_batch(items)          # warm the pool and JIT caches
            renderer.barrier_count = 0
            t0 = time.perf_counter()
            for _ in range(batches):
                renderer.render_batch(items)
            elapsed = time.perf_counter() - t0
            results[scheme] = {
                "frames_per_s": batches * len(items) / elapsed,
                "seconds": elapsed,
                "barriers_per_batch": renderer.barrier_count / batches,
            }
    return results
