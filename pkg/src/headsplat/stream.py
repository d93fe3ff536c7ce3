"""On-the-fly reconstruction from a frame stream.

Incoming frames land in a FIFO local pool; what the FIFO evicts feeds a
reservoir-sampled global pool, so every frame of the stream has an equal
chance of long-term retention. Each optimization step mixes a local and a
global sub-batch, which keeps adaptation fast without forgetting old frames.

Frame indices are 1-based: the reservoir acceptance test for the j-th evicted
frame draws k = randint(0, j) and keeps it iff k < capacity, which is exactly
the classic j-th-item rule when eviction order matches arrival order.
"""

from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .color_init import ColorInitState
from .dataset import FrameSample, SequenceDataset
from .scheduler import BatchRenderer
from .train import Optimizer, TrainConfig, TrainState, init_avatar, train_step


@dataclass
class SamplePools:
    local_capacity: int = 150
    global_capacity: int = 1000
    keep_evicted: bool = True     # False: evictions are discarded (no-global mode)
    local: deque = field(default_factory=deque)
    global_pool: list = field(default_factory=list)
    last_index: int = 0
    evictions: int = 0
    discarded: int = 0
    reservoir_inserts: int = 0

    def process_frame(self, sample: FrameSample, rng):
        """Ingest one frame per the local-FIFO / global-reservoir rule."""
        if sample.index != self.last_index + 1:
            raise ValueError(
                f"frame index {sample.index} does not follow {self.last_index}")
        self.last_index = sample.index
        if len(self.local) >= self.local_capacity:
            evicted = self.local.popleft()
            self.evictions += 1
            if self.keep_evicted:
                self._reservoir_insert(evicted, rng)
            else:
                self.discarded += 1
        self.local.append(sample)

    def _reservoir_insert(self, sample: FrameSample, rng):
        if len(self.global_pool) < self.global_capacity:
            self.global_pool.append(sample)
            self.reservoir_inserts += 1
            return
        k = int(rng.integers(0, sample.index))
        if k < self.global_capacity:
            self.global_pool[k] = sample   # the displaced sample is discarded
            self.reservoir_inserts += 1
        self.discarded += 1


def process_frame(sample: FrameSample, pools: SamplePools, rng):
    pools.process_frame(sample, rng)


def sample_batch(pools: SamplePools, batch_size: int, eta: float, rng):
    """Split the batch between pools: B_l = round(eta * B) from the local FIFO,
    the rest from the global reservoir (all local while the reservoir is
    empty). Draws are uniform with replacement."""
    if len(pools.local) == 0:
        raise ValueError("local pool is empty" if pools.global_pool
                         else "both pools are empty")
    b_local = int(np.floor(eta * batch_size + 0.5))   # ties round half up
    b_global = batch_size - b_local
    if len(pools.global_pool) == 0:
        b_local, b_global = batch_size, 0
    local_items = list(pools.local)
    picks = [local_items[int(i)] for i in rng.integers(0, len(local_items), size=b_local)]
    if b_global:
        picks += [pools.global_pool[int(i)]
                  for i in rng.integers(0, len(pools.global_pool), size=b_global)]
    return picks


@dataclass
class OnlineConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    local_capacity: int = 150
    global_capacity: int = 1000
    eta: float = 0.7
    steps_per_frame: int = 25
    sampling: str = "full"        # "full" | "no_global" | "no_local"
    wall_clock_fps: float = 0.0   # > 0: ingest in real time instead


def run_online(stream, dataset: SequenceDataset, config: OnlineConfig):
    """Stream frames in order and train between arrivals.

    ``stream`` is an iterable of FrameSample with consecutive 1-based indices.
    Returns (model, per-step loss log, forgetting report). The report lists,
    per frame, the minimum black-background L1 seen while training and the
    final L1 after the stream ends.
    """
    if config.sampling not in ("full", "no_global", "no_local"):
        raise ValueError(f"unknown sampling mode {config.sampling!r}")
    cfg = config.train
    rng = np.random.default_rng(cfg.seed)
    pools = SamplePools(config.local_capacity, config.global_capacity)
    if config.sampling == "no_global":
        pools.keep_evicted = False
    if config.sampling == "no_local":
        pools.local_capacity = 1   # degenerate FIFO: everything flows through

    model = init_avatar(dataset.rig, cfg)
    color_state = ColorInitState.create(model.count, cfg.color_init_threshold)
    min_l1 = {}
    log = []
    processed = 0

    with BatchRenderer(workers=cfg.workers, scheme=cfg.scheme) as renderer:
        state = TrainState(model, Optimizer(model, cfg), renderer,
                           color_state, cfg, dataset.camera)

        def optimize_once(step_index):
            if config.sampling == "no_global":
                batch = sample_batch(pools, cfg.batch_size, 1.0, rng)
            elif config.sampling == "no_local":
                if len(pools.global_pool) == 0:
                    batch = sample_batch(pools, cfg.batch_size, 1.0, rng)
                else:
                    batch = [pools.global_pool[int(i)]
                             for i in rng.integers(0, len(pools.global_pool),
                                                   size=cfg.batch_size)]
            else:
                batch = sample_batch(pools, cfg.batch_size, config.eta, rng)
            backgrounds = rng.uniform(0.0, 1.0, size=(cfg.batch_size, 3))
            loss, black = train_step(state, batch, backgrounds, dataset.mesh_for)
            if not np.isfinite(loss):
                raise RuntimeError(f"non-finite loss at online step {step_index}")
            for sample, bl in zip(batch, black):
                prev = min_l1.get(sample.index)
                if prev is None or bl < prev:
                    min_l1[sample.index] = float(bl)
            log.append({"step": step_index, "loss": loss})

        step = 0
        if config.wall_clock_fps > 0:
            interval = 1.0 / config.wall_clock_fps
            next_due = time.perf_counter()
            for sample in stream:
                while time.perf_counter() < next_due:
                    if pools.local:
                        optimize_once(step)
                        step += 1
                    else:
                        time.sleep(interval / 10.0)
                pools.process_frame(sample, rng)
                processed += 1
                next_due += interval
            # drain a final burst so late frames receive some optimization
            for _ in range(config.steps_per_frame):
                optimize_once(step)
                step += 1
        else:
            for sample in stream:
                pools.process_frame(sample, rng)
                processed += 1
                for _ in range(config.steps_per_frame):
                    optimize_once(step)
                    step += 1

    report = _forgetting_report(model, dataset, processed, min_l1, cfg.use_mlp)
    return model, log, report


def _forgetting_report(model, dataset, processed, min_l1, use_mlp):
    from .train import render_for_eval
    report = []
    for i in range(processed):
        index = i + 1
        image, _, sample = render_for_eval(model, dataset, i, use_mlp=use_mlp)
        black_target = sample.image[:, :, :3] * sample.image[:, :, 3:4]
        final = float(np.mean(np.abs(image - black_target)))
        report.append({
            "frame": index,
            "min_l1": min_l1.get(index, float("nan")),
            "final_l1": final,
        })
    return report


def forgetting_gap(report, first_fraction: float = 0.25):
    """Mean (final - min) L1 over the earliest frames of the stream."""
    cut = max(1, int(len(report) * first_fraction))
    gaps = [r["final_l1"] - r["min_l1"] for r in report[:cut]
            if np.isfinite(r["min_l1"])]
    return float(np.mean(gaps)) if gaps else float("nan")


def dataset_stream(dataset: SequenceDataset, count=None):
    """Replay a sequence directory in order as a frame stream."""
    total = len(dataset) if count is None else min(count, len(dataset))
    samples = [dataset.frame(i) for i in range(total)]
    return samples
