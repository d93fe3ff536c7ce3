"""Reconstruct on the fly from a frame stream.

Replays a synthetic sequence in arrival order through the local-FIFO /
global-reservoir pools, training between frames, then compares the forgetting
behavior with and without the global pool.

    python3 demos/04_online_stream.py
"""

import tempfile

import numpy as np

from headsplat import OnlineConfig, SynthConfig, TrainConfig, synth_generate
from headsplat.stream import dataset_stream, forgetting_gap, run_online


def main():
    out = tempfile.mkdtemp(prefix="headsplat_stream_")
    dataset = synth_generate(out, SynthConfig(frames=60, image_size=48,
                                              uv_resolution=20, k_true=3), seed=8)
    train = TrainConfig(batch_size=8, num_blendshapes=6, uv_resolution=20,
                        seed=0, workers=2)

    for mode in ("full", "no_global"):
        cfg = OnlineConfig(train=train, local_capacity=10, global_capacity=18,
                           steps_per_frame=6, sampling=mode)
        model, log, report = run_online(dataset_stream(dataset), dataset, cfg)
        early = [r for r in report[:15]]
        print(f"{mode:>10}: final loss {log[-1]['loss']:.4f}, "
              f"forgetting gap (first quarter) {forgetting_gap(report):.4f}, "
              f"early-frame final L1 {np.mean([r['final_l1'] for r in early]):.4f}")


if __name__ == "__main__":
    main()
