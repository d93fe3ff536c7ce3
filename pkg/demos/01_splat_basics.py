"""Render a handful of Gaussians by hand.

Builds a tiny activated Gaussian set, projects it through a pinhole camera,
composites it front to back over a colored background, and writes the result
plus the transmittance map as PNGs. Run from the repository root:

    python3 demos/01_splat_basics.py
"""

import numpy as np
from PIL import Image

from headsplat import Camera, GaussianSet, preprocess, rasterize


def save(path, array):
    Image.fromarray(np.clip(np.round(array * 255), 0, 255).astype(np.uint8)).save(path)
    print("wrote", path)


def main():
    rng = np.random.default_rng(0)
    n = 40
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=-1, keepdims=True)
    world = GaussianSet(
        position=rng.uniform(-0.7, 0.7, size=(n, 3)),
        rotation=q,
        scale=rng.uniform(0.05, 0.3, size=(n, 3)),      # already activated values
        opacity=rng.uniform(0.4, 0.95, size=n),
        color=rng.uniform(0.0, 1.0, size=(n, 3)),
    )
    camera = Camera.frontal(128, distance=3.0)

    splats = preprocess(world, camera)
    print(f"{len(splats)} of {n} Gaussians survive culling; "
          f"depth range [{splats.depth.min():.2f}, {splats.depth.max():.2f}]")

    image, aux = rasterize(splats, camera, background=np.array([0.05, 0.05, 0.12]))
    save("demo_splats.png", image)
    save("demo_transmittance.png", aux.transmittance)

    # the per-Gaussian peak blend weight drives one-shot color estimation
    print("peak blend weights:", np.round(np.sort(aux.max_weight)[-5:], 3))


if __name__ == "__main__":
    main()
