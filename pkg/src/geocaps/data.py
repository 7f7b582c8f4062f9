"""Cross-view image pairs: a procedural synthetic generator, PNG directory
ingestion, and batch sampling.

The synthetic scenes are a handful of coloured blobs placed by a per-location
latent vector.  The satellite renderer draws them top-down; the ground
renderer draws the same blobs as upright shapes along a horizon, positioned by
their bearing from the camera and sized by their distance, with a shifted
colour response.  Matching pairs share the latent and nothing else.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

RENDERER_SEED = 20190613
N_BLOBS = 4
MIN_IMAGE_SIZE = 16


@dataclass
class SyntheticSpec:
    n_locations: int = 640
    image_size: int = 64
    latent_dim: int = 3
    noise_std: float = 0.02
    seed: int = 0

    def validate(self) -> None:
        if self.n_locations < 2:
            raise ConfigError("synthetic data needs at least 2 locations")
        if self.image_size < MIN_IMAGE_SIZE:
            raise ConfigError(f"image_size {self.image_size} is below the renderer footprint ({MIN_IMAGE_SIZE})")
        if self.latent_dim < 1:
            raise ConfigError("latent_dim must be >= 1")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be >= 0")


@dataclass
class LocationPair:
    location_id: int
    ground_image: np.ndarray
    satellite_image: np.ndarray


class PairDataset:
    """Aligned ground/satellite image arrays; row ``i`` of both is one location."""

    def __init__(self, ids, ground: np.ndarray, satellite: np.ndarray, names: list[str] | None = None):
        ids = np.asarray(ids, dtype=np.int64)
        if ground.shape != satellite.shape or len(ids) != ground.shape[0]:
            raise DataError(f"misaligned dataset: {len(ids)} ids, ground {ground.shape}, satellite {satellite.shape}")
        if len(np.unique(ids)) != len(ids):
            raise DataError("location ids must be unique")
        self.ids = ids
        self.ground = ground
        self.satellite = satellite
        self.names = names

    def __len__(self) -> int:
        return len(self.ids)

    def __getitem__(self, i: int) -> LocationPair:
        return LocationPair(int(self.ids[i]), self.ground[i], self.satellite[i])

    @property
    def image_shape(self) -> tuple[int, ...]:
        return self.ground.shape[1:]

    def subset(self, index) -> "PairDataset":
        index = np.asarray(index)
        names = [self.names[i] for i in index] if self.names is not None else None
        return PairDataset(self.ids[index], self.ground[index], self.satellite[index], names)

    def split(self, train_fraction: float = 0.8) -> tuple["PairDataset", "PairDataset"]:
        """Disjoint locations: the first ``train_fraction`` of the id order trains, the rest tests."""
        if not 0 < train_fraction < 1:
            raise ConfigError(f"train_fraction must be in (0, 1), got {train_fraction}")
        n_train = int(round(len(self) * train_fraction))
        if n_train < 1 or n_train >= len(self):
            raise DataError(f"cannot split {len(self)} locations with train_fraction {train_fraction}")
        order = np.argsort(self.ids, kind="stable")
        return self.subset(order[:n_train]), self.subset(order[n_train:])


# ----------------------------------------------------------------------
# synthetic scenes
# ----------------------------------------------------------------------
class _Renderers:
    def __init__(self, latent_dim: int):
        rng = np.random.default_rng([RENDERER_SEED, latent_dim])
        scale = 1.0 / np.sqrt(latent_dim)
        self.position = rng.standard_normal((N_BLOBS, 2, latent_dim)) * scale * 1.5
        self.colour = rng.standard_normal((N_BLOBS, 3, latent_dim)) * scale * 2.0
        self.terrain = rng.standard_normal((3, latent_dim)) * scale
        self.radius = np.linspace(0.07, 0.11, N_BLOBS)
        self.sky = np.array([0.55, 0.7, 0.9])

    def scene(self, z: np.ndarray):
        pos = 0.5 + 0.35 * np.tanh(self.position @ z)            # [B, 2] in (0.15, 0.85)
        col = 1.0 / (1.0 + np.exp(-(self.colour @ z)))          # [B, 3]
        terrain = 0.45 + 0.15 * np.tanh(self.terrain @ z)        # [3]
        return pos, col, terrain

    def satellite(self, z: np.ndarray, size: int) -> np.ndarray:
        pos, col, terrain = self.scene(z)
        grid = (np.arange(size) + 0.5) / size
        yy, xx = np.meshgrid(grid, grid, indexing="ij")
        img = np.broadcast_to(terrain[:, None, None], (3, size, size)).copy()
        for k in range(N_BLOBS):
            d2 = (xx - pos[k, 0]) ** 2 + (yy - pos[k, 1]) ** 2
            a = np.exp(-d2 / (2 * self.radius[k] ** 2))
            img = img * (1 - a) + col[k][:, None, None] * a
        return img

    def ground(self, z: np.ndarray, size: int) -> np.ndarray:
        pos, col, terrain = self.scene(z)
        grid = (np.arange(size) + 0.5) / size
        yy, xx = np.meshgrid(grid, grid, indexing="ij")
        horizon = 0.45
        img = np.where(yy < horizon, self.sky[:, None, None], 0.8 * terrain[:, None, None])
        rel = pos - 0.5
        bearing = (np.arctan2(rel[:, 1], rel[:, 0]) + np.pi) / (2 * np.pi)   # [B] in [0, 1)
        dist = np.hypot(rel[:, 0], rel[:, 1])                                 # [B] in [0, 0.5)
        for k in range(N_BLOBS):
            dx = np.abs(xx - bearing[k])
            dx = np.minimum(dx, 1 - dx)                                       # wrap like a panorama
            height = 0.32 - 0.4 * dist[k]
            width = 0.5 * self.radius[k] + 0.05 * (0.5 - dist[k])
            dy = yy - (horizon - 0.25 * height)
            a = np.exp(-(dx / width) ** 2 / 2 - (dy / height) ** 2 / 2)
            shade = col[k] ** 1.4
            img = img * (1 - a) + shade[:, None, None] * a
        return img


def generate_synthetic_pairs(spec: SyntheticSpec) -> PairDataset:
    """Render ``spec.n_locations`` matching ground/satellite pairs, deterministically from ``spec.seed``."""
    spec.validate()
    renderers = _Renderers(spec.latent_dim)
    rng = np.random.default_rng(spec.seed)
    latents = rng.standard_normal((spec.n_locations, spec.latent_dim))
    s = spec.image_size
    ground = np.empty((spec.n_locations, 3, s, s), dtype=np.float32)
    satellite = np.empty_like(ground)
    for i, z in enumerate(latents):
        ground[i] = renderers.ground(z, s)
        satellite[i] = renderers.satellite(z, s)
    if spec.noise_std > 0:
        ground += (rng.standard_normal(ground.shape) * spec.noise_std).astype(np.float32)
        satellite += (rng.standard_normal(satellite.shape) * spec.noise_std).astype(np.float32)
    return PairDataset(np.arange(spec.n_locations), ground, satellite)


# ----------------------------------------------------------------------
# PNG directories
# ----------------------------------------------------------------------
def _read_png(path: Path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        if im.mode != "RGB":
            im = im.convert("RGB")
        return np.asarray(im, dtype=np.float32).transpose(2, 0, 1) / 255.0


def load_image_directory(path, train_fraction: float = 0.8) -> PairDataset:
    """Pairs from ``<path>/ground/<name>.png`` and ``<path>/satellite/<name>.png``.

    Files are matched by name and ordered by name.  Pixels are scaled to
    [0, 1] and then standardized per channel with the mean and standard
    deviation of the training portion (the first ``train_fraction`` of names).
    """
    root = Path(path)
    gdir, sdir = root / "ground", root / "satellite"
    for d in (gdir, sdir):
        if not d.is_dir():
            raise DataError(f"missing directory {d}")
    gnames = {p.stem for p in gdir.glob("*.png")}
    snames = {p.stem for p in sdir.glob("*.png")}
    orphans = sorted((gnames - snames) | (snames - gnames))
    if orphans:
        side = "ground" if orphans[0] in gnames else "satellite"
        raise DataError(f"unmatched image {side}/{orphans[0]}.png (no counterpart in the other view)")
    names = sorted(gnames)
    if not names:
        raise DataError(f"no pairs found under {root}")
    ground = [_read_png(gdir / f"{n}.png") for n in names]
    satellite = [_read_png(sdir / f"{n}.png") for n in names]
    shapes = {a.shape for a in ground + satellite}
    if len(shapes) != 1:
        raise DataError(f"images must all share one size, found {sorted(shapes)}")
    ground_arr = np.stack(ground)
    satellite_arr = np.stack(satellite)
    n_train = max(1, int(round(len(names) * train_fraction))) if len(names) > 1 else 1
    stats = np.concatenate([ground_arr[:n_train], satellite_arr[:n_train]])
    mean = stats.mean(axis=(0, 2, 3), keepdims=True)
    std = stats.std(axis=(0, 2, 3), keepdims=True)
    std = np.where(std < 1e-6, 1.0, std)
    ground_arr = ((ground_arr - mean) / std).astype(np.float32)
    satellite_arr = ((satellite_arr - mean) / std).astype(np.float32)
    return PairDataset(np.arange(len(names)), ground_arr, satellite_arr, names)


def save_image_directory(dataset: PairDataset, path) -> None:
    """Write a dataset with values in [0, 1] as 8-bit PNGs in the directory layout above."""
    from PIL import Image

    root = Path(path)
    for view, arr in (("ground", dataset.ground), ("satellite", dataset.satellite)):
        os.makedirs(root / view, exist_ok=True)
        for pos, (loc, img) in enumerate(zip(dataset.ids, arr)):
            pix = np.clip(np.rint(img.transpose(1, 2, 0) * 255), 0, 255).astype(np.uint8)
            name = dataset.names[pos] if dataset.names is not None else f"{int(loc):06d}"
            Image.fromarray(pix, "RGB").save(root / view / f"{name}.png")


# ----------------------------------------------------------------------
# batches
# ----------------------------------------------------------------------
def sample_batch(dataset: PairDataset, m: int, rng: np.random.Generator):
    """``m`` distinct locations; row ``i`` of both image arrays is a matching pair."""
    if len(dataset) < m:
        raise DataError(f"dataset has {len(dataset)} locations, batch needs {m}")
    index = np.sort(rng.choice(len(dataset), size=m, replace=False))
    return dataset.ground[index], dataset.satellite[index], dataset.ids[index]


def epoch_batches(dataset: PairDataset, m: int, rng: np.random.Generator):
    """Full batches over a shuffled pass of the dataset; the remainder is dropped."""
    if len(dataset) < m:
        raise DataError(f"dataset has {len(dataset)} locations, batch needs {m}")
    order = rng.permutation(len(dataset))
    for b in range(len(dataset) // m):
        index = order[b * m:(b + 1) * m]
        yield dataset.ground[index], dataset.satellite[index], dataset.ids[index]
