"""Reusable experiment steps shared by the CLI, scripts/ and the acceptance suite."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import segnet
from .metrics import EvalReport
from .pointcloud import UNIT_BOX, LabeledPointCloud, farthest_point_sample, load_cloud, \
    normalize_to_unit, save_cloud
from .segnet import SegNetConfig, TrainConfig, VvNetModel
from .synth import CATEGORIES, NUM_PARTS, make_dataset
from .vae import VaeModel, init_vae, reconstruction_mse, train_vae
from .voxelizer import GridSpec, occupancy, voxelize

log = logging.getLogger(__name__)

INDEX_NAME = "index.tsv"


@dataclass
class Dataset:
    clouds: list[LabeledPointCloud]
    kinds: list[str]

    def __len__(self) -> int:
        return len(self.clouds)

    def take(self, idx) -> "Dataset":
        return Dataset([self.clouds[i] for i in idx], [self.kinds[i] for i in idx])


def synth_dataset(n_per_kind: int, n_points: int = 512, noise_sd: float = 0.005,
                  seed: int = 0) -> Dataset:
    pairs = make_dataset(n_per_kind, n_points, noise_sd, seed)
    return Dataset([c for _, c in pairs], [k for k, _ in pairs])


def split(data: Dataset, test_fraction: float = 0.2) -> tuple[Dataset, Dataset]:
    """Deterministic tail split; the interleaved layout keeps categories balanced."""
    n_test = int(round(len(data) * test_fraction))
    cut = len(data) - n_test
    return data.take(range(cut)), data.take(range(cut, len(data)))


def save_dataset(data: Dataset, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, (kind, cloud) in enumerate(zip(data.kinds, data.clouds)):
        name = f"{i:05d}_{kind}.txt"
        save_cloud(cloud, d / name)
        rows.append(f"{name}\t{kind}")
    index = d / INDEX_NAME
    tmp = index.with_name(index.name + ".tmp")
    tmp.write_text("\n".join(rows) + "\n", encoding="utf-8")
    tmp.replace(index)
    return index


def load_dataset(directory) -> Dataset:
    d = Path(directory)
    index = d / INDEX_NAME
    if not index.exists():
        raise FileNotFoundError(f"missing dataset index {index}")
    clouds, kinds = [], []
    for line in index.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        name, kind = line.split("\t")
        if kind not in CATEGORIES:
            raise ValueError(f"unknown category {kind!r} in {index}")
        clouds.append(load_cloud(d / name, has_labels=True))
        kinds.append(kind)
    if not clouds:
        raise ValueError(f"dataset {d} is empty")
    return Dataset(clouds, kinds)


def collect_blocks(clouds, grid: GridSpec, representation: str = "rbf") -> np.ndarray:
    """Non-empty k^3 blocks of every cloud, in cloud order, as (N, k^3) float32."""
    out = []
    for c in clouds:
        unit = normalize_to_unit(c)
        if representation == "rbf":
            b = voxelize(unit, grid, UNIT_BOX).blocks()
        elif representation == "occupancy":
            b = occupancy(unit, grid, UNIT_BOX).blocks(grid.k).reshape(-1, grid.k ** 3)
        else:
            raise ValueError(f"unknown representation {representation!r}")
        out.append(b[np.any(b != 0, axis=1)])
    return np.concatenate(out).astype(np.float32)


@dataclass
class VaeRun:
    model: VaeModel
    train_mse: float
    held_out_mse: float
    init_mse: float
    epoch_loss: list[float]
    seconds: float

    @property
    def ratio(self) -> float:
        return self.held_out_mse / self.init_mse


def fit_vae(blocks: np.ndarray, held_out: np.ndarray, epochs: int = 10, lr: float = 1e-3,
            batch_size: int = 64, seed: int = 0, l: int = 8, hidden: int = 128) -> VaeRun:
    k = round(blocks.shape[1] ** (1 / 3))
    t0 = time.perf_counter()
    model = init_vae(k, l, hidden, seed)
    init_mse = reconstruction_mse(held_out, model)
    model, hist = train_vae(blocks, epochs, lr, batch_size, seed, model=model)
    secs = time.perf_counter() - t0
    return VaeRun(model, reconstruction_mse(blocks, model), reconstruction_mse(held_out, model),
                  init_mse, hist.epoch_loss, secs)


@dataclass
class SegRun:
    model: VvNetModel
    history: list[segnet.EpochMetrics]
    test: EvalReport
    seconds: float
    extra: dict = field(default_factory=dict)


def fit_segmenter(train: Dataset, test: Dataset, config: SegNetConfig, train_cfg: TrainConfig,
                  vae: VaeModel | None, seed: int = 0) -> SegRun:
    model = segnet.init_model(config, vae, seed=seed)
    t0 = time.perf_counter()
    tr = segnet.prepare(train.clouds, model, train.kinds)
    hist = segnet.train_segmentation(tr, model, train_cfg, CATEGORIES)
    te = segnet.prepare(test.clouds, model, test.kinds)
    rep = segnet.evaluate_model(te, model, CATEGORIES)
    return SegRun(model, hist, rep, time.perf_counter() - t0)


def evaluate_on(model: VvNetModel, data: Dataset) -> EvalReport:
    return segnet.evaluate_model(segnet.prepare(data.clouds, model, data.kinds), model, CATEGORIES)


def drop_points(data: Dataset, ratio: float, seed: int = 0) -> Dataset:
    """Keep ``round((1 - ratio) * n)`` points of each cloud, picked by farthest point sampling."""
    if not 0.0 <= ratio < 1.0:
        raise ValueError(f"missing ratio must lie in [0, 1), got {ratio}")
    out = []
    for c in data.clouds:
        keep = max(1, int(round((1.0 - ratio) * c.n)))
        out.append(c if keep == c.n else c.subset(farthest_point_sample(c, keep, seed)))
    return Dataset(out, list(data.kinds))


def robustness_sweep(model: VvNetModel, data: Dataset, ratios=(0.0, 0.75, 0.875),
                     seed: int = 0) -> dict[float, EvalReport]:
    return {r: evaluate_on(model, drop_points(data, r, seed)) for r in ratios}


def kernel_compare(train: Dataset, test: Dataset, config: SegNetConfig, train_cfg: TrainConfig,
                   vae_epochs: int = 10, max_blocks: int = 10000, seed: int = 0,
                   kernels=("gaussian", "inverse_quadratic")) -> dict[str, SegRun]:
    """Twin pipelines that differ only in the RBF kernel (each gets its own VAE)."""
    out = {}
    for kern in kernels:
        grid = replace(config.grid, kernel=kern)
        blocks = collect_blocks(train.clouds, grid)
        rng = np.random.default_rng(seed)
        sel = blocks[rng.permutation(len(blocks))[:max_blocks]]
        vae, _ = train_vae(sel, epochs=vae_epochs, seed=seed)
        out[kern] = fit_segmenter(train, test, replace(config, grid=grid), train_cfg, vae, seed)
        log.info("kernel %s: test miou %.4f", kern, out[kern].test.instance_miou)
    return out


def default_seg_config(mode: str = "full", grid: GridSpec | None = None, **kw) -> SegNetConfig:
    return SegNetConfig(NUM_PARTS, grid or GridSpec(8, 8, 8, k=4), mode=mode, **kw)
