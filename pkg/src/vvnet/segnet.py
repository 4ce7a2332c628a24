"""The segmentation network: a per-point MLP branch and a voxel branch.

The voxel branch turns the cloud into a latent grid (RBF subvoxels encoded by
a frozen VAE), runs a stack of lifting group convolutions, flattens the result
and maps it to one global feature vector. That vector is copied to every point,
joined with the point's own 64 features and scored by a small head MLP.
"""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn
from .gconv import gconv_params, lift_gconv
from .group import enumerate_stabilizer
from .metrics import EvalReport, evaluate
from .nn import Parameter, Tensor
from .pointcloud import UNIT_BOX, LabeledPointCloud, normalize_to_unit
from .vae import VaeModel, encode_grid
from .voxelizer import GridSpec, occupancy, voxelize

log = logging.getLogger(__name__)

MODES = ("full", "rbf_vae_only", "gconv_occupancy_only", "point_only")


@dataclass(frozen=True)
class SegNetConfig:
    num_classes: int
    grid: GridSpec = field(default_factory=lambda: GridSpec(8, 8, 8, k=4))
    mode: str = "full"
    group: str = "p4m"
    kernel_size: int = 3
    gconv_channels: tuple[int, ...] = (8, 8)
    global_width: int = 256
    global_relu: bool = False
    point_widths: tuple[int, ...] = (3, 64, 64)
    head_widths: tuple[int, ...] = (128,)

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("need at least two classes")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.point_widths[0] != 3 or self.point_widths[-1] != 64:
            raise ValueError("point MLP must map 3 coordinates to 64 features")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gconv_channels"] = list(self.gconv_channels)
        d["point_widths"] = list(self.point_widths)
        d["head_widths"] = list(self.head_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SegNetConfig":
        d = dict(d)
        d["grid"] = GridSpec(**d["grid"])
        for key in ("gconv_channels", "point_widths", "head_widths"):
            d[key] = tuple(d[key])
        return cls(**d)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    lr: float = 1e-3
    batch_size: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.lr < 0:
            raise ValueError("epochs/batch_size must be positive and lr non-negative")


@dataclass
class VvNetModel:
    config: SegNetConfig
    params: list[Parameter]
    vae: VaeModel | None

    @property
    def m(self) -> int:
        return self.config.num_classes

    def group(self, prefix: str) -> list[Parameter]:
        return [p for p in self.params if p.name.startswith(prefix + ".")]

    def state(self) -> dict[str, np.ndarray]:
        out = {p.name: p.value for p in self.params}
        if self.vae is not None:
            out.update({f"vae/{k}": v for k, v in self.vae.state().items()})
        return out

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for p in self.params:
            p.tensor.value = np.asarray(state[p.name], dtype=p.value.dtype).copy()
        if self.vae is not None:
            for p in self.vae.params:
                p.tensor.value = np.asarray(state[f"vae/{p.name}"], dtype=p.value.dtype).copy()


def voxel_channels(config: SegNetConfig, vae: VaeModel | None) -> int:
    if config.mode == "gconv_occupancy_only":
        return config.grid.k ** 3
    if config.mode == "point_only":
        return 0
    if vae is None:
        raise ValueError(f"mode {config.mode!r} needs a VAE")
    return vae.l


def init_model(config: SegNetConfig, vae: VaeModel | None, seed: int = 0,
               dtype=np.float32) -> VvNetModel:
    if vae is not None and config.mode in ("full", "rbf_vae_only") and vae.k != config.grid.k:
        raise ValueError(f"VAE block edge {vae.k} does not match grid k={config.grid.k}")
    # separate streams per branch: the point branch is identical across modes
    ss = np.random.SeedSequence(seed).spawn(3)
    rng_pt, rng_vox, rng_head = (np.random.default_rng(s) for s in ss)
    params = nn.dense_params(rng_pt, list(config.point_widths), "point", dtype)
    glob = 0
    if config.mode != "point_only":
        c = voxel_channels(config, vae)
        spatial = np.array(config.grid.dims)
        if config.mode in ("full", "gconv_occupancy_only"):
            P = enumerate_stabilizer(config.group).P
            for i, cout in enumerate(config.gconv_channels):
                params += gconv_params(rng_vox, config.kernel_size, c, cout, f"gconv{i}", dtype)
                c = P * cout
                spatial = spatial - config.kernel_size + 1
            if np.any(spatial < 1):
                raise ValueError("grid too small for the gconv stack")
        flat = int(np.prod(spatial)) * c
        params += nn.dense_params(rng_vox, [flat, config.global_width], "global", dtype)
        glob = config.global_width
    params += nn.dense_params(rng_head, [64 + glob, *config.head_widths, config.num_classes],
                              "head", dtype)
    return VvNetModel(config, params, vae)


# feature preparation -------------------------------------------------------

def point_coords(cloud: LabeledPointCloud) -> np.ndarray:
    """Per-cloud normalized coordinates in [-1, 1]^3."""
    return normalize_to_unit(cloud).points * 2.0 - 1.0


def voxel_input(cloud: LabeledPointCloud, model: VvNetModel) -> np.ndarray | None:
    """(D, H, W, C) voxel-branch input for one cloud, or None in point-only mode."""
    cfg = model.config
    if cfg.mode == "point_only":
        return None
    unit = normalize_to_unit(cloud)
    if cfg.mode == "gconv_occupancy_only":
        return occupancy(unit, cfg.grid, UNIT_BOX).blocks(cfg.grid.k).astype(np.float64)
    sub = voxelize(unit, cfg.grid, UNIT_BOX)
    return encode_grid(sub, model.vae).values


@dataclass
class Prepared:
    """Network inputs for a list of clouds, cached once (the VAE is frozen)."""
    coords: list[np.ndarray]
    voxels: list[np.ndarray | None]
    labels: list[np.ndarray | None]
    kinds: list[str]


def prepare(clouds, model: VvNetModel, kinds=None) -> Prepared:
    dtype = model.params[0].value.dtype
    coords, vox, labels = [], [], []
    for c in clouds:
        coords.append(point_coords(c).astype(dtype))
        v = voxel_input(c, model)
        vox.append(None if v is None else v.astype(dtype))
        labels.append(c.labels)
    return Prepared(coords, vox, labels, list(kinds) if kinds is not None else [""] * len(coords))


# forward -------------------------------------------------------------------

def global_feature(vox: Tensor, model: VvNetModel) -> Tensor:
    cfg = model.config
    h = vox
    if cfg.mode in ("full", "gconv_occupancy_only"):
        stab = enumerate_stabilizer(cfg.group)
        for i in range(len(cfg.gconv_channels)):
            w, b = model.group(f"gconv{i}")
            h = nn.relu(lift_gconv(h, w.tensor, b.tensor, stab))
    flat = nn.reshape(h, (h.shape[0], -1))  # serialized voxel features
    return nn.mlp(flat, model.group("global"), final_relu=model.config.global_relu)


def forward_batch(coords: np.ndarray, vox: np.ndarray | None, model: VvNetModel) -> Tensor:
    """Scores (B, n, m) for stacked normalized coords (B, n, 3) and voxel inputs."""
    pts = Tensor(coords)
    feats = nn.shared_point_mlp(pts, model.group("point"))
    if model.config.mode != "point_only":
        g = global_feature(Tensor(vox), model)
        feats = nn.concat([feats, nn.broadcast_points(g, coords.shape[1])], axis=-1)
    return nn.mlp(feats, model.group("head"), final_relu=False)


def forward(cloud: LabeledPointCloud, model: VvNetModel) -> np.ndarray:
    dtype = model.params[0].value.dtype
    v = voxel_input(cloud, model)
    vb = None if v is None else v[None].astype(dtype)
    return forward_batch(point_coords(cloud)[None].astype(dtype), vb, model).value[0]


def argmax_labels(scores: np.ndarray) -> np.ndarray:
    """Per-row argmax; np.argmax already returns the lowest index on ties."""
    return np.argmax(scores, axis=-1)


def predict_labels(cloud: LabeledPointCloud, model: VvNetModel) -> np.ndarray:
    return argmax_labels(forward(cloud, model))


def predict_prepared(data: Prepared, model: VvNetModel, batch_size: int = 16) -> list[np.ndarray]:
    out = [None] * len(data.coords)
    for idx in _batches(data, np.arange(len(data.coords)), batch_size):
        c, v, _ = _stack(data, idx)
        pred = argmax_labels(forward_batch(c, v, model).value)
        for j, i in enumerate(idx):
            out[i] = pred[j]
    return out


# training ------------------------------------------------------------------

def _batches(data: Prepared, order: np.ndarray, batch_size: int):
    """Consecutive chunks of ``order`` split further so each batch has one point count."""
    for start in range(0, len(order), batch_size):
        chunk = order[start:start + batch_size]
        by_n: dict[int, list[int]] = {}
        for i in chunk:
            by_n.setdefault(data.coords[i].shape[0], []).append(int(i))
        yield from by_n.values()


def _stack(data: Prepared, idx):
    coords = np.stack([data.coords[i] for i in idx])
    vox = None if data.voxels[idx[0]] is None else np.stack([data.voxels[i] for i in idx])
    labels = None if data.labels[idx[0]] is None else np.stack([data.labels[i] for i in idx])
    return coords, vox, labels


@dataclass
class EpochMetrics:
    epoch: int
    loss: float
    accuracy: float
    miou: float

    def line(self) -> str:
        return f"{self.epoch}\t{self.loss:.6f}\t{self.accuracy:.6f}\t{self.miou:.6f}"


METRICS_HEADER = "epoch\tloss\taccuracy\tmiou"


def loss_and_grads(model: VvNetModel, coords, vox, labels) -> Tensor:
    for p in model.params:
        p.zero_grad()
    scores = forward_batch(coords, vox, model)
    loss = nn.softmax_cross_entropy(scores, labels)
    loss.backward()
    return loss, scores


def train_segmentation(data: Prepared, model: VvNetModel, config: TrainConfig,
                       categories: dict[str, tuple[int, ...]] | None = None,
                       progress=None) -> list[EpochMetrics]:
    """Adam on the mean point cross-entropy; the VAE is never touched.

    Metrics are accumulated from the training forward passes of each epoch.
    """
    if not data.coords:
        raise ValueError("empty dataset")
    for lab in data.labels:
        if lab is None:
            raise ValueError("training clouds need labels")
        if np.any(lab >= model.m):
            raise ValueError(f"label {int(lab.max())} >= number of classes {model.m}")
    rng = np.random.default_rng(config.seed)
    history = []
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(len(data.coords))
        total_loss, total_pts = 0.0, 0
        insts = []
        for idx in _batches(data, order, config.batch_size):
            coords, vox, labels = _stack(data, idx)
            loss, scores = loss_and_grads(model, coords, vox, labels)
            nn.adam_step(model.params, lr=config.lr)
            total_loss += float(loss.value) * labels.size
            total_pts += labels.size
            pred = argmax_labels(scores.value)
            for j, i in enumerate(idx):
                insts.append((data.kinds[i], labels[j], pred[j]))
        cats = categories or {"": tuple(range(model.m))}
        if categories is None:
            insts = [("", g, p) for _, g, p in insts]
        rep = evaluate(insts, cats)
        m = EpochMetrics(epoch, total_loss / total_pts, rep.overall_accuracy, rep.instance_miou)
        history.append(m)
        log.info("epoch %d loss %.4f acc %.4f miou %.4f (%.1fs)", epoch, m.loss, m.accuracy,
                 m.miou, time.perf_counter() - t0)
        if progress is not None:
            progress(m)
    return history


def evaluate_model(data: Prepared, model: VvNetModel, categories) -> EvalReport:
    preds = predict_prepared(data, model)
    return evaluate([(k, g, p) for k, g, p in zip(data.kinds, data.labels, preds)], categories)


def metrics_log(history: list[EpochMetrics]) -> str:
    return "\n".join([METRICS_HEADER] + [m.line() for m in history]) + "\n"
