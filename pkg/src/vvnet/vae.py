"""Per-voxel variational auto-encoder over k^3 subvoxel blocks."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .nn import Parameter, Tensor
from .voxelizer import SubvoxelTensor

log = logging.getLogger(__name__)


@dataclass
class VaeModel:
    k: int
    l: int
    hidden: int
    params: list[Parameter]
    # fixed decoder variance of the Gaussian likelihood
    obs_var: float = 0.01

    @property
    def block_size(self) -> int:
        return self.k ** 3

    def param(self, name: str) -> Parameter:
        for p in self.params:
            if p.name == name:
                return p
        raise KeyError(name)

    def state(self) -> dict[str, np.ndarray]:
        return {p.name: p.value for p in self.params}

    def copy(self) -> "VaeModel":
        ps = [Parameter(Tensor(p.value.copy()), p.name) for p in self.params]
        return VaeModel(self.k, self.l, self.hidden, ps, self.obs_var)


@dataclass(frozen=True)
class LatentGrid:
    values: np.ndarray  # (D, H, W, l)

    @property
    def l(self) -> int:
        return self.values.shape[-1]


def init_vae(k: int = 4, l: int = 8, hidden: int = 128, seed: int = 0,
             dtype=np.float32, obs_var: float = 0.01) -> VaeModel:
    rng = np.random.default_rng(seed)
    n = k ** 3
    params = (nn.dense_params(rng, [n, hidden], "enc", dtype)
              + nn.dense_params(rng, [hidden, l], "mu", dtype)
              + nn.dense_params(rng, [hidden, l], "logvar", dtype)
              + nn.dense_params(rng, [l, hidden, n], "dec", dtype))
    return VaeModel(k, l, hidden, params, obs_var)


def _as_batch(blocks, model: VaeModel) -> np.ndarray:
    x = np.asarray(blocks)
    if x.shape[-1] != model.block_size:
        x = x.reshape(x.shape[:-3] + (-1,)) if x.ndim >= 3 else x
    if x.shape[-1] != model.block_size:
        raise ValueError(f"block has {x.shape[-1]} values, model expects {model.block_size}")
    return x


def encode_t(x: Tensor, model: VaeModel) -> tuple[Tensor, Tensor]:
    p = {q.name: q.tensor for q in model.params}
    h = nn.relu(nn.linear(x, p["enc.0.W"], p["enc.0.b"]))
    return nn.linear(h, p["mu.0.W"], p["mu.0.b"]), nn.linear(h, p["logvar.0.W"], p["logvar.0.b"])


def decode_t(z: Tensor, model: VaeModel) -> Tensor:
    p = {q.name: q.tensor for q in model.params}
    h = nn.relu(nn.linear(z, p["dec.0.W"], p["dec.0.b"]))
    return nn.sigmoid(nn.linear(h, p["dec.1.W"], p["dec.1.b"]))


def encode(block, model: VaeModel) -> tuple[np.ndarray, np.ndarray]:
    x = _as_batch(block, model).astype(model.params[0].value.dtype)
    mu, logvar = encode_t(Tensor(x), model)
    return mu.value, logvar.value


def decode(z, model: VaeModel) -> np.ndarray:
    return decode_t(Tensor(np.asarray(z, dtype=model.params[0].value.dtype)), model).value


def reparameterize(mu, logvar, noise):
    """z = mu + exp(logvar / 2) * noise, on arrays or Tensors."""
    if isinstance(mu, Tensor) or isinstance(logvar, Tensor):
        return nn.add(mu, nn.mul(nn.exp(nn.scale(nn.as_tensor(logvar), 0.5)), noise))
    return np.asarray(mu) + np.exp(0.5 * np.asarray(logvar)) * np.asarray(noise)


def kl_standard_normal(mu, logvar):
    """KL(N(mu, exp(logvar)) || N(0, I)), summed over the last axis."""
    if isinstance(mu, Tensor):
        terms = nn.add(nn.add(nn.square(mu), nn.exp(logvar)), nn.scale(logvar, -1.0))
        return nn.scale(nn.add(nn.sum_all(terms), -float(np.prod(mu.shape))), 0.5)
    mu, logvar = np.asarray(mu, np.float64), np.asarray(logvar, np.float64)
    return 0.5 * np.sum(mu * mu + np.exp(logvar) - 1.0 - logvar, axis=-1)


def elbo_terms(x: Tensor, model: VaeModel, noise) -> tuple[Tensor, Tensor]:
    """(reconstruction, kl), each summed over the batch."""
    mu, logvar = encode_t(x, model)
    z = reparameterize(mu, logvar, nn.as_tensor(noise))
    xhat = decode_t(z, model)
    diff = nn.add(xhat, nn.scale(x, -1.0))
    recon = nn.scale(nn.sum_all(nn.square(diff)), 1.0 / (2.0 * model.obs_var))
    return recon, kl_standard_normal(mu, logvar)


def elbo_loss(block, model: VaeModel, noise) -> Tensor:
    """Negative ELBO averaged over blocks: Gaussian reconstruction NLL plus KL."""
    x = _as_batch(block, model)
    batch = 1 if x.ndim == 1 else x.shape[0]
    noise = np.asarray(noise, dtype=x.dtype)
    if noise.shape[-1] != model.l:
        raise ValueError("noise must have l entries per block")
    recon, kl = elbo_terms(nn.as_tensor(x), model, noise)
    return nn.scale(nn.add(recon, kl), 1.0 / batch)


def reconstruction_mse(blocks, model: VaeModel) -> float:
    """Mean squared error of decode(mu) against the blocks (no sampling)."""
    x = _as_batch(blocks, model).astype(model.params[0].value.dtype)
    mu, _ = encode(x, model)
    return float(np.mean((decode(mu, model).astype(np.float64) - x) ** 2))


@dataclass
class VaeHistory:
    epoch_loss: list[float] = field(default_factory=list)


def train_vae(blocks, epochs: int = 10, lr: float = 1e-3, batch_size: int = 64, seed: int = 0,
              model: VaeModel | None = None, l: int = 8, hidden: int = 128,
              obs_var: float = 0.01) -> tuple[VaeModel, VaeHistory]:
    blocks = np.asarray(blocks)
    if blocks.shape[0] == 0:
        raise ValueError("empty dataset")
    if model is None:
        k = round(blocks.reshape(blocks.shape[0], -1).shape[1] ** (1 / 3))
        model = init_vae(k, l, hidden, seed, obs_var=obs_var)
    data = _as_batch(blocks.reshape(blocks.shape[0], -1), model).astype(model.params[0].value.dtype)
    rng = np.random.default_rng(seed + 1)
    hist = VaeHistory()
    for epoch in range(epochs):
        order = rng.permutation(len(data))
        total, count = 0.0, 0
        for start in range(0, len(data), batch_size):
            xb = data[order[start:start + batch_size]]
            noise = rng.standard_normal((len(xb), model.l)).astype(xb.dtype)
            for p in model.params:
                p.zero_grad()
            loss = elbo_loss(xb, model, noise)
            loss.backward()
            nn.adam_step(model.params, lr=lr)
            total += float(loss.value) * len(xb)
            count += len(xb)
        hist.epoch_loss.append(total / count)
        log.info("vae epoch %d loss %.5f", epoch + 1, hist.epoch_loss[-1])
    return model, hist


def encode_grid(sub, model: VaeModel) -> LatentGrid:
    """Posterior means for every voxel block; empty blocks share one cached code."""
    vals = sub.values if isinstance(sub, SubvoxelTensor) else np.asarray(sub)
    if vals.ndim != 6 or vals.shape[3:] != (model.k,) * 3:
        raise ValueError(f"subvoxel blocks {vals.shape[3:]} do not match model k={model.k}")
    D, H, W = vals.shape[:3]
    flat = vals.reshape(D * H * W, model.block_size).astype(model.params[0].value.dtype)
    nonzero = np.any(flat != 0, axis=1)
    zero_mu, _ = encode(np.zeros((1, model.block_size), flat.dtype), model)
    out = np.broadcast_to(zero_mu, (D * H * W, model.l)).copy()
    if np.any(nonzero):
        mu, _ = encode(flat[nonzero], model)
        out[nonzero] = mu
    return LatentGrid(out.reshape(D, H, W, model.l))
