"""Shared-weight 1-D convolutional encoder with a sigmoid regression head."""

from __future__ import annotations

import io
import json
import math
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

CHECKPOINT_FORMAT_VERSION = 1
_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


class ShapeError(ValueError):
    pass


class CheckpointError(RuntimeError):
    """Missing, unreadable, or corrupt checkpoint archive."""


@dataclass(frozen=True)
class EncoderConfig:
    conv_channels: tuple = (4, 8, 16)
    kernel_size: int = 7
    stride: int = 3
    input_len: int = 1000

    def __post_init__(self):
        object.__setattr__(self, "conv_channels", tuple(int(c) for c in self.conv_channels))
        if not self.conv_channels or min(self.conv_channels) < 1:
            raise ShapeError("need at least one conv block with positive channels")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ShapeError("kernel_size must be a positive odd integer")
        if self.stride < 1:
            raise ShapeError("stride must be positive")
        if self.kernel_size > self.input_len:
            raise ShapeError("kernel_size exceeds input_len")
        if self.output_len() < 1:
            raise ShapeError(f"input_len {self.input_len} too short for {len(self.conv_channels)} conv blocks")

    @property
    def latent_dim(self):
        return self.conv_channels[-1]

    def output_len(self):
        n = self.input_len
        for _ in self.conv_channels:
            n = (n - self.kernel_size) // self.stride + 1
            if n < 1:
                return 0
        return n


class Encoder(nn.Module):
    """Conv1d -> BatchNorm1d -> ReLU blocks, then global average pooling over time."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        blocks = []
        in_ch = 1
        for out_ch in cfg.conv_channels:
            blocks += [
                nn.Conv1d(in_ch, out_ch, cfg.kernel_size, stride=cfg.stride),
                nn.BatchNorm1d(out_ch, momentum=0.1),
                nn.ReLU(),
            ]
            in_ch = out_ch
        self.blocks = nn.Sequential(*blocks)

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.cfg.input_len:
            raise ShapeError(f"expected (batch, {self.cfg.input_len}) input, got {tuple(x.shape)}")
        return self.blocks(x.unsqueeze(1)).mean(dim=-1)


class RegressionHead(nn.Module):
    def __init__(self, latent_dim: int, hidden: int | None = None):
        super().__init__()
        hidden = hidden or latent_dim
        self.latent_dim = latent_dim
        self.layers = nn.Sequential(nn.Linear(latent_dim, hidden), nn.ReLU(), nn.Linear(hidden, 1))

    def forward(self, z):
        if z.shape[-1] != self.latent_dim:
            raise ShapeError(f"expected latent dim {self.latent_dim}, got {z.shape[-1]}")
        out = torch.sigmoid(self.layers(z)).squeeze(-1)
        # float sigmoid rounds to exactly 0 or 1 for large logits; keep the range open
        info = torch.finfo(out.dtype)
        return out.clamp(info.tiny, 1.0 - info.eps / 2)


def as_batch(chunks) -> torch.Tensor:
    """Stack chunks (Chunk objects or arrays) into a float32 ``(batch, len)`` tensor."""
    if torch.is_tensor(chunks):
        x = chunks.to(torch.float32)
    else:
        if hasattr(chunks, "values"):
            chunks = [chunks]
        x = torch.as_tensor(np.stack([np.asarray(getattr(c, "values", c)) for c in chunks]), dtype=torch.float32)
    return x.unsqueeze(0) if x.ndim == 1 else x


class ContrastiveRegressor(nn.Module):
    """Encoder plus regression head.

    Both branches of a training pair go through the single ``encoder``, so
    weight sharing holds by construction.
    """

    def __init__(self, cfg: EncoderConfig | None = None, seed: int = 0):
        super().__init__()
        self.cfg = cfg or EncoderConfig()
        self.encoder = Encoder(self.cfg)
        self.head = RegressionHead(self.cfg.latent_dim)
        init_parameters(self, seed)

    def encode(self, chunks):
        return self.encoder(as_batch(chunks))

    def encode_pair(self, chunks_a, chunks_b):
        return self.encode(chunks_a), self.encode(chunks_b)

    def regress(self, latents):
        return self.head(torch.as_tensor(latents, dtype=torch.float32))

    def forward(self, chunks):
        z = self.encode(chunks)
        return z, self.head(z)


def init_parameters(model: nn.Module, seed: int) -> None:
    """Fan-in scaled uniform weights, zero biases, identity batch norm."""
    gen = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for module in model.modules():
            if isinstance(module, (nn.Conv1d, nn.Linear)):
                fan_in = module.weight[0].numel()
                bound = 1.0 / math.sqrt(fan_in)
                module.weight.uniform_(-bound, bound, generator=gen)
                module.bias.zero_()
            elif isinstance(module, nn.BatchNorm1d):
                module.reset_parameters()
                module.reset_running_stats()


@dataclass
class Checkpoint:
    encoder_params: dict
    head_params: dict
    config: dict = field(default_factory=dict)
    epoch: int = 0
    val_loss: float = float("nan")


def model_arrays(model: ContrastiveRegressor):
    """Split the state dict into encoder and head arrays (float32, little-endian)."""
    encoder, head = {}, {}
    for name, tensor in model.state_dict().items():
        array = tensor.detach().cpu().numpy().astype("<f4")
        part, _, key = name.partition(".")
        (encoder if part == "encoder" else head)[key] = array
    return encoder, head


def _write_member(zf, name, data):
    info = zipfile.ZipInfo(name, date_time=_ZIP_EPOCH)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


def save_checkpoint(path, model: ContrastiveRegressor, config: dict | None = None,
                    epoch: int = 0, val_loss: float = float("nan")) -> Path:
    """Write a zip archive: ``metadata.json`` plus one ``.npy`` per array.

    Archive members carry a fixed timestamp, so equal models give equal bytes.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    encoder, head = model_arrays(model)
    metadata = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": config or {},
        "epoch": int(epoch),
        "val_loss": float(val_loss),
        "arrays": {
            **{f"encoder.{k}": list(v.shape) for k, v in encoder.items()},
            **{f"head.{k}": list(v.shape) for k, v in head.items()},
        },
    }
    tmp = path.with_name(path.name + ".tmp")
    with zipfile.ZipFile(tmp, "w") as zf:
        _write_member(zf, "metadata.json", json.dumps(metadata, indent=2, sort_keys=True))
        for prefix, arrays in (("encoder", encoder), ("head", head)):
            for key, array in arrays.items():
                buf = io.BytesIO()
                np.lib.format.write_array(buf, array, allow_pickle=False)
                _write_member(zf, f"arrays/{prefix}.{key}.npy", buf.getvalue())
    tmp.replace(path)
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    try:
        with zipfile.ZipFile(path) as zf:
            metadata = json.loads(zf.read("metadata.json"))
            encoder, head = {}, {}
            for name, shape in metadata["arrays"].items():
                array = np.lib.format.read_array(io.BytesIO(zf.read(f"arrays/{name}.npy")), allow_pickle=False)
                if list(array.shape) != shape:
                    raise CheckpointError(f"{path}: array {name} has shape {array.shape}, metadata says {shape}")
                part, _, key = name.partition(".")
                (encoder if part == "encoder" else head)[key] = array
    except (zipfile.BadZipFile, KeyError, ValueError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint ({exc})") from None
    if metadata.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {metadata.get('format_version')}")
    return Checkpoint(encoder, head, metadata["config"], metadata["epoch"], metadata["val_loss"])


def load_arrays(model: ContrastiveRegressor, ckpt: Checkpoint) -> ContrastiveRegressor:
    """Copy checkpoint arrays into ``model``; raises ShapeError on any mismatch."""
    state = model.state_dict()
    incoming = {f"encoder.{k}": v for k, v in ckpt.encoder_params.items()}
    incoming.update({f"head.{k}": v for k, v in ckpt.head_params.items()})
    if set(incoming) != set(state):
        raise ShapeError(f"checkpoint parameters {sorted(set(incoming) ^ set(state))} do not match the model")
    new_state = {}
    for name, target in state.items():
        array = incoming[name]
        if tuple(array.shape) != tuple(target.shape):
            raise ShapeError(f"{name}: checkpoint shape {array.shape} vs model shape {tuple(target.shape)}")
        new_state[name] = torch.from_numpy(array.astype(np.float32)).to(target.dtype)
    model.load_state_dict(new_state)
    return model
