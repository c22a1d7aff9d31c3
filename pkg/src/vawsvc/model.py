"""Encoder, F0/singer-conditioned decoder and Wasserstein critic.

All three networks are frame-wise 1-D CNNs running along the frequency
axis of a single log spectral frame. Every convolutional stage is
followed by a pointwise (1x1) fully connected layer across channels.

Default layer layout::

    encoder  kernels 7,7,7,7,7   strides 3,3,3,3,3  channels 16,32,64,128,256
    decoder  kernels 9,7,7,1025  strides 3,3,3,1    channels 32,16,8,1
    critic   kernels 7,7,115     strides 3,3,3      channels 16,32,64

With "same" padding the encoder widths go 513 -> 171 -> 57 -> 19 -> 7 -> 3 and
the decoder grows a 19-wide seed back to 513; the final kernel-1025 stride-1
layer covers the whole band from every output bin.
"""
from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import CompatibilityError, ShapeError
from .features import CorpusScaler, F0Stats


@dataclass
class ModelConfig:
    condition_on_f0: bool = True
    n_singers: int = 2
    latent_dim: int = 128
    singer_dim: int = 10
    sp_dim: int = 513
    encoder_kernels: Tuple[int, ...] = (7, 7, 7, 7, 7)
    encoder_strides: Tuple[int, ...] = (3, 3, 3, 3, 3)
    encoder_channels: Tuple[int, ...] = (16, 32, 64, 128, 256)
    decoder_kernels: Tuple[int, ...] = (9, 7, 7, 1025)
    decoder_strides: Tuple[int, ...] = (3, 3, 3, 1)
    decoder_channels: Tuple[int, ...] = (32, 16, 8, 1)
    decoder_seed_channels: int = 81
    critic_kernels: Tuple[int, ...] = (7, 7, 115)
    critic_strides: Tuple[int, ...] = (3, 3, 3)
    critic_channels: Tuple[int, ...] = (16, 32, 64)
    leaky_slope: float = 0.02
    init: str = "fan_in"  # "fan_in" (variance preserving) or "normal" (fixed init_std)
    init_std: float = 0.02

    def __post_init__(self):
        for name in (
            "encoder_kernels", "encoder_strides", "encoder_channels",
            "decoder_kernels", "decoder_strides", "decoder_channels",
            "critic_kernels", "critic_strides", "critic_channels",
        ):
            setattr(self, name, tuple(int(v) for v in getattr(self, name)))
        if self.n_singers < 1:
            raise ValueError("n_singers must be positive")
        for prefix in ("encoder", "decoder", "critic"):
            k = getattr(self, prefix + "_kernels")
            if not len(k) == len(getattr(self, prefix + "_strides")) == len(getattr(self, prefix + "_channels")):
                raise ValueError(f"{prefix} kernel/stride/channel lists differ in length")
        if self.decoder_channels[-1] != 1:
            raise ValueError("decoder must end with a single output channel")

    @property
    def decoder_input_dim(self) -> int:
        return self.latent_dim + self.singer_dim + (1 if self.condition_on_f0 else 0)

    @property
    def decoder_seed_width(self) -> int:
        return math.ceil(self.sp_dim / math.prod(self.decoder_strides))

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d) -> "ModelConfig":
        return cls(**d)

    @classmethod
    def tiny(cls, **overrides) -> "ModelConfig":
        """Miniature layout used for gradient checks and fast tests."""
        base = dict(
            latent_dim=3,
            singer_dim=2,
            sp_dim=8,
            encoder_kernels=(3, 3),
            encoder_strides=(2, 2),
            encoder_channels=(2, 2),
            decoder_kernels=(3, 15),
            decoder_strides=(2, 1),
            decoder_channels=(2, 1),
            decoder_seed_channels=2,
            critic_kernels=(3, 3),
            critic_strides=(2, 2),
            critic_channels=(2, 2),
        )
        base.update(overrides)
        return cls(**base)


def same_padding(width: int, kernel: int, stride: int) -> Tuple[int, int, int]:
    """(left, right, output width) for TF-style "same" convolution."""
    out = -(-width // stride)
    total = max((out - 1) * stride + kernel - width, 0)
    return total // 2, total - total // 2, out


class ConvStage(nn.Module):
    def __init__(self, c_in, c_out, kernel, stride, slope):
        super().__init__()
        self.conv = nn.Conv1d(c_in, c_out, kernel, stride)
        self.fc = nn.Conv1d(c_out, c_out, 1)
        self.kernel, self.stride, self.slope = kernel, stride, slope

    def forward(self, h):
        left, right, _ = same_padding(h.shape[-1], self.kernel, self.stride)
        h = F.leaky_relu(self.conv(F.pad(h, (left, right))), self.slope)
        return F.leaky_relu(self.fc(h), self.slope)


class TransposedStage(nn.Module):
    """Transposed convolution upsampling by ``stride`` plus a pointwise layer.

    Stride-1 stages are evaluated as a dense Toeplitz product, which is far
    faster than a direct transposed convolution for full-band kernels.
    """

    def __init__(self, c_in, c_out, kernel, stride, slope, final=False):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(c_in, c_out, kernel))
        self.bias = nn.Parameter(torch.empty(c_out))
        self.fc = nn.Conv1d(c_out, c_out, 1)
        self.kernel, self.stride, self.slope, self.final = kernel, stride, slope, final
        self._index_cache: Dict[int, torch.Tensor] = {}

    def _toeplitz_index(self, width):
        idx = self._index_cache.get(width)
        if idx is None:
            off = (self.kernel - 1) // 2 + width
            i = torch.arange(width)
            idx = i[None, :] - i[:, None] + off  # [input i, output j]
            self._index_cache[width] = idx
        return idx

    def upsample(self, h):
        width = h.shape[-1]
        if self.stride == 1:
            c_in, c_out, _ = self.weight.shape
            padded = F.pad(self.weight, (width, width))
            toe = padded[:, :, self._toeplitz_index(width)]  # c_in, c_out, i, j
            toe = toe.permute(0, 2, 1, 3).reshape(c_in * width, c_out * width)
            out = (h.reshape(h.shape[0], c_in * width) @ toe).view(h.shape[0], c_out, width)
            return out + self.bias[None, :, None]
        return self.reference_upsample(h)

    def reference_upsample(self, h):
        """Library transposed convolution with "same" cropping."""
        width = h.shape[-1]
        full = F.conv_transpose1d(h, self.weight, self.bias, stride=self.stride)
        start = (self.kernel - self.stride) // 2
        out = full[..., start : start + width * self.stride]
        if out.shape[-1] < width * self.stride:
            out = F.pad(out, (0, width * self.stride - out.shape[-1]))
        return out

    def forward(self, h):
        h = self.upsample(h)
        if self.final:
            return self.fc(h)
        h = F.leaky_relu(h, self.slope)
        return F.leaky_relu(self.fc(h), self.slope)


class Encoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        chans = (1,) + cfg.encoder_channels
        self.stages = nn.ModuleList(
            ConvStage(chans[i], chans[i + 1], k, s, cfg.leaky_slope)
            for i, (k, s) in enumerate(zip(cfg.encoder_kernels, cfg.encoder_strides))
        )
        width = cfg.sp_dim
        for k, s in zip(cfg.encoder_kernels, cfg.encoder_strides):
            width = same_padding(width, k, s)[2]
        self.out = nn.Linear(chans[-1] * width, 2 * cfg.latent_dim)
        self.latent_dim = cfg.latent_dim

    def forward(self, x):
        h = x[:, None, :]
        for stage in self.stages:
            h = stage(h)
        out = self.out(h.flatten(1))
        return out[:, : self.latent_dim], out[:, self.latent_dim :]


class Decoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.embedding = nn.Embedding(cfg.n_singers, cfg.singer_dim)
        self.seed_width = cfg.decoder_seed_width
        self.inp = nn.Linear(cfg.decoder_input_dim, cfg.decoder_seed_channels * self.seed_width)
        chans = (cfg.decoder_seed_channels,) + cfg.decoder_channels
        n = len(cfg.decoder_kernels)
        self.stages = nn.ModuleList(
            TransposedStage(chans[i], chans[i + 1], k, s, cfg.leaky_slope, final=(i == n - 1))
            for i, (k, s) in enumerate(zip(cfg.decoder_kernels, cfg.decoder_strides))
        )

    def forward(self, z, singer, f0):
        parts = [z, self.embedding(singer)]
        if self.cfg.condition_on_f0:
            parts.append(f0[:, None])
        h = F.leaky_relu(self.inp(torch.cat(parts, dim=1)), self.cfg.leaky_slope)
        h = h.view(z.shape[0], self.cfg.decoder_seed_channels, self.seed_width)
        for stage in self.stages:
            h = stage(h)
        return h[:, 0, : self.cfg.sp_dim]


class Critic(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        chans = (1,) + cfg.critic_channels
        self.stages = nn.ModuleList(
            ConvStage(chans[i], chans[i + 1], k, s, cfg.leaky_slope)
            for i, (k, s) in enumerate(zip(cfg.critic_kernels, cfg.critic_strides))
        )
        width = cfg.sp_dim
        for k, s in zip(cfg.critic_kernels, cfg.critic_strides):
            width = same_padding(width, k, s)[2]
        self.out = nn.Linear(chans[-1] * width, 1)

    def forward(self, x):
        h = x[:, None, :]
        for stage in self.stages:
            h = stage(h)
        # a row-wise reduction rather than a GEMM: BLAS kernels may round
        # rows of one batch differently, which breaks duplicate-frame equality
        return (h.flatten(1) * self.out.weight[0]).sum(dim=1) + self.out.bias[0]


class VAWGAN(nn.Module):
    """Container for the three networks plus fixed spectral standardization.

    ``spec_mean``/``spec_std`` are per-bin statistics of the training
    log-SP-norm frames. The encoder and critic see standardized frames and
    the decoder output is mapped back, so every public method works in the
    raw log-SP-norm domain.
    """

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        self.encoder = Encoder(cfg)
        self.decoder = Decoder(cfg)
        self.critic = Critic(cfg)
        self.register_buffer("spec_mean", torch.zeros(cfg.sp_dim))
        self.register_buffer("spec_std", torch.ones(cfg.sp_dim))
        self.reset_parameters(seed)

    def reset_parameters(self, seed: int):
        """Zero biases, zero-mean Gaussian weights from a seeded generator.

        With ``init="fan_in"`` the std is ``gain / sqrt(fan_in)`` so that the
        activation scale survives the roughly twenty stacked layers; a fixed
        small std makes the signal (and the gradients) vanish.
        """
        gen = torch.Generator().manual_seed(int(seed))
        gain = math.sqrt(2.0 / (1.0 + self.cfg.leaky_slope ** 2))
        with torch.no_grad():
            for module_name, module in self.named_modules():
                for name, p in module.named_parameters(recurse=False):
                    if name == "bias":
                        p.zero_()
                        continue
                    if self.cfg.init == "normal" or isinstance(module, nn.Embedding):
                        std = self.cfg.init_std
                    elif isinstance(module, TransposedStage):
                        std = gain / math.sqrt(p.shape[0] * p.shape[2] / module.stride)
                    else:
                        std = gain / math.sqrt(p[0].numel())
                    p.copy_(torch.randn(p.shape, generator=gen) * std)

    def set_spectral_stats(self, mean, std):
        with torch.no_grad():
            self.spec_mean.copy_(torch.as_tensor(mean, dtype=self.spec_mean.dtype))
            self.spec_std.copy_(torch.as_tensor(std, dtype=self.spec_std.dtype))

    def _standardize(self, x):
        return (x - self.spec_mean) / self.spec_std

    def encode(self, x):
        mean, log_var = self.encoder(self._standardize(x))
        return LatentCode(mean, log_var)

    def decode(self, z, singer, f0):
        return self.decoder(z, singer, f0) * self.spec_std + self.spec_mean

    def discriminate(self, x):
        return self.critic(self._standardize(x))

    def generator_parameters(self):
        return list(self.encoder.parameters()) + list(self.decoder.parameters())


def count_parameters(cfg: ModelConfig) -> int:
    return sum(p.numel() for p in VAWGAN(cfg).parameters())


@dataclass
class LatentCode:
    mean: torch.Tensor
    log_var: torch.Tensor

    def __len__(self):
        return self.mean.shape[0]


def _to_tensor(x, model: nn.Module, dtype=None) -> torch.Tensor:
    ref = next(model.parameters())
    return torch.as_tensor(x, dtype=dtype or ref.dtype, device=ref.device)


def _check_frames(x: torch.Tensor, width: int):
    if x.ndim != 2 or x.shape[1] != width:
        raise ShapeError(f"expected a (T, {width}) batch of frames, got {tuple(x.shape)}")


def encode(frames, model: VAWGAN) -> LatentCode:
    x = _to_tensor(frames, model)
    _check_frames(x, model.cfg.sp_dim)
    return model.encode(x)


def sample_latent(code: LatentCode, noise) -> torch.Tensor:
    noise = torch.as_tensor(noise, dtype=code.mean.dtype, device=code.mean.device)
    if noise.shape != code.mean.shape:
        raise ShapeError(f"noise shape {tuple(noise.shape)} != code shape {tuple(code.mean.shape)}")
    return code.mean + torch.exp(code.log_var / 2) * noise


def decode(z_sample, singer, f0_cond, model: VAWGAN) -> torch.Tensor:
    """Decode latents for ``singer`` (an index or a per-frame index array).

    ``f0_cond`` is ignored, and may be None, for SID-only models.
    """
    cfg = model.cfg
    z = _to_tensor(z_sample, model)
    if z.ndim != 2 or z.shape[1] != cfg.latent_dim:
        raise ShapeError(f"expected (T, {cfg.latent_dim}) latents, got {tuple(z.shape)}")
    n = z.shape[0]
    singer = torch.as_tensor(singer, dtype=torch.long, device=z.device)
    if singer.ndim == 0:
        singer = singer.expand(n)
    if singer.shape != (n,):
        raise ShapeError("singer index array must match the latent batch")
    if n and (int(singer.min()) < 0 or int(singer.max()) >= cfg.n_singers):
        raise IndexError(f"singer index out of range for {cfg.n_singers} singers")
    if cfg.condition_on_f0:
        f0 = _to_tensor(f0_cond, model)
        if f0.shape != (n,):
            raise ShapeError(f"f0_cond must have shape ({n},), got {tuple(f0.shape)}")
    else:
        f0 = None
    return model.decode(z, singer, f0)


def discriminate(frames, model: VAWGAN) -> torch.Tensor:
    x = _to_tensor(frames, model)
    _check_frames(x, model.cfg.sp_dim)
    return model.discriminate(x)


# ---------------------------------------------------------------------------
# checkpoints

CKPT_MAGIC = b"VAWC"
CKPT_VERSION = 1


@dataclass
class ModelCheckpoint:
    """Immutable snapshot of a trained model and its data statistics.

    ``tensors`` maps state-dict names to float32 arrays. Encoder, decoder
    (including the singer embedding table) and critic parameters are the
    ``encoder.``, ``decoder.`` and ``critic.`` prefixed entries.
    """

    config: ModelConfig
    tensors: Dict[str, np.ndarray]
    f0_stats_per_singer: Dict[int, F0Stats]
    scaler: CorpusScaler
    training_step: int = 0
    seed: int = 0
    singers: Dict[str, int] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_model(cls, model: VAWGAN, **kwargs) -> "ModelCheckpoint":
        tensors = {
            k: v.detach().cpu().to(torch.float32).numpy().copy()
            for k, v in model.state_dict().items()
        }
        return cls(config=model.cfg, tensors=tensors, **kwargs)

    def _subset(self, prefix):
        return {k: v for k, v in self.tensors.items() if k.startswith(prefix)}

    @property
    def encoder_params(self):
        return self._subset("encoder.")

    @property
    def decoder_params(self):
        return self._subset("decoder.")

    @property
    def discriminator_params(self):
        return self._subset("critic.")

    @property
    def singer_embeddings(self) -> np.ndarray:
        return self.tensors["decoder.embedding.weight"]

    @property
    def sample_rate_hz(self) -> Optional[int]:
        return self.meta.get("sample_rate_hz")

    @property
    def frame_shift_us(self) -> Optional[int]:
        return self.meta.get("frame_shift_us")

    def build_model(self, dtype=torch.float32) -> VAWGAN:
        model = VAWGAN(self.config, seed=self.seed)
        state = {k: torch.from_numpy(v.copy()) for k, v in self.tensors.items()}
        model.load_state_dict(state)
        return model.to(dtype).eval()

    def to_bytes(self) -> bytes:
        index, blobs, offset = [], [], 0
        for name in sorted(self.tensors):
            arr = np.ascontiguousarray(self.tensors[name], dtype="<f4")
            raw = arr.tobytes()
            index.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
            blobs.append(raw)
            offset += len(raw)
        header = {
            "config": self.config.to_dict(),
            "param_count": count_parameters(self.config),
            "tensors": index,
            "f0_stats_per_singer": {str(k): v.to_dict() for k, v in sorted(self.f0_stats_per_singer.items())},
            "scaler": self.scaler.to_dict(),
            "training_step": int(self.training_step),
            "seed": int(self.seed),
            "singers": dict(self.singers),
            "meta": self.meta,
        }
        head = json.dumps(header, sort_keys=True).encode("utf-8")
        return b"".join([CKPT_MAGIC, struct.pack("<IQ", CKPT_VERSION, len(head)), head] + blobs)

    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()

    def save(self, path) -> Path:
        path = Path(path)
        tmp = path.with_name(path.name + ".part")
        tmp.write_bytes(self.to_bytes())
        tmp.replace(path)
        return path

    @classmethod
    def from_bytes(cls, data: bytes) -> "ModelCheckpoint":
        if data[:4] != CKPT_MAGIC:
            raise CompatibilityError("not a VAW-GAN checkpoint (bad magic)")
        version, head_len = struct.unpack_from("<IQ", data, 4)
        if version != CKPT_VERSION:
            raise CompatibilityError(f"unsupported checkpoint version {version}")
        start = 4 + struct.calcsize("<IQ")
        header = json.loads(data[start : start + head_len].decode("utf-8"))
        body = memoryview(data)[start + head_len :]
        config = ModelConfig.from_dict(header["config"])
        tensors = {}
        for entry in header["tensors"]:
            raw = body[entry["offset"] : entry["offset"] + entry["nbytes"]]
            tensors[entry["name"]] = np.frombuffer(raw, dtype="<f4").reshape(entry["shape"]).astype(np.float32)
        expected = {k: tuple(v.shape) for k, v in VAWGAN(config).state_dict().items()}
        got = {k: tuple(v.shape) for k, v in tensors.items()}
        if expected != got:
            missing = sorted(set(expected) ^ set(got))
            wrong = sorted(k for k in set(expected) & set(got) if expected[k] != got[k])
            raise CompatibilityError(
                f"checkpoint tensors do not match config (missing/extra: {missing}, wrong shape: {wrong})"
            )
        if header["param_count"] != count_parameters(config):
            raise CompatibilityError("parameter count recorded in checkpoint does not match config")
        return cls(
            config=config,
            tensors=tensors,
            f0_stats_per_singer={int(k): F0Stats.from_dict(v) for k, v in header["f0_stats_per_singer"].items()},
            scaler=CorpusScaler.from_dict(header["scaler"]),
            training_step=header["training_step"],
            seed=header["seed"],
            singers=header.get("singers", {}),
            meta=header.get("meta", {}),
        )

    @classmethod
    def load(cls, path) -> "ModelCheckpoint":
        return cls.from_bytes(Path(path).read_bytes())
