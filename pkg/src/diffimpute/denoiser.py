"""Conditional noise-prediction network.

Tensors are laid out channels-last, ``(B, K, L, C)``, so every 1x1
convolution of the residual stack is a plain ``nn.Linear``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError, DataError, NumericError

DTYPE = torch.float64
CHECKPOINT_FORMAT = "diffimpute-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class DenoiserConfig:
    n_features: int = 64
    residual_layers: int = 4
    channels: int = 64
    attention_heads: int = 8
    diffusion_embed_dim: int = 128
    time_embed_dim: int = 128
    feature_embed_dim: int = 16
    feedforward_dim: int = 64
    T: int = 50
    unconditional: bool = False

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name != "unconditional" and (int(v) != v or v < 1):
                raise ConfigError(f"{f.name} must be a positive integer, got {v}")
        if self.channels % self.attention_heads:
            raise ConfigError(
                f"channels ({self.channels}) must be divisible by attention_heads ({self.attention_heads})"
            )
        if self.diffusion_embed_dim % 2 or self.time_embed_dim % 2:
            raise ConfigError("sinusoidal embedding sizes must be even")

    @property
    def side_dim(self) -> int:
        return self.time_embed_dim + self.feature_embed_dim + 1

    @classmethod
    def from_dict(cls, d: dict) -> "DenoiserConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


def diffusion_step_embedding(t, dim: int = 128) -> np.ndarray:
    """Sinusoids of the step index with frequencies 10^(4j/(dim/2-1))."""
    half = dim // 2
    j = np.arange(half, dtype=np.float64)
    freqs = 10.0 ** (j * 4.0 / (half - 1))
    arg = np.multiply.outer(np.asarray(t, dtype=np.float64), freqs)
    return np.concatenate([np.sin(arg), np.cos(arg)], axis=-1)


def time_embedding(s, dim: int = 128, tau: float = 10000.0) -> np.ndarray:
    """Sinusoids of a timestamp with wavelengths tau^(j/(dim/2))."""
    half = dim // 2
    j = np.arange(half, dtype=np.float64)
    arg = np.multiply.outer(np.asarray(s, dtype=np.float64), tau ** (-j / half))
    return np.concatenate([np.sin(arg), np.cos(arg)], axis=-1)


def _time_embedding_torch(s: torch.Tensor, dim: int, tau: float = 10000.0) -> torch.Tensor:
    half = dim // 2
    j = torch.arange(half, dtype=DTYPE)
    arg = s[..., None] * tau ** (-j / half)
    return torch.cat([torch.sin(arg), torch.cos(arg)], dim=-1)


class EncoderLayer(nn.Module):
    """Post-norm transformer encoder layer with key padding."""

    def __init__(self, channels: int, heads: int, ff_dim: int):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(channels, 3 * channels, dtype=DTYPE)
        self.attn_out = nn.Linear(channels, channels, dtype=DTYPE)
        self.norm1 = nn.LayerNorm(channels, dtype=DTYPE)
        self.ff1 = nn.Linear(channels, ff_dim, dtype=DTYPE)
        self.ff2 = nn.Linear(ff_dim, channels, dtype=DTYPE)
        self.norm2 = nn.LayerNorm(channels, dtype=DTYPE)

    def forward(self, x: torch.Tensor, key_valid: torch.Tensor | None = None) -> torch.Tensor:
        # x: (N, S, C); key_valid: (N, S) bool, False marks padding
        N, S, C = x.shape
        d = C // self.heads
        q, k, v = self.qkv(x).view(N, S, 3, self.heads, d).permute(2, 0, 3, 1, 4)
        scores = q @ k.transpose(-1, -2) / math.sqrt(d)
        if key_valid is not None:
            scores = scores.masked_fill(~key_valid[:, None, None, :], float("-inf"))
        # explicit softmax: over these short rows it runs about twice as fast as torch.softmax
        e = torch.exp(scores - scores.amax(dim=-1, keepdim=True))
        attn = e / e.sum(dim=-1, keepdim=True)
        o = (attn @ v).transpose(1, 2).reshape(N, S, C)
        x = self.norm1(x + self.attn_out(o))
        return self.norm2(x + self.ff2(F.relu(self.ff1(x))))


def transformer_layer_forward(layer: EncoderLayer, inp: torch.Tensor, axis: str, pad_mask=None) -> torch.Tensor:
    """Apply ``layer`` along the time or feature axis of a (B, K, L, C) tensor."""
    if inp.dim() != 4:
        raise ValueError(f"expected a (B, K, L, C) tensor, got shape {tuple(inp.shape)}")
    B, K, L, C = inp.shape
    if pad_mask is not None and tuple(pad_mask.shape) != (B, L):
        raise ValueError(f"pad mask shape {tuple(pad_mask.shape)} != {(B, L)}")
    if axis == "temporal":
        valid = None
        if pad_mask is not None and not bool((pad_mask > 0).all()):
            valid = (pad_mask > 0).repeat_interleave(K, dim=0)
        out = layer(inp.reshape(B * K, L, C), valid)
        return out.view(B, K, L, C)
    if axis == "feature":
        y = inp.permute(0, 2, 1, 3).reshape(B * L, K, C)
        return layer(y).view(B, L, K, C).permute(0, 2, 1, 3)
    raise ValueError(f"axis must be 'temporal' or 'feature', got {axis!r}")


class ResidualBlock(nn.Module):
    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        C = cfg.channels
        self.step_proj = nn.Linear(cfg.diffusion_embed_dim, C, dtype=DTYPE)
        self.time_layer = EncoderLayer(C, cfg.attention_heads, cfg.feedforward_dim)
        self.feature_layer = EncoderLayer(C, cfg.attention_heads, cfg.feedforward_dim)
        self.mid_proj = nn.Linear(C, 2 * C, dtype=DTYPE)
        self.side_proj = nn.Linear(cfg.side_dim, 2 * C, dtype=DTYPE)
        self.res_proj = nn.Linear(C, C, dtype=DTYPE)
        self.skip_proj = nn.Linear(C, C, dtype=DTYPE)

    def forward(self, h, step_emb, side_term, pad):
        y = h + self.step_proj(step_emb)[:, None, None, :]
        y = transformer_layer_forward(self.time_layer, y, "temporal", pad)
        y = transformer_layer_forward(self.feature_layer, y, "feature")
        y = self.mid_proj(y) + side_term
        gate, filt = y.chunk(2, dim=-1)
        y = torch.sigmoid(gate) * torch.tanh(filt)
        p = pad[:, None, :, None]
        return (h + self.res_proj(y)) / math.sqrt(2.0) * p, self.skip_proj(y) * p


@dataclass
class DenoiserInput:
    """Batched or single network input; grids are (B, K, L) or (K, L)."""

    noisy_target: object
    cond_obs: object
    cond_mask: object
    t: object
    timestamps: object = None
    pad_mask: object = None
    feature_ids: object = None

    def tensors(self) -> dict:
        def as_t(a):
            return a.to(DTYPE) if isinstance(a, torch.Tensor) else torch.as_tensor(np.asarray(a, dtype=np.float64))

        noisy = as_t(self.noisy_target)
        single = noisy.dim() == 2
        grids = [noisy, as_t(self.cond_obs), as_t(self.cond_mask)]
        if single:
            grids = [g[None] for g in grids]
        B, K, L = grids[0].shape
        for g in grids[1:]:
            if tuple(g.shape) != (B, K, L):
                raise ValueError("noisy_target, cond_obs and cond_mask must share a shape")
        ts = torch.arange(L, dtype=DTYPE).expand(B, L) if self.timestamps is None else as_t(self.timestamps)
        pad = torch.ones(B, L, dtype=DTYPE) if self.pad_mask is None else as_t(self.pad_mask)
        t = torch.as_tensor(self.t, dtype=torch.long).reshape(-1)
        if single:
            ts, pad = ts.reshape(1, L), pad.reshape(1, L)
        if t.numel() == 1 and B > 1:
            t = t.expand(B)
        if tuple(ts.shape) != (B, L) or tuple(pad.shape) != (B, L) or t.shape != (B,):
            raise ValueError("timestamps, pad_mask and t do not match the batch shape")
        return dict(
            noisy=grids[0], cond_obs=grids[1], cond_mask=grids[2], t=t,
            timestamps=ts, pad_mask=pad, feature_ids=self.feature_ids, single=single,
        )


class DenoiserModel(nn.Module):
    def __init__(self, config: DenoiserConfig, seed: int = 0):
        super().__init__()
        cfg = self.config = config
        C = cfg.channels
        steps = diffusion_step_embedding(np.arange(cfg.T + 1), cfg.diffusion_embed_dim)
        self.register_buffer("step_table", torch.as_tensor(steps), persistent=False)
        self.step_mlp1 = nn.Linear(cfg.diffusion_embed_dim, cfg.diffusion_embed_dim, dtype=DTYPE)
        self.step_mlp2 = nn.Linear(cfg.diffusion_embed_dim, cfg.diffusion_embed_dim, dtype=DTYPE)
        self.feature_embed = nn.Embedding(cfg.n_features, cfg.feature_embed_dim, dtype=DTYPE)
        self.input_proj = nn.Linear(2, C, dtype=DTYPE)
        self.blocks = nn.ModuleList(ResidualBlock(cfg) for _ in range(cfg.residual_layers))
        self.skip_out = nn.Linear(C, C, dtype=DTYPE)
        self.output_proj = nn.Linear(C, 1, dtype=DTYPE)
        # finiteness guards need concrete values; switch off under torch.func transforms
        self.check_finite = True
        self.init_parameters(seed)

    def init_parameters(self, seed: int) -> None:
        g = torch.Generator().manual_seed(int(seed))
        with torch.no_grad():
            for name, p in self.named_parameters():
                if name.startswith("output_proj"):
                    p.zero_()
                elif name.startswith("feature_embed"):
                    p.normal_(0.0, 1.0, generator=g)
                elif ".norm" in name:
                    p.fill_(1.0 if name.endswith("weight") else 0.0)
                else:
                    fan_in = self._fan_in(name)
                    bound = 1.0 / math.sqrt(fan_in)
                    p.uniform_(-bound, bound, generator=g)

    def _fan_in(self, name: str) -> int:
        module = self.get_submodule(name.rsplit(".", 1)[0])
        return module.in_features

    # flat parameter view -------------------------------------------------

    def param_layout(self) -> list[dict]:
        layout, offset = [], 0
        for name, p in self.named_parameters():
            layout.append({"name": name, "shape": list(p.shape), "offset": offset})
            offset += p.numel()
        return layout

    def n_params(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def get_flat(self) -> np.ndarray:
        return torch.nn.utils.parameters_to_vector(self.parameters()).detach().numpy().copy()

    def set_flat(self, flat) -> None:
        flat = torch.as_tensor(np.asarray(flat, dtype=np.float64))
        if flat.numel() != self.n_params():
            raise ValueError(f"expected {self.n_params()} parameters, got {flat.numel()}")
        with torch.no_grad():
            torch.nn.utils.vector_to_parameters(flat, self.parameters())

    # forward -------------------------------------------------------------

    def side_info(self, timestamps, cond_mask, feature_ids=None) -> torch.Tensor:
        B, K, L = cond_mask.shape
        if feature_ids is None:
            feature_ids = torch.arange(K)
        feature_ids = torch.as_tensor(feature_ids, dtype=torch.long)
        if feature_ids.shape != (K,):
            raise ValueError(f"need {K} feature ids, got shape {tuple(feature_ids.shape)}")
        if feature_ids.min() < 0 or feature_ids.max() >= self.config.n_features:
            raise DataError(
                f"feature index out of range for an embedding table of {self.config.n_features} features"
            )
        temb = _time_embedding_torch(timestamps, self.config.time_embed_dim)  # (B, L, Dt)
        femb = self.feature_embed(feature_ids)  # (K, Df)
        return torch.cat(
            [
                temb[:, None, :, :].expand(B, K, L, -1),
                femb[None, :, None, :].expand(B, K, L, -1),
                cond_mask[..., None],
            ],
            dim=-1,
        )

    def side_terms(self, timestamps, cond_mask, feature_ids=None) -> list:
        """Per-block projections of the side information.

        They depend only on timestamps and the conditional mask, so a reverse
        chain can compute them once and pass them to every step.
        """
        if self.config.unconditional:
            cond_mask = torch.zeros_like(cond_mask)
        side = self.side_info(timestamps, cond_mask, feature_ids)
        return [block.side_proj(side) for block in self.blocks]

    def forward(self, noisy, cond_obs, cond_mask, t, timestamps, pad_mask, feature_ids=None, side_terms=None):
        if self.config.unconditional:
            cond_obs = torch.zeros_like(cond_obs)
            cond_mask = torch.zeros_like(cond_mask)
        pad = pad_mask
        x = torch.stack([cond_obs, noisy], dim=-1)  # (B, K, L, 2)
        h = F.relu(self.input_proj(x)) * pad[:, None, :, None]
        step = F.silu(self.step_mlp1(self.step_table[t]))
        step = F.silu(self.step_mlp2(step))
        if side_terms is None:
            side_terms = self.side_terms(timestamps, cond_mask, feature_ids)
        skip = 0.0
        for i, block in enumerate(self.blocks):
            h, s = block(h, step, side_terms[i], pad)
            if self.check_finite and not torch.isfinite(h).all():
                raise NumericError(f"non-finite activations after residual block {i}")
            skip = skip + s
        out = skip / math.sqrt(len(self.blocks))
        out = self.output_proj(F.relu(self.skip_out(out))).squeeze(-1)
        if self.check_finite and not torch.isfinite(out).all():
            raise NumericError("non-finite values in output projection")
        return out * (1.0 - cond_mask) * pad[:, None, :]

    def run(self, inp: DenoiserInput) -> torch.Tensor:
        d = inp.tensors()
        if self.config.unconditional is False and torch.any(d["noisy"] * d["cond_mask"] != 0):
            raise ValueError("noisy_target must be zero on conditional positions")
        if torch.any(d["t"] < 0) or torch.any(d["t"] > self.config.T):
            raise ValueError(f"diffusion step outside 0..{self.config.T}")
        out = self(d["noisy"], d["cond_obs"], d["cond_mask"], d["t"], d["timestamps"], d["pad_mask"], d["feature_ids"])
        return out[0] if d["single"] else out


def assemble_side_info(model: DenoiserModel, timestamps, feature_ids, cond_mask) -> np.ndarray:
    """Side channels per position: time embedding, feature embedding, conditional mask."""
    cm = torch.as_tensor(np.asarray(cond_mask, dtype=np.float64))
    single = cm.dim() == 2
    if single:
        cm = cm[None]
    ts = torch.as_tensor(np.asarray(timestamps, dtype=np.float64)).reshape(cm.shape[0], -1)
    with torch.no_grad():
        side = model.side_info(ts, cm, feature_ids)
    side = side.numpy()
    return side[0] if single else side


def denoiser_forward(model: DenoiserModel, inp: DenoiserInput) -> np.ndarray:
    with torch.no_grad():
        return model.run(inp).numpy()


def masked_noise_loss(pred: torch.Tensor, eps: torch.Tensor, target_mask: torch.Tensor) -> torch.Tensor:
    """Squared noise error averaged over target entries."""
    n = target_mask.sum()
    if n <= 0:
        raise DataError("loss needs at least one target entry")
    return (((eps - pred) * target_mask) ** 2).sum() / n


def loss_and_gradients(model: DenoiserModel, inp: DenoiserInput, eps, target_mask) -> tuple[float, np.ndarray]:
    """Masked noise-prediction loss and its gradient as a flat vector."""
    eps = torch.as_tensor(np.asarray(eps, dtype=np.float64))
    tm = torch.as_tensor(np.asarray(target_mask, dtype=np.float64))
    pred = model.run(inp)
    loss = masked_noise_loss(pred, eps, tm)
    params = list(model.parameters())
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    flat = torch.cat([
        (g if g is not None else torch.zeros_like(p)).reshape(-1) for g, p in zip(grads, params)
    ])
    return float(loss.detach()), flat.numpy()


# checkpoints ---------------------------------------------------------------


def save_checkpoint(path, model: DenoiserModel, extra: dict | None = None) -> None:
    """Write config, parameter layout and flat parameters to a ``.npz`` file."""
    path = Path(path)
    with open(path, "wb") as fh:
        np.savez(
            fh,
            format=np.array(CHECKPOINT_FORMAT),
            version=np.array(CHECKPOINT_VERSION),
            config=np.array(json.dumps(asdict(model.config), sort_keys=True)),
            layout=np.array(json.dumps(model.param_layout())),
            extra=np.array(json.dumps(extra or {}, sort_keys=True)),
            params=model.get_flat(),
        )


def load_checkpoint(path) -> tuple[DenoiserModel, dict]:
    try:
        data = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read checkpoint {path}: {exc}") from exc
    with data:
        if str(data["format"]) != CHECKPOINT_FORMAT:
            raise ConfigError(f"{path} is not a model checkpoint")
        if int(data["version"]) != CHECKPOINT_VERSION:
            raise ConfigError(f"unsupported checkpoint version {int(data['version'])}")
        config = DenoiserConfig.from_dict(json.loads(str(data["config"])))
        layout = json.loads(str(data["layout"]))
        extra = json.loads(str(data["extra"]))
        params = data["params"]
    model = DenoiserModel(config)
    if layout != model.param_layout():
        raise ConfigError("checkpoint parameter layout does not match its config")
    model.set_flat(params)
    return model, extra
