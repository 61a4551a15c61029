"""Transformer x0-denoiser, Adam, finite-difference checks and the checkpoint container.

Reverse-mode differentiation is torch autograd; every layer here is built
from plain tensor ops so that each one can be checked against central
differences in double precision.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Iterable

import numpy as np
import torch
import torch.nn as tnn
import torch.nn.functional as F

CHECKPOINT_MAGIC = b"HOISYNTH-CKPT\x00\x00\x00"
CHECKPOINT_VERSION = 1


class ShapeError(ValueError):
    pass


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, name: str):
        super().__init__(f"non-finite gradient in parameter {name!r}")
        self.name = name


class CheckpointError(ValueError):
    pass


def sinusoidal_embedding(positions: torch.Tensor, dim: int) -> torch.Tensor:
    """Standard sin/cos features of integer positions, (...,) -> (..., dim)."""
    half = dim // 2
    freq = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float64) / max(half, 1))
    ang = positions.to(torch.float64)[..., None] * freq
    emb = torch.cat([torch.sin(ang), torch.cos(ang)], dim=-1)
    if dim % 2:
        emb = F.pad(emb, (0, 1))
    return emb


def attention_weights(q: torch.Tensor, k: torch.Tensor, key_padding_mask: torch.Tensor | None = None) -> torch.Tensor:
    """Row-stochastic weights softmax(q k^T / sqrt(d)); q, k are (..., T, d)."""
    logits = q @ k.transpose(-1, -2) / math.sqrt(q.shape[-1])
    if key_padding_mask is not None:
        logits = logits.masked_fill(key_padding_mask[..., None, None, :], float("-inf"))
    return torch.softmax(logits, dim=-1)


class MultiHeadSelfAttention(tnn.Module):
    def __init__(self, d_model: int, d_kqv: int, n_heads: int):
        super().__init__()
        if d_kqv % n_heads:
            raise ShapeError(f"d_kqv={d_kqv} not divisible by n_heads={n_heads}")
        self.n_heads = n_heads
        self.q = tnn.Linear(d_model, d_kqv)
        self.k = tnn.Linear(d_model, d_kqv)
        self.v = tnn.Linear(d_model, d_kqv)
        self.out = tnn.Linear(d_kqv, d_model)

    def _split(self, t: torch.Tensor) -> torch.Tensor:
        b, n, d = t.shape
        return t.view(b, n, self.n_heads, d // self.n_heads).transpose(1, 2)

    def forward(self, h: torch.Tensor, key_padding_mask: torch.Tensor | None = None) -> torch.Tensor:
        q, k, v = self._split(self.q(h)), self._split(self.k(h)), self._split(self.v(h))
        w = attention_weights(q, k, key_padding_mask)
        o = (w @ v).transpose(1, 2).reshape(h.shape[0], h.shape[1], -1)
        return self.out(o)


class FeedForward(tnn.Module):
    def __init__(self, d_model: int, d_inner: int):
        super().__init__()
        self.fc1 = tnn.Linear(d_model, d_inner)
        self.fc2 = tnn.Linear(d_inner, d_model)

    def forward(self, h):
        return self.fc2(F.gelu(self.fc1(h)))


class SelfAttentionBlock(tnn.Module):
    """Pre-norm residual block: attention then position-wise feedforward."""

    def __init__(self, d_model: int, d_kqv: int, n_heads: int, d_inner: int):
        super().__init__()
        self.norm1 = tnn.LayerNorm(d_model)
        self.attn = MultiHeadSelfAttention(d_model, d_kqv, n_heads)
        self.norm2 = tnn.LayerNorm(d_model)
        self.ff = FeedForward(d_model, d_inner)

    def forward(self, h, key_padding_mask=None):
        h = h + self.attn(self.norm1(h), key_padding_mask)
        return h + self.ff(self.norm2(h))


class NoiseLevelEmbedding(tnn.Module):
    """Sinusoidal features of the integer noise level through a 2-layer MLP."""

    def __init__(self, d_model: int):
        super().__init__()
        self.d_model = d_model
        self.fc1 = tnn.Linear(d_model, d_model)
        self.fc2 = tnn.Linear(d_model, d_model)

    def forward(self, n: torch.Tensor) -> torch.Tensor:
        e = sinusoidal_embedding(n, self.d_model).to(self.fc1.weight.dtype)
        return self.fc2(F.gelu(self.fc1(e)))


@dataclass
class DenoiserConfig:
    d_x: int
    d_cond: int
    d_model: int = 512
    d_kqv: int = 256
    n_heads: int = 4
    n_layers: int = 4
    ff_mult: int = 2
    use_positional: bool = True
    zero_init_output: bool = True


class TransformerDenoiser(tnn.Module):
    """Predicts the clean sample x0 from (x_n, n, condition).

    Each frame token is ``W_in [x_n, c] + noise_embedding(n) + positional(t)``;
    after the self-attention blocks a final norm and linear map give x0.
    """

    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        self.cfg = cfg
        self.input_proj = tnn.Linear(cfg.d_x + cfg.d_cond, cfg.d_model)
        self.noise_embed = NoiseLevelEmbedding(cfg.d_model)
        self.blocks = tnn.ModuleList(
            SelfAttentionBlock(cfg.d_model, cfg.d_kqv, cfg.n_heads, cfg.ff_mult * cfg.d_model)
            for _ in range(cfg.n_layers))
        self.norm = tnn.LayerNorm(cfg.d_model)
        self.output_proj = tnn.Linear(cfg.d_model, cfg.d_x)

    def forward(self, x: torch.Tensor, n: torch.Tensor | int, cond: torch.Tensor,
                key_padding_mask: torch.Tensor | None = None) -> torch.Tensor:
        unbatched = x.dim() == 2
        if unbatched:
            x, cond = x[None], cond[None]
        b, t, dx = x.shape
        if dx != self.cfg.d_x or cond.shape != (b, t, self.cfg.d_cond):
            raise ShapeError(f"expected x (B,T,{self.cfg.d_x}) and cond (B,T,{self.cfg.d_cond}), "
                             f"got {tuple(x.shape)} and {tuple(cond.shape)}")
        n = torch.as_tensor(n, device=x.device).reshape(-1).expand(b)
        h = self.input_proj(torch.cat([x, cond], dim=-1))
        h = h + self.noise_embed(n)[:, None, :]
        if self.cfg.use_positional:
            h = h + sinusoidal_embedding(torch.arange(t), self.cfg.d_model).to(h.dtype)
        for block in self.blocks:
            h = block(h, key_padding_mask)
        out = self.output_proj(self.norm(h))
        return out[0] if unbatched else out


def init_parameters(module: tnn.Module, generator: torch.Generator) -> None:
    """Deterministic init from an explicit generator (uniform +-1/sqrt(fan_in), zero biases)."""
    with torch.no_grad():
        for name, p in module.named_parameters():
            if isinstance(_owner(module, name), tnn.LayerNorm):
                p.fill_(1.0 if name.endswith("weight") else 0.0)
            elif p.dim() >= 2:
                bound = 1.0 / math.sqrt(p.shape[1])
                p.copy_(torch.rand(p.shape, generator=generator, dtype=p.dtype) * 2 * bound - bound)
            else:
                p.zero_()
        for m in module.modules():
            if isinstance(m, TransformerDenoiser) and m.cfg.zero_init_output:
                m.output_proj.weight.zero_()
                m.output_proj.bias.zero_()


def _owner(module: tnn.Module, pname: str) -> tnn.Module:
    for part in pname.split(".")[:-1]:
        module = getattr(module, part)
    return module


def parameter_count(module: tnn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


class Adam:
    """Bias-corrected Adam over named parameters (default lr 2e-4).

    Thin layer over ``torch.optim.Adam`` that refuses non-finite gradients,
    naming the offending parameter, and exposes its moments as arrays.
    """

    def __init__(self, named_params: Iterable[tuple[str, torch.Tensor]], lr: float = 2e-4,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.named = list(named_params)
        self.opt = torch.optim.Adam([p for _, p in self.named], lr=lr, betas=betas, eps=eps,
                                    foreach=False)

    def zero_grad(self) -> None:
        self.opt.zero_grad(set_to_none=False)

    def step(self) -> None:
        for name, p in self.named:
            if p.grad is not None and not torch.isfinite(p.grad).all():
                raise NonFiniteGradientError(name)
        self.opt.step()

    @property
    def step_count(self) -> int:
        states = [self.opt.state[p] for _, p in self.named if p in self.opt.state]
        return int(states[0]["step"]) if states else 0

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for name, p in self.named:
            st = self.opt.state.get(p)
            if not st:
                continue
            out[f"adam.m.{name}"] = st["exp_avg"].detach().cpu().numpy()
            out[f"adam.v.{name}"] = st["exp_avg_sq"].detach().cpu().numpy()
            out[f"adam.step.{name}"] = np.array([float(st["step"])])
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, p in self.named:
            key = f"adam.m.{name}"
            if key not in arrays:
                continue
            self.opt.state[p] = {
                "step": torch.tensor(float(arrays[f"adam.step.{name}"][0])),
                "exp_avg": torch.from_numpy(arrays[key].copy()).to(p.dtype),
                "exp_avg_sq": torch.from_numpy(arrays[f"adam.v.{name}"].copy()).to(p.dtype),
            }


# --- finite differences ---------------------------------------------------

def finite_difference_grad(fn: Callable[[], torch.Tensor], tensor: torch.Tensor, h: float = 1e-5) -> torch.Tensor:
    """Central differences of scalar ``fn()`` with respect to every entry of ``tensor`` (in place)."""
    grad = torch.zeros_like(tensor)
    flat = tensor.data.view(-1)
    gflat = grad.view(-1)
    with torch.no_grad():
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + h
            fp = fn().item()
            flat[i] = orig - h
            fm = fn().item()
            flat[i] = orig
            gflat[i] = (fp - fm) / (2 * h)
    return grad


def max_relative_error(a: torch.Tensor, b: torch.Tensor, floor: float = 1e-6) -> float:
    a, b = a.detach().double(), b.detach().double()
    denom = torch.clamp(torch.maximum(a.abs(), b.abs()), min=floor)
    return float(((a - b).abs() / denom).max()) if a.numel() else 0.0


def gradient_check(fn: Callable[[], torch.Tensor], tensors: dict[str, torch.Tensor], h: float = 1e-5,
                   floor: float = 1e-6) -> dict[str, float]:
    """Autograd vs central differences; returns the max relative error per tensor."""
    for t in tensors.values():
        t.grad = None
    loss = fn()
    loss.backward()
    errors = {}
    for name, t in tensors.items():
        analytic = t.grad.clone() if t.grad is not None else torch.zeros_like(t)
        numeric = finite_difference_grad(fn, t, h)
        errors[name] = max_relative_error(analytic, numeric, floor)
    return errors


# --- checkpoint container -------------------------------------------------

def save_checkpoint(path: str | Path, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    """Write a checkpoint.

    Layout: 16-byte magic, u32 format version, u64 header length (all
    little-endian), UTF-8 JSON header ``{"meta", "tensors": [{name, dtype,
    shape, offset, nbytes}]}``, then the raw little-endian C-order blobs.
    """
    entries, blobs, offset = [], [], 0
    for name in sorted(arrays):
        arr = np.asarray(arrays[name])
        if arr.dtype.kind == "f":
            arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        elif arr.dtype.kind in "iub":
            arr = arr.astype(np.dtype(arr.dtype.str.replace(">", "<")), copy=False)
        raw = np.ascontiguousarray(arr).tobytes()
        entries.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape),
                        "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": meta, "tensors": entries}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(header)))
        fh.write(header)
        for raw in blobs:
            fh.write(raw)


def load_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if data[:16] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack("<IQ", data[16:28])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(data[28:28 + hlen])
    base = 28 + hlen
    arrays = {}
    for e in header["tensors"]:
        start = base + e["offset"]
        arrays[e["name"]] = np.frombuffer(data[start:start + e["nbytes"]], dtype=np.dtype(e["dtype"])).reshape(e["shape"]).copy()
    return header["meta"], arrays


def module_arrays(module: tnn.Module, prefix: str = "param.") -> dict[str, np.ndarray]:
    return {prefix + k: v.detach().cpu().numpy() for k, v in module.state_dict().items()}


def load_module_arrays(module: tnn.Module, arrays: dict[str, np.ndarray], prefix: str = "param.") -> None:
    own = module.state_dict()
    missing = [k for k in own if prefix + k not in arrays]
    if missing:
        raise CheckpointError(f"checkpoint is missing parameters {missing[:3]}")
    for k, v in own.items():
        src = arrays[prefix + k]
        if tuple(src.shape) != tuple(v.shape):
            raise CheckpointError(f"shape mismatch for {k}: {src.shape} vs {tuple(v.shape)}")
    module.load_state_dict({k: torch.from_numpy(arrays[prefix + k].copy()).to(v.dtype) for k, v in own.items()})


def config_dict(cfg) -> dict:
    return asdict(cfg)
