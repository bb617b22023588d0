"""Dense tensor primitives, gradient checking and the HADW checkpoint format.

Tensors are ``torch.Tensor``; reverse-mode differentiation comes from torch's
dynamically recorded autograd graph. The wrappers below pin down the shape
rules the rest of the package relies on: no broadcasting except between a
tensor and a scalar, and a :class:`ShapeMismatch` naming both shapes otherwise.
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Callable, Iterable, Mapping

import numpy as np
import torch

from .errors import DimensionMismatch, NonScalarLoss, ShapeMismatch

TRAIN_DTYPE = torch.float32
CHECK_DTYPE = torch.float64
L2_EPS = 1e-6


def _is_scalar(x) -> bool:
    return isinstance(x, (int, float)) or (isinstance(x, torch.Tensor) and x.dim() == 0)


def _same_shape(op: str, a, b):
    if _is_scalar(a) or _is_scalar(b):
        return
    if a.shape != b.shape:
        raise ShapeMismatch(f"{op}: {tuple(a.shape)} vs {tuple(b.shape)}")


def add(a, b):
    _same_shape("add", a, b)
    return a + b


def sub(a, b):
    _same_shape("sub", a, b)
    return a - b


def mul(a, b):
    _same_shape("mul", a, b)
    return a * b


def scale(a: torch.Tensor, c: float) -> torch.Tensor:
    return a * c


def matmul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    if a.dim() < 2 or b.dim() < 2 or a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul: {tuple(a.shape)} vs {tuple(b.shape)}")
    return a @ b


def transpose(a: torch.Tensor) -> torch.Tensor:
    return a.transpose(-1, -2)


def sigmoid(x):
    return torch.sigmoid(x)


def silu(x):
    return x * torch.sigmoid(x)


def exp(x):
    return torch.exp(x)


def log(x):
    return torch.log(x)


def softmax(x: torch.Tensor, axis: int = -1) -> torch.Tensor:
    shifted = x - x.amax(dim=axis, keepdim=True).detach()
    e = torch.exp(shifted)
    return e / e.sum(dim=axis, keepdim=True)


def layer_norm(x: torch.Tensor, weight=None, bias=None, eps: float = 1e-5) -> torch.Tensor:
    """Normalise over the last axis, then apply the optional affine map."""
    d = x.shape[-1]
    for name, p in (("weight", weight), ("bias", bias)):
        if p is not None and tuple(p.shape) != (d,):
            raise ShapeMismatch(f"layer_norm {name}: {tuple(p.shape)} vs {tuple(x.shape)}")
    mu = x.mean(dim=-1, keepdim=True)
    xc = x - mu
    var = (xc * xc).mean(dim=-1, keepdim=True)
    y = xc / torch.sqrt(var + eps)
    if weight is not None:
        y = y * weight
    if bias is not None:
        y = y + bias
    return y


def mean(x: torch.Tensor, axis: int | None = None) -> torch.Tensor:
    return x.mean() if axis is None else x.mean(dim=axis)


def sum(x: torch.Tensor, axis: int | None = None) -> torch.Tensor:  # noqa: A001
    return x.sum() if axis is None else x.sum(dim=axis)


def gather(x: torch.Tensor, rows) -> torch.Tensor:
    """Select rows (second-to-last axis) of ``x``."""
    idx = torch.as_tensor(rows, dtype=torch.long, device=x.device)
    if idx.numel() and (idx.min() < 0 or idx.max() >= x.shape[-2]):
        raise ShapeMismatch(f"gather: rows out of range for {tuple(x.shape)}")
    return x.index_select(-2, idx)


def concat(tensors: Iterable[torch.Tensor], axis: int = 0) -> torch.Tensor:
    tensors = list(tensors)
    ref = list(tensors[0].shape)
    for t in tensors[1:]:
        a, b = list(t.shape), list(ref)
        if len(a) != len(b):
            raise ShapeMismatch(f"concat: {tuple(ref)} vs {tuple(t.shape)}")
        del a[axis], b[axis]
        if a != b:
            raise ShapeMismatch(f"concat: {tuple(ref)} vs {tuple(t.shape)}")
    return torch.cat(tensors, dim=axis)


def l2_normalize(x: torch.Tensor, axis: int = -1, eps: float = L2_EPS) -> torch.Tensor:
    return x / (torch.sqrt((x * x).sum(dim=axis, keepdim=True)) + eps)


def mse(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    _same_shape("mse", a, b)
    d = a - b
    return (d * d).mean()


def cross_entropy(logits: torch.Tensor, targets) -> torch.Tensor:
    """Mean negative log-likelihood of integer ``targets`` under ``logits`` (n, C)."""
    targets = torch.as_tensor(targets, dtype=torch.long, device=logits.device)
    if logits.dim() != 2 or targets.shape != logits.shape[:1]:
        raise ShapeMismatch(f"cross_entropy: {tuple(logits.shape)} vs {tuple(targets.shape)}")
    logp = torch.log_softmax(logits, dim=-1)
    return -logp.gather(1, targets[:, None]).mean()


def backward(loss: torch.Tensor) -> None:
    if loss.numel() != 1 or loss.dim() != 0:
        raise NonScalarLoss(f"loss must be a scalar, got shape {tuple(loss.shape)}")
    loss.backward()


def grad_check_report(f: Callable[[], torch.Tensor], named_params: Mapping[str, torch.Tensor],
                      eps: float = 1e-5) -> dict[str, float]:
    """Per-tensor worst relative error between autograd and central differences.

    ``f`` is re-evaluated twice per coordinate; the error of one coordinate is
    ``|a - n| / max(1e-8, |a| + |n|)``.
    """
    params = dict(named_params)
    for p in params.values():
        p.grad = None
    backward(f())
    report = {}
    with torch.no_grad():
        for name, p in params.items():
            analytic = (p.grad if p.grad is not None else torch.zeros_like(p)).reshape(-1).tolist()
            flat = p.view(-1)
            worst = 0.0
            for i, a in enumerate(analytic):
                orig = flat[i].item()
                flat[i] = orig + eps
                fp = f().item()
                flat[i] = orig - eps
                fm = f().item()
                flat[i] = orig
                num = (fp - fm) / (2 * eps)
                worst = max(worst, abs(a - num) / max(1e-8, abs(a) + abs(num)))
            report[name] = worst
    return report


def grad_check(f: Callable[[], torch.Tensor], params: Iterable[torch.Tensor], eps: float = 1e-5) -> float:
    """Largest relative error over every coordinate of ``params``."""
    report = grad_check_report(f, {str(i): p for i, p in enumerate(params)}, eps)
    return max(report.values(), default=0.0)


# -- HADW checkpoints ---------------------------------------------------------

CKPT_MAGIC = b"HADW"
CKPT_VERSION = 1


def save_checkpoint(path: str | Path, params: Mapping[str, torch.Tensor | np.ndarray]) -> None:
    """Write named tensors as little-endian f32, in the mapping's order."""
    out = [CKPT_MAGIC, struct.pack("<IQ", CKPT_VERSION, len(params))]
    for name, t in params.items():
        arr = t.detach().cpu().numpy() if isinstance(t, torch.Tensor) else np.asarray(t)
        arr = np.asarray(arr, dtype="<f4", order="C")
        raw = name.encode("utf-8")
        out.append(struct.pack("<I", len(raw)) + raw)
        out.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        out.append(arr.tobytes())
    Path(path).write_bytes(b"".join(out))


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    if buf[:4] != CKPT_MAGIC:
        raise ValueError(f"{path}: not a HADW checkpoint")
    version, count = struct.unpack_from("<IQ", buf, 4)
    if version != CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos = 16
    params: dict[str, np.ndarray] = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        name = buf[pos:pos + n].decode("utf-8")
        pos += n
        (rank,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        dims = struct.unpack_from(f"<{rank}Q", buf, pos)
        pos += 8 * rank
        size = int(np.prod(dims, dtype=np.int64)) if rank else 1
        params[name] = np.frombuffer(buf, dtype="<f4", count=size, offset=pos).reshape(dims).copy()
        pos += 4 * size
    return params


def module_state(module: torch.nn.Module) -> dict[str, torch.Tensor]:
    return {name: p for name, p in module.named_parameters()}


def load_into(module: torch.nn.Module, params: Mapping[str, np.ndarray], prefixes: tuple[str, ...] | None = None,
              strict: bool = True) -> list[str]:
    """Copy checkpoint tensors into ``module``'s parameters.

    Only names starting with one of ``prefixes`` are considered when given.
    Returns the names that were loaded.
    """
    own = dict(module.named_parameters())
    loaded = []
    for name, p in own.items():
        if prefixes is not None and not name.startswith(prefixes):
            continue
        if name not in params:
            if strict:
                raise DimensionMismatch(f"checkpoint lacks parameter {name}")
            continue
        arr = params[name]
        if tuple(arr.shape) != tuple(p.shape):
            raise DimensionMismatch(f"{name}: checkpoint shape {tuple(arr.shape)} vs model {tuple(p.shape)}")
        with torch.no_grad():
            p.copy_(torch.from_numpy(np.ascontiguousarray(arr)).to(p.dtype))
        loaded.append(name)
    return loaded
