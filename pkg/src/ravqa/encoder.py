"""Dual bag-of-tokens encoders with hand-derived gradients.

Each side maps a token sequence to ``tanh(P @ mean(E[ids]) + b)`` where ids
come from hashing tokens (64-bit FNV-1a modulo the embedding table size).
Retrieval scores are inner products between the query-side and document-side
outputs.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .numerics import check_finite, fingerprint_arrays, read_arrays, write_arrays

SIDES = ("query", "doc")
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


@lru_cache(maxsize=1 << 18)
def fnv1a_64(token: str) -> int:
    h = _FNV_OFFSET
    for byte in token.encode("utf-8"):
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h


def token_ids(tokens: Sequence[str], vocab_size: int) -> np.ndarray:
    return np.fromiter((fnv1a_64(t) % vocab_size for t in tokens), dtype=np.intp,
                       count=len(tokens))


@dataclass
class DualEncoderParams:
    """Query and document encoder weights.

    Arrays are keyed ``<side>_embedding`` (V x h), ``<side>_projection``
    (h x h) and ``<side>_bias`` (h).
    """

    arrays: dict[str, np.ndarray]
    seed: int = 0

    def __post_init__(self):
        v, h = self.arrays["query_embedding"].shape
        if h < 2:
            raise ValueError("encoder dimension must be >= 2")
        for side in SIDES:
            if self.arrays[f"{side}_embedding"].shape != (v, h):
                raise ValueError(f"{side}_embedding shape mismatch")
            if self.arrays[f"{side}_projection"].shape != (h, h):
                raise ValueError(f"{side}_projection shape mismatch")
            if self.arrays[f"{side}_bias"].shape != (h,):
                raise ValueError(f"{side}_bias shape mismatch")
        check_finite("encoder parameters", *self.arrays.values())

    @property
    def vocab_size(self) -> int:
        return self.arrays["query_embedding"].shape[0]

    @property
    def dim(self) -> int:
        return self.arrays["query_embedding"].shape[1]

    def side(self, side: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        a = self.arrays
        return a[f"{side}_embedding"], a[f"{side}_projection"], a[f"{side}_bias"]

    def query_arrays(self) -> dict[str, np.ndarray]:
        return {k: v for k, v in self.arrays.items() if k.startswith("query_")}

    def doc_arrays(self) -> dict[str, np.ndarray]:
        return {k: v for k, v in self.arrays.items() if k.startswith("doc_")}

    def copy(self) -> "DualEncoderParams":
        return DualEncoderParams({k: v.copy() for k, v in self.arrays.items()}, self.seed)

    def doc_fingerprint(self) -> str:
        """Hash of the document-side weights; ties an index to its encoder."""
        return fingerprint_arrays(self.doc_arrays())

    def fingerprint(self) -> str:
        return fingerprint_arrays(self.arrays)

    def save(self, path) -> None:
        write_arrays(path, {"kind": "dual_encoder", "seed": self.seed,
                            "vocab_size": self.vocab_size, "dim": self.dim}, self.arrays)

    @classmethod
    def load(cls, path) -> "DualEncoderParams":
        meta, arrays = read_arrays(path)
        if meta.get("kind") != "dual_encoder":
            raise ValueError(f"{path}: not a dual encoder checkpoint")
        return cls(arrays, int(meta["seed"]))


def init_dual_encoder(vocab_size: int = 4096, dim: int = 64, seed: int = 0,
                      tied: bool = True, embedding_scale: float = 0.1) -> DualEncoderParams:
    """Random initialization.

    Embeddings are uniform in ``[-embedding_scale, embedding_scale]``,
    projections fan-in scaled, biases zero. With ``tied`` both sides start from
    the same weights, the way both DPR towers start from one pretrained
    checkpoint; the initial scorer is then a soft lexical-overlap measure
    instead of noise.
    """
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(dim)

    def fresh():
        return (rng.uniform(-embedding_scale, embedding_scale, size=(vocab_size, dim)),
                rng.uniform(-bound, bound, size=(dim, dim)),
                np.zeros(dim))

    arrays = {}
    q = fresh()
    d = tuple(x.copy() for x in q) if tied else fresh()
    for side, (emb, proj, bias) in (("query", q), ("doc", d)):
        arrays[f"{side}_embedding"] = emb
        arrays[f"{side}_projection"] = proj
        arrays[f"{side}_bias"] = bias
    return DualEncoderParams(arrays, seed)


@dataclass
class EncodeCache:
    ids: np.ndarray
    mean: np.ndarray
    out: np.ndarray


def encode_cached(params: DualEncoderParams, side: str, tokens: Sequence[str]):
    emb, proj, bias = params.side(side)
    ids = token_ids(tokens, params.vocab_size)
    mean = emb[ids].mean(axis=0) if len(ids) else np.zeros(params.dim)
    out = np.tanh(proj @ mean + bias)
    return out, EncodeCache(ids, mean, out)


def encode(params: DualEncoderParams, side: str, tokens: Sequence[str]) -> np.ndarray:
    if side not in SIDES:
        raise ValueError(f"side must be one of {SIDES}, got {side!r}")
    return encode_cached(params, side, tokens)[0]


def encode_many(params: DualEncoderParams, side: str, token_lists) -> np.ndarray:
    """Row-stacked ``encode``; each row is bit-identical to a single call."""
    out = np.empty((len(token_lists), params.dim))
    for i, toks in enumerate(token_lists):
        out[i] = encode_cached(params, side, toks)[0]
    return out


def encode_backward(params: DualEncoderParams, side: str, cache: EncodeCache,
                    d_out: np.ndarray, grads: dict[str, np.ndarray]) -> None:
    """Accumulate d(loss)/d(side params) into ``grads`` given d(loss)/d(output)."""
    _, proj, _ = params.side(side)
    d_pre = d_out * (1.0 - cache.out ** 2)
    grads[f"{side}_projection"] += np.outer(d_pre, cache.mean)
    grads[f"{side}_bias"] += d_pre
    if len(cache.ids):
        d_mean = proj.T @ d_pre
        np.add.at(grads[f"{side}_embedding"], cache.ids, d_mean / len(cache.ids))


def zero_grads(params: DualEncoderParams, sides: Sequence[str] = SIDES) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.arrays.items()
            if k.split("_", 1)[0] in sides}


def score(params: DualEncoderParams, x_tokens: Sequence[str], z_vec: np.ndarray) -> float:
    """Inner product between the encoded query and a precomputed document vector."""
    z_vec = np.asarray(z_vec, dtype=float)
    if z_vec.shape != (params.dim,):
        raise ValueError(f"document vector has shape {z_vec.shape}, expected ({params.dim},)")
    return float(encode(params, "query", x_tokens) @ z_vec)


def grad_check(loss_fn: Callable[[dict], tuple[float, dict]], params: dict[str, np.ndarray],
               epsilon: float = 1e-6, names: Sequence[str] | None = None) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn(params)`` returns ``(loss, grads)``; ``params`` maps names to
    arrays that are perturbed in place (and restored). Only the arrays listed
    in ``names`` (default: all keys of the analytic gradient) are checked.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    loss, grads = loss_fn(params)
    if not np.isfinite(loss):
        raise FloatingPointError("loss is not finite")
    names = list(grads) if names is None else list(names)
    worst = 0.0
    for name in names:
        arr = params[name]
        analytic = grads[name]
        flat = arr.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            plus = loss_fn(params)[0]
            flat[i] = orig - epsilon
            minus = loss_fn(params)[0]
            flat[i] = orig
            if not (np.isfinite(plus) and np.isfinite(minus)):
                raise FloatingPointError(f"non-finite loss while perturbing {name}[{i}]")
            numeric = (plus - minus) / (2 * epsilon)
            a = analytic.reshape(-1)[i]
            err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            worst = max(worst, err)
    return worst
