"""Triplet-embedding regularization over precomputed vectors.

The model side fuses the human/interaction/object feature vectors of each
candidate pair through a small MLP; the loss is the summed distance (l1 or
negative cosine) between those fused vectors and target text embeddings,
restricted by a ground-truth mask. Everything here is 64-bit numpy with
analytic gradients, verified against central finite differences.

The text targets come from an external embedding pipeline; this module only
emits the caption strings it should embed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

DEFAULT_FEATURE_DIM = 64
DEFAULT_EMBED_DIM = 64
DEFAULT_HIDDEN_DIM = 128

_ACTIVATIONS = ("relu", "tanh", "identity")


class DivergenceError(RuntimeError):
    pass


@dataclass
class MlpParams:
    """Affine + activation stack; layers are (weight (out,in), bias (out,),
    activation name)."""

    layers: list[tuple[np.ndarray, np.ndarray, str]]

    def __post_init__(self):
        prev = None
        for w, b, act in self.layers:
            if act not in _ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ValueError("incompatible weight/bias shapes")
            if prev is not None and w.shape[1] != prev:
                raise ValueError("adjacent layer dims incompatible")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ValueError("parameters must be finite")
            prev = w.shape[0]

    @property
    def input_dim(self) -> int:
        return self.layers[0][0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1][0].shape[0]

    def copy(self) -> "MlpParams":
        return MlpParams([(w.copy(), b.copy(), act) for w, b, act in self.layers])

    def flat(self) -> np.ndarray:
        return np.concatenate([np.concatenate([w.ravel(), b]) for w, b, _ in self.layers])

    def with_flat(self, values: np.ndarray) -> "MlpParams":
        layers = []
        pos = 0
        for w, b, act in self.layers:
            nw, nb = w.size, b.size
            layers.append((
                values[pos:pos + nw].reshape(w.shape).copy(),
                values[pos + nw:pos + nw + nb].copy(),
                act,
            ))
            pos += nw + nb
        return MlpParams(layers)


def random_mlp(rng: np.random.Generator, d_in: int,
               hidden: tuple[int, ...] = (DEFAULT_HIDDEN_DIM,),
               d_out: int = DEFAULT_EMBED_DIM,
               hidden_activation: str = "tanh") -> MlpParams:
    dims = (d_in, *hidden, d_out)
    layers = []
    for i in range(len(dims) - 1):
        scale = 1.0 / np.sqrt(dims[i])
        w = rng.normal(0.0, scale, size=(dims[i + 1], dims[i]))
        b = rng.normal(0.0, 0.01, size=dims[i + 1])
        act = hidden_activation if i < len(dims) - 2 else "identity"
        layers.append((w, b, act))
    return MlpParams(layers)


def _activate(pre: np.ndarray, act: str) -> np.ndarray:
    if act == "relu":
        return np.maximum(pre, 0.0)
    if act == "tanh":
        return np.tanh(pre)
    return pre


def _activate_grad(pre: np.ndarray, act: str) -> np.ndarray:
    if act == "relu":
        return (pre > 0.0).astype(pre.dtype)
    if act == "tanh":
        return 1.0 - np.tanh(pre) ** 2
    return np.ones_like(pre)


def mlp_forward(params: MlpParams, f_human: np.ndarray, f_inter: np.ndarray,
                f_obj: np.ndarray):
    """Fused vector for one cell: the MLP applied to the concatenation.
    Returns (output, cache) where the cache feeds the backward pass."""
    x = np.concatenate([f_human, f_inter, f_obj]).astype(np.float64)
    if x.shape[0] != params.input_dim:
        raise ValueError(
            f"concatenated input dim {x.shape[0]} != MLP input dim {params.input_dim}"
        )
    out, cache = _forward_batch(params, x[None, :])
    return out[0], cache


def _forward_batch(params: MlpParams, x: np.ndarray):
    cache = []
    cur = x
    for w, b, act in params.layers:
        pre = cur @ w.T + b
        cache.append((cur, pre, act))
        cur = _activate(pre, act)
    return cur, cache


def _backward_batch(params: MlpParams, cache, d_out: np.ndarray):
    """Gradients of a scalar loss wrt every parameter, given dL/d(output)."""
    grads = [None] * len(params.layers)
    cur = d_out
    for idx in range(len(params.layers) - 1, -1, -1):
        w, _, _ = params.layers[idx]
        inp, pre, act = cache[idx]
        dpre = cur * _activate_grad(pre, act)
        grads[idx] = (dpre.T @ inp, dpre.sum(axis=0))
        cur = dpre @ w
    return grads


def pair_distance(metric: str, f: np.ndarray, e: np.ndarray):
    """Distance between one fused vector and its target, plus the gradient
    with respect to ``f``. l1 uses the sign subgradient (0 at ties)."""
    f = np.asarray(f, dtype=np.float64)
    e = np.asarray(e, dtype=np.float64)
    if f.shape != e.shape:
        raise ValueError("vector dims differ")
    if metric == "l1":
        diff = f - e
        return float(np.abs(diff).sum()), np.sign(diff)
    if metric == "neg_cosine":
        nf = np.linalg.norm(f)
        ne = np.linalg.norm(e)
        if nf == 0.0 or ne == 0.0:
            raise ZeroDivisionError("neg_cosine requires nonzero vectors")
        cos = float(f @ e) / (nf * ne)
        grad = -e / (nf * ne) + cos * f / (nf * nf)
        return -cos, grad
    raise ValueError(f"unknown metric {metric!r}")


@dataclass
class EmbeddingBatch:
    """K x K grid of candidate subject-object pairs: per cell the three
    pre-fusion feature vectors, the target text embedding, and whether the
    cell corresponds to a ground-truth relation. The diagonal (a pair with
    itself) is always masked out."""

    f_human: np.ndarray  # (K, K, D_f)
    f_inter: np.ndarray
    f_obj: np.ndarray
    e_text: np.ndarray   # (K, K, D_e)
    gt_mask: np.ndarray  # (K, K) bool

    def __post_init__(self):
        k = self.gt_mask.shape[0]
        if self.gt_mask.shape != (k, k):
            raise ValueError("mask must be square")
        for name in ("f_human", "f_inter", "f_obj"):
            arr = getattr(self, name)
            if arr.shape[:2] != (k, k):
                raise ValueError(f"{name} grid shape mismatch")
        if self.e_text.shape[:2] != (k, k):
            raise ValueError("e_text grid shape mismatch")
        if bool(np.diag(self.gt_mask).any()):
            raise ValueError("diagonal cells must be masked out")

    @property
    def k(self) -> int:
        return self.gt_mask.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.f_human.shape[2]

    @property
    def embed_dim(self) -> int:
        return self.e_text.shape[2]

    def masked_cells(self) -> list[tuple[int, int]]:
        return [(i, j) for i in range(self.k) for j in range(self.k) if self.gt_mask[i, j]]


def random_batch(rng: np.random.Generator, k: int = 4,
                 d_f: int = DEFAULT_FEATURE_DIM, d_e: int = DEFAULT_EMBED_DIM,
                 mask_density: float = 0.5) -> EmbeddingBatch:
    mask = rng.random((k, k)) < mask_density
    np.fill_diagonal(mask, False)
    if not mask.any():
        mask[0, min(1, k - 1)] = k > 1
    return EmbeddingBatch(
        f_human=rng.normal(size=(k, k, d_f)),
        f_inter=rng.normal(size=(k, k, d_f)),
        f_obj=rng.normal(size=(k, k, d_f)),
        e_text=rng.normal(size=(k, k, d_e)),
        gt_mask=mask,
    )


def tri_emb_loss(f_model: np.ndarray, batch: EmbeddingBatch, metric: str):
    """Masked sum of per-cell distances and gradients wrt every fused vector.
    Gradients are exactly zero wherever the mask is false."""
    if f_model.shape != batch.e_text.shape:
        raise ValueError("fused grid must match target grid shape")
    total = 0.0
    grads = np.zeros_like(f_model, dtype=np.float64)
    for i, j in batch.masked_cells():
        value, grad = pair_distance(metric, f_model[i, j], batch.e_text[i, j])
        total += value
        grads[i, j] = grad
    return total, grads


def fused_forward(params: MlpParams, batch: EmbeddingBatch):
    """MLP outputs for the masked cells only (unmasked cells never touch the
    loss). Returns (f_model grid, cache, cells)."""
    cells = batch.masked_cells()
    f_model = np.zeros((batch.k, batch.k, params.output_dim))
    if not cells:
        return f_model, None, cells
    x = np.stack([
        np.concatenate([batch.f_human[i, j], batch.f_inter[i, j], batch.f_obj[i, j]])
        for i, j in cells
    ]).astype(np.float64)
    out, cache = _forward_batch(params, x)
    for row, (i, j) in enumerate(cells):
        f_model[i, j] = out[row]
    return f_model, cache, cells


def loss_and_param_grads(params: MlpParams, batch: EmbeddingBatch, metric: str):
    """Masked embedding loss through the MLP and its gradient wrt every
    parameter."""
    f_model, cache, cells = fused_forward(params, batch)
    loss, cell_grads = tri_emb_loss(f_model, batch, metric)
    if not cells:
        zeros = [(np.zeros_like(w), np.zeros_like(b)) for w, b, _ in params.layers]
        return loss, zeros
    d_out = np.stack([cell_grads[i, j] for i, j in cells])
    return loss, _backward_batch(params, cache, d_out)


def total_loss(l_model: float, l_tri_emb: float, lambda_clip: float) -> float:
    if lambda_clip < 0:
        raise ValueError("lambda_clip must be >= 0")
    return l_model + lambda_clip * l_tri_emb


def finite_diff_check(params: MlpParams, batch: EmbeddingBatch, metric: str,
                      h: float = 1e-5) -> float:
    """Max over parameter coordinates of the discrepancy between the analytic
    gradient and central differences, relative to max(|g|, 1).

    For l1 the inputs must sit away from sign-change neighborhoods (callers
    sample ties at least ~10h apart), otherwise the subgradient is compared
    against a kinked difference quotient.
    """
    if h <= 0:
        raise ValueError("step h must be > 0")
    _, grads = loss_and_param_grads(params, batch, metric)
    analytic = np.concatenate([np.concatenate([gw.ravel(), gb]) for gw, gb in grads])
    flat = params.flat()
    numeric = np.zeros_like(analytic)
    for idx in range(flat.size):
        bumped = flat.copy()
        bumped[idx] = flat[idx] + h
        up, _ = loss_and_param_grads(params.with_flat(bumped), batch, metric)
        bumped[idx] = flat[idx] - h
        down, _ = loss_and_param_grads(params.with_flat(bumped), batch, metric)
        numeric[idx] = (up - down) / (2.0 * h)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1.0)
    return float(np.max(np.abs(analytic - numeric) / denom))


def toy_descent(params: MlpParams, batch: EmbeddingBatch, metric: str,
                steps: int, learning_rate: float) -> list[float]:
    """Plain gradient descent on the MLP parameters; returns the loss before
    each update plus the final loss (steps + 1 values)."""
    if learning_rate < 0:
        raise ValueError("learning rate must be >= 0")
    current = params.copy()
    trajectory = []
    increases = 0
    for _ in range(steps):
        loss, grads = loss_and_param_grads(current, batch, metric)
        if trajectory and loss > trajectory[-1]:
            increases += 1
            if increases >= 5:
                raise DivergenceError(f"loss increased 5 consecutive steps (now {loss})")
        else:
            increases = 0
        trajectory.append(loss)
        for (w, b, _), (gw, gb) in zip(current.layers, grads):
            w -= learning_rate * gw
            b -= learning_rate * gb
    final, _ = loss_and_param_grads(current, batch, metric)
    trajectory.append(final)
    return trajectory


_VOWELS = "aeiou"


def caption_for_triplet(relation: str, object_class: str) -> str:
    """Caption handed to an external text-embedding pipeline."""
    article = "an" if object_class[:1].lower() in _VOWELS else "a"
    return f"A scene of a person {relation} {article} {object_class}"


def save_embedding_batch(batch: EmbeddingBatch, metric: str, path: str) -> None:
    """Header line (K, dims, metric) then one record per cell, row-major."""
    with open(path, "w", encoding="utf-8") as fh:
        header = {"k": batch.k, "d_f": batch.feature_dim,
                  "d_e": batch.embed_dim, "metric": metric}
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for i in range(batch.k):
            for j in range(batch.k):
                rec = {
                    "i": i, "j": j,
                    "f_human": batch.f_human[i, j].tolist(),
                    "f_inter": batch.f_inter[i, j].tolist(),
                    "f_obj": batch.f_obj[i, j].tolist(),
                    "e_text": batch.e_text[i, j].tolist(),
                    "gt": bool(batch.gt_mask[i, j]),
                }
                fh.write(json.dumps(rec, sort_keys=True) + "\n")


def load_embedding_batch(path: str) -> tuple[EmbeddingBatch, str]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty batch file")
    try:
        header = json.loads(lines[0])
        k, d_f, d_e = int(header["k"]), int(header["d_f"]), int(header["d_e"])
        metric = str(header["metric"])
        fh_arr = np.zeros((k, k, d_f))
        fi_arr = np.zeros((k, k, d_f))
        fo_arr = np.zeros((k, k, d_f))
        et_arr = np.zeros((k, k, d_e))
        mask = np.zeros((k, k), dtype=bool)
        if len(lines) - 1 != k * k:
            raise ValueError(f"expected {k * k} cell records, got {len(lines) - 1}")
        for ln in lines[1:]:
            rec = json.loads(ln)
            i, j = int(rec["i"]), int(rec["j"])
            fh_arr[i, j] = rec["f_human"]
            fi_arr[i, j] = rec["f_inter"]
            fo_arr[i, j] = rec["f_obj"]
            et_arr[i, j] = rec["e_text"]
            mask[i, j] = bool(rec["gt"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"{path}: malformed embedding batch: {exc}") from None
    return EmbeddingBatch(fh_arr, fi_arr, fo_arr, et_arr, mask), metric
