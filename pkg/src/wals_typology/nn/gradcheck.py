"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

H = 1e-5


def _split(result):
    if isinstance(result, tuple):
        return result
    return result, None


def numerical_gradient(f: Callable, x: np.ndarray, h: float = H, coords=None):
    """Central differences of ``f`` w.r.t. ``x``, perturbing ``x`` in place.

    ``f`` returns a scalar, or ``(scalar, signature)`` where ``signature``
    identifies the piecewise-linear region the evaluation fell in. Returns
    ``(grad, kinked)``; ``kinked`` flags coordinates whose +h or -h
    evaluation changed region. ``coords`` restricts which flat indices are
    perturbed (others are reported as 0).
    """
    grad = np.zeros(x.shape, dtype=np.float64)
    kinked = np.zeros(x.shape, dtype=bool)
    _, base = _split(f())
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    k = kinked.reshape(-1)
    for i in range(flat.size) if coords is None else coords:
        old = flat[i]
        flat[i] = old + h
        fp, sp = _split(f())
        flat[i] = old - h
        fm, sm = _split(f())
        flat[i] = old
        g[i] = (fp - fm) / (2 * h)
        k[i] = base is not None and (sp != base or sm != base)
    return grad, kinked


def relative_error(analytic, numeric) -> float:
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    if analytic.size == 0:
        return 0.0
    denom = np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom))


@dataclass
class GradCheckResult:
    errors: dict = field(default_factory=dict)
    kinked: dict = field(default_factory=dict)
    checked: dict = field(default_factory=dict)

    @property
    def max_error(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0

    @property
    def kinked_fraction(self) -> float:
        total = sum(self.checked.values())
        return sum(self.kinked.values()) / total if total else 0.0


def grad_check(f: Callable, arrays: Mapping[str, np.ndarray],
               analytic: Mapping[str, np.ndarray], h: float = H, coords=None) -> GradCheckResult:
    """Max relative error per named array over coordinates that stayed in one smooth region.

    ``f`` must read the arrays in ``arrays`` (which are perturbed in place).
    Arrays must be float64. ``coords`` optionally maps names to the flat
    indices worth perturbing.
    """
    res = GradCheckResult()
    for name, x in arrays.items():
        if x.dtype != np.float64:
            raise TypeError(f"{name}: gradient checks need float64, got {x.dtype}")
        idx = None if coords is None else coords.get(name)
        num, kinked = numerical_gradient(f, x, h, idx)
        sel = np.zeros(x.shape, dtype=bool)
        sel.reshape(-1)[slice(None) if idx is None else idx] = True
        sel &= ~kinked
        res.errors[name] = relative_error(np.asarray(analytic[name])[sel], num[sel])
        res.kinked[name] = int(kinked.sum())
        res.checked[name] = int(sel.sum() + kinked.sum())
    return res


def check_model(model, batch, loss, dropout_seed: int = 0, train: bool = True,
                max_coords: int | None = None, coord_seed: int = 0) -> GradCheckResult:
    """Finite-difference check of every parameter of ``model`` on one batch.

    ``loss(logits, targets) -> (value, dlogits)``. Dropout masks are held
    fixed by reseeding; batchnorm running statistics are not touched.
    Embedding rows the batch never reads are skipped (their analytic
    gradient must be exactly zero; see the returned ``unused_rows_zero``).
    ``max_coords`` caps the coordinates perturbed per array, drawn at random.
    """

    def run():
        z, cache = model.forward(batch, train=train, rng=np.random.default_rng(dropout_seed),
                                 update_stats=False)
        return z, cache

    def f():
        z, cache = run()
        return float(loss(z, batch.targets)[0]), model.decision_signature(cache)

    z, cache = run()
    grads = model.backward(loss(z, batch.targets)[1], cache)
    W = model.params["embed/W"]
    used = np.unique(batch.ids[batch.ids != model.pad_id])
    coords = {name: np.arange(x.size) for name, x in model.params.items()}
    coords["embed/W"] = (used[:, None] * W.shape[1] + np.arange(W.shape[1])).ravel()
    if max_coords is not None:
        rng = np.random.default_rng(coord_seed)
        coords = {k: np.sort(rng.choice(v, size=min(max_coords, len(v)), replace=False))
                  for k, v in coords.items()}
    res = grad_check(f, model.params, grads, coords=coords)
    unused = np.setdiff1d(np.arange(W.shape[0]), used)
    res.unused_rows_zero = bool(np.all(grads["embed/W"][unused] == 0))
    return res
