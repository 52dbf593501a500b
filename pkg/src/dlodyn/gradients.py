"""Exact gradients of scalar losses over a flat parameter vector, plus a
finite-difference auditor.

The toolkit's differentiable operations (kinematics, dynamics, torque
networks, the implicit integrator) compose into scalar losses; gradients
are exact reverse-mode derivatives, with implicit-function corrections at
the Newton solves inside implicit integration steps.  ``fd_check`` is the
contract: central finite differences must agree coordinate-wise.
"""

from __future__ import annotations

from typing import Callable, NamedTuple, Optional

import jax
import jax.numpy as jnp
import numpy as np
from jax.flatten_util import ravel_pytree

Array = jnp.ndarray


def _leaf_names(tree) -> list[str]:
    paths_and_leaves, _ = jax.tree_util.tree_flatten_with_path(tree)
    names = []
    for path, _leaf in paths_and_leaves:
        parts = []
        for entry in path:
            if hasattr(entry, "name"):
                parts.append(str(entry.name))
            elif hasattr(entry, "key"):
                parts.append(str(entry.key))
            elif hasattr(entry, "idx"):
                parts.append(str(entry.idx))
            else:
                parts.append(str(entry))
        names.append("/".join(parts))
    return names


class FlatParams:
    """A pytree of optimization variables flattened into one real vector.

    ``layout`` maps slash-separated leaf names to slices of the vector;
    encode/decode round-trips bit-exactly (flattening is concatenation).
    """

    def __init__(self, vector: Array, layout: dict, unravel: Callable):
        self.vector = vector
        self.layout = layout
        self.unravel = unravel

    @classmethod
    def from_pytree(cls, tree) -> "FlatParams":
        vector, unravel = ravel_pytree(tree)
        leaves = jax.tree_util.tree_leaves(tree)
        names = _leaf_names(tree)
        layout, offset = {}, 0
        for name, leaf in zip(names, leaves):
            size = int(np.prod(jnp.shape(leaf))) if jnp.ndim(leaf) else 1
            layout[name] = slice(offset, offset + size)
            offset += size
        return cls(vector=vector, layout=layout, unravel=unravel)

    def to_pytree(self):
        return self.unravel(self.vector)

    def replace(self, vector: Array) -> "FlatParams":
        return FlatParams(vector=vector, layout=self.layout, unravel=self.unravel)

    def mask_for(self, predicate: Callable[[str], bool]) -> np.ndarray:
        """Boolean mask over the vector selecting leaves whose name matches."""
        mask = np.zeros(self.vector.shape[0], dtype=bool)
        for name, sl in self.layout.items():
            if predicate(name):
                mask[sl] = True
        return mask

    def __len__(self) -> int:
        return int(self.vector.shape[0])


def gradient(loss_fn: Callable[[Array], Array], p) -> Array:
    """Exact derivative of a scalar ``loss_fn`` at ``p``.

    ``p`` may be a plain vector or a :class:`FlatParams`; the result has the
    same length.  Reverse-mode; deterministic for fixed inputs.
    """
    vector = p.vector if isinstance(p, FlatParams) else jnp.asarray(p, jnp.float64)
    return jax.grad(loss_fn)(vector)


class FdReport(NamedTuple):
    max_rel_err: float
    worst_index: int
    grad: np.ndarray      # audited gradient
    fd: np.ndarray        # central-difference reference
    rel_err: np.ndarray   # per-coordinate relative error (NaN where below floor)


def fd_check(loss_fn: Callable[[Array], Array], p, h: float = 1e-6,
             abs_floor: float = 1e-8, grad_vec: Optional[Array] = None) -> FdReport:
    """Audit ``gradient`` against central finite differences.

    ``h`` is a relative step (scaled per coordinate by ``max(1, |p_i|)``).
    Coordinates where both the gradient and the difference quotient fall
    below ``abs_floor`` in magnitude are skipped (their relative error is
    meaningless).  ``grad_vec`` overrides the audited gradient, which lets
    callers check externally produced gradients.
    """
    if h <= 0:
        raise ValueError("finite-difference step must be positive")
    vector = np.asarray(p.vector if isinstance(p, FlatParams) else p, dtype=float)
    g = np.asarray(grad_vec if grad_vec is not None else gradient(loss_fn, vector))

    fd = np.zeros_like(vector)
    for i in range(vector.shape[0]):
        hi = h * max(1.0, abs(vector[i]))
        up = vector.copy()
        up[i] += hi
        down = vector.copy()
        down[i] -= hi
        fd[i] = (float(loss_fn(jnp.asarray(up))) - float(loss_fn(jnp.asarray(down)))) / (2 * hi)

    scale = np.maximum(np.abs(fd), np.abs(g))
    active = scale > abs_floor
    rel = np.full_like(vector, np.nan)
    rel[active] = np.abs(g[active] - fd[active]) / scale[active]
    if active.any():
        worst = int(np.nanargmax(rel))
        max_rel = float(rel[worst])
    else:
        worst, max_rel = 0, 0.0
    return FdReport(max_rel_err=max_rel, worst_index=worst, grad=g, fd=fd, rel_err=rel)
