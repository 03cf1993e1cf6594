"""Pure-numpy implementations of the solver inner-loop kernels.

These are the semantics of record; the optional Cython extension
(``_cykernels``) mirrors them. Backend selection lives in
``declip.kernels``.
"""

from __future__ import annotations

import numpy as np

# Group magnitudes below this floor are ordered as exact zeros so the
# lowest-index tie rule is platform independent.
MAG_FLOOR = 1e-14

KIND_RELIABLE = 0
KIND_CLIP_POS = 1
KIND_CLIP_NEG = 2


def spectrum_hard_threshold(v, k, add=None):
    """Keep the ``k`` largest-magnitude coefficients of ``v + add``.

    ``v`` is a full complex spectrum of even length p. Bins ``j`` and
    ``p - j`` are kept or dropped together so that real signals stay real
    under the inverse transform; a kept pair consumes 2 from the budget
    ``k`` while the DC and Nyquist bins consume 1. Groups are ranked by
    magnitude (a pair by its larger member), ties broken toward the lower
    bin index, and the greedy walk stops at the first group that no
    longer fits the remaining budget.

    Returns ``(thresholded copy, number of coefficients kept)``. Inputs
    are never mutated.
    """
    p = v.shape[0]
    w = v + add if add is not None else v.copy()
    if k <= 0:
        w[:] = 0.0
        return w, 0
    if k >= p:
        return w, p
    h = p // 2
    mags = np.abs(w)
    gm = np.empty(h + 1, dtype=np.float64)
    gm[0] = mags[0]
    gm[h] = mags[h]
    if h > 1:
        np.maximum(mags[1:h], mags[:h:-1], out=gm[1:h])
    gm[gm < MAG_FLOOR] = 0.0
    order = np.argsort(-gm, kind="stable")
    cost = np.where((order == 0) | (order == h), 1, 2)
    cum = np.cumsum(cost)
    n_keep = int(np.searchsorted(cum, k, side="right"))
    kept_groups = order[:n_keep]
    keep = np.zeros(p, dtype=bool)
    keep[kept_groups] = True
    pairs = kept_groups[(kept_groups != 0) & (kept_groups != h)]
    keep[p - pairs] = True
    w[~keep] = 0.0
    return w, (int(cum[n_keep - 1]) if n_keep else 0)


def project_clip(v, kind, bound):
    """Componentwise projection onto the clipping-consistency set.

    Reliable entries (kind 0) are pinned to ``bound``, clipped-positive
    entries (kind 1) are floored at ``bound``, clipped-negative entries
    (kind 2) are capped at ``bound``.
    """
    return np.where(
        kind == KIND_CLIP_POS,
        np.maximum(v, bound),
        np.where(kind == KIND_CLIP_NEG, np.minimum(v, bound), bound),
    )


def project_clip_complex(w, kind, bound):
    """Project a complex signal-domain vector: clamp the real part, zero the imaginary part."""
    out = np.zeros(w.shape[0], dtype=np.complex128)
    out.real = project_clip(np.ascontiguousarray(w.real), kind, bound)
    return out


def diff_norm(a, b):
    """Euclidean norm of ``a - b``."""
    return float(np.linalg.norm(a - b))


def accumulate_diff(u, a, b):
    """In-place ``u += a - b`` (same per-element rounding as the compiled kernel)."""
    u += a - b
