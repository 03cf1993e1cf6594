"""Hard-clipping observation model, consistency projection and SDR metrics.

A hard clipper replaces every sample of magnitude above the clip level
``tau`` by ``sign(x) * tau``. The sample index set splits into reliable,
clipped-positive and clipped-negative parts; a restored signal is
*consistent* when it matches the observation on reliable samples and
stays at or beyond the clip level on clipped ones. Everything here is a
pure function of its inputs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from . import kernels
from .kernels import KIND_CLIP_NEG, KIND_CLIP_POS

# Relative slack used when classifying samples against the clip level:
# exact equality with tau is unrealizable once a file went through 16-bit
# quantization, so anything within ETA_DETECT of the level counts as
# clipped (ties at the level included, by the conservative convention).
ETA_DETECT = 1e-6

# One PCM16 LSB. Rounding a float clip level to 16 bits can push stored
# clipped samples up to half an LSB past tau, which ETA_DETECT alone
# cannot absorb, so construction checks allow this much absolute slack.
PCM16_LSB = 2.0 ** -15

# Finite stand-in for an infinite SDR (zero distortion). The symmetric
# negative value caps the degenerate all-zero-reference case.
SDR_CAP_DB = 300.0


def _as_float_vector(x, name: str) -> np.ndarray:
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be a 1-D real vector, got shape {arr.shape}")
    return arr


def _as_index_array(idx) -> np.ndarray:
    arr = np.asarray(idx, dtype=np.int64).reshape(-1)
    return arr


@dataclass(frozen=True)
class ClipMask:
    """Partition of sample indices into reliable / clipped-positive / clipped-negative."""

    reliable: np.ndarray
    clipped_pos: np.ndarray
    clipped_neg: np.ndarray
    tau: float

    def __post_init__(self):
        object.__setattr__(self, "reliable", _as_index_array(self.reliable))
        object.__setattr__(self, "clipped_pos", _as_index_array(self.clipped_pos))
        object.__setattr__(self, "clipped_neg", _as_index_array(self.clipped_neg))
        object.__setattr__(self, "tau", float(self.tau))
        if not (self.tau > 0 and math.isfinite(self.tau)):
            raise ValueError(f"clip level tau must be finite and positive, got {self.tau}")
        n = self.n
        union = np.concatenate([self.reliable, self.clipped_pos, self.clipped_neg])
        if union.size != n or not np.array_equal(np.sort(union), np.arange(n)):
            raise ValueError("mask index sets must be disjoint and cover 0..n-1")
        for arr in (self.reliable, self.clipped_pos, self.clipped_neg):
            arr.flags.writeable = False

    @property
    def n(self) -> int:
        return self.reliable.size + self.clipped_pos.size + self.clipped_neg.size

    @property
    def clipped_count(self) -> int:
        return self.clipped_pos.size + self.clipped_neg.size

    @cached_property
    def kind(self) -> np.ndarray:
        """Per-sample kind codes (see declip.kernels KIND_* constants)."""
        kind = np.zeros(self.n, dtype=np.int8)
        kind[self.clipped_pos] = KIND_CLIP_POS
        kind[self.clipped_neg] = KIND_CLIP_NEG
        kind.flags.writeable = False
        return kind


@dataclass(frozen=True)
class ClippedSignal:
    """A clipped observation together with its mask."""

    samples: np.ndarray
    mask: ClipMask

    def __post_init__(self):
        samples = _as_float_vector(self.samples, "samples")
        object.__setattr__(self, "samples", samples)
        if samples.size != self.mask.n:
            raise ValueError(f"samples ({samples.size}) and mask ({self.mask.n}) lengths differ")
        tau = self.mask.tau
        slack = tau * ETA_DETECT + PCM16_LSB
        if samples.size and float(np.max(np.abs(samples))) > tau + slack:
            raise ValueError("clipped signal exceeds the clip level beyond quantization slack")
        if self.mask.clipped_pos.size and float(np.min(samples[self.mask.clipped_pos])) < tau - slack:
            raise ValueError("clipped-positive samples lie below the clip level")
        if self.mask.clipped_neg.size and float(np.max(samples[self.mask.clipped_neg])) > -tau + slack:
            raise ValueError("clipped-negative samples lie above the negative clip level")
        samples.flags.writeable = False

    @property
    def n(self) -> int:
        return self.samples.size


def hard_clip(x, tau: float) -> ClippedSignal:
    """Clip ``x`` at magnitude ``tau`` and record which rule fired per sample."""
    x = _as_float_vector(x, "x")
    if not np.all(np.isfinite(x)):
        raise ValueError("input signal contains non-finite samples")
    tau = float(tau)
    if not (tau > 0 and math.isfinite(tau)):
        raise ValueError(f"clip level tau must be finite and positive, got {tau}")
    pos = x > tau
    neg = x < -tau
    y = np.clip(x, -tau, tau)
    mask = ClipMask(
        reliable=np.flatnonzero(~(pos | neg)),
        clipped_pos=np.flatnonzero(pos),
        clipped_neg=np.flatnonzero(neg),
        tau=tau,
    )
    return ClippedSignal(samples=y, mask=mask)


def detect_mask(y, tau: float) -> ClipMask:
    """Classify samples of an observed signal against the clip level.

    A sample counts as clipped when it lies within ``ETA_DETECT`` relative
    slack of ``+-tau`` (or beyond), which absorbs PCM quantization of the
    level. On the output of :func:`hard_clip` this reproduces the clip-time
    mask whenever no original magnitude fell inside the slack band.
    """
    y = _as_float_vector(y, "y")
    if not np.all(np.isfinite(y)):
        raise ValueError("input signal contains non-finite samples")
    tau = float(tau)
    if not (tau > 0 and math.isfinite(tau)):
        raise ValueError(f"clip level tau must be finite and positive, got {tau}")
    thr = tau * (1.0 - ETA_DETECT)
    pos = y >= thr
    neg = y <= -thr
    return ClipMask(
        reliable=np.flatnonzero(~(pos | neg)),
        clipped_pos=np.flatnonzero(pos),
        clipped_neg=np.flatnonzero(neg),
        tau=tau,
    )


def project_consistent(v, clipped: ClippedSignal) -> np.ndarray:
    """Euclidean projection of ``v`` onto the consistency set of ``clipped``.

    Reliable samples are set to the observed values, clipped-positive ones
    are floored at them, clipped-negative ones capped. Idempotent and
    non-expansive.
    """
    v = _as_float_vector(v, "v")
    if v.size != clipped.n:
        raise ValueError(f"vector length {v.size} does not match signal length {clipped.n}")
    return kernels.project_clip(v, clipped.mask.kind, clipped.samples)


def sdr_clipped(reference, candidate, mask: ClipMask) -> float:
    """Signal-to-distortion ratio in dB, restricted to the clipped indices.

    ``20*log10(||x_c|| / ||x_c - v_c||)`` where the subscript stacks the
    clipped-positive and clipped-negative restrictions. Zero distortion
    returns ``+SDR_CAP_DB`` instead of infinity (and an all-zero clipped
    reference with nonzero distortion returns ``-SDR_CAP_DB``).
    """
    reference = _as_float_vector(reference, "reference")
    candidate = _as_float_vector(candidate, "candidate")
    if reference.size != candidate.size or reference.size != mask.n:
        raise ValueError("reference, candidate and mask lengths must agree")
    if mask.clipped_count == 0:
        raise ValueError("SDR over clipped indices is undefined: mask has no clipped samples")
    idx = np.concatenate([mask.clipped_pos, mask.clipped_neg])
    ref_c = reference[idx]
    num = float(np.linalg.norm(ref_c))
    den = float(np.linalg.norm(ref_c - candidate[idx]))
    if den == 0.0:
        return SDR_CAP_DB
    if num == 0.0:
        return -SDR_CAP_DB
    return 20.0 * math.log10(num / den)


def _sdr_of_level(x: np.ndarray, tau: float) -> float:
    clipped = hard_clip(x, tau)
    return sdr_clipped(x, clipped.samples, clipped.mask)


def find_tau_for_sdr(
    x,
    target_sdr_db: float,
    tol_db: float = 0.01,
    max_steps: int = 200,
) -> float:
    """Clip level whose degradation SDR matches ``target_sdr_db``.

    The clipped-index SDR is nondecreasing in tau, so a bisection over
    ``(0, max|x|)`` converges; the search stops once the re-evaluated SDR
    is within ``tol_db`` of the target.
    """
    x = _as_float_vector(x, "x")
    if not np.all(np.isfinite(x)):
        raise ValueError("input signal contains non-finite samples")
    target = float(target_sdr_db)
    if not math.isfinite(target):
        raise ValueError("target SDR must be finite")
    peak = float(np.max(np.abs(x))) if x.size else 0.0
    if peak == 0.0:
        raise ValueError("cannot clip an all-zero signal")
    lo = peak * 1e-9
    hi = peak * (1.0 - 1e-9)
    sdr_lo = _sdr_of_level(x, lo)
    sdr_hi = _sdr_of_level(x, hi)
    if not (sdr_lo - tol_db <= target <= sdr_hi + tol_db):
        raise ValueError(
            f"target SDR {target:g} dB is unattainable for this signal; "
            f"attainable range is [{sdr_lo:.3f}, {sdr_hi:.3f}] dB"
        )
    if abs(sdr_lo - target) <= tol_db:
        return lo
    if abs(sdr_hi - target) <= tol_db:
        return hi
    for _ in range(max_steps):
        mid = 0.5 * (lo + hi)
        sdr_mid = _sdr_of_level(x, mid)
        if abs(sdr_mid - target) <= tol_db:
            return mid
        if sdr_mid < target:
            lo = mid
        else:
            hi = mid
    raise ValueError(
        f"clip-level search did not reach {target:g} dB within {tol_db:g} dB "
        f"in {max_steps} steps (signal may be too short for this tolerance)"
    )


def save_mask(mask: ClipMask, path) -> None:
    """Write the mask sidecar (JSON: tau + sorted clipped index arrays)."""
    payload = {
        "tau": mask.tau,
        "clipped_pos": np.sort(mask.clipped_pos).tolist(),
        "clipped_neg": np.sort(mask.clipped_neg).tolist(),
    }
    Path(path).write_text(json.dumps(payload))


def load_mask(path, n_samples: int) -> ClipMask:
    """Read a mask sidecar; the reliable set is the complement of the clipped sets."""
    payload = json.loads(Path(path).read_text())
    try:
        tau = float(payload["tau"])
        pos = _as_index_array(payload["clipped_pos"])
        neg = _as_index_array(payload["clipped_neg"])
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed mask sidecar {path}: {exc}") from exc
    flags = np.zeros(n_samples, dtype=bool)
    if pos.size and (pos.min() < 0 or pos.max() >= n_samples):
        raise ValueError("mask sidecar indices out of range for this signal")
    if neg.size and (neg.min() < 0 or neg.max() >= n_samples):
        raise ValueError("mask sidecar indices out of range for this signal")
    flags[pos] = True
    flags[neg] = True
    return ClipMask(
        reliable=np.flatnonzero(~flags),
        clipped_pos=pos,
        clipped_neg=neg,
        tau=tau,
    )
