"""Tight DFT frame operators and windowed overlap-add block processing.

The analysis operator zero-pads a length-n chunk to ``p = redundancy * n``
samples and applies the unitary DFT of size p; synthesis is the exact
adjoint (unitary inverse DFT followed by truncation). Under this
normalization the frame constant is 1 for every redundancy, so analysis
is an isometry and ``adjoint(analyze(x)) == x``.

Block processing uses a square-rooted periodic Hamming window on both the
analysis and synthesis side, with the overlap-add normalizer accumulated
numerically. Signals are zero-padded by ``chunk_len - hop`` on each side
(padding marked reliable with value 0) so every real sample gets full
window coverage; clip constraints inside a windowed chunk use per-sample
scaled bounds ``w*tau`` and pinned values ``w*y``, which a strictly
positive window preserves exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .clipmodel import ClippedSignal
from .kernels import KIND_CLIP_NEG, KIND_CLIP_POS


class FrameOperator:
    """Tight time-frequency transform pair at integer redundancy."""

    def __init__(self, n: int, redundancy: int):
        n = int(n)
        redundancy = int(redundancy)
        if n < 2 or (n & (n - 1)) != 0:
            raise ValueError(f"chunk length must be a power of two >= 2, got {n}")
        if redundancy < 1:
            raise ValueError(f"redundancy must be a positive integer, got {redundancy}")
        self.n = n
        self.redundancy = redundancy
        self.p = n * redundancy
        self.zeta = 1.0

    def __repr__(self):
        return f"FrameOperator(n={self.n}, redundancy={self.redundancy})"

    def analyze(self, x) -> np.ndarray:
        """Coefficients of a real chunk: unitary DFT of the zero-padded signal."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.n,):
            raise ValueError(f"expected a real vector of length {self.n}, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("chunk contains non-finite samples")
        return self._forward(x)

    def synthesize(self, z, imag_tol: float = 1e-10) -> np.ndarray:
        """Adjoint of :meth:`analyze`, returned as a real chunk.

        Raises if the imaginary residue exceeds ``imag_tol`` (relative to
        the output scale), which signals a coefficient vector violating
        conjugate symmetry.
        """
        z = np.asarray(z, dtype=np.complex128)
        if z.shape != (self.p,):
            raise ValueError(f"expected a coefficient vector of length {self.p}, got shape {z.shape}")
        w = self._adjoint(z)
        scale = max(1.0, float(np.max(np.abs(w)))) if w.size else 1.0
        residue = float(np.max(np.abs(w.imag))) if w.size else 0.0
        if residue > imag_tol * scale:
            raise ValueError(
                f"coefficients are not conjugate-symmetric: imaginary residue {residue:.3e}"
            )
        return np.ascontiguousarray(w.real)

    # Unchecked transform core, shared by the solvers (accepts complex input).
    def _forward(self, v) -> np.ndarray:
        return np.fft.fft(v, n=self.p, norm="ortho")

    def _adjoint(self, z) -> np.ndarray:
        return np.fft.ifft(z, norm="ortho")[: self.n]

    def _adjoint_real(self, z) -> np.ndarray:
        return np.ascontiguousarray(np.fft.ifft(z, norm="ortho")[: self.n].real)


def make_dft_frame(n: int, redundancy: int) -> FrameOperator:
    """Zero-padded unitary DFT frame (frame constant 1 at any redundancy)."""
    return FrameOperator(n, redundancy)


def sqrt_hamming_window(n: int) -> np.ndarray:
    """Square root of the periodic (DFT-even) Hamming window; strictly positive."""
    if n < 2:
        raise ValueError("window length must be at least 2")
    return np.sqrt(0.54 - 0.46 * np.cos(2.0 * np.pi * np.arange(n) / n))


@dataclass(frozen=True)
class ChunkPlan:
    """Chunking geometry and overlap-add normalization for one signal length."""

    signal_len: int
    chunk_len: int
    hop: int
    pad: int
    n_chunks: int
    padded_len: int
    window: np.ndarray
    ola_norm: np.ndarray

    def __post_init__(self):
        self.window.flags.writeable = False
        self.ola_norm.flags.writeable = False


def make_chunk_plan(signal_len: int, chunk_len: int = 1024, hop: int = 256) -> ChunkPlan:
    """Plan for sliding-window processing with ``chunk_len``/``hop`` (default 75% overlap)."""
    signal_len = int(signal_len)
    chunk_len = int(chunk_len)
    hop = int(hop)
    if signal_len < 1:
        raise ValueError("signal must contain at least one sample")
    if chunk_len < 2:
        raise ValueError("chunk length must be at least 2")
    if not (1 <= hop <= chunk_len):
        raise ValueError(f"hop must lie in [1, chunk_len], got {hop}")
    pad = chunk_len - hop
    span = signal_len + 2 * pad
    n_chunks = max(1, math.ceil((span - chunk_len) / hop) + 1)
    padded_len = (n_chunks - 1) * hop + chunk_len
    window = sqrt_hamming_window(chunk_len)
    ola = np.zeros(padded_len)
    wsq = window * window
    for t in range(n_chunks):
        ola[t * hop : t * hop + chunk_len] += wsq
    if float(ola.min()) <= 0.0:
        raise ValueError("overlap-add normalizer is not strictly positive")
    return ChunkPlan(
        signal_len=signal_len,
        chunk_len=chunk_len,
        hop=hop,
        pad=pad,
        n_chunks=n_chunks,
        padded_len=padded_len,
        window=window,
        ola_norm=ola,
    )


@dataclass(frozen=True)
class WindowedChunk:
    """One windowed block of a clipped signal, with its scaled constraints.

    ``samples`` holds the windowed observation ``w * y``; ``bound`` holds
    the per-sample constraint values (``w*y`` where pinned, ``+-w*tau``
    where clipped) and ``kind`` the constraint type codes.
    """

    index: int
    start: int
    samples: np.ndarray
    kind: np.ndarray
    bound: np.ndarray
    n_clipped: int

    def __post_init__(self):
        for arr in (self.samples, self.kind, self.bound):
            arr.flags.writeable = False


def chunk_signal(clipped: ClippedSignal, plan: ChunkPlan) -> list[WindowedChunk]:
    """Split a clipped signal into windowed chunks with restricted masks."""
    if clipped.n != plan.signal_len:
        raise ValueError(f"plan was built for length {plan.signal_len}, signal has {clipped.n}")
    pad, total = plan.pad, plan.padded_len
    y = np.zeros(total)
    y[pad : pad + clipped.n] = clipped.samples
    kind = np.zeros(total, dtype=np.int8)
    kind[pad : pad + clipped.n] = clipped.mask.kind
    bound = y.copy()
    tau = clipped.mask.tau
    bound[kind == KIND_CLIP_POS] = tau
    bound[kind == KIND_CLIP_NEG] = -tau
    w = plan.window
    chunks = []
    for t in range(plan.n_chunks):
        sl = slice(t * plan.hop, t * plan.hop + plan.chunk_len)
        kind_t = np.ascontiguousarray(kind[sl])
        chunks.append(
            WindowedChunk(
                index=t,
                start=t * plan.hop,
                samples=w * y[sl],
                kind=kind_t,
                bound=w * bound[sl],
                n_clipped=int(np.count_nonzero(kind_t)),
            )
        )
    return chunks


def as_single_chunk(clipped: ClippedSignal) -> WindowedChunk:
    """View a whole clipped signal as one unwindowed chunk (unit window)."""
    bound = clipped.samples.copy()
    kind = clipped.mask.kind
    bound[kind == KIND_CLIP_POS] = clipped.mask.tau
    bound[kind == KIND_CLIP_NEG] = -clipped.mask.tau
    return WindowedChunk(
        index=0,
        start=0,
        samples=clipped.samples.copy(),
        kind=kind.copy(),
        bound=bound,
        n_clipped=clipped.mask.clipped_count,
    )


def overlap_add(chunks, plan: ChunkPlan) -> np.ndarray:
    """Weighted overlap-add resynthesis; exact inverse of :func:`chunk_signal`.

    ``chunks`` are windowed-domain blocks (as produced or restored); the
    synthesis window is applied again and the sum normalized by the
    accumulated squared window.
    """
    chunks = list(chunks)
    if len(chunks) != plan.n_chunks:
        raise ValueError(f"expected {plan.n_chunks} chunks, got {len(chunks)}")
    acc = np.zeros(plan.padded_len)
    w = plan.window
    for t, c in enumerate(chunks):
        c = np.asarray(c, dtype=np.float64)
        if c.shape != (plan.chunk_len,):
            raise ValueError(f"chunk {t} has shape {c.shape}, expected ({plan.chunk_len},)")
        acc[t * plan.hop : t * plan.hop + plan.chunk_len] += w * c
    acc /= plan.ola_norm
    return acc[plan.pad : plan.pad + plan.signal_len].copy()
