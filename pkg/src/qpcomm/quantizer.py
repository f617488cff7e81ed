"""Dual-codebook vector quantization.

Codebooks are learned with batch k-means whose centroid step is an
exponential-moving-average pull toward the current batch means.  With
zero-initialized EMA accumulators the first update lands exactly on the
batch means and every later update is a convex interpolation between the
previous entry and the new batch mean, so the training error is
non-increasing between refresh events.  Entries whose (bias-corrected) EMA
usage falls below ``dead_limit`` at a refresh point are re-seeded from a
reservoir sample of the data.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

KIND_OCC = "occ"
KIND_INT = "int"
_KIND_CODES = {KIND_OCC: 0, KIND_INT: 1}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}

QPCB_MAGIC = b"QPCB"
QPCB_VERSION = 1
FILL_TAG = b"FILL"


@dataclass
class QuantizerConfig:
    k: int
    dim: int
    dead_limit: int = 256
    ema_decay: float = 0.99
    refresh_period: int = 10
    reservoir_size: int = 4096
    seed: int = 0
    max_iters: int = 100
    tol: float = 1e-5

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("codebook size must be >= 1")
        if self.dim < 1:
            raise ValueError("vector dimension must be >= 1")
        if self.dead_limit < 0:
            raise ValueError("dead_limit must be non-negative")
        if not 0.0 < self.ema_decay < 1.0:
            raise ValueError("ema_decay must lie in (0, 1)")
        if self.refresh_period < 1 or self.reservoir_size < 1 or self.max_iters < 1:
            raise ValueError("refresh_period, reservoir_size, max_iters must be >= 1")


@dataclass
class TrainingTrace:
    """Per-pass mean quantization error and the iterations where a dead-code
    refresh fired.  Error is non-increasing on the segments between
    refreshes."""

    errors: list = field(default_factory=list)
    refresh_iters: list = field(default_factory=list)


@dataclass(eq=False)
class Codebook:
    entries: np.ndarray  # (K, D) float64
    usage: np.ndarray  # (K,) int64, assignment counts of the last pass
    ema_counts: np.ndarray  # (K,) float64
    ema_sums: np.ndarray  # (K, D) float64
    kind: str = KIND_OCC
    trace: TrainingTrace | None = None

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=np.float64)
        if self.entries.ndim != 2:
            raise ValueError("entries must be a (K, D) array")
        k = self.entries.shape[0]
        self.usage = np.asarray(self.usage, dtype=np.int64).reshape(k)
        self.ema_counts = np.asarray(self.ema_counts, dtype=np.float64).reshape(k)
        self.ema_sums = np.asarray(self.ema_sums, dtype=np.float64).reshape(self.entries.shape)
        if self.kind not in _KIND_CODES:
            raise ValueError(f"kind must be one of {sorted(_KIND_CODES)}")

    @classmethod
    def from_entries(cls, entries, kind: str = KIND_OCC) -> "Codebook":
        entries = np.asarray(entries, dtype=np.float64)
        k = entries.shape[0]
        return cls(entries, np.zeros(k, np.int64), np.zeros(k), np.zeros_like(entries), kind)

    @property
    def k(self) -> int:
        return self.entries.shape[0]

    @property
    def dim(self) -> int:
        return self.entries.shape[1]

    @property
    def codebook_id(self) -> int:
        """Content hash (CRC-32 of the float32 entry bytes); stable across a
        save/load cycle because QPCB stores entries as float32."""
        return zlib.crc32(self.entries.astype("<f4").tobytes())


def nearest(codebook: Codebook, z: np.ndarray) -> int:
    """Index of the codebook entry with minimum squared Euclidean distance to
    ``z``; ties break to the lowest index."""
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    if z.shape[0] != codebook.dim:
        raise ValueError(f"vector dim {z.shape[0]} != codebook dim {codebook.dim}")
    d = ((codebook.entries - z) ** 2).sum(axis=1)
    return int(np.argmin(d))


def _assign(vectors: np.ndarray, entries: np.ndarray, chunk: int = 8192) -> np.ndarray:
    """Nearest-entry index per row of ``vectors`` (n, D), lowest-index ties."""
    n = vectors.shape[0]
    idx = np.empty(n, dtype=np.int64)
    ent_sq = (entries**2).sum(axis=1)
    for start in range(0, n, chunk):
        block = vectors[start : start + chunk]
        d = ent_sq - 2.0 * (block @ entries.T)  # ||v||^2 constant per row
        idx[start : start + chunk] = np.argmin(d, axis=1)
    return idx


def quantize(codebook: Codebook, vectors: np.ndarray) -> tuple[np.ndarray, float]:
    """Element-wise nearest-entry assignment for an (h, w, D) vector grid (or
    a flat (n, D) batch).

    Returns ``(indices, commitment_error)`` where the commitment error is the
    mean over cells of the squared distance to the assigned entry.
    """
    vectors = np.asarray(vectors, dtype=np.float64)
    lead_shape = vectors.shape[:-1]
    if vectors.shape[-1] != codebook.dim:
        raise ValueError(f"vector dim {vectors.shape[-1]} != codebook dim {codebook.dim}")
    flat = vectors.reshape(-1, codebook.dim)
    if flat.shape[0] == 0:
        return np.empty(lead_shape, dtype=np.int64), 0.0
    idx = _assign(flat, codebook.entries)
    diff = flat - codebook.entries[idx]
    commitment = float((diff**2).sum(axis=1).mean())
    return idx.reshape(lead_shape), commitment


def _kmeanspp_init(samples: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = samples.shape[0]
    entries = np.empty((k, samples.shape[1]), dtype=np.float64)
    pick = int(rng.integers(n))
    entries[0] = samples[pick]
    min_d = ((samples - entries[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = float(min_d.sum())
        if total > 0.0:
            pick = int(rng.choice(n, p=min_d / total))
        else:
            # every sample already coincides with a chosen entry
            pick = int(rng.integers(n))
        entries[j] = samples[pick]
        min_d = np.minimum(min_d, ((samples - entries[j]) ** 2).sum(axis=1))
    return entries


def train_codebook(samples, cfg: QuantizerConfig, kind: str = KIND_OCC) -> Codebook:
    """Fit a codebook to ``samples`` ((N, D) array-like, N >= 1).

    Deterministic given (samples, cfg): k-means++ init, then at most
    ``cfg.max_iters`` assign/update passes, stopping early once the relative
    error improvement drops below ``cfg.tol`` and no entry is dead.  Dead
    entries (bias-corrected EMA usage below ``dead_limit``) are re-seeded
    from the reservoir every ``refresh_period`` iterations and at the would-be
    stopping point; with too little data per entry (N << K * dead_limit) some
    entries may still be below the limit at the iteration cap.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2 or samples.shape[0] == 0:
        raise ValueError("need a non-empty (N, D) sample array")
    if samples.shape[1] != cfg.dim:
        raise ValueError(f"sample dim {samples.shape[1]} != cfg.dim {cfg.dim}")
    n = samples.shape[0]
    rng = np.random.default_rng(cfg.seed)

    if n <= cfg.reservoir_size:
        reservoir = samples
    else:
        reservoir = samples[rng.choice(n, size=cfg.reservoir_size, replace=False)]

    entries = _kmeanspp_init(samples, cfg.k, rng)
    ema_counts = np.zeros(cfg.k)
    ema_sums = np.zeros_like(entries)
    age = np.zeros(cfg.k, dtype=np.int64)  # passes since (re)initialization
    trace = TrainingTrace()
    decay = cfg.ema_decay
    prev_err = None

    for it in range(1, cfg.max_iters + 1):
        idx = _assign(samples, entries)
        diff = samples - entries[idx]
        err = float((diff**2).sum(axis=1).mean())
        trace.errors.append(err)
        converged = prev_err is not None and (prev_err - err) <= cfg.tol * max(prev_err, 1e-300)
        prev_err = err

        counts = np.bincount(idx, minlength=cfg.k).astype(np.float64)
        sums = np.zeros_like(entries)
        np.add.at(sums, idx, samples)
        age += 1
        ema_counts = decay * ema_counts + (1.0 - decay) * counts
        ema_sums = decay * ema_sums + (1.0 - decay) * sums
        served = counts > 0
        entries[served] = ema_sums[served] / ema_counts[served, None]

        usage_est = ema_counts / (1.0 - decay**age)
        dead = usage_est < cfg.dead_limit
        # freshly re-seeded entries get a full period to attract points
        # before they can be declared dead again
        mature_dead = dead & (age >= min(cfg.refresh_period, cfg.max_iters))
        if converged and not dead.any():
            break
        if mature_dead.any() and (converged or it % cfg.refresh_period == 0):
            n_dead = int(mature_dead.sum())
            entries[mature_dead] = reservoir[rng.integers(len(reservoir), size=n_dead)]
            ema_counts[mature_dead] = 0.0
            ema_sums[mature_dead] = 0.0
            age[mature_dead] = 0
            trace.refresh_iters.append(it)
            prev_err = None  # refresh may bump the error; restart the stop test

    # final pass so usage reflects the returned entries
    idx = _assign(samples, entries)
    diff = samples - entries[idx]
    trace.errors.append(float((diff**2).sum(axis=1).mean()))
    usage = np.bincount(idx, minlength=cfg.k).astype(np.int64)
    return Codebook(entries, usage, ema_counts, ema_sums, kind, trace)


def train_dual(
    occ_samples, int_samples, cfg_occ: QuantizerConfig, cfg_int: QuantizerConfig
) -> tuple[Codebook, Codebook]:
    """Train the occupancy and intensity codebooks independently."""
    cb_occ = train_codebook(occ_samples, cfg_occ, kind=KIND_OCC)
    cb_int = train_codebook(int_samples, cfg_int, kind=KIND_INT)
    return cb_occ, cb_int


def write_codebook(path, codebook: Codebook, fill: np.ndarray | None = None) -> None:
    """Write the QPCB layout: magic, version, kind byte, K and D (u32 LE),
    K*D float32 entries, K u64 usage counters, then an optional trailing
    ``FILL`` block carrying one float32 D-vector."""
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(QPCB_MAGIC)
        fh.write(struct.pack("<B", QPCB_VERSION))
        fh.write(struct.pack("<B", _KIND_CODES[codebook.kind]))
        fh.write(struct.pack("<II", codebook.k, codebook.dim))
        fh.write(codebook.entries.astype("<f4").tobytes())
        fh.write(codebook.usage.astype("<u8").tobytes())
        if fill is not None:
            fill = np.asarray(fill, dtype=np.float64).reshape(-1)
            if fill.shape[0] != codebook.dim:
                raise ValueError("fill vector dimension must match the codebook")
            fh.write(FILL_TAG)
            fh.write(fill.astype("<f4").tobytes())


def read_codebook(path) -> tuple[Codebook, np.ndarray | None]:
    """Read a QPCB file; returns (codebook, fill vector or None).  EMA state
    is not persisted, so the loaded codebook starts with zeroed accumulators.
    """
    from .pcio import FormatError

    path = Path(path)
    data = path.read_bytes()
    if len(data) < 14 or data[:4] != QPCB_MAGIC:
        raise FormatError(f"{path}: not a QPCB file")
    if data[4] != QPCB_VERSION:
        raise FormatError(f"{path}: unsupported QPCB version {data[4]}")
    kind_code = data[5]
    if kind_code not in _KIND_NAMES:
        raise FormatError(f"{path}: unknown codebook kind {kind_code}")
    k, dim = struct.unpack_from("<II", data, 6)
    off = 14
    need = k * dim * 4 + k * 8
    if len(data) < off + need:
        raise FormatError(f"{path}: truncated QPCB body")
    entries = np.frombuffer(data, dtype="<f4", count=k * dim, offset=off).reshape(k, dim)
    off += k * dim * 4
    usage = np.frombuffer(data, dtype="<u8", count=k, offset=off).astype(np.int64)
    off += k * 8
    fill = None
    if len(data) > off:
        if data[off : off + 4] != FILL_TAG or len(data) < off + 4 + dim * 4:
            raise FormatError(f"{path}: malformed trailing block")
        fill = np.frombuffer(data, dtype="<f4", count=dim, offset=off + 4).astype(np.float64)
        off += 4 + dim * 4
        if len(data) != off:
            raise FormatError(f"{path}: trailing bytes after FILL block")
    cb = Codebook(
        entries.astype(np.float64),
        usage,
        np.zeros(k),
        np.zeros((k, dim)),
        _KIND_NAMES[kind_code],
    )
    return cb, fill
