# app/services/quant_service.py

import logging
import math
import struct
from typing import Sequence

import numpy as np
import pandas as pd
from pydantic import ValidationError

from app.models.quant import QuantizedPayload
from app.schemas.quant import ErrorDemand, ErrorReport, QuantSpec
from app.utils.exceptions import CorruptPayload, InvalidDemand, InvalidWeights
from app.utils.rng import SeedLike, Stream, stream

logger = logging.getLogger(__name__)

# [M:u64][L:u32][a:f64][grid_lo:f64][grid_hi:f64], little-endian, no padding
HEADER = struct.Struct("<QIddd")

# Bits per parameter of an unquantized float32 upload
FULL_PRECISION_BITS = 32

# Monte Carlo draws are processed in blocks of at most this many uniforms
_MC_BLOCK = 1 << 22


def check_weights(w) -> np.ndarray:
    """Return `w` as a 1-D float64 array or raise InvalidWeights."""
    arr = np.asarray(w, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise InvalidWeights("weight vector must be one-dimensional and nonempty")
    if not np.all(np.isfinite(arr)):
        raise InvalidWeights("weight vector holds non-finite entries")
    return arr


def level_for_demand(demand: ErrorDemand) -> tuple[int, int]:
    """
    Quantization level that meets the device's error demand.

    The raw optimum sqrt(delta / (2 Delta)) is rounded up to a power of two
    (at least 2) so indices pack into whole bits.
    """
    if not (demand.delta > 0 and demand.Delta > 0):
        raise InvalidDemand(
            f"demand must be positive (delta={demand.delta}, Delta={demand.Delta})"
        )
    raw = math.sqrt(demand.delta / (2.0 * demand.Delta))
    if not math.isfinite(raw):
        raise InvalidDemand("demand yields a non-finite level")
    bits = max(1, math.ceil(math.log2(raw)))
    # log2 rounding can land one off either way; settle on exact comparisons
    while (1 << bits) < raw:
        bits += 1
    while bits > 1 and (1 << (bits - 1)) >= raw:
        bits -= 1
    logger.debug("Demand %s -> L*=%.6g, bits=%d", demand, raw, bits)
    return 1 << bits, bits


def build_spec(w, levels: int) -> QuantSpec:
    """Symmetric grid over [-max|w|, max|w|]; an all-zero vector uses [-1, 1]."""
    arr = check_weights(w)
    if levels < 2 or levels & (levels - 1):
        raise InvalidWeights(f"levels must be a power of two >= 2, got {levels}")
    hi = float(np.max(np.abs(arr)))
    if hi == 0.0:
        hi = 1.0
    return QuantSpec(levels=levels, scale=hi, grid_lo=-hi, grid_hi=hi)


def grid_points(spec: QuantSpec) -> np.ndarray:
    return np.linspace(spec.grid_lo, spec.grid_hi, spec.levels)


def stochastic_round(w: np.ndarray, spec: QuantSpec, u: np.ndarray) -> np.ndarray:
    """
    Level indices for `w` given uniforms `u` (broadcast against w).

    Each entry goes to the upper neighbour q^{l+1} when u < (w - q^l) /
    (q^{l+1} - q^l), else to q^l. Entries outside the grid saturate.
    """
    grid = grid_points(spec)
    x = np.clip(w, spec.grid_lo, spec.grid_hi)
    lower = np.searchsorted(grid, x, side="right") - 1
    lower = np.clip(lower, 0, spec.levels - 2)
    frac = (x - grid[lower]) / (grid[lower + 1] - grid[lower])
    return lower + (u < frac)


def quantize(w, spec: QuantSpec, seed: SeedLike) -> QuantizedPayload:
    arr = check_weights(w)
    u = stream(seed).random(arr.shape[0])
    return QuantizedPayload(spec=spec, indices=stochastic_round(arr, spec, u))


def dequantize(p: QuantizedPayload) -> np.ndarray:
    idx = p.indices
    if idx.size and (idx.min() < 0 or idx.max() >= p.spec.levels):
        raise CorruptPayload(f"level index outside [0, {p.spec.levels})")
    return grid_points(p.spec)[idx]


def payload_bits(M: int, bits: int) -> int:
    """Bits charged for an upload: M*b. The fixed header is not included."""
    return int(M) * int(bits)


def header_bits() -> int:
    return HEADER.size * 8


def encode_payload(p: QuantizedPayload) -> bytes:
    """Header then ceil(M*b/8) bytes of b-bit indices packed LSB-first."""
    spec = p.spec
    b = spec.bits
    if p.indices.size and (p.indices.min() < 0 or p.indices.max() >= spec.levels):
        raise CorruptPayload(f"level index outside [0, {spec.levels})")
    header = HEADER.pack(
        p.dimension, spec.levels, spec.scale, spec.grid_lo, spec.grid_hi
    )
    shifts = np.arange(b, dtype=np.int64)
    bitplanes = ((p.indices[:, None] >> shifts) & 1).astype(np.uint8)
    body = np.packbits(bitplanes.ravel(), bitorder="little")
    return header + body.tobytes()


def decode_payload(data: bytes) -> QuantizedPayload:
    """
    Inverse of encode_payload. The header scale must equal grid_hi, as
    build_spec sets it, and padding bits after the last index must be zero.
    """
    if len(data) < HEADER.size:
        raise CorruptPayload(f"payload shorter than its {HEADER.size}-byte header")
    M, levels, scale, lo, hi = HEADER.unpack_from(data)
    if levels < 2 or levels & (levels - 1):
        raise CorruptPayload(f"header level count {levels} is not a power of two")
    if scale != hi:
        raise CorruptPayload(f"header scale {scale!r} differs from grid_hi {hi!r}")
    try:
        spec = QuantSpec(levels=levels, scale=scale, grid_lo=lo, grid_hi=hi)
    except ValidationError as exc:
        raise CorruptPayload(f"invalid header: {exc.errors()[0]['msg']}") from exc
    b = spec.bits
    expected = HEADER.size + (M * b + 7) // 8
    if len(data) != expected:
        raise CorruptPayload(f"expected {expected} bytes, got {len(data)}")
    body = np.frombuffer(data, dtype=np.uint8, offset=HEADER.size)
    bits = np.unpackbits(body, bitorder="little")
    if bits[M * b :].any():
        raise CorruptPayload("non-zero padding bits after the last index")
    bitplanes = bits[: M * b].reshape(M, b)
    weights = np.int64(1) << np.arange(b, dtype=np.int64)
    indices = bitplanes.astype(np.int64) @ weights
    return QuantizedPayload(spec=spec, indices=indices)


def _monte_carlo(arr: np.ndarray, spec: QuantSpec, trials: int, seed: SeedLike):
    """Yield blocks of dequantized draws, shape (rows, M), `trials` rows in all."""
    rng = stream(seed)
    grid = grid_points(spec)
    rows = max(1, _MC_BLOCK // arr.shape[0])
    done = 0
    while done < trials:
        n = min(rows, trials - done)
        u = rng.random((n, arr.shape[0]))
        yield grid[stochastic_round(arr, spec, u)]
        done += n


def empirical_error_report(
    w, spec: QuantSpec, trials: int, seed: SeedLike
) -> ErrorReport:
    """
    Compare the Monte Carlo E||w - w_hat||^2 with ||w||^2 / (2 L^2).
    Diagnostic only: nothing asserts the ratio stays below one.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    arr = check_weights(w)
    total = 0.0
    for block in _monte_carlo(arr, spec, trials, seed):
        total += float(np.sum((block - arr) ** 2))
    mse = total / trials
    bound = float(arr @ arr) / (2.0 * spec.levels**2)
    if mse == 0.0:
        ratio = 0.0
    elif bound == 0.0:
        ratio = math.inf
    else:
        ratio = mse / bound
    logger.debug("Error report L=%d: mse=%.6g bound=%.6g", spec.levels, mse, bound)
    return ErrorReport(mse=mse, bound=bound, ratio=ratio)


def _error_moments(
    arr: np.ndarray, spec: QuantSpec, trials: int, seed: SeedLike
) -> tuple[np.ndarray, np.ndarray]:
    """Per-coordinate mean and sample variance of w_hat - clip(w)."""
    target = np.clip(arr, spec.grid_lo, spec.grid_hi)
    s1 = np.zeros_like(arr)
    s2 = np.zeros_like(arr)
    for block in _monte_carlo(arr, spec, trials, seed):
        d = block - target
        s1 += d.sum(axis=0)
        s2 += (d * d).sum(axis=0)
    mean = s1 / trials
    var = np.maximum(s2 - s1 * s1 / trials, 0.0) / (trials - 1)
    return mean, var


def unbiasedness_zscores(
    w, spec: QuantSpec, trials: int, seed: SeedLike
) -> np.ndarray:
    """
    Per-coordinate z-score of the Monte Carlo mean of the dequantized value
    against the (saturated) input. Zero-variance coordinates report 0 when
    exact and inf otherwise.
    """
    if trials < 2:
        raise ValueError("trials must be >= 2")
    mean, var = _error_moments(check_weights(w), spec, trials, seed)
    se = np.sqrt(var / trials)
    z = np.zeros_like(mean)
    nz = se > 0
    z[nz] = mean[nz] / se[nz]
    z[~nz & (mean != 0)] = np.inf
    return z


def pooled_zscore(w, spec: QuantSpec, trials: int, seed: SeedLike) -> float:
    """z-score of the summed error over all coordinates (independent draws)."""
    if trials < 2:
        raise ValueError("trials must be >= 2")
    mean, var = _error_moments(check_weights(w), spec, trials, seed)
    se = float(np.sqrt(var.sum() / trials))
    total = float(mean.sum())
    if se == 0.0:
        return 0.0 if total == 0.0 else math.inf
    return total / se


def _bench_weights(distribution: str, dimension: int, rng) -> np.ndarray:
    if distribution == "gaussian":
        return rng.standard_normal(dimension)
    if distribution == "uniform":
        return rng.uniform(-1.0, 1.0, dimension)
    if distribution == "laplace":
        return rng.laplace(0.0, 1.0, dimension)
    raise ValueError(f"unknown distribution {distribution!r}")


BENCH_COLUMNS = ["distribution", "L", "bits", "mse", "bound", "ratio", "z_score"]


def benchmark_frame(
    dimension: int,
    trials: int,
    levels: Sequence[int],
    distributions: Sequence[str],
    seed: int,
) -> pd.DataFrame:
    """
    Empirical error against the delta/(2L^2) bound and the pooled
    unbiasedness z-score, one row per (distribution, L).
    """
    rows = []
    for i, distribution in enumerate(distributions):
        w = _bench_weights(distribution, dimension, stream(seed, Stream.BENCH, i))
        for L in levels:
            spec = build_spec(w, L)
            report = empirical_error_report(
                w, spec, trials, stream(seed, Stream.BENCH, i, L, 0)
            )
            z = pooled_zscore(w, spec, trials, stream(seed, Stream.BENCH, i, L, 1))
            rows.append(
                {
                    "distribution": distribution,
                    "L": L,
                    "bits": spec.bits,
                    "mse": report.mse,
                    "bound": report.bound,
                    "ratio": report.ratio,
                    "z_score": z,
                }
            )
            logger.info(
                "quantbench %s L=%d: ratio=%.4f z=%.3f",
                distribution,
                L,
                report.ratio,
                z,
            )
    return pd.DataFrame(rows, columns=BENCH_COLUMNS)
