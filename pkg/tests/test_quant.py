# tests/test_quant.py

import math

import numpy as np
import pytest

from app.models.quant import QuantizedPayload
from app.schemas.quant import ErrorDemand, QuantSpec
from app.services import quant_service as qs
from app.utils.exceptions import CorruptPayload, InvalidDemand, InvalidWeights
from app.utils.rng import stream


@pytest.mark.parametrize(
    "Delta, levels, bits",
    [(1.0, 64, 6), (0.5, 128, 7), (0.2, 256, 8)],
)
def test_level_for_demand_spans_six_to_eight_bits(Delta, levels, bits):
    assert qs.level_for_demand(ErrorDemand(delta=8192.0, Delta=Delta)) == (
        levels,
        bits,
    )


def test_level_for_demand_has_at_least_one_bit():
    assert qs.level_for_demand(ErrorDemand(delta=1.0, Delta=1.0)) == (2, 1)


@pytest.mark.parametrize("delta, Delta", [(0.0, 1.0), (1.0, 0.0), (-1.0, 1.0)])
def test_level_for_demand_rejects_non_positive(delta, Delta):
    with pytest.raises(InvalidDemand):
        qs.level_for_demand(ErrorDemand(delta=delta, Delta=Delta))


def test_build_spec_is_symmetric_and_handles_zero_vector():
    spec = qs.build_spec([0.5, -2.0, 1.0], 4)
    assert (spec.grid_lo, spec.grid_hi, spec.scale) == (-2.0, 2.0, 2.0)
    zero = qs.build_spec(np.zeros(5), 8)
    assert (zero.grid_lo, zero.grid_hi) == (-1.0, 1.0)


@pytest.mark.parametrize("w", [[], [[1.0, 2.0]], [1.0, np.nan], [np.inf]])
def test_invalid_weights(w):
    with pytest.raises(InvalidWeights):
        qs.quantize(w, QuantSpec(levels=2, scale=1.0, grid_lo=-1, grid_hi=1), 0)


def test_quantize_is_deterministic_given_seed():
    w = stream(1).standard_normal(100)
    spec = qs.build_spec(w, 16)
    assert qs.quantize(w, spec, 3) == qs.quantize(w, spec, 3)
    assert qs.quantize(w, spec, 3) != qs.quantize(w, spec, 4)


def test_grid_points_quantize_exactly():
    spec = QuantSpec(levels=8, scale=3.0, grid_lo=-3.0, grid_hi=3.0)
    grid = qs.grid_points(spec)
    p = qs.quantize(grid, spec, 11)
    np.testing.assert_array_equal(qs.dequantize(p), grid)
    report = qs.empirical_error_report(grid, spec, 50, 11)
    assert report.mse == 0.0
    assert report.ratio == 0.0


def test_error_never_exceeds_grid_step():
    w = stream(2).standard_normal(1000)
    for levels in (2, 8, 64):
        spec = qs.build_spec(w, levels)
        for seed in range(20):
            err = np.abs(qs.dequantize(qs.quantize(w, spec, seed)) - w)
            assert err.max() <= spec.step * (1 + 1e-12)


def test_stochastic_rounding_is_unbiased():
    w = stream(3).uniform(-1.0, 1.0, 20)
    spec = qs.build_spec(w, 4)
    z = qs.unbiasedness_zscores(w, spec, 100_000, 5)
    assert np.all(np.abs(z) <= 4.0)


def test_zscores_of_grid_points_are_zero():
    spec = QuantSpec(levels=4, scale=1.0, grid_lo=-1.0, grid_hi=1.0)
    z = qs.unbiasedness_zscores(qs.grid_points(spec), spec, 100, 0)
    np.testing.assert_array_equal(z, np.zeros(4))


def test_payload_and_header_bits():
    assert qs.payload_bits(5506, 8) == 44048
    assert qs.header_bits() == 288


def test_encoded_length_and_codec_round_trip():
    rng = stream(4)
    for _ in range(10_000):
        bits = int(rng.integers(1, 9))
        w = rng.standard_normal(int(rng.integers(1, 40)))
        p = qs.quantize(w, qs.build_spec(w, 1 << bits), rng)
        data = qs.encode_payload(p)
        assert len(data) == 36 + (p.dimension * bits + 7) // 8
        assert qs.decode_payload(data) == p


def test_decode_rejects_corrupt_payloads():
    w = stream(5).standard_normal(10)
    data = qs.encode_payload(qs.quantize(w, qs.build_spec(w, 8), 0))
    with pytest.raises(CorruptPayload):
        qs.decode_payload(data[:20])
    with pytest.raises(CorruptPayload):
        qs.decode_payload(data[:-1])
    with pytest.raises(CorruptPayload):
        qs.decode_payload(data + b"\x00")
    bad_levels = qs.HEADER.pack(10, 6, 1.0, -1.0, 1.0) + data[qs.HEADER.size :]
    with pytest.raises(CorruptPayload):
        qs.decode_payload(bad_levels)
    bad_bounds = qs.HEADER.pack(10, 8, -1.0, 1.0, -1.0) + data[qs.HEADER.size :]
    with pytest.raises(CorruptPayload):
        qs.decode_payload(bad_bounds)


def test_decode_rejects_set_padding_bits():
    w = stream(5).standard_normal(10)
    data = qs.encode_payload(qs.quantize(w, qs.build_spec(w, 8), 0))
    # 10 indices of 3 bits leave the top two bits of the last byte as padding
    assert len(data) == qs.HEADER.size + 4
    assert data[-1] & 0xC0 == 0
    for mask in (0x40, 0x80):
        tampered = data[:-1] + bytes([data[-1] | mask])
        with pytest.raises(CorruptPayload, match="padding"):
            qs.decode_payload(tampered)


def test_decode_rejects_scale_off_grid_hi():
    w = stream(5).standard_normal(10)
    data = qs.encode_payload(qs.quantize(w, qs.build_spec(w, 8), 0))
    spec = qs.decode_payload(data).spec
    assert spec.scale == spec.grid_hi
    header = qs.HEADER.pack(10, 8, 2.0 * spec.scale, spec.grid_lo, spec.grid_hi)
    with pytest.raises(CorruptPayload, match="scale"):
        qs.decode_payload(header + data[qs.HEADER.size :])


def test_benchmark_frame_reports_every_pair():
    frame = qs.benchmark_frame(16, 2000, [2, 64, 256], ["gaussian", "laplace"], 9)
    assert list(frame.columns) == qs.BENCH_COLUMNS
    assert len(frame) == 6
    assert frame["ratio"].notna().all()
    assert (frame["z_score"].abs() <= 4.0).all()
    assert (frame["bound"] > 0).all()


@pytest.mark.parametrize(
    "delta, Delta, expected",
    [(8.0, 1.0, (2, 1)), (2.0, 1.0, (2, 1)), (8192.0, 1.0, (64, 6))],
)
def test_level_for_demand_examples(delta, Delta, expected):
    assert qs.level_for_demand(ErrorDemand(delta=delta, Delta=Delta)) == expected


def test_level_for_demand_just_above_a_power_of_two():
    raw = 64.0 + 1e-12
    demand = ErrorDemand(delta=2.0 * raw * raw, Delta=1.0)
    assert qs.level_for_demand(demand) == (128, 7)


def test_level_for_demand_is_smallest_covering_power_of_two():
    rng = stream(12)
    for _ in range(2000):
        demand = ErrorDemand(
            delta=float(10 ** rng.uniform(-2, 12)),
            Delta=float(10 ** rng.uniform(-3, 1)),
        )
        raw = math.sqrt(demand.delta / (2.0 * demand.Delta))
        levels, bits = qs.level_for_demand(demand)
        assert levels == 1 << bits
        assert levels >= raw
        assert bits == 1 or (1 << (bits - 1)) < raw


def test_grid_spacing():
    np.testing.assert_array_equal(
        qs.grid_points(qs.build_spec([-1.0, 0.5], 2)), [-1.0, 1.0]
    )
    np.testing.assert_allclose(
        qs.grid_points(qs.build_spec([2.0, -0.3], 4)),
        [-2.0, -2.0 / 3.0, 2.0 / 3.0, 2.0],
    )


def test_midpoint_rounds_to_both_neighbours():
    spec = QuantSpec(levels=4, scale=1.0, grid_lo=-1.0, grid_hi=1.0)
    values = qs.dequantize(qs.quantize(np.zeros(10_000), spec, 8))
    np.testing.assert_allclose(np.unique(values), [-1.0 / 3.0, 1.0 / 3.0])
    assert abs(values.mean()) < 4.0 * (1.0 / 3.0) / np.sqrt(values.size)


def test_requantizing_dequantized_values_is_idempotent():
    w = stream(6).standard_normal(200)
    spec = qs.build_spec(w, 32)
    p = qs.quantize(w, spec, 1)
    assert qs.quantize(qs.dequantize(p), spec, 1) == p


def test_top_indices_decode_to_grid_hi():
    spec = QuantSpec(levels=8, scale=2.5, grid_lo=-2.5, grid_hi=2.5)
    p = QuantizedPayload(spec=spec, indices=np.full(5, 7))
    np.testing.assert_array_equal(qs.dequantize(p), np.full(5, 2.5))
    with pytest.raises(CorruptPayload):
        qs.dequantize(QuantizedPayload(spec=spec, indices=np.full(5, 8)))


@pytest.mark.parametrize(
    "M, bits, expected", [(37_000_000, 7, 259_000_000), (1, 1, 1), (10, 8, 80)]
)
def test_payload_bits_examples(M, bits, expected):
    assert qs.payload_bits(M, bits) == expected
