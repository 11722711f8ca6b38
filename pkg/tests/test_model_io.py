import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deepthin.core import make_rng
from deepthin.errors import ModelFormatError
from deepthin.factor import decompress, init_factors
from deepthin.model_io import (
    MAGIC,
    CompressedModel,
    deserialize,
    expected_file_size,
    load_model,
    save_model,
    serialize,
)
from deepthin.planner import NetworkPlan, plan_network


def random_model(seed: int, layer_count: int = None, dtype=np.float64) -> CompressedModel:
    rng = np.random.default_rng(seed)
    layer_count = layer_count or int(rng.integers(1, 5))
    # dims >= 4 keep every shape's floor below the sampled target range
    shapes = [(f"layer{i}", int(rng.integers(4, 60)), int(rng.integers(4, 60)))
              for i in range(layer_count)]
    target = float(rng.uniform(0.55, 0.95))
    net = plan_network(shapes, 1, target, bias_counts=[r for _, _, r in shapes])
    gen = make_rng(seed)
    factors = []
    for _, plan in net.layers:
        fp = init_factors(plan, 0.1, gen)
        if dtype is np.float32:
            fp = fp.with_values(np.asarray(fp.xf, dtype=np.float32),
                                np.asarray(fp.wf, dtype=np.float32))
        factors.append(fp)
    biases = [gen.standard_normal(plan.r_dim).astype(dtype) for _, plan in net.layers]
    meta = {"seed": str(seed), "note": "round-trip fixture"}
    return CompressedModel(plans=net, factors=factors, biases=biases, metadata=meta)


class TestRoundTrip:
    def test_bytes_bit_identical(self):
        for seed in range(30):
            model = random_model(seed)
            data = serialize(model)
            again = serialize(deserialize(data))
            assert data == again

    def test_float32_payload(self):
        model = random_model(99, dtype=np.float32)
        back = deserialize(serialize(model))
        assert back.factors[0].dtype == np.float32
        for a, b in zip(model.factors, back.factors):
            assert np.array_equal(np.asarray(a.xf), np.asarray(b.xf))

    def test_values_and_metadata_survive(self):
        model = random_model(7)
        back = deserialize(serialize(model))
        assert back.metadata == model.metadata
        assert back.plans.layers == model.plans.layers
        assert back.plans.floor_hits == model.plans.floor_hits
        for a, b in zip(model.factors, back.factors):
            assert np.array_equal(decompress(a), decompress(b))
        for a, b in zip(model.biases, back.biases):
            assert np.array_equal(a, b)

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 10**6))
    def test_round_trip_property(self, seed):
        data = serialize(random_model(seed % 1000))
        assert serialize(deserialize(data)) == data


class TestSizeAccounting:
    def test_file_size_matches_planner_accounting(self):
        for seed in (1, 2, 3):
            model = random_model(seed)
            data = serialize(model)
            assert len(data) == expected_file_size(model)
            # payload beyond the bookkeeping equals the planner's element
            # accounting exactly, byte for byte
            value_bytes = 8
            factor_bytes = sum(
                p.compressed_elems * value_bytes for _, p in model.plans.layers)
            bias_bytes = sum(b.size * value_bytes for b in model.biases)
            bookkeeping = expected_file_size(model) - factor_bytes - bias_bytes
            assert len(data) == bookkeeping + factor_bytes + bias_bytes

    def test_empty_model_is_header_only(self):
        plans = NetworkPlan(layers=(), target_ratio=0.5,
                            achieved_total_ratio=0.0, floor_hits=())
        model = CompressedModel(plans=plans, factors=[], biases=[], metadata={})
        data = serialize(model)
        assert len(data) == 28 + 4  # fixed header + empty metadata count
        back = deserialize(data)
        assert back.factors == [] and back.metadata == {}

    def test_declared_payload_must_match(self):
        data = bytearray(serialize(random_model(4)))
        data.extend(b"junk")
        with pytest.raises(ModelFormatError):
            deserialize(bytes(data))


class TestErrors:
    def test_bad_magic_at_offset_zero(self):
        data = bytearray(serialize(random_model(5)))
        data[:4] = b"NOPE"
        with pytest.raises(ModelFormatError) as exc:
            deserialize(bytes(data))
        assert exc.value.offset == 0

    def test_bad_version(self):
        data = bytearray(serialize(random_model(5)))
        data[4:8] = (77).to_bytes(4, "little")
        with pytest.raises(ModelFormatError) as exc:
            deserialize(bytes(data))
        assert exc.value.offset == 4

    def test_truncation_reports_exact_offset(self):
        full = serialize(random_model(6))
        cut = len(full) - 3
        truncated = full[:cut]
        # fix the declared payload so truncation is hit during parsing
        fixed = bytearray(truncated)
        fixed[12:20] = (cut - 28).to_bytes(8, "little")
        with pytest.raises(ModelFormatError) as exc:
            deserialize(bytes(fixed))
        assert 0 < exc.value.offset <= cut

    def test_save_and_load_file(self, tmp_path):
        model = random_model(8)
        path = tmp_path / "model.dthn"
        written = save_model(model, path)
        assert written == path.stat().st_size == expected_file_size(model)
        back = load_model(path)
        assert serialize(back) == serialize(model)

    def test_magic_constant(self):
        assert MAGIC == b"DTHN"
        assert serialize(random_model(9))[:4] == b"DTHN"
