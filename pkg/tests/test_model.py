import numpy as np
import pytest

from cmfusion.encoders import encode_sequence, encode_text
from cmfusion.errors import ConfigError
from cmfusion.fusion import classify, temporal_pool
from cmfusion.model import (ArchitectureVariant, CmfusionModel, ModelDims,
                            TABLE_II_VARIANTS, TABLE_III_VARIANTS, VARIANTS,
                            batch_from_samples, forward, get_variant)
from cmfusion.tensor import concat_last


def random_batch(rng, n=2):
    return {
        "video": rng.standard_normal((n, 100, 768)),
        "audio": rng.standard_normal((n, 100, 40)),
        "text": rng.standard_normal((n, 768)),
    }


class TestVariants:
    def test_table_ii_has_seven_rows(self):
        assert len(TABLE_II_VARIANTS) == 7

    def test_table_iii_is_m1_to_m4(self):
        assert [v.name for v in TABLE_III_VARIANTS] == ["m1", "m2", "m3", "m4"]

    def test_cmfusion_flags(self):
        v = get_variant("cmfusion")
        assert v.tca and v.channel_wise and v.modality_wise and v.combine == "sum"

    def test_m4_is_cmfusion_with_concat(self):
        m4, cm = get_variant("m4"), get_variant("cmfusion")
        assert m4.tca == cm.tca and m4.channel_wise == cm.channel_wise
        assert m4.modality_wise == cm.modality_wise and m4.combine == "concat"

    def test_tca_needs_video_and_audio(self):
        with pytest.raises(ConfigError):
            ArchitectureVariant("bad", ("video", "text"), tca=True)

    def test_unknown_variant_rejected(self):
        with pytest.raises(ConfigError):
            get_variant("nope")


class TestForward:
    @pytest.mark.parametrize("name", sorted(VARIANTS))
    def test_probability_contract(self, name):
        model = CmfusionModel(get_variant(name), seed=5)
        probs = model.forward(random_batch(np.random.default_rng(0)))
        assert probs.shape == (2, 2)
        assert np.abs(probs.data.sum(axis=1) - 1.0).max() <= 1e-6
        assert (probs.data >= 0.0).all()

    def test_zero_model_predicts_uniform(self):
        model = CmfusionModel(get_variant("cmfusion"), seed=0)
        for p in model.parameters().values():
            p.data[...] = 0.0
        probs = model.forward(random_batch(np.random.default_rng(1)))
        assert np.array_equal(probs.data, np.full((2, 2), 0.5))

    def test_variant_vt_equals_manual_composition(self):
        # concat_vt must be exactly encode + pool + concat + classify
        model = CmfusionModel(get_variant("concat_vt"), seed=9)
        batch = random_batch(np.random.default_rng(2))
        expected = classify(concat_last([
            temporal_pool(encode_sequence(batch["video"], model.video_encoder)),
            encode_text(batch["text"], model.text_encoder),
        ]), model.classifier)
        actual = model.forward(batch)
        assert np.array_equal(actual.data, expected.data)

    def test_missing_modality_rejected(self):
        model = CmfusionModel(get_variant("cmfusion"), seed=1)
        batch = random_batch(np.random.default_rng(3))
        batch["audio"] = None
        with pytest.raises(ConfigError):
            model.forward(batch)

    def test_classifier_width_tracks_combination(self):
        assert CmfusionModel(get_variant("cmfusion")).fused_width() == 64
        assert CmfusionModel(get_variant("concat_vat")).fused_width() == 192
        assert CmfusionModel(get_variant("concat_va")).fused_width() == 128
        assert CmfusionModel(get_variant("m2")).fused_width() == 64

    def test_same_seed_same_parameters(self):
        a = CmfusionModel(get_variant("cmfusion"), seed=7)
        b = CmfusionModel(get_variant("cmfusion"), seed=7)
        for (na, pa), (nb, pb) in zip(a.parameters().items(), b.parameters().items()):
            assert na == nb
            assert np.array_equal(pa.data, pb.data)

    def test_forward_helper_single_sample(self, tiny_separable):
        samples, _ = tiny_separable
        model = CmfusionModel(get_variant("cmfusion"), seed=2)
        probs = forward(samples[0], model)
        assert probs.shape == (2,)
        assert abs(probs.data.sum() - 1.0) <= 1e-9

    def test_forward_helper_checks_variant(self, tiny_separable):
        samples, _ = tiny_separable
        model = CmfusionModel(get_variant("cmfusion"), seed=2)
        with pytest.raises(ConfigError):
            forward(samples[0], model, variant=get_variant("m1"))

    def test_m3_scalar_weights_scale_output(self, tiny_separable):
        samples, _ = tiny_separable
        model = CmfusionModel(get_variant("m3"), seed=3)
        batch, _ = batch_from_samples(samples[:2])
        base = model.forward_logits(batch).data.copy()
        for s in model.scalars.values():
            s.data[...] = 0.0  # zero scalars kill every modality
        zeroed = model.forward_logits(batch).data
        assert not np.allclose(base, zeroed)
        assert np.allclose(zeroed, np.tile(model.classifier.b.data, (2, 1)))


class TestDims:
    def test_head_divisibility_enforced(self):
        with pytest.raises(ConfigError):
            ModelDims(fusion_width=60, n_heads=8)

    def test_raw_gate_dims_accepted(self):
        model = CmfusionModel(get_variant("cmfusion"), ModelDims(gate="raw"), seed=0)
        probs = model.forward(random_batch(np.random.default_rng(4)))
        assert np.abs(probs.data.sum(axis=1) - 1.0).max() <= 1e-9
