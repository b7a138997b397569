import numpy as np
import pytest

from hpnet import model as hm, pipeline, smclm, topology as tp
from hpnet.numerics import ShapeError


def small_cfg(**kw):
    return hm.ModelConfig(**{"in_channels": 3, "gcn_channels": [6], "text_dim": 8, "video_dim": 4, **kw})


class TestModelConfig:
    @pytest.mark.parametrize("kw", [{"kind": "x"}, {"modality": "x"}, {"streams": []},
                                    {"streams": ["p", "p"]}, {"streams": ["q"]}, {"tau": 0.0}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            small_cfg(**kw)

    def test_streams_canonical_order(self):
        assert small_cfg(streams=["m", "p"]).streams == ["p", "m"]

    def test_param_shapes(self):
        cfg = small_cfg()
        p = hm.init_params(cfg, 0)
        assert p["trmm.bridge.W"].shape == (8, 18)
        assert p["fusion.align"].shape == (8, 4)
        assert all(v.dtype == np.float32 for v in p.values())
        single = hm.init_params(small_cfg(kind="single"), 0)
        assert all(k.startswith("gcn.x.") for k in single)


class TestModel:
    def test_forward_shapes(self, rng):
        m = pipeline.make_model(small_cfg(input_norm=False))
        p = hm.init_params(m.cfg, 0)
        seq = rng.standard_normal((3, 17, 3)).astype(np.float32)
        scores, logits, _ = m.forward(p, seq, rng.standard_normal(4).astype(np.float32))
        assert scores.shape == (5,) and set(logits) == {"p", "s", "m"}
        assert m.features(p, seq).shape == (18,)

    @pytest.mark.parametrize("modality, expect", [
        ("joint", lambda x, g: x),
        ("bone", lambda x, g: smclm.spatial_transform(x, g)),
        ("joint_motion", lambda x, g: smclm.motion_transform(x)),
        ("bone_motion", lambda x, g: smclm.motion_transform(smclm.spatial_transform(x, g))),
    ])
    def test_single_stream_modality(self, rng, coco, modality, expect):
        m = pipeline.make_model(small_cfg(kind="single", modality=modality, input_norm=False))
        p = hm.init_params(m.cfg, 0)
        seq = rng.standard_normal((4, 17, 3)).astype(np.float32)
        direct, _ = tp.gcn_features(expect(seq, coco), m.a_hat, {k[6:]: v for k, v in p.items()})
        np.testing.assert_array_equal(m.features(p, seq), direct)

    def test_input_norm(self, rng):
        seqs = [rng.standard_normal((3, 17, 3)).astype(np.float32) * 5 + 2 for _ in range(4)]
        mean, std = hm.fit_input_norm(seqs)
        m = pipeline.make_model(small_cfg())
        m.set_norm(mean, std)
        raw = pipeline.make_model(small_cfg(input_norm=False))
        p = hm.init_params(m.cfg, 0)
        np.testing.assert_allclose(m.features(p, seqs[0]), raw.features(p, (seqs[0] - mean) / std), rtol=1e-6)

    def test_input_norm_constant_channel(self):
        mean, std = hm.fit_input_norm([np.ones((2, 17, 3), np.float32)])
        np.testing.assert_array_equal(mean, 1)
        assert np.all(std > 0)

    def test_bad_norm(self):
        m = pipeline.make_model(small_cfg())
        with pytest.raises(ShapeError):
            m.set_norm(np.zeros((17, 2)), np.ones((17, 2)))
        with pytest.raises(ValueError):
            m.set_norm(np.zeros((17, 3)), np.zeros((17, 3)))
        with pytest.raises(ValueError):
            hm.fit_input_norm([])

    def test_text_required(self, coco):
        with pytest.raises(ValueError):
            hm.Model(small_cfg(), coco)
        with pytest.raises(ShapeError):
            hm.Model(small_cfg(), coco, np.ones((4, 8), np.float32))

    def test_astype(self):
        m = pipeline.make_model(small_cfg()).astype(np.float64)
        assert m.a_hat.dtype == np.float64 and m.text.dtype == np.float64
