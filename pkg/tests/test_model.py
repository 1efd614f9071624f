import numpy as np
import pytest

from restoreformer import model as mdl
from restoreformer.rng import Rng
from restoreformer.tensor import ParamStore, ShapeError, Tensor, grad_check, no_grad
from restoreformer.workbench.config import desk_config


def tiny_cfg(**kw):
    base = dict(image_size=8, base_channels=2, channel_cap=4, z_channels=4, codebook_size=6,
                n_heads=2, levels=3, blocks_per_level=1, mid_blocks=0, norm_groups=2)
    base.update(kw)
    return mdl.ModelConfig(**base)


def images(shape, seed):
    return Rng(seed, 21).random(shape)


def test_desk_shapes():
    cfg = mdl.ModelConfig()
    m = mdl.HQGenerator(cfg, seed=0)
    with no_grad():
        out = m(images((2, 32, 32, 3), 0))
    assert out.z.shape == (2, 1, 1, 32)
    assert out.image.shape == (2, 32, 32, 3)
    assert out.indices.shape == (2, 1, 1)
    assert out.image.data.min() >= 0.0 and out.image.data.max() <= 1.0


def test_full_scale_config_latent_geometry():
    cfg = desk_config("full_stage1").model_config()
    assert cfg.latent_size == 16 and cfg.z_channels == 256 and cfg.codebook_size == 1024
    # instantiate the encoder alone and push a zero image through to check shapes
    store = ParamStore()
    mdl.init_encoder(store.scope("encoder"), cfg, Rng(0))
    with no_grad():
        z = mdl.encode(store.scope("encoder"), cfg, Tensor(np.zeros((1, 512, 512, 3))))
    assert z.shape == (1, 16, 16, 256)


def test_encode_rejects_bad_sizes():
    cfg = mdl.ModelConfig()
    m = mdl.HQGenerator(cfg, seed=0)
    with pytest.raises(ShapeError):
        m.encode(np.zeros((1, 30, 30, 3)))
    with pytest.raises(ShapeError):
        m.decode(Tensor(np.zeros((1, 1, 1, 5))))


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_reduced_encoder_grad_check(seed):
    cfg = tiny_cfg()
    store = ParamStore()
    mdl.init_encoder(store.scope("encoder"), cfg, Rng(seed))
    x = Tensor(images((1, 8, 8, 3), seed))
    scope = store.scope("encoder")
    params = [x, store["encoder.stem.weight"], store["encoder.block0.conv1.weight"],
              store["encoder.head.conv.weight"], store["encoder.head.norm.gain"]]
    err = grad_check(lambda *a: mdl.encode(scope, cfg, x), params, eps=1e-5, seed=seed)
    assert err < 1e-4


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_reduced_pipeline_grad_check(seed):
    cfg = tiny_cfg(z_channels=8, n_heads=2)
    m = mdl.RestoreFormer(cfg, seed=seed)
    # spread the codebook so no assignment sits near a decision boundary
    m.store["dictionary.entries"].data = Rng(seed, 5).normal((6, 8)) * 3.0
    x = Tensor(images((1, 8, 8, 3), seed))
    s = m.store
    params = [x, s["encoder.stem.weight"], s["mhca1.w_q"], s["mhca2.w_v"], s["mhca1.ffn.conv1.weight"],
              s["decoder.stem.weight"], s["decoder.head.conv.weight"]]
    err = grad_check(lambda *a: m(x).image, params, eps=1e-5, seed=seed)
    assert err < 1e-4


def _zero_values(m):
    for n in ("mhca1", "mhca2"):
        m.store[f"{n}.w_v"].data[:] = 0.0
        m.store[f"{n}.b_v"].data[:] = 0.0
    m.set_test_mode(use_norm=False, use_ffn=False)


def test_mhca_argument_order_with_markers():
    cfg = tiny_cfg(z_channels=8)
    m = mdl.RestoreFormer(cfg, seed=0)
    _zero_values(m)
    zd = Tensor(np.full((1, 2, 2, 8), 7.0))
    zp = Tensor(np.full((1, 2, 2, 8), -3.0))
    # values zeroed: each block returns its residual, i.e. its key/value source
    np.testing.assert_array_equal(m.fuse(zd, zp).data, zp.data)


def test_prior_only_path_decodes_the_prior():
    cfg = mdl.ModelConfig()
    m = mdl.RestoreFormer(cfg, seed=3)
    _zero_values(m)
    with no_grad():
        out = m(images((2, 32, 32, 3), 1))
        np.testing.assert_array_equal(out.image.data, m.decode(out.z_p).data)


def test_swapping_mhca_parameters_changes_output():
    cfg = tiny_cfg(image_size=64, levels=5, z_channels=8, channel_cap=8)
    m = mdl.RestoreFormer(cfg, seed=0)
    x = images((1, 64, 64, 3), 2)
    with no_grad():
        a = m(x).image.data
        for name in m.store.names("mhca1"):
            other = "mhca2" + name[len("mhca1"):]
            m.store[name].data, m.store[other].data = m.store[other].data, m.store[name].data
        b = m(x).image.data
    assert np.abs(a - b).max() > 1e-8


@pytest.mark.parametrize("seed", range(5))
def test_outputs_finite(seed):
    cfg = mdl.ModelConfig(image_size=64)
    m = mdl.RestoreFormer(cfg, seed=seed)
    with no_grad():
        out = m(images((1, 64, 64, 3), seed))
    for t in (out.image, out.z, out.z_p, out.z_f):
        assert np.isfinite(t.data).all()
    assert len(out.attention) == 2 and out.attention[0].shape == (1, cfg.n_heads, 4, 4)


def test_load_stage1_keeps_mhca_at_init():
    cfg = mdl.ModelConfig()
    s1 = mdl.HQGenerator(cfg, seed=11)
    fresh = mdl.RestoreFormer(cfg, seed=4)
    before = {n: fresh.store[n].data.copy() for n in fresh.store.names("mhca")}
    loaded = fresh.load_stage1(s1.store.state_dict())
    assert set(loaded) == set(s1.store.names())
    for n in s1.store.names():
        np.testing.assert_array_equal(fresh.store[n].data, s1.store[n].data)
    for n, v in before.items():
        np.testing.assert_array_equal(fresh.store[n].data, v)


def test_autoencoder_reference_path():
    m = mdl.HQGenerator(mdl.ModelConfig(), seed=0, quantize=False)
    assert "dictionary.entries" not in m.store
    with no_grad():
        out = m(images((1, 32, 32, 3), 0))
    np.testing.assert_array_equal(out.z.data, out.z_p.data)
