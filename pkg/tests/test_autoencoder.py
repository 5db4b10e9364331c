import numpy as np
import pytest

from somnus import autodiff as ad
from somnus import autoencoder as A
from somnus import data
from somnus.errors import ChecksumError, ConfigError, ShapeError
from somnus.optim import OptimizerConfig

CONV8 = {"type": "conv", "input_shape": [1, 8, 8], "channels": [4, 8], "latent_dim": 16}
LSTM = {"type": "lstm", "vocab": 20, "steps": 6, "embed": 8, "hidden": 8, "latent_dim": 4}


def test_memorizes_single_sample():
    x = np.random.default_rng(0).random((1, 1, 4, 4))
    arch = {"type": "conv", "input_shape": [1, 4, 4], "channels": [4, 8], "latent_dim": 16}
    bundle = A.pretrain(np.repeat(x, 4, axis=0), arch, 200, seed=0,
                        opt=OptimizerConfig(batch_size=4))
    assert bundle.manifest["final_loss"] < 1e-3


def test_zero_epochs_keeps_initial_loss():
    x = np.random.default_rng(1).random((10, 1, 8, 8))
    bundle = A.pretrain(x, CONV8, 0, seed=3)
    assert bundle.manifest["final_loss"] == bundle.manifest["initial_loss"]
    fresh = A.build_bundle(CONV8, 3)
    for p, q in zip(bundle.params(), fresh.params()):
        assert np.array_equal(p.value.data, q.value.data)


def test_two_shape_8x8_heldout_mse():
    ds = data.gen_synthetic_images("shapes2", 64, noise=0.0, seed=0, size=8)
    bundle = A.pretrain(ds.images, CONV8, 100, seed=0, opt=OptimizerConfig(batch_size=16))
    m = bundle.manifest
    assert m["final_loss"] < 0.05
    assert m["final_loss"] < m["initial_loss"]
    losses = m["train_loss"]
    # non-increasing up to 5% transient upticks
    for prev, cur in zip(losses, losses[1:]):
        assert cur <= prev * 1.05 or cur < 1e-3


def test_trained_bundle_reconstructs_within_recorded_loss():
    ds = data.gen_synthetic_images("shapes2", 64, noise=0.05, seed=0, size=8)
    bundle = A.pretrain(ds.images, CONV8, 40, seed=0, opt=OptimizerConfig(batch_size=16))
    x = ad.Tensor(ds.images[:1])
    err = ad.mse(A.reconstruct(bundle, x), x).item()
    assert err <= 3 * bundle.manifest["final_loss"]


def test_pretrain_empty_dataset():
    with pytest.raises(ConfigError):
        A.pretrain(np.zeros((0, 1, 8, 8)), CONV8, 1)


def test_encode_shapes_and_determinism():
    bundle = A.build_bundle(CONV8, 0)
    x = np.random.default_rng(2).random((5, 1, 8, 8))
    a, b = A.encode(bundle, ad.Tensor(x)), A.encode(bundle, ad.Tensor(x))
    assert a.shape == (5, 16) and np.array_equal(a.data, b.data)
    assert A.reconstruct(bundle, ad.Tensor(x)).shape == x.shape
    with pytest.raises(ShapeError):
        A.encode(bundle, ad.Tensor(np.zeros((1, 1, 4, 4))))


def test_lstm_bundle_shapes_and_pretraining():
    rng = np.random.default_rng(0)
    ids = rng.integers(1, 20, (16, 6))
    bundle = A.pretrain(ids, LSTM, 15, seed=0, opt=OptimizerConfig(batch_size=8))
    assert bundle.kind == "textual" and bundle.frozen
    assert A.encode(bundle, ids[:3]).shape == (3, 4)
    recon = A.reconstruct(bundle, ids[:3])
    assert recon.shape == (3, 6, 8)
    assert bundle.decode_tokens(recon).shape == (3, 6)
    assert bundle.manifest["final_loss"] < bundle.manifest["initial_loss"]


def test_zero_stub():
    stub = A.make_stub("zero", (1, 8, 8), latent_dim=5)
    x = ad.Tensor(np.random.default_rng(0).random((2, 1, 8, 8)))
    assert np.array_equal(A.encode(stub, x).data, np.zeros((2, 5)))
    assert np.array_equal(A.reconstruct(stub, x).data, np.zeros((2, 1, 8, 8)))
    assert all(not p.trainable for p in stub.params())
    stub.set_frozen(False)
    assert stub.frozen


def test_textual_zero_stub():
    stub = A.make_stub("zero", (6,), "textual", latent_dim=3, vocab=20, embed=4)
    ids = np.ones((2, 6), dtype=int)
    assert np.array_equal(A.encode(stub, ad.Tensor(ids)).data, np.zeros((2, 3)))
    assert np.array_equal(A.reconstruct(stub, ad.Tensor(ids)).data, np.zeros((2, 6, 4)))


def test_identity_stub():
    stub = A.make_stub("identity", (2, 4, 4))
    x = ad.Tensor(np.random.default_rng(0).standard_normal((3, 2, 4, 4)))
    assert A.reconstruct(stub, x) is x or np.array_equal(A.reconstruct(stub, x).data, x.data)
    assert stub.latent_dim == 32 and stub.params() == []
    with pytest.raises(ShapeError):
        A.make_stub("identity", (2, 4, 4), latent_dim=7)
    with pytest.raises(ShapeError):
        A.make_stub("identity", (6,), "textual")


def test_save_load_round_trip(tmp_path):
    x = np.random.default_rng(4).random((12, 1, 8, 8))
    bundle = A.pretrain(x, CONV8, 2, seed=1)
    p1, p2 = tmp_path / "b1.slpn", tmp_path / "b2.slpn"
    A.save(bundle, p1)
    loaded = A.load(p1)
    A.save(loaded, p2)
    assert p1.read_bytes() == p2.read_bytes()
    assert loaded.manifest == bundle.manifest and loaded.frozen
    probe = ad.Tensor(x[:2])
    assert np.array_equal(A.encode(loaded, probe).data, A.encode(bundle, probe).data)


def test_load_truncated(tmp_path):
    path = tmp_path / "b.slpn"
    A.save(A.build_bundle(LSTM, 0), path)
    path.write_bytes(path.read_bytes()[:-10])
    with pytest.raises(ChecksumError):
        A.load(path)


def test_unknown_arch():
    with pytest.raises(ConfigError):
        A.build_bundle({"type": "vit"})
    with pytest.raises(ConfigError):
        A.build_bundle({"type": "conv", "input_shape": [1, 8, 8]})
