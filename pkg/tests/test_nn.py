import numpy as np
import pytest

from adagat import autodiff as ad
from adagat import nn
from adagat.data import make_synthetic
from adagat.losses import cross_entropy

from conftest import numeric_grad, rel_err


def test_build_is_deterministic():
    a = nn.build_model("mlp", 2, 2, seed=7)
    b = nn.build_model("mlp", 2, 2, seed=7)
    assert nn.dumps(a) == nn.dumps(b)


def test_biases_start_at_zero_and_weights_within_kaiming_bound():
    m = nn.build_model("mlp", 5, 3, seed=0, width=16)
    assert all(np.all(t.data == 0) for k, t in m.entries.items() if k.endswith(".bias"))
    w = m.entries["fc1.weight"].data
    assert np.abs(w).max() <= np.sqrt(6 / 5)


def test_zero_input_gives_final_bias():
    m = nn.build_model("mlp", 4, 3, seed=1)
    m.entries["fc3.bias"].data = np.array([0.5, -1.0, 2.0])
    out = nn.forward(m, np.zeros((6, 4))).data
    assert out.shape == (6, 3)
    assert np.array_equal(out, np.tile([0.5, -1.0, 2.0], (6, 1)))


def test_single_affine_layer_is_wx_plus_b():
    w = np.array([[1.0, -2.0], [0.5, 3.0]])
    b = np.array([0.1, 0.2])
    m = nn.ModelParams("mlp", {"fc1.weight": ad.tensor(w, True), "fc1.bias": ad.tensor(b, True)})
    x = np.array([[2.0, -1.0]])
    assert np.allclose(nn.forward(m, x).data, x @ w + b)


@pytest.mark.parametrize("arch,dims", [("mlp", (2,)), ("small_cnn", (1, 8, 8)), ("small_cnn", (3, 6, 7))])
def test_output_shape_and_finite(arch, dims, rng):
    m = nn.build_model(arch, dims, 4, seed=3, width=4 if arch == "small_cnn" else None)
    x = rng.uniform(0, 1, (5, *dims))
    out = nn.forward(m, x)
    assert out.shape == (5, 4)
    assert np.all(np.isfinite(out.data))


def test_unsupported_arch_and_bad_k():
    with pytest.raises(ValueError, match="unsupported"):
        nn.build_model("resnet", 2, 2, 0)
    with pytest.raises(ValueError):
        nn.build_model("mlp", 2, 1, 0)


def test_forward_shape_mismatch():
    m = nn.build_model("mlp", 3, 2, 0)
    with pytest.raises(ad.ShapeError):
        nn.forward(m, np.zeros((2, 4)))


@pytest.mark.parametrize("arch,dims,name", [("mlp", (3,), "fc1.weight"), ("small_cnn", (1, 4, 4), "conv1.weight")])
def test_first_layer_gradient_matches_finite_differences(arch, dims, name, rng):
    m = nn.build_model(arch, dims, 3, seed=2, width=8 if arch == "mlp" else 2)
    x = rng.uniform(0, 1, (4, *dims))
    ad.backward(ad.sum(nn.forward(m, x)))
    analytic = m.entries[name].grad

    def f(arrs):
        m.entries[name].data = arrs[0]
        return nn.forward(m.frozen(), x).data.sum()

    w = m.entries[name].data.copy()
    numeric = numeric_grad(f, [w])[0]
    assert rel_err(analytic, numeric) < 1e-4


def test_sgd_vanilla_arithmetic():
    p = ad.tensor([1.0], requires_grad=True)
    m = nn.ModelParams("mlp", {"fc1.weight": p})
    p.grad = np.array([2.0])
    nn.SGD(lr=0.1, momentum=0.0, weight_decay=0.0).step(m)
    assert np.isclose(p.data[0], 0.8)
    assert p.grad is None


def test_sgd_momentum_recurrence():
    p = ad.tensor([0.0], requires_grad=True)
    m = nn.ModelParams("mlp", {"fc1.weight": p})
    opt = nn.SGD(lr=0.1, momentum=0.9, weight_decay=0.0)
    g = 1.5
    p.grad = np.array([g])
    opt.step(m)
    assert np.isclose(p.data[0], -0.1 * g)
    p.grad = np.array([g])
    opt.step(m)
    assert np.isclose(p.data[0], -0.1 * g - 0.1 * 1.9 * g)


def test_sgd_zero_grad_is_fixed_point():
    p = ad.tensor([3.0, -1.0], requires_grad=True)
    m = nn.ModelParams("mlp", {"fc1.weight": p})
    p.grad = np.zeros(2)
    nn.SGD(lr=0.1, momentum=0.9, weight_decay=0.0).step(m)
    assert p.data.tolist() == [3.0, -1.0]


def test_sgd_weight_decay_and_missing_grad():
    p = ad.tensor([2.0], requires_grad=True)
    q = ad.tensor([1.0], requires_grad=True)
    m = nn.ModelParams("mlp", {"fc1.weight": p, "fc1.bias": q})
    p.grad = np.array([0.0])
    with pytest.raises(ValueError, match="fc1.bias"):
        nn.SGD(lr=0.1, momentum=0.0, weight_decay=0.5).step(m)
    q.grad = np.array([0.0])
    nn.SGD(lr=0.1, momentum=0.0, weight_decay=0.5).step(m)
    assert np.isclose(p.data[0], 2.0 - 0.1 * 0.5 * 2.0)


def test_mlp_sanity_floor_on_separable_data():
    ds = make_synthetic("gaussian_blobs", 200, 2, noise=0.3, seed=0)
    m = nn.build_model("mlp", 2, 2, seed=0)
    opt = nn.SGD(lr=0.1, momentum=0.0, weight_decay=0.0)
    for _ in range(500):
        ad.backward(cross_entropy(nn.forward(m, ds.inputs), ds.labels))
        opt.step(m)
    acc = np.mean(nn.predict(m, ds.inputs) == ds.labels)
    assert acc >= 0.99


def test_checkpoint_round_trip_is_byte_identical(tmp_path):
    m = nn.build_model("small_cnn", (1, 8, 8), 3, seed=5, width=2)
    nn.save(m, tmp_path / "a.ckpt")
    loaded = nn.load(tmp_path / "a.ckpt")
    nn.save(loaded, tmp_path / "b.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    assert list(loaded.entries) == list(m.entries)
    assert loaded.arch == "small_cnn"
    assert all(t.requires_grad for t in loaded.entries.values())


def test_checkpoint_layout(tmp_path):
    m = nn.build_model("mlp", 2, 2, seed=0, width=3)
    raw = nn.dumps(m)
    assert raw[:8] == b"ADAGATCK"
    assert int.from_bytes(raw[8:12], "little") == 1
    assert int.from_bytes(raw[12:16], "little") == 3 and raw[16:19] == b"mlp"
    assert int.from_bytes(raw[19:23], "little") == 6


def test_checkpoint_rejects_corruption():
    raw = nn.dumps(nn.build_model("mlp", 2, 2, seed=0))
    with pytest.raises(nn.CheckpointError, match="magic"):
        nn.loads(b"XXXXXXXX" + raw[8:])
    with pytest.raises(nn.CheckpointError, match="truncated"):
        nn.loads(raw[:-5])
