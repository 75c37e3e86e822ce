"""Tests for the gradient pass, Adam, the LR schedule and the tensor container."""
import pytest
import torch
from torch import nn

import numerics
from models import NoisePredictor, PointNetEncoder


class Scalar(nn.Module):
    def __init__(self, value=3.0):
        super().__init__()
        self.w = nn.Parameter(torch.tensor(value))
        self.unused = nn.Parameter(torch.ones(2))


def test_param_store_is_sorted_by_name():
    net = nn.Sequential(nn.Linear(3, 4), nn.ReLU(), nn.Linear(4, 1))
    names = numerics.ParamStore(net).names()
    assert names == sorted(names) == ["0.bias", "0.weight", "2.bias", "2.weight"]


def test_backward_square_and_unused_parameter():
    m = Scalar(3.0)
    params = numerics.ParamStore(m)
    grads = numerics.backward(m.w ** 2, params)
    assert grads["w"].item() == pytest.approx(6.0)
    assert torch.equal(grads["unused"], torch.zeros(2))


def test_backward_constant_output_gives_zero_gradient():
    m = Scalar()
    params = numerics.ParamStore(m)
    out = torch.tensor(5.0, requires_grad=True)
    grads = numerics.backward(out * 1.0, params)
    assert grads["w"].item() == 0.0


def test_backward_rejects_non_scalar_output():
    m = Scalar()
    with pytest.raises(ValueError, match="scalar"):
        numerics.backward(m.unused * 2, numerics.ParamStore(m))


def test_network_shape_mismatch_names_the_shape():
    with pytest.raises(ValueError, match=r"3-D points, got shape \(5, 4\)"):
        PointNetEncoder(3, 8)(torch.zeros(5, 4))
    with pytest.raises(ValueError, match=r"8-D latent, got shape \(6,\)"):
        NoisePredictor(3, 8, 16, 10)(torch.zeros(5, 3), 2, torch.zeros(6))


def _finite_difference(loss_fn, p, h=1e-6):
    grad = torch.zeros_like(p)
    flat, g = p.data.view(-1), grad.view(-1)
    for i in range(flat.numel()):
        old = flat[i].item()
        flat[i] = old + h
        up = loss_fn().item()
        flat[i] = old - h
        down = loss_fn().item()
        flat[i] = old
        g[i] = (up - down) / (2 * h)
    return grad


@pytest.mark.parametrize("seed", range(20))
def test_gradients_match_central_differences(seed):
    torch.manual_seed(seed)
    net = nn.Sequential(nn.Linear(8, 6), nn.LeakyReLU(0.2), nn.Linear(6, 1)).double()
    x = torch.randn(5, 8, dtype=torch.float64)
    target = torch.randn(5, 1, dtype=torch.float64)

    def loss():
        return ((net(x) - target) ** 2).mean()

    params = numerics.ParamStore(net)
    grads = {k: v.clone() for k, v in numerics.backward(loss(), params).items()}
    with torch.no_grad():
        for name, p in params.items():
            fd = _finite_difference(loss, p)
            err = (grads[name] - fd).abs()
            assert torch.all(err <= 1e-3 * torch.maximum(grads[name].abs(), fd.abs()) + 1e-6), name


def test_adam_first_step_moves_by_lr():
    m = Scalar(0.0)
    params = numerics.ParamStore(m)
    state = numerics.AdamState.create(params)
    numerics.backward(m.w * 1.0, params)
    numerics.adam_step(params, state, 0.001)
    assert m.w.item() == pytest.approx(-0.001, rel=1e-4)
    assert state.k == 1


def test_adam_zero_gradients_leave_parameters_unchanged():
    net = nn.Linear(3, 2)
    params = numerics.ParamStore(net)
    before = params.tensors()
    state = numerics.AdamState.create(params)
    params.zero_grad()
    numerics.adam_step(params, state, 0.01)
    assert state.k == 1
    for name, value in params.tensors().items():
        assert torch.equal(value, before[name])


def test_adam_zero_gradient_after_a_real_step_leaves_parameter_unchanged():
    m = Scalar(0.0)
    params = numerics.ParamStore(m)
    state = numerics.AdamState.create(params)
    numerics.backward(m.w * 1.0, params)
    numerics.adam_step(params, state, 0.001)
    after_first = m.w.item()
    unused_before = m.unused.detach().clone()
    params.zero_grad()
    numerics.adam_step(params, state, 0.001)
    assert m.w.item() == after_first
    assert torch.equal(m.unused, unused_before)
    assert state.k == 2


def test_adam_only_moves_entries_with_nonzero_gradient():
    m = Scalar(0.0)
    params = numerics.ParamStore(m)
    state = numerics.AdamState.create(params)
    for grad in ([1.0, 1.0], [0.0, 1.0]):
        params.zero_grad()
        m.unused.grad = torch.tensor(grad)
        before = m.unused.detach().clone()
        numerics.adam_step(params, state, 0.001)
    assert m.unused[0].item() == before[0].item()
    assert m.unused[1].item() != before[1].item()


def test_adam_steps_do_not_grow_under_constant_gradient():
    m = Scalar(0.0)
    params = numerics.ParamStore(m)
    state = numerics.AdamState.create(params)
    positions = [m.w.item()]
    for _ in range(2):
        numerics.backward(m.w * 1.0, params)
        numerics.adam_step(params, state, 0.001)
        positions.append(m.w.item())
    assert abs(positions[2] - positions[1]) <= abs(positions[1] - positions[0]) + 1e-12
    m_, v_ = state.moments(m.w)
    assert m_.shape == m.w.shape and v_.shape == m.w.shape


def test_adam_refuses_non_finite_gradient():
    m = Scalar()
    params = numerics.ParamStore(m)
    state = numerics.AdamState.create(params)
    params.zero_grad()
    m.unused.grad = torch.tensor([0.0, float("nan")])
    with pytest.raises(numerics.NonFiniteGradientError) as e:
        numerics.adam_step(params, state, 0.001)
    assert e.value.name == "unused"
    assert state.k == 0


def test_lr_schedule_endpoints_and_midpoint():
    s = numerics.LrSchedule(0.001, 0.0001, 1000)
    assert numerics.lr_at(s, 0) == pytest.approx(0.001)
    assert numerics.lr_at(s, 500) == pytest.approx(0.00055)
    assert numerics.lr_at(s, 1000) == pytest.approx(0.0001)
    assert numerics.lr_at(s, 5000) == pytest.approx(0.0001)
    lrs = [numerics.lr_at(s, i) for i in range(0, 1200, 50)]
    assert all(b <= a for a, b in zip(lrs, lrs[1:]))


def test_lr_schedule_rejects_zero_iterations():
    with pytest.raises(ValueError):
        numerics.LrSchedule(0.001, 0.0001, 0)


def test_container_round_trip_is_bit_exact(tmp_path):
    tensors = {"b": torch.randn(3, 4), "a.weight": torch.randn(2), "scalar": torch.tensor(1.5)}
    path = tmp_path / "t.bin"
    numerics.save_tensors(path, tensors)
    loaded = numerics.load_tensors(path)
    assert sorted(loaded) == sorted(tensors)
    for name, value in tensors.items():
        assert torch.equal(loaded[name], value)
    assert loaded["scalar"].shape == ()


def test_container_truncation_reports_byte_counts():
    blob = numerics.encode_tensors({"w": torch.ones(10)})
    with pytest.raises(numerics.CheckpointFormatError, match="expected 53 bytes, file has 49"):
        numerics.decode_tensors(blob[:-4])


def test_container_rejects_other_versions_and_trailing_bytes():
    blob = numerics.encode_tensors({"w": torch.ones(2)})
    with pytest.raises(numerics.CheckpointFormatError, match="version 7"):
        numerics.decode_tensors(bytes([7]) + blob[1:])
    with pytest.raises(numerics.CheckpointFormatError, match="trailing"):
        numerics.decode_tensors(blob + b"\x00")


def test_checkpoint_load_checks_names_and_shapes(tmp_path):
    net = nn.Linear(3, 2)
    path = tmp_path / "net.ckpt"
    numerics.save_checkpoint(path, numerics.ParamStore(net))
    other = nn.Linear(3, 2)
    numerics.load_checkpoint(path, numerics.ParamStore(other))
    assert torch.equal(other.weight, net.weight)
    with pytest.raises(numerics.CheckpointFormatError, match="shape"):
        numerics.load_checkpoint(path, numerics.ParamStore(nn.Linear(4, 2)))
    with pytest.raises(numerics.CheckpointFormatError, match="missing"):
        numerics.load_checkpoint(path, numerics.ParamStore(nn.Sequential(nn.Linear(3, 2))))
