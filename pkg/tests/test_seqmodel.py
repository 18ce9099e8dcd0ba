import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reference import reference_lstm
from vpmeta.errors import ShapeMismatch
from vpmeta.seqmodel import (
    ArchSpec,
    Batch,
    SequenceModelParams,
    TrainingExample,
    forward,
    init_params,
    load_params,
    loss_and_grad,
    save_params,
    sgd_k_steps,
    sgd_step,
)

# reference_lstm(init_params(ArchSpec(3, 6, 3, 7), 42), window from default_rng(7).normal)
GOLDEN = [0.01127936086842643, -0.0329754292837264, -0.07472232618054318]


def test_param_counts():
    assert ArchSpec(3, 128, 3, 100).n_params == 67_971
    assert ArchSpec(1, 128, 1, 100).n_params == 66_689
    assert init_params(ArchSpec(3, 128, 3, 100), 0).values.size == 67_971


@given(st.integers(1, 6), st.integers(1, 9), st.integers(1, 5), st.integers(1, 8))
def test_param_count_formula(i, h, o, s):
    assert ArchSpec(i, h, o, s).n_params == 4 * (i + h + 1) * h + (h + 1) * o
    assert ArchSpec(i, h, o, s, cell="linear").n_params == (s * i + 1) * o


def test_arch_validation():
    with pytest.raises(ValueError):
        ArchSpec(0, 4, 1, 5)
    with pytest.raises(ValueError):
        ArchSpec(1, 4, 1, 5, cell="gru")


def test_init_is_deterministic_and_structured():
    arch = ArchSpec(3, 8, 3, 5)
    a, b = init_params(arch, 5), init_params(arch, 5)
    assert a == b and a != init_params(arch, 6)
    W, V = a.blocks()
    s = 1 / np.sqrt(8)
    assert np.all(np.abs(W[:-1]) <= s) and np.all(np.abs(V[:-1]) <= s)
    assert np.all(W[-1, 8:16] == 1.0)
    assert np.all(W[-1, :8] == 0.0) and np.all(W[-1, 16:] == 0.0) and np.all(V[-1] == 0.0)


def test_params_are_immutable_and_checked():
    p = init_params(ArchSpec(2, 3, 1, 4), 0)
    with pytest.raises(ValueError):
        p.values[0] = 1.0
    with pytest.raises(ShapeMismatch):
        SequenceModelParams(p.arch, np.zeros(3))


def test_zero_network_outputs_zero():
    arch = ArchSpec(3, 5, 2, 4)
    x = np.random.default_rng(0).normal(size=(4, 3))
    assert np.all(forward(SequenceModelParams(arch, np.zeros(arch.n_params)), x) == 0.0)
    p = init_params(arch, 1)
    W, _ = p.blocks()
    zero_head = SequenceModelParams(arch, np.concatenate([W.ravel(), np.zeros(6 * 2)]))
    assert np.all(forward(zero_head, x) == 0.0)


def test_forward_matches_golden_reference():
    arch = ArchSpec(3, 6, 3, 7)
    p = init_params(arch, 42)
    x = np.random.default_rng(7).normal(size=(7, 3))
    assert np.allclose(reference_lstm(p.values, 3, 6, 3, x), GOLDEN, rtol=0, atol=1e-15)
    assert np.allclose(forward(p, x), GOLDEN, rtol=0, atol=1e-14)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(1, 6), st.integers(1, 3), st.integers(1, 6), st.integers(0, 2**31))
def test_forward_matches_reference_on_random_archs(i, h, o, s, seed):
    arch = ArchSpec(i, h, o, s)
    rng = np.random.default_rng(seed)
    p = SequenceModelParams(arch, rng.normal(size=arch.n_params))
    x = rng.normal(size=(s, i))
    assert np.allclose(forward(p, x), reference_lstm(p.values, i, h, o, x), rtol=1e-12, atol=1e-12)


def test_forward_shape_errors():
    p = init_params(ArchSpec(3, 4, 3, 5), 0)
    with pytest.raises(ShapeMismatch):
        forward(p, np.zeros((4, 3)))
    with pytest.raises(ShapeMismatch):
        loss_and_grad(p, Batch(np.zeros((2, 5, 3)), np.zeros((2, 2))))
    with pytest.raises(ShapeMismatch):
        Batch.of([])


def test_batch_invariance():
    arch = ArchSpec(3, 7, 3, 6)
    p = init_params(arch, 3)
    xs = np.random.default_rng(1).normal(size=(9, 6, 3))
    batched = forward(p, xs)
    single = np.stack([forward(p, x) for x in xs])
    assert np.allclose(batched, single, rtol=0, atol=1e-15)


def _central_differences(params, batch, h=1e-5):
    v = params.values
    out = np.empty_like(v)
    for k in range(v.size):
        up, dn = v.copy(), v.copy()
        up[k] += h
        dn[k] -= h
        out[k] = (loss_and_grad(params.with_values(up), batch)[0]
                  - loss_and_grad(params.with_values(dn), batch)[0]) / (2 * h)
    return out


def max_relative_error(analytic, numeric, floor=1e-6):
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


@pytest.mark.parametrize("seed", range(5))
def test_gradient_matches_finite_differences(seed):
    arch = ArchSpec(2, 4, 2, 5)
    rng = np.random.default_rng(seed)
    p = SequenceModelParams(arch, rng.uniform(-0.8, 0.8, arch.n_params))
    batch = Batch(rng.normal(size=(3, 5, 2)), rng.normal(size=(3, 2)))
    _, g = loss_and_grad(p, batch)
    assert max_relative_error(g, _central_differences(p, batch)) < 1e-4


def test_linear_cell_gradient_and_forward():
    arch = ArchSpec(2, 1, 3, 4, cell="linear")
    rng = np.random.default_rng(0)
    p = SequenceModelParams(arch, rng.normal(size=arch.n_params))
    x = rng.normal(size=(5, 4, 2))
    (W,) = p.blocks()
    assert np.allclose(forward(p, x), x.reshape(5, 8) @ W[:-1] + W[-1])
    batch = Batch(x, rng.normal(size=(5, 3)))
    _, g = loss_and_grad(p, batch)
    assert max_relative_error(g, _central_differences(p, batch)) < 1e-6


def test_perfect_fit_has_zero_loss_and_gradient():
    arch = ArchSpec(3, 5, 3, 4)
    p = init_params(arch, 2)
    x = np.random.default_rng(2).normal(size=(6, 4, 3))
    loss, g = loss_and_grad(p, Batch(x, forward(p, x)))
    assert loss == 0.0 and np.all(g == 0.0)


def test_doubling_residuals_quadruples_loss():
    arch = ArchSpec(3, 5, 3, 4)
    p = init_params(arch, 2)
    rng = np.random.default_rng(4)
    x = rng.normal(size=(6, 4, 3))
    y = forward(p, x)
    r = rng.normal(size=y.shape)
    l1, _ = loss_and_grad(p, Batch(x, y + r))
    l2, _ = loss_and_grad(p, Batch(x, y + 2 * r))
    assert l2 == pytest.approx(4 * l1, rel=1e-12)


def test_loss_accepts_example_list():
    arch = ArchSpec(1, 3, 1, 4)
    p = init_params(arch, 0)
    ex = [TrainingExample(np.ones((4, 1)), np.array([0.5])), TrainingExample(np.zeros((4, 1)), np.array([0.0]))]
    assert loss_and_grad(p, ex)[0] == loss_and_grad(p, Batch.of(ex))[0]


def test_sgd_step_examples():
    assert np.allclose(sgd_step(np.array([1.0, 1.0]), np.array([2.0, -2.0]), 0.1), [0.8, 1.2])
    p = init_params(ArchSpec(2, 3, 1, 4), 0)
    assert sgd_step(p, np.ones(p.values.size), 0.0) == p
    assert sgd_step(p, np.zeros(p.values.size), 0.5) == p
    with pytest.raises(ShapeMismatch):
        sgd_step(p, np.zeros(3), 0.1)


def test_sgd_k_steps_composition():
    arch = ArchSpec(2, 3, 2, 4)
    p = init_params(arch, 1)
    rng = np.random.default_rng(3)
    batch = Batch(rng.normal(size=(4, 4, 2)), rng.normal(size=(4, 2)))
    one = sgd_k_steps(p, lambda: batch, 1, 0.1)
    assert one == sgd_step(p, loss_and_grad(p, batch)[1], 0.1)
    two = sgd_k_steps(p, lambda: batch, 2, 0.1)
    assert two == sgd_step(one, loss_and_grad(one, batch)[1], 0.1)
    with pytest.raises(ValueError):
        sgd_k_steps(p, lambda: batch, 0, 0.1)


def test_sgd_k_steps_resamples_each_step():
    arch = ArchSpec(1, 2, 1, 3)
    p = init_params(arch, 0)
    calls = []

    def sampler():
        calls.append(1)
        return Batch(np.ones((1, 3, 1)) * len(calls), np.zeros((1, 1)))

    sgd_k_steps(p, sampler, 3, 0.1)
    assert len(calls) == 3


def test_quadratic_surrogate_step():
    theta, c, eta = np.array([1.0, -2.0, 0.5]), np.array([0.0, 1.0, 1.0]), 0.1

    def quad_grad(t, target):
        return 0.5 * float(np.sum((t - target) ** 2)), t - target

    out = sgd_k_steps(theta, lambda: c, 1, eta, grad_fn=quad_grad)
    assert np.allclose(out, theta - eta * (theta - c), rtol=0, atol=1e-15)


def test_constant_trace_training_converges():
    # fit a constant direction from windows of that direction at the default rates
    arch = ArchSpec(3, 16, 3, 10)
    p = init_params(arch, 0)
    u = np.array([0.3, -0.2, -0.9327379053088815])
    batch = Batch(np.tile(u, (8, 10, 1)), np.tile(u, (8, 1)))
    for _ in range(200):
        loss, g = loss_and_grad(p, batch)
        p = sgd_step(p, g, 0.1)
    assert loss_and_grad(p, batch)[0] < 1e-3


def test_checkpoint_roundtrip_is_bit_exact(tmp_path):
    p = init_params(ArchSpec(3, 5, 3, 4), 9)
    p = p.with_values(p.values + np.random.default_rng(0).normal(size=p.values.size) * 1e-3)
    save_params(tmp_path / "m", p, seed=9, extra={"role": "vd"})
    raw = (tmp_path / "m.bin").read_bytes()
    assert raw == p.values.astype("<f8").tobytes()
    back = load_params(tmp_path / "m")
    assert back == p and back.arch == p.arch
    assert '"seed": 9' in (tmp_path / "m.json").read_text()
