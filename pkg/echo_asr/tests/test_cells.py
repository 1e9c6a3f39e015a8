import math

import numpy as np
import pytest

from echo_asr.cells import CellParams, cell_backward, cell_forward, param_count
from echo_asr.errors import ContractViolationError, InvalidConfigError, ShapeError
from echo_asr.numerics.prng import Prng


def _sigmoid(v: float) -> float:
    return 1.0 / (1.0 + math.exp(-v))


def _scalar_lstm(cell: CellParams, h_prev, x, c_prev):
    """Поэлементный оракул LSTM, без numpy-векторизации."""
    d = cell.state_dim
    W, U, b = cell.weights["W_xh"], cell.weights["W_hh"], cell.weights["b"]
    z = [b[r] + sum(W[r, j] * x[j] for j in range(len(x))) + sum(U[r, j] * h_prev[j] for j in range(d))
         for r in range(4 * d)]
    h, c = [], []
    for k in range(d):
        i, f = _sigmoid(z[k]), _sigmoid(z[d + k])
        g, o = math.tanh(z[2 * d + k]), _sigmoid(z[3 * d + k])
        ck = f * c_prev[k] + i * g
        c.append(ck)
        h.append(o * math.tanh(ck))
    return np.array(h), np.array(c)


def test_param_count_formulas():
    assert param_count("simple-rnn", 3, 5) == 25 + 15 + 5
    assert param_count("lstm", 3, 5) == 4 * (25 + 15 + 5)
    cell = CellParams.initialize("lstm", 7, 4, Prng(1))
    assert cell.param_count() == sum(p.size for p in cell.parameters())


def test_initialize_ranges_and_forget_bias():
    cell = CellParams.initialize("lstm", 6, 8, Prng(2))
    k = 1.0 / math.sqrt(8)
    assert np.all(np.abs(cell.weights["W_hh"]) <= k)
    assert np.all(np.abs(cell.weights["W_xh"]) <= k)
    assert np.array_equal(cell.weights["b"][8:16], np.ones(8))
    assert np.count_nonzero(cell.weights["b"]) == 8


def test_zero_simple_rnn_gives_zero_state():
    cell = CellParams.zeros("simple-rnn", 3, 4)
    h, c, _ = cell_forward(cell, np.ones(4), np.ones(3))
    assert np.array_equal(h, np.zeros(4)) and c is None


def test_zero_lstm_half_gates():
    cell = CellParams.zeros("lstm", 3, 2)
    c_prev = np.array([1.0, -2.0])
    h, c, _ = cell_forward(cell, np.zeros(2), np.ones(3), c_prev)
    assert np.allclose(c, 0.5 * c_prev, atol=0)
    assert np.allclose(h, 0.5 * np.tanh(0.5 * c_prev), atol=1e-15)


def test_lstm_matches_scalar_oracle():
    cell = CellParams.initialize("lstm", 3, 2, Prng(3))
    rng = np.random.default_rng(0)
    h_prev, x, c_prev = rng.standard_normal(2), rng.standard_normal(3), rng.standard_normal(2)
    h, c, _ = cell_forward(cell, h_prev, x, c_prev)
    h_ref, c_ref = _scalar_lstm(cell, h_prev, x, c_prev)
    assert np.allclose(h, h_ref, atol=1e-12)
    assert np.allclose(c, c_ref, atol=1e-12)


# =============================================================================
# Gradients
# =============================================================================

KINDS = ["simple-rnn", "lstm"]


def _instance(kind: str, seed: int):
    rng = np.random.default_rng(seed)
    n_in, d = (int(v) for v in rng.integers(1, 9, size=2))
    cell = CellParams.initialize(kind, n_in, d, Prng(seed))
    cell.weights["b"][...] = rng.uniform(-0.5, 0.5, cell.weights["b"].shape)
    return cell, rng


def _numeric(f, arr: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Центральная разность по каждому элементу arr (arr меняется in place и восстанавливается)."""
    out = np.zeros_like(arr)
    for idx in np.ndindex(arr.shape):
        saved = arr[idx]
        arr[idx] = saved + eps
        plus = f()
        arr[idx] = saved - eps
        minus = f()
        arr[idx] = saved
        out[idx] = (plus - minus) / (2 * eps)
    return out


def _rel_err(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-3) -> float:
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / scale))


@pytest.mark.parametrize("seed", range(50))
@pytest.mark.parametrize("kind", KINDS)
def test_step_gradients_match_finite_differences(kind, seed):
    cell, rng = _instance(kind, seed)
    d, n = cell.state_dim, cell.input_dim
    h_prev, x = rng.standard_normal(d), rng.standard_normal(n)
    c_prev = rng.standard_normal(d) if kind == "lstm" else None
    wh, wc = rng.standard_normal(d), rng.standard_normal(d)

    def loss() -> float:
        h, c, _ = cell_forward(cell, h_prev, x, c_prev)
        return float(wh @ h + (wc @ c if c is not None else 0.0))

    _, _, cache = cell_forward(cell, h_prev, x, c_prev)
    cell.zero_grad()
    dx, dh_prev, dc_prev = cell_backward(cell, cache, wh, wc if kind == "lstm" else None)

    for name, w in cell.weights.items():
        assert _rel_err(cell.grads[name], _numeric(loss, w)) <= 1e-6, name
    assert _rel_err(dx, _numeric(loss, x)) <= 1e-6
    assert _rel_err(dh_prev, _numeric(loss, h_prev)) <= 1e-6
    if kind == "lstm":
        assert _rel_err(dc_prev, _numeric(loss, c_prev)) <= 1e-6


@pytest.mark.parametrize("seed", range(50))
@pytest.mark.parametrize("kind", KINDS)
def test_bptt_sequence_gradient(kind, seed):
    cell, rng = _instance(kind, 1000 + seed)
    xs = rng.standard_normal((4, cell.input_dim))
    w = rng.standard_normal((4, cell.state_dim))

    def loss() -> float:
        return float(np.sum(w * cell.forward_sequence(xs)[0]))

    _, cache = cell.forward_sequence(xs)
    cell.zero_grad()
    dxs = cell.backward_sequence(w, cache)

    for name, weight in cell.weights.items():
        assert _rel_err(cell.grads[name], _numeric(loss, weight)) <= 1e-6, name
    assert _rel_err(dxs, _numeric(loss, xs)) <= 1e-6


def test_simple_rnn_input_jacobian_closed_form():
    # W_hh = 0: dh/dx = diag(1 - tanh²)·W_xh, dh/dh_prev = 0
    rng = np.random.default_rng(4)
    cell = CellParams.initialize("simple-rnn", 5, 3, Prng(4))
    cell.weights["W_hh"][...] = 0.0
    cell.weights["b"][...] = rng.uniform(-0.5, 0.5, 3)
    h_prev, x = rng.standard_normal(3), rng.standard_normal(5)
    h, _, _ = cell_forward(cell, h_prev, x)
    expected = np.diag(1.0 - h * h) @ cell.weights["W_xh"]

    rows = []
    for k in range(3):
        _, _, cache = cell_forward(cell, h_prev, x)
        dx, dh_prev, _ = cell_backward(cell, cache, np.eye(3)[k])
        assert np.array_equal(dh_prev, np.zeros(3))
        rows.append(dx)
    assert np.allclose(np.array(rows), expected, rtol=0, atol=1e-15)


def test_stale_and_foreign_caches_rejected():
    a = CellParams.initialize("lstm", 2, 2, Prng(1))
    b = CellParams.initialize("lstm", 2, 2, Prng(2))
    _, _, cache = cell_forward(a, np.zeros(2), np.ones(2))
    with pytest.raises(ContractViolationError):
        cell_backward(b, cache, np.ones(2))
    cell_backward(a, cache, np.ones(2))
    with pytest.raises(ContractViolationError):
        cell_backward(a, cache, np.ones(2))

    _, seq_cache = a.forward_sequence(np.ones((3, 2)))
    a.backward_sequence(np.ones((3, 2)), seq_cache)
    with pytest.raises(ContractViolationError):
        a.backward_sequence(np.ones((3, 2)), seq_cache)


def test_shape_and_kind_errors():
    cell = CellParams.initialize("simple-rnn", 3, 4, Prng(0))
    with pytest.raises(ShapeError):
        cell_forward(cell, np.zeros(3), np.zeros(3))
    with pytest.raises(InvalidConfigError):
        CellParams.zeros("gru", 3, 4)  # type: ignore[arg-type]
