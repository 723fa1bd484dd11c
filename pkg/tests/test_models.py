import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cachecast import nn
from cachecast.errors import InvalidSpec, ShapeMismatch
from cachecast.features import COUNT_COL, LOAD_COL, RECENCY_COL, FeatureMatrix
from cachecast.models import (TABLE1_ORDER, ArchSpec, Kind, Model, count_params, init_model,
                              predict_array, predict_sequence)


def features(T, counts=None, loads=None, gaps=None):
    X = np.zeros((T, 6))
    if counts is not None:
        X[:, COUNT_COL] = counts
    if loads is not None:
        X[:, LOAD_COL] = loads
    if gaps is not None:
        X[:, RECENCY_COL] = gaps
    return X


def test_init_is_deterministic_and_seed_sensitive():
    a = init_model(ArchSpec.default(Kind.CNN_LSTM, seed=5))
    b = init_model(ArchSpec.default(Kind.CNN_LSTM, seed=5))
    c = init_model(ArchSpec.default(Kind.CNN_LSTM, seed=6))
    for (na, pa), (nb, pb), (_, pc) in zip(a.named_parameters(), b.named_parameters(),
                                           c.named_parameters()):
        assert na == nb and np.array_equal(pa, pb)
        if na.endswith(".W") or "W_" in na:
            assert not np.array_equal(pa, pc)


def test_lstm_shapes_and_forget_bias():
    m = init_model(ArchSpec.default(Kind.LSTM, hidden_size=8))
    for g in ("W_i", "W_f", "W_o", "W_c"):
        assert getattr(m.recurrent, g).shape == (8, 14)
    assert (m.recurrent.b_f == 1).all()
    assert (m.recurrent.b_i == 0).all() and (m.head.b == 0).all()


def test_init_scale_bound():
    m = init_model(ArchSpec.default(Kind.CNN_LSTM, seed=1))
    conv0 = m.conv[0].W
    assert np.abs(conv0).max() <= np.sqrt(1 / (6 * 3))
    assert np.abs(m.recurrent.W_i).max() <= np.sqrt(1 / (16 + 8))


def test_spec_validation():
    with pytest.raises(InvalidSpec):
        ArchSpec(Kind.LSTM, conv_layers=((4, 3),), hidden_size=4)
    with pytest.raises(InvalidSpec):
        ArchSpec(Kind.GRU, hidden_size=0)
    with pytest.raises(InvalidSpec):
        ArchSpec(Kind.CNN_LSTM, conv_layers=((4, 2),), hidden_size=4)


def test_spec_round_trip():
    spec = ArchSpec.default(Kind.CNN_LSTM, seed=3, hidden_size=5)
    assert ArchSpec.from_dict(spec.to_dict()) == spec


def test_lfu_heuristic_example():
    m = init_model(ArchSpec.default(Kind.LFU))
    y = predict_array(m, features(2, counts=[3, 0], loads=[10, 10]))
    assert np.allclose(y, [0.3, 0.15], atol=1e-15)
    assert predict_array(m, features(2))[0] == 0


def test_lru_heuristic_example():
    m = init_model(ArchSpec.default(Kind.LRU))
    assert predict_array(m, features(3, gaps=[0, 1, 3])).tolist() == [1.0, 0.5, 0.25]


@given(arrays(np.float64, 12, elements=st.integers(0, 20).map(float)),
       arrays(np.float64, 12, elements=st.integers(0, 16).map(float)),
       arrays(np.float64, 12, elements=st.integers(0, 30).map(float)))
def test_heuristics_stay_in_unit_interval(counts, gaps, extra):
    X = features(12, counts=counts, loads=counts + extra, gaps=gaps)
    for kind in (Kind.LRU, Kind.LFU):
        y = predict_array(init_model(ArchSpec.default(kind)), X)
        assert (y >= 0).all() and (y <= 1).all()
    lfu = predict_array(init_model(ArchSpec.default(Kind.LFU)), X)
    idle = np.flatnonzero(counts[1:] == 0) + 1
    assert (lfu[idle] <= lfu[idle - 1] + 1e-15).all()


def test_zero_weight_cnn_lstm_outputs_dense_bias():
    m = init_model(ArchSpec.default(Kind.CNN_LSTM))
    for _, arr in m.named_parameters():
        arr[...] = 0
    m.head.b[0] = 0.42
    X = np.random.default_rng(1).normal(size=(9, 6))
    assert np.array_equal(predict_array(m, X), np.full(9, 0.42))


def test_identity_conv_stack_reduces_to_lstm():
    lstm = init_model(ArchSpec.default(Kind.LSTM, seed=4, hidden_size=5))
    spec = ArchSpec(Kind.CNN_LSTM, conv_layers=((6, 1),), hidden_size=5, seed=4,
                    conv_activation="identity")
    cnn = init_model(spec)
    cnn.conv[0] = nn.Conv1dParams(np.eye(6)[:, :, None].copy(), np.zeros(6))
    cnn.recurrent = lstm.recurrent.copy()
    cnn.head = lstm.head.copy()
    X = np.random.default_rng(2).normal(size=(3, 11, 6))
    assert np.allclose(predict_array(cnn, X), predict_array(lstm, X), atol=1e-14, rtol=0)


def test_count_params():
    assert count_params(init_model(ArchSpec.default(Kind.LRU))) == 0
    assert count_params(init_model(ArchSpec.default(Kind.LFU))) == 0
    h, n = 7, 6
    lstm = init_model(ArchSpec.default(Kind.LSTM, hidden_size=h))
    assert count_params(lstm) == 4 * (h * (h + n) + h) + (h + 1)
    assert lstm.head.W.size + lstm.head.b.size == h + 1
    d = nn.DenseParams(np.zeros((1, 8)), np.zeros(1))
    assert sum(a.size for a in d.arrays().values()) == 9


def test_predict_sequence_length_and_shape_check():
    m = init_model(ArchSpec.default(Kind.GRU, hidden_size=3))
    fm = FeatureMatrix(4, np.random.default_rng(0).normal(size=(10, 6)), 1000)
    out = predict_sequence(m, fm)
    assert out.block_id == 4 and out.values.shape == (10,)
    with pytest.raises(ShapeMismatch):
        predict_array(m, np.zeros((10, 5)))


def test_model_rejects_inconsistent_layers():
    m = init_model(ArchSpec.default(Kind.LSTM, hidden_size=4))
    with pytest.raises(ShapeMismatch):
        Model(ArchSpec.default(Kind.LSTM, hidden_size=5), [], m.recurrent, m.head)


def test_table_order_and_display_names():
    assert [k.display for k in TABLE1_ORDER] == ["LRU", "LFU", "RNN", "GRU-RNN", "LSTM", "CNN-LSTM"]
    assert [k.learned for k in TABLE1_ORDER] == [False, False, True, True, True, True]
