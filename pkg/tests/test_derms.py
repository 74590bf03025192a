import logging

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hfltn.derms import (
    AggregatorLog,
    GlobalModel,
    emit_prediction,
    epdc_ingest,
    EpdcRecord,
    normalize,
    plaintext_aggregate,
    secure_aggregate,
    update_and_broadcast,
)
from hfltn.errors import DimMismatch, DuplicateContributor, EmptyRound, NonFiniteInput, UntrainedModel
from hfltn.p2p import Contribution, Path
from hfltn.ring import FixedPointCodec, RingVector, encode_vector, partition
from hfltn.trainer import TimeScaler, param_dim, predict_from_features

CODEC = FixedPointCodec()
SCALER = TimeScaler(1_451_606_400, 1_451_606_400 + 28 * 86_400)


def shared_contributions(weights, rng):
    """Each client uploads its K=3 shares directly."""
    out = []
    for i, w in enumerate(weights):
        sh = partition(encode_vector(w, CODEC), 3, rng, i)
        out.append(Contribution(i, tuple(s.payload for s in sh), Path.TRANSITORY_DIRECT))
    return out


def test_three_clients_average():
    rng = np.random.default_rng(0)
    u, v, w = rng.normal(size=(3, 16))
    theta = secure_aggregate(shared_contributions([u, v, w], rng), 3, CODEC)
    assert np.max(np.abs(theta - (u + v + w) / 3)) <= 3 * 2.0**-32


def test_single_contributor_is_its_own_average(caplog):
    w = np.array([0.25, -1.5])
    with caplog.at_level(logging.WARNING):
        theta = secure_aggregate(shared_contributions([w], np.random.default_rng(1)), 1, CODEC)
    assert np.array_equal(theta, w)
    assert "single contributor" in caplog.text


def test_aggregate_errors():
    rng = np.random.default_rng(2)
    cs = shared_contributions([np.zeros(3), np.zeros(3)], rng)
    with pytest.raises(EmptyRound):
        secure_aggregate([], 0, CODEC)
    with pytest.raises(DuplicateContributor):
        secure_aggregate([cs[0], cs[0]], 2, CODEC)
    bad = Contribution(5, (RingVector([1, 2]),), Path.P2P_AUGMENTED)
    with pytest.raises(DimMismatch):
        secure_aggregate([cs[0], bad], 2, CODEC)


@given(st.integers(1, 8), st.integers(1, 12), st.integers(0, 10**6))
def test_secure_matches_plaintext_average(n, dim, seed):
    rng = np.random.default_rng(seed)
    ws = rng.uniform(-50, 50, size=(n, dim))
    log = AggregatorLog()
    theta = secure_aggregate(shared_contributions(list(ws), rng), n, CODEC, log)
    assert np.max(np.abs(theta - ws.mean(axis=0))) <= n * 2.0**-32
    # only the total is ever held
    assert len(log.vectors) == 1
    encoded = {encode_vector(w, CODEC).elems.tobytes() for w in ws}
    if n >= 2:
        assert not encoded & log.digests()


def test_plaintext_ablation_exposes_clients():
    rng = np.random.default_rng(3)
    ws = rng.normal(size=(3, 4))
    log = AggregatorLog()
    theta = plaintext_aggregate(shared_contributions(list(ws), rng), 3, CODEC, log)
    assert np.allclose(theta, ws.mean(axis=0), atol=1e-9)
    encoded = {encode_vector(w, CODEC).elems.tobytes() for w in ws}
    assert encoded <= log.digests()


def test_normalize_examples():
    assert np.array_equal(normalize([0.3, 0.4], 1.0), [0.3, 0.4])
    assert np.allclose(normalize([3.0, 4.0], 1.0), [0.6, 0.8])
    with pytest.raises(NonFiniteInput):
        normalize([np.inf], 1.0)
    with pytest.raises(ValueError):
        normalize([1.0], 0.0)


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=30), st.floats(1e-3, 1e3))
def test_normalize_bounds(theta, tau):
    out = normalize(theta, tau)
    assert np.linalg.norm(out) <= tau * (1 + 1e-12)
    if np.linalg.norm(theta) <= tau:
        assert np.array_equal(out, theta)


def test_update_and_broadcast():
    m = GlobalModel(np.zeros(3), 4, 1)
    new, copies = update_and_broadcast(m, [1.0, 2.0, 3.0], [9, 2, 5])
    assert new.round == 5 and new.community_id == 1
    assert sorted(copies) == [2, 5, 9]
    assert all(np.array_equal(c, [1, 2, 3]) for c in copies.values())
    copies[2][0] = 99.0
    assert copies[5][0] == 1.0 and new.theta[0] == 1.0


def test_global_model_rejects_nan():
    with pytest.raises(NonFiniteInput):
        GlobalModel(np.array([np.nan]))


def test_emit_prediction():
    x = np.zeros(82)
    with pytest.raises(UntrainedModel):
        emit_prediction(GlobalModel(np.zeros(param_dim())), x, SCALER)
    rec = emit_prediction(GlobalModel(np.zeros(param_dim()), 1, 3), x, SCALER)
    assert rec.predicted_location == 0
    assert rec.predicted_time == SCALER.t_min
    assert rec.community_id == 3 and rec.round == 1


def test_emit_prediction_matches_direct_forward():
    rng = np.random.default_rng(4)
    w = rng.normal(scale=0.2, size=param_dim())
    x = rng.uniform(size=82)
    rec = emit_prediction(GlobalModel(w, 2, 0), x, SCALER)
    direct = predict_from_features(w, x, SCALER)
    assert (rec.predicted_location, rec.predicted_time) == (direct.next_location, direct.next_time)


def test_epdc_ingest_histograms():
    recs = [EpdcRecord(0, 5, 3600 * 25, 1), EpdcRecord(0, 5, 3600 * 2, 2), EpdcRecord(1, 7, 0, 1)]
    demand = epdc_ingest(recs)
    assert demand[0][0][5] == 2
    assert demand[0][1][1] == 1 and demand[0][1][2] == 1
    assert demand[1][1][0] == 1
