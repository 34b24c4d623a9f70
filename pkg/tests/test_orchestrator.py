import math
from dataclasses import replace

import numpy as np
import pytest

from conftest import small_config
from fedsel.costs import CostModel, client_time
from fedsel.errors import ShapeError
from fedsel.fault_tolerance import FailureEvent, FaultToleranceConfig, MemoryCheckpointStore
from fedsel.model import GlobalModel, logistic
from fedsel.orchestrator import (ClientRecord, ClientUpdate, LocalConfig, RoundState, aggregate,
                                 build_federation, epoch_order, local_train, run_experiment, run_round)
from fedsel.privacy import PrivacyParams

NO_DP = PrivacyParams(enabled=False)
NO_FT = FaultToleranceConfig(enabled=False)
CM = CostModel(0.01, 0.05, 0.002, 0.02)


def _client(seed=0, n=40, f=3, cap=1.0, cid=0):
    r = np.random.default_rng(seed)
    return ClientRecord(cid, r.normal(size=(n, f)), r.integers(0, 2, n).astype(float), cap)


def _model(f=3, seed=1):
    return GlobalModel(np.random.default_rng(seed).normal(0, 0.3, f + 1), logistic(f))


def test_zero_epochs_gives_zero_update():
    u = local_train(_client(), _model(), LocalConfig(0, 8, 0.1), NO_DP, NO_FT, CM, None, 0, 0)
    assert np.array_equal(u.noisy_update, np.zeros(4))
    assert u.local_time == 0.0


def test_single_epoch_matches_scalar_trace():
    x = np.array([[0.5], [-1.5]])
    y = np.array([1.0, 0.0])
    client = ClientRecord(4, x, y)
    model = GlobalModel(np.array([0.2, -0.1]), logistic(1))
    u = local_train(client, model, LocalConfig(1, 1, 0.1), NO_DP, NO_FT, CM, None, 17, 2)

    w, b = 0.2, -0.1
    deltas = []
    for i in epoch_order(17, 4, 2, 0, 2):
        p = 1.0 / (1.0 + math.exp(-(w * x[i, 0] + b)))
        dw, db = 0.1 * (p - y[i]) * x[i, 0], 0.1 * (p - y[i])
        w, b = w - dw, b - db
        deltas.append((dw, db))
    expected = [sum(d[0] for d in deltas), sum(d[1] for d in deltas)]
    np.testing.assert_allclose(u.noisy_update, expected, rtol=1e-13, atol=1e-15)
    assert u.local_time == pytest.approx(2 * 0.01)


@pytest.mark.parametrize("fail_at", [0, 3, 4, 5, 9])
def test_recovery_is_bit_identical(fail_at):
    ft = FaultToleranceConfig(True, 5)
    client, model, local = _client(), _model(), LocalConfig(2, 8, 0.2)  # 10 steps
    priv = PrivacyParams(True, 5.0, 1e-5, 0.5)
    clean = local_train(client, model, local, priv, ft, CM, MemoryCheckpointStore(), 3, 1)
    event = FailureEvent(0, 1, fail_at)
    hit = local_train(client, model, local, priv, ft, CM, MemoryCheckpointStore(), 3, 1, event)
    assert hit.noisy_update.tobytes() == clean.noisy_update.tobytes()
    assert hit.recovered and hit.local_time > clean.local_time
    resume = (fail_at // 5) * 5
    assert hit.replayed_steps == fail_at + 1 - resume
    expected = client_time(10 + fail_at + 1 - resume, clean.saves, 1, 1.0, CM)
    assert hit.local_time == pytest.approx(expected, abs=1e-12)
    assert hit.local_time - clean.local_time == pytest.approx(
        (fail_at + 1 - resume) * 0.01 + 0.02, abs=1e-12)


def test_corrupt_checkpoint_falls_back_to_start():
    class Corrupting(MemoryCheckpointStore):
        def save(self, record):
            super().save(record)
            blob = bytearray(self.raw(record.client_id, record.round))
            blob[-1] ^= 1
            self.put_raw(record.client_id, record.round, bytes(blob))

    ft = FaultToleranceConfig(True, 2)
    client, model, local = _client(), _model(), LocalConfig(1, 8, 0.2)
    clean = local_train(client, model, local, NO_DP, ft, CM, MemoryCheckpointStore(), 0, 0)
    hit = local_train(client, model, local, NO_DP, ft, CM, Corrupting(), 0, 0, FailureEvent(0, 0, 3))
    assert hit.noisy_update.tobytes() == clean.noisy_update.tobytes()
    assert hit.replayed_steps == 4


def test_failure_without_ft_drops_client():
    u = local_train(_client(), _model(), LocalConfig(1, 8, 0.1), NO_DP, NO_FT, CM, None, 0, 0,
                    FailureEvent(0, 0, 2))
    assert u.dropped and u.noisy_update is None
    assert u.local_time == pytest.approx(3 * 0.01)


def test_width_mismatch():
    with pytest.raises(ShapeError):
        local_train(_client(f=2), _model(f=3), LocalConfig(), NO_DP, NO_FT, CM, None, 0, 0)


def _u(cid, vec, n):
    return ClientUpdate(cid, np.asarray(vec, dtype=float), n, 0.0)


def test_aggregate_examples():
    u = _u(0, [1.5, -2.0], 7)
    assert np.array_equal(aggregate([u]), u.noisy_update)
    assert aggregate([_u(0, [0.0], 1), _u(1, [4.0], 3)])[0] == 3.0
    same = [_u(i, [0.1, 0.7], n) for i, n in enumerate([3, 9, 1])]
    np.testing.assert_allclose(aggregate(same), [0.1, 0.7], rtol=1e-15)
    assert aggregate([]) is None
    with pytest.raises(ShapeError):
        aggregate([_u(0, [1.0], 1), _u(1, [1.0, 2.0], 1)])


def test_aggregate_permutation_invariant():
    r = np.random.default_rng(5)
    ups = [_u(i, r.normal(size=6), int(r.integers(1, 50))) for i in range(9)]
    ref = aggregate(ups).tobytes()
    for _ in range(10):
        assert aggregate([ups[i] for i in r.permutation(9)]).tobytes() == ref


def test_single_client_collapse():
    cfg = small_config(n_clients=1, p_avail=1.0, privacy__enabled=False, ft__enabled=False, server_lr=0.5)
    fed, model = build_federation(cfg)
    new, report, _ = run_round(fed, RoundState(0, 1), model)
    u = local_train(fed.registry[0], model, fed.local, cfg.privacy, cfg.ft, cfg.cost_model, None,
                    cfg.master_seed, 0)
    assert np.array_equal(new.params, model.params - 0.5 * u.noisy_update)
    assert report.selected == [0]
    assert report.sim_time_s == u.local_time + cfg.cost_model.aggregation_cost


def test_all_fail_without_ft_leaves_model_unchanged():
    cfg = small_config(ft__enabled=False, ft__failure_prob_per_round=1.0)
    fed, model = build_federation(cfg)
    new, report, _ = run_round(fed, RoundState(0, 3), model)
    assert np.array_equal(new.params, model.params)
    assert report.failures == len(report.selected) > 0


def test_empty_availability_skips_round():
    cfg = small_config(p_avail=1e-12)
    fed, model = build_federation(cfg)
    new, report, state = run_round(fed, RoundState(0, 3), model)
    assert report.skipped and report.selected == [] and report.sim_time_s == 0.0
    assert new is model and state.round == 1


def test_homogeneous_separable_reaches_high_accuracy():
    cfg = small_config(data__n_samples=1000, data__class_sep=3.0, n_clients=4, rounds=30,
                       partition__strategy="iid", privacy__enabled=False, ft__enabled=False, p_avail=1.0)
    _, summary, _ = run_experiment(cfg)
    assert summary["final_accuracy"] >= 0.95


def test_zero_rounds():
    reports, summary, _ = run_experiment(small_config(rounds=0))
    assert reports == []
    assert summary["final_accuracy"] == summary["initial"]["accuracy"]
    assert summary["total_sim_time_s"] == 0.0


def _stream(cfg):
    reports, _, model = run_experiment(cfg)
    return "\n".join(r.to_json() for r in reports), model.params.tobytes()


def test_end_to_end_determinism_and_parallel_equivalence():
    cfg = small_config(rounds=6, ft__failure_prob_per_round=0.3, strategy="proposed")
    a = _stream(cfg)
    assert a == _stream(cfg)
    assert a == _stream(replace(cfg, workers=4))


@pytest.mark.parametrize("strategy", ["proposed", "random", "full", "static_k"])
def test_report_invariants(strategy):
    cfg = small_config(rounds=8, strategy=strategy, ft__failure_prob_per_round=0.2,
                       privacy__epsilon_round=0.7, selection__time_budget_per_round=0.05)
    reports, summary, _ = run_experiment(cfg)
    fed, _ = build_federation(cfg)
    for t, r in enumerate(reports, start=1):
        assert r.eps_total == t * 0.7
        assert cfg.selection.k_min <= r.k_next <= cfg.selection.k_max
        assert len(set(r.selected)) == len(r.selected)
    assert summary["eps_total"] == 8 * 0.7
    if strategy == "full":
        assert all(len(r.selected) >= 1 for r in reports)
    if strategy != "proposed":
        assert {r.k_next for r in reports} == {cfg.selection.k_init}


def test_round_time_is_max_client_time_plus_aggregation(monkeypatch):
    import fedsel.orchestrator as orch
    seen = []
    real = orch.local_train

    def spy(*args, **kwargs):
        u = real(*args, **kwargs)
        seen.append(u.local_time)
        return u

    monkeypatch.setattr(orch, "local_train", spy)
    cfg = small_config(rounds=1, ft__failure_prob_per_round=0.5)
    reports, _, _ = run_experiment(cfg)
    assert reports[0].sim_time_s == max(seen) + cfg.cost_model.aggregation_cost


def test_ft_never_decreases_round_time():
    base = small_config(rounds=6, ft__enabled=False, ft__failure_prob_per_round=0.0)
    on = small_config(rounds=6, ft__enabled=True, ft__failure_prob_per_round=0.4)
    a, _, _ = run_experiment(base)
    b, _, _ = run_experiment(on)
    for ra, rb in zip(a, b):
        assert ra.selected == rb.selected
        assert rb.sim_time_s >= ra.sim_time_s


def test_participation_without_ft_matches_failure_rate():
    p = 0.3
    cfg = small_config(rounds=300, n_clients=8, ft__enabled=False, ft__failure_prob_per_round=p,
                       strategy="static_k", selection__k_init=4, data__n_samples=200, local_epochs=1)
    reports, _, _ = run_experiment(cfg)
    sel = np.array([len(r.selected) for r in reports if r.selected])
    part = sel - np.array([r.failures for r in reports if r.selected])
    expected = (1 - p) * sel.sum()
    se = math.sqrt(p * (1 - p) * sel.sum())
    assert abs(part.sum() - expected) <= 3 * se
