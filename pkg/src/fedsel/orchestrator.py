"""Round protocol: availability, scoring, selection, private local training with
failure recovery, aggregation, global update and adaptive K."""
from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import rng as streams
from .config import ExperimentConfig
from .costs import CostModel, client_time
from .data import Dataset, generate_synthetic, load_csv, normalize, partition, train_test_split
from .errors import IntegrityError, ParameterError, ShapeError
from .fault_tolerance import (CheckpointRecord, DirectoryCheckpointStore, FailureEvent,
                              FaultToleranceConfig, MemoryCheckpointStore, recover, sample_failures,
                              should_checkpoint)
from .kernels import sgd_steps
from .model import Arch, EvalReport, GlobalModel, evaluate, init_model
from .privacy import BudgetLedger, PrivacyParams, add_noise, clip, record_round
from .selection import ClientStats, adapt_k, compute_utility, registry_maxima, select_top_k

log = logging.getLogger(__name__)

REPORT_FIELDS = ("round", "selected", "accuracy", "auc_roc", "loss", "sim_time_s", "wall_time_s",
                 "eps_total", "failures", "recoveries", "k_next")


@dataclass
class ClientRecord:
    client_id: int
    x: np.ndarray
    y: np.ndarray
    compute_capacity: float = 1.0
    last_seen_round: int = -1
    recent_loss_delta: float = 0.0

    @property
    def n_samples(self) -> int:
        return int(self.y.shape[0])

    def stats(self) -> ClientStats:
        return ClientStats(self.client_id, self.n_samples, self.compute_capacity,
                           self.last_seen_round, self.recent_loss_delta)


@dataclass(frozen=True)
class LocalConfig:
    epochs: int = 1
    batch_size: int = 16
    lr: float = 0.1


@dataclass
class ClientUpdate:
    client_id: int
    noisy_update: np.ndarray | None
    n_samples: int
    local_time: float
    recovered: bool = False
    dropped: bool = False
    failed: bool = False
    steps_executed: int = 0
    replayed_steps: int = 0
    saves: int = 0


@dataclass
class RoundState:
    round: int = 0
    k_current: int = 1
    ledger: BudgetLedger = field(default_factory=BudgetLedger)
    last_accuracy: float | None = None
    available: tuple = ()
    selected: tuple = ()


@dataclass
class RoundReport:
    round: int
    selected: list
    eval: EvalReport
    sim_time_s: float
    wall_time_s: float | None
    eps_total: float
    failures: int
    recoveries: int
    k_next: int
    replayed_steps: int = 0
    skipped: bool = False

    def to_json(self) -> str:
        row = {
            "round": self.round,
            "selected": list(self.selected),
            "accuracy": self.eval.accuracy,
            "auc_roc": self.eval.auc_roc,
            "loss": self.eval.loss,
            "sim_time_s": self.sim_time_s,
            "wall_time_s": self.wall_time_s,
            "eps_total": self.eps_total,
            "failures": self.failures,
            "recoveries": self.recoveries,
            "k_next": self.k_next,
        }
        return json.dumps(row, allow_nan=False)


def steps_per_epoch(n_samples: int, batch_size: int) -> int:
    return -(-n_samples // batch_size)


def epoch_order(master_seed: int, client_id: int, round: int, epoch: int, n: int) -> np.ndarray:
    """Shuffle for one local epoch. ``epoch`` is the cursor stored in checkpoints."""
    return streams.stream(master_seed, streams.SHUFFLE, client_id, round, epoch).permutation(n)


def _train_span(arch, params, client, batch_size, lr, master_seed, round, start, stop, spe):
    """Advance ``params`` in place from completed-step count ``start`` to ``stop``."""
    step = start
    while step < stop:
        epoch, b = divmod(step, spe)
        n_batches = min(spe - b, stop - step)
        order = epoch_order(master_seed, client.client_id, round, epoch, client.n_samples)
        sgd_steps(arch, params, client.x, client.y, order, b, n_batches, batch_size, lr)
        step += n_batches


def local_train(client: ClientRecord, model: GlobalModel, local: LocalConfig, privacy: PrivacyParams,
                ft: FaultToleranceConfig, cost_model: CostModel, store, master_seed: int, round: int,
                failure: FailureEvent | None = None) -> ClientUpdate:
    """One client's work for a round.

    Runs ``local.epochs`` passes of sequential minibatch SGD from the global
    model, then clips and noises the delta ``global - local``. Checkpoints are
    saved whenever the completed-step count hits the interval. A failure at
    step ``s`` loses step ``s`` and everything after the last checkpoint; the
    client reloads that checkpoint and replays, consuming the same shuffle
    streams, so the final update matches a failure-free run bit for bit.
    """
    if client.n_samples == 0:
        raise ParameterError(f"client {client.client_id} has an empty shard")
    if client.x.shape[1] != model.arch.n_features:
        raise ShapeError(f"client {client.client_id}: shard width {client.x.shape[1]} "
                         f"!= model width {model.arch.n_features}")
    spe = steps_per_epoch(client.n_samples, local.batch_size)
    total = local.epochs * spe
    params = model.params.copy()
    executed = saves = replayed = 0
    recovered = False
    interval = ft.checkpoint_interval_steps

    def run_to(start, stop):
        # trains in segments that end on checkpoint boundaries
        nonlocal executed, saves
        step = start
        while step < stop:
            nxt = min(stop, (step // interval + 1) * interval) if ft.enabled else stop
            _train_span(model.arch, params, client, local.batch_size, local.lr, master_seed, round,
                        step, nxt, spe)
            executed += nxt - step
            step = nxt
            if ft.enabled and should_checkpoint(step, interval):
                store.save(CheckpointRecord(client.client_id, round, step, params.copy(), step // spe))
                saves += 1

    if failure is not None:
        fail_at = failure.fail_at_step
        run_to(0, fail_at)
        executed += 1  # the step that crashed still cost time
        if not ft.enabled:
            t = client_time(executed, 0, 0, client.compute_capacity, cost_model)
            return ClientUpdate(client.client_id, None, client.n_samples, t, dropped=True, failed=True,
                                steps_executed=executed)
        try:
            resume, restored, cursor = recover(client.client_id, round, store)
        except IntegrityError as exc:
            log.warning("client %d round %d: %s; restarting from step 0", client.client_id, round, exc)
            resume, restored, cursor = 0, None, 0
        if restored is not None and (restored.shape != params.shape or cursor != resume // spe
                                     or resume > fail_at):
            log.warning("client %d round %d: checkpoint does not fit, restarting", client.client_id, round)
            resume, restored = 0, None
        params[:] = model.params if restored is None else restored
        replayed = fail_at + 1 - resume
        recovered = True
        run_to(resume, total)
    else:
        run_to(0, total)

    t = client_time(executed, saves, int(recovered), client.compute_capacity, cost_model)
    delta = model.params - params
    if privacy.enabled:
        delta = clip(delta, privacy.clip_norm)
        delta = add_noise(delta, privacy.sigma, streams.stream(master_seed, streams.NOISE, client.client_id, round))
    return ClientUpdate(client.client_id, delta, client.n_samples, t, recovered=recovered,
                        failed=failure is not None, steps_executed=executed, replayed_steps=replayed,
                        saves=saves)


def aggregate(updates) -> np.ndarray | None:
    """Sample-weighted mean of the updates; None for an empty round.

    Summation runs in client-id order so the result does not depend on list order.
    """
    updates = sorted(updates, key=lambda u: u.client_id)
    if not updates:
        return None
    dim = updates[0].noisy_update.shape
    total = 0
    acc = np.zeros(dim)
    for u in updates:
        if u.noisy_update.shape != dim:
            raise ShapeError("client updates have different lengths")
        acc += u.n_samples * u.noisy_update
        total += u.n_samples
    return acc / total


@dataclass
class Federation:
    """Everything a run needs that stays fixed across rounds."""

    registry: list[ClientRecord]
    test_set: Dataset
    cfg: ExperimentConfig
    store: object

    @property
    def local(self) -> LocalConfig:
        return LocalConfig(self.cfg.local_epochs, self.cfg.batch_size, self.cfg.lr)


def _choose(fed: Federation, state: RoundState, available: list[int]) -> list[int]:
    cfg = fed.cfg
    if cfg.strategy == "full":
        return sorted(available)
    if cfg.strategy == "random":
        k = min(state.k_current, len(available))
        r = streams.stream(cfg.master_seed, streams.SELECTION, state.round)
        return sorted(int(c) for c in r.choice(sorted(available), size=k, replace=False))
    stats = [c.stats() for c in fed.registry]
    maxima = registry_maxima(stats)
    scores = [compute_utility(s, maxima, cfg.selection.w_data, cfg.selection.w_compute) for s in stats]
    return select_top_k(scores, available, state.k_current)


def run_round(fed: Federation, state: RoundState, model: GlobalModel):
    """Execute round ``state.round``; returns ``(model', report, state')``."""
    cfg = fed.cfg
    t = state.round
    started = time.perf_counter()
    avail_rng = streams.stream(cfg.master_seed, streams.AVAILABILITY, t)
    draws = avail_rng.random(len(fed.registry))
    available = [c.client_id for c, u in zip(fed.registry, draws) if u < cfg.p_avail]

    ledger = record_round(state.ledger, cfg.privacy)
    if not available:
        ev = evaluate(model, fed.test_set)
        report = RoundReport(t, [], ev, 0.0, _wall(cfg, started), ledger.epsilon_total, 0, 0, state.k_current,
                             skipped=True)
        return model, report, replace(state, round=t + 1, ledger=ledger, available=(), selected=())

    selected = _choose(fed, state, available)
    by_id = {c.client_id: c for c in fed.registry}
    spe = {cid: cfg.local_epochs * steps_per_epoch(by_id[cid].n_samples, cfg.batch_size) for cid in selected}
    events = {e.client_id: e for e in sample_failures(
        selected, cfg.ft, streams.stream(cfg.master_seed, streams.FAILURE, t), spe, t)}

    def work(cid):
        return local_train(by_id[cid], model, fed.local, cfg.privacy, cfg.ft, cfg.cost_model, fed.store,
                           cfg.master_seed, t, events.get(cid))

    if cfg.workers > 1 and len(selected) > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(work, selected))
    else:
        results = [work(cid) for cid in selected]

    kept = [u for u in results if not u.dropped]
    agg = aggregate(kept)
    new_params = model.params if agg is None else model.params - cfg.server_lr * agg
    new_model = GlobalModel(new_params, model.arch, model.version + 1)
    ev = evaluate(new_model, fed.test_set)

    for cid in selected:
        by_id[cid].last_seen_round = t

    sim_time = max(u.local_time for u in results) + cfg.cost_model.aggregation_cost
    gain = ev.accuracy - (state.last_accuracy if state.last_accuracy is not None else 0.0)
    k_next = state.k_current
    if cfg.strategy == "proposed":
        k_next = adapt_k(state.k_current, sim_time, gain, cfg.selection)

    report = RoundReport(
        t, selected, ev, sim_time, _wall(cfg, started), ledger.epsilon_total,
        failures=sum(u.failed for u in results), recoveries=sum(u.recovered for u in results),
        k_next=k_next, replayed_steps=sum(u.replayed_steps for u in results))
    new_state = RoundState(t + 1, k_next, ledger, ev.accuracy, tuple(available), tuple(selected))
    return new_model, report, new_state


def _wall(cfg, started):
    return time.perf_counter() - started if cfg.record_wall_time else None


def build_federation(cfg: ExperimentConfig, store=None) -> tuple[Federation, GlobalModel]:
    d = cfg.data
    if d.source == "csv":
        dataset = load_csv(d.path, d.label_column)
    else:
        dataset = generate_synthetic(d.n_samples, d.n_features, d.class_sep,
                                     streams.derived_seed(cfg.master_seed, streams.SPLIT, 0))
    if d.normalize:
        dataset = normalize(dataset)
    train, test = train_test_split(dataset, d.train_fraction, streams.stream(cfg.master_seed, streams.SPLIT, 1))
    plan = partition(train, cfg.n_clients, cfg.partition.strategy,
                     streams.derived_seed(cfg.master_seed, streams.PARTITION), cfg.partition.alpha)
    caps = streams.stream(cfg.master_seed, streams.CAPACITY).uniform(cfg.capacity.low, cfg.capacity.high,
                                                                      cfg.n_clients)
    registry = [ClientRecord(i, train.features[idx], train.labels[idx], float(caps[i]))
                for i, idx in enumerate(plan.assignments)]
    if cfg.model.arch == "logistic":
        arch = Arch("logistic", dataset.n_features)
    else:
        arch = Arch("mlp", dataset.n_features, cfg.model.hidden_width)
    model = init_model(arch, streams.derived_seed(cfg.master_seed, streams.INIT))
    return Federation(registry, test, cfg, store if store is not None else MemoryCheckpointStore()), model


def run_experiment(cfg: ExperimentConfig, sink=None, store=None):
    """Run ``cfg.rounds`` rounds. ``sink`` receives each RoundReport as it completes.

    Returns ``(reports, summary, final_model)``.
    """
    started = time.perf_counter()
    fed, model = build_federation(cfg, store)
    initial = evaluate(model, fed.test_set)
    k0 = cfg.selection.k_init
    state = RoundState(0, k0, last_accuracy=initial.accuracy)
    reports = []
    for _ in range(cfg.rounds):
        model, report, state = run_round(fed, state, model)
        reports.append(report)
        if sink is not None:
            sink(report)
    final = reports[-1].eval if reports else initial
    summary = {
        "rounds": cfg.rounds,
        "strategy": cfg.strategy,
        "master_seed": cfg.master_seed,
        "initial": _eval_dict(initial),
        "final_accuracy": final.accuracy,
        "final_auc": final.auc_roc,
        "final_loss": final.loss,
        "total_sim_time_s": float(sum(r.sim_time_s for r in reports)),
        "eps_total": state.ledger.epsilon_total,
        "delta_total": state.ledger.delta_total,
        "sigma": cfg.privacy.sigma,
        "total_failures": sum(r.failures for r in reports),
        "total_recoveries": sum(r.recoveries for r in reports),
        "replayed_steps": sum(r.replayed_steps for r in reports),
        "selection_history": [list(r.selected) for r in reports],
        "k_history": [r.k_next for r in reports],
        "wall_time_s": time.perf_counter() - started,
    }
    return reports, summary, model


def _eval_dict(ev: EvalReport) -> dict:
    return {"accuracy": ev.accuracy, "auc_roc": ev.auc_roc, "loss": ev.loss, "degenerate": ev.degenerate}
