"""Deterministic discrete-event simulation of buffered asynchronous split FL.

The server side follows the GAS loop: every activation arrival is stored and
folded into the per-label distributions; a full activation buffer triggers
generation + one server update; the arriving client then gets its activation
gradient from the current server model. Model uploads go to the model buffer,
whose aggregation advances the global iteration counter and frees the client
for re-selection.

Only client compute and uplink transfers take simulated time. Downlink and
server-side work are instantaneous.
"""

import heapq
import logging
import zlib
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from . import latency
from .actdist import ActivationDistributions, plan_generation, sample_activations
from .buffers import ActivationBuffer, BufferStatus, ModelBuffer
from .config import ExperimentConfig
from .data import Dataset, Partition, balanced_probe
from .errors import GasError, NoIdleClient, SimulationError
from .metrics import MetricsLog, MetricsRow, evaluate_accuracy, gradient_dissimilarity
from .nn import init_mlp, layer_params, with_params
from .split import (
    ActivationBatch,
    SplitModel,
    client_backward_update,
    client_forward,
    empirical_label_dist,
    server_loss_and_grads,
    server_update,
)

log = logging.getLogger(__name__)

ACTIVATION_ARRIVAL = "activation_arrival"
MODEL_ARRIVAL = "model_arrival"
CLIENT_DISPATCH = "client_dispatch"


def rng_stream(seed: int, name: str) -> np.random.Generator:
    """Independent named generator derived from the master seed."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(name.encode())]))


def select_client(idle, rng: np.random.Generator) -> int:
    """Uniform draw from the idle (not dispatched) clients."""
    pool = sorted(idle)
    if not pool:
        raise NoIdleClient("every client is already dispatched")
    return pool[int(rng.integers(len(pool)))]


@dataclass(order=True)
class Event:
    time: float
    seq: int
    kind: str = field(compare=False)
    client: int = field(compare=False)
    payload: object = field(default=None, compare=False)


@dataclass
class ClientState:
    layers: list
    dispatch_version: int
    e: int = 0
    caches: list = None
    pending: Optional[ActivationBatch] = None


@dataclass
class DissimilarityRecord:
    server_update: int
    without_gen: float
    with_gen: float


class Simulation:
    def __init__(self, config: ExperimentConfig, train: Dataset, partition: Partition,
                 test: Optional[Dataset] = None, profiles=None, model: Optional[SplitModel] = None):
        self.cfg = config
        self.train = train
        self.test = test
        self.partition = [np.asarray(p, dtype=np.int64) for p in partition]
        if len(self.partition) != config.K:
            raise ValueError(f"partition has {len(self.partition)} clients, config K={config.K}")
        seed = config.seed
        self.rng_select = rng_stream(seed, "client-selection")
        self.rng_generate = rng_stream(seed, "generation")
        self.rng_batches = [rng_stream(seed, f"minibatch/{k}") for k in range(config.K)]
        if profiles is None:
            profiles = latency.sample_profiles(
                config.K, rng_stream(seed, "profiles"), [len(p) for p in self.partition],
                config.radius_km, config.flops_min, config.flops_max, config.tx_power_w,
                config.homogeneous)
        self.profiles = list(profiles)
        if model is None:
            layers = init_mlp(config.widths, rng_stream(seed, "init"))
            model = SplitModel.from_layers(layers, config.cut, config.num_classes)
        self.client_w = model.client_layers
        self.server_w = model.server_layers
        self.num_classes = model.num_classes
        self.cut_dim = model.cut_dim
        self.client_dists = [empirical_label_dist(train.labels[p], self.num_classes) for p in self.partition]

        q_s, q_c = config.buffer_sizes
        self.q_s, self.q_c = q_s, q_c
        self.act_buf = ActivationBuffer(q_s, config.B)
        self.model_buf = ModelBuffer(q_c)
        self.dists = ActivationDistributions(
            self.num_classes, self.cut_dim,
            "full" if config.covariance == "full" else "diag", config.weighting_fn)
        self._timing = self._client_timing()

        self.now = 0.0
        self.seq = 0
        self.queue: List[Event] = []
        self.clients: Dict[int, ClientState] = {}
        self.idle = set(range(config.K))
        self.t = 0
        self.server_updates = 0
        self.tau_max = 0
        self.rows_stored = 0
        self.rows_consumed = 0
        self.generated_rows = 0
        self.models_stored = 0
        self.models_consumed = 0
        self.activation_arrivals = [0] * config.K
        self.log = MetricsLog()
        self.dissimilarity: List[DissimilarityRecord] = []
        self._pending_dissim: List[DissimilarityRecord] = []
        self.started = False
        self.on_row: Optional[Callable[[MetricsRow], None]] = None
        self.on_event: Optional[Callable[[dict], None]] = None
        self._probe_idx = balanced_probe(test, config.probe_per_class) if test is not None else None
        if config.measure_dissimilarity and self._probe_idx is not None:
            per_class = np.bincount(test.labels[self._probe_idx], minlength=self.num_classes)
            log.info("dissimilarity probe: %d held-out rows, per class %s", per_class.sum(), per_class.tolist())

    # -- pickling drops the callbacks; the owner re-attaches them after resume

    def __getstate__(self):
        state = self.__dict__.copy()
        state["on_row"] = None
        state["on_event"] = None
        return state

    # -- timing

    def _client_timing(self):
        cfg = self.cfg
        client_widths = list(cfg.widths[: cfg.cut + 1])
        n_params = sum(p.size for p in layer_params(self.client_w))
        share = cfg.bandwidth_hz / cfg.C
        out = []
        for prof in self.profiles:
            rate = latency.uplink_rate_bps(prof.distance_km, share, prof.tx_power_watts, cfg.noise_dbm_hz)
            out.append({
                "forward": latency.compute_time(latency.dense_forward_flops(cfg.B, client_widths), prof.flops_capacity),
                "backward": latency.compute_time(latency.dense_backward_flops(cfg.B, client_widths), prof.flops_capacity),
                "upload_activations": latency.transfer_time(latency.activation_payload_bytes(cfg.B, self.cut_dim), rate),
                "upload_model": latency.transfer_time(latency.model_payload_bytes(n_params), rate),
            })
        return out

    def timing(self, k: int) -> dict:
        """Per-step latencies (seconds) of client ``k``: forward, backward and both uploads."""
        return dict(self._timing[k])

    def iteration_time(self, k: int) -> float:
        """Forward + activation upload + backward for one local iteration of client ``k``."""
        tm = self._timing[k]
        return tm["forward"] + tm["upload_activations"] + tm["backward"]

    # -- event plumbing

    def _schedule(self, time, kind, client, payload=None):
        heapq.heappush(self.queue, Event(time, self.seq, kind, client, payload))
        self.seq += 1

    def _stamp(self, time, kind, client) -> Event:
        """Sequence-numbered event for the sync loop, which has no queue."""
        ev = Event(time, self.seq, kind, client)
        self.seq += 1
        return ev

    def _trace(self, ev: Event):
        if self.on_event is not None:
            self.on_event({
                "time": ev.time,
                "seq": ev.seq,
                "kind": ev.kind,
                "client": ev.client,
                "activation_rows": self.act_buf.current_rows,
                "model_entries": len(self.model_buf),
                "aggregations": self.t,
                "server_updates": self.server_updates,
            })

    @property
    def finished(self) -> bool:
        return self.t >= self.cfg.T

    def run(self, until: Optional[int] = None, until_time: Optional[float] = None) -> MetricsLog:
        """Advance until ``until`` aggregations (default: config T) have happened.

        With ``until_time`` the run also stops before the first event later
        than that simulated time. Sync rounds that start before it run to the end.
        """
        stop = self.cfg.T if until is None else min(until, self.cfg.T)
        horizon = float("inf") if until_time is None else float(until_time)
        if self.cfg.mode == "sync":
            self._run_sync(stop, horizon)
        else:
            self._run_async(stop, horizon)
        return self.log

    # -- asynchronous GAS loop

    def _run_async(self, stop, horizon=float("inf")):
        if not self.started:
            self.started = True
            for _ in range(self.cfg.C):
                k = select_client(self.idle, self.rng_select)
                self.idle.discard(k)
                self._schedule(self.now, CLIENT_DISPATCH, k)
        while self.t < stop:
            if not self.queue:
                raise SimulationError("event queue drained before termination", self.now)
            if self.queue[0].time > horizon:
                break
            ev = heapq.heappop(self.queue)
            if ev.time < self.now:
                raise SimulationError("event scheduled in the past", ev.time, ev.client)
            self.now = ev.time
            try:
                if ev.kind == CLIENT_DISPATCH:
                    self._on_dispatch(ev.client)
                elif ev.kind == ACTIVATION_ARRIVAL:
                    self._on_activations(ev.client, ev.payload)
                elif ev.kind == MODEL_ARRIVAL:
                    self._on_model(ev.client, ev.payload)
                else:
                    raise SimulationError(f"unknown event kind {ev.kind}", ev.time, ev.client)
            except SimulationError:
                raise
            except GasError as exc:
                raise SimulationError(f"{type(exc).__name__}: {exc}", ev.time, ev.client) from exc
            self._trace(ev)

    def _client_forward(self, k, state: ClientState):
        idx = self.partition[k]
        rng = self.rng_batches[k]
        pick = rng.choice(idx.size, self.cfg.B, replace=idx.size < self.cfg.B)
        rows = idx[pick]
        batch, caches = client_forward(state.layers, self.train.features[rows], self.train.labels[rows],
                                       self.client_dists[k], client_id=k)
        state.caches = caches
        return batch

    def _on_dispatch(self, k):
        state = ClientState([l.copy() for l in self.client_w], dispatch_version=self.t)
        self.clients[k] = state
        batch = self._client_forward(k, state)
        tm = self._timing[k]
        self._schedule(self.now + tm["forward"] + tm["upload_activations"], ACTIVATION_ARRIVAL, k, batch)

    def _reference_batch(self):
        feats = self.test.features[self._probe_idx]
        labels = self.test.labels[self._probe_idx]
        batch, _ = client_forward(self.client_w, feats, labels, empirical_label_dist(labels, self.num_classes))
        return batch

    def _server_step(self):
        """Generation, drain, one server update. Buffer must be full."""
        progress = self.server_updates + 1
        measure = self.cfg.measure_dissimilarity and self.test is not None
        if measure:
            reference = self._reference_batch()
            before = gradient_dissimilarity(self.server_w, self.act_buf.snapshot(self.num_classes), reference)
        generated = None
        if self.cfg.generation_enabled:
            plan = plan_generation(self.act_buf.label_counts(self.num_classes), self.dists.estimators,
                                   self.cfg.effective_gen_cap, self.cfg.min_samples)
            generated = sample_activations(self.dists.estimators, plan, self.rng_generate, self.num_classes,
                                           self.cut_dim, progress, self.cfg.clamp_generated, self.cfg.min_samples)
            self.generated_rows += generated.rows
        real_rows = self.act_buf.current_rows
        concat = self.act_buf.drain_concat(generated, progress)
        self.rows_consumed += real_rows
        if measure:
            after = gradient_dissimilarity(self.server_w, concat, reference)
            rec = DissimilarityRecord(self.server_updates, before, after)
            self.dissimilarity.append(rec)
            self._pending_dissim.append(rec)
        self.server_w = server_update(self.server_w, concat, self.cfg.lr)
        self.server_updates += 1

    def _on_activations(self, k, batch: ActivationBatch):
        self.activation_arrivals[k] += 1
        batch.progress_stamp = self.server_updates + 1
        status = self.act_buf.store(batch)
        self.rows_stored += batch.rows
        if self.cfg.generation_enabled:
            self.dists.observe(batch)
        if status is BufferStatus.FULL:
            self._server_step()
        _, _, grad_acts = server_loss_and_grads(self.server_w, batch)
        state = self.clients[k]
        state.layers = client_backward_update(state.layers, state.caches, grad_acts, self.cfg.lr)
        state.caches = None
        state.e += 1
        tm = self._timing[k]
        if state.e < self.cfg.E:
            nxt = self._client_forward(k, state)
            self._schedule(self.now + tm["backward"] + tm["forward"] + tm["upload_activations"],
                           ACTIVATION_ARRIVAL, k, nxt)
        else:
            params = [p.copy() for p in layer_params(state.layers)]
            self._schedule(self.now + tm["backward"] + tm["upload_model"], MODEL_ARRIVAL, k,
                           (params, state.dispatch_version))

    def _on_model(self, k, payload):
        params, version = payload
        staleness = self.t - version
        status = self.model_buf.store(params, self.profiles[k].data_size, staleness, client_id=k)
        self.models_stored += 1
        del self.clients[k]
        if status is BufferStatus.FULL:
            self._aggregate()
            if self.t >= self.cfg.T:
                return
        self.idle.add(k)
        j = select_client(self.idle, self.rng_select)
        self.idle.discard(j)
        self._schedule(self.now, CLIENT_DISPATCH, j)

    def _aggregate(self):
        self.tau_max = max([self.tau_max] + [e.staleness for e in self.model_buf.entries])
        n = len(self.model_buf)
        agg = self.model_buf.aggregate()
        self.models_consumed += n
        self.client_w = with_params(self.client_w, agg)
        self.t += 1
        self._emit_row()

    def _emit_row(self):
        acc = None
        if self.test is not None and (self.t % self.cfg.eval_every == 0 or self.t == self.cfg.T):
            acc = evaluate_accuracy(self.client_w, self.server_w, self.test.features, self.test.labels)
        without = with_gen = None
        if self._pending_dissim:
            without = float(np.mean([r.without_gen for r in self._pending_dissim]))
            with_gen = float(np.mean([r.with_gen for r in self._pending_dissim]))
            self._pending_dissim = []
        row = MetricsRow(self.t, self.now, self.server_updates, acc, without, with_gen,
                         self.act_buf.current_rows, len(self.model_buf), self.tau_max)
        self.log.append(row)
        if self.on_row is not None:
            self.on_row(row)

    # -- synchronous baseline: barrier per local iteration and per round

    def _run_sync(self, stop, horizon=float("inf")):
        self.started = True
        while self.t < stop and self.now < horizon:
            try:
                self._sync_round()
            except SimulationError:
                raise
            except GasError as exc:
                raise SimulationError(f"{type(exc).__name__}: {exc}", self.now) from exc

    def _sync_round(self):
        cfg = self.cfg
        idle = set(range(cfg.K))
        chosen = []
        for _ in range(cfg.C):
            k = select_client(idle, self.rng_select)
            idle.discard(k)
            chosen.append(k)
        start = self.now
        for k in chosen:
            self.clients[k] = ClientState([l.copy() for l in self.client_w], dispatch_version=self.t)
            self._trace(self._stamp(start, CLIENT_DISPATCH, k))
        ready = {k: start for k in chosen}
        for _ in range(cfg.E):
            arrivals = []
            for k in chosen:
                batch = self._client_forward(k, self.clients[k])
                tm = self._timing[k]
                arrivals.append((ready[k] + tm["forward"] + tm["upload_activations"], k, batch))
            barrier = max(a[0] for a in arrivals)
            for when, k, batch in sorted(arrivals, key=lambda a: (a[0], chosen.index(a[1]))):
                self.activation_arrivals[k] += 1
                batch.progress_stamp = self.server_updates + 1
                self.act_buf.store(batch)
                self.rows_stored += batch.rows
                self._trace(self._stamp(when, ACTIVATION_ARRIVAL, k))
            self.now = barrier
            self._server_step()
            for _, k, batch in arrivals:
                state = self.clients[k]
                _, _, grad_acts = server_loss_and_grads(self.server_w, batch)
                state.layers = client_backward_update(state.layers, state.caches, grad_acts, cfg.lr)
                state.caches = None
                state.e += 1
                ready[k] = barrier + self._timing[k]["backward"]
        uploads = sorted(((ready[k] + self._timing[k]["upload_model"], chosen.index(k), k) for k in chosen))
        for when, _, k in uploads:
            state = self.clients.pop(k)
            self.model_buf.store(layer_params(state.layers), self.profiles[k].data_size, self.t - state.dispatch_version, k)
            self.models_stored += 1
            self._trace(self._stamp(when, MODEL_ARRIVAL, k))
        self.now = uploads[-1][0]
        self._aggregate()


def run_simulation(config: ExperimentConfig, train: Dataset, partition: Partition, test: Optional[Dataset] = None,
                   **kw) -> MetricsLog:
    sim = Simulation(config, train, partition, test, **kw)
    return sim.run()
