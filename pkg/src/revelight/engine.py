"""Training drivers: asynchronous and synchronous federated runs, the
centralized counterpart, the gradient-transmitting baseline, and the
communication measurements.

One iteration is one client update event (async) or one barrier round
(sync).  The virtual clock is a priority queue over party compute finishes,
message deliveries, and reply arrivals; with the counter-based streams the
whole schedule is a deterministic function of the run config.  Loss and
accuracy are evaluated every n events outside the protocol, so byte counts
stay pure protocol traffic.
"""

from __future__ import annotations

import heapq
import time as _time
from dataclasses import dataclass, field

import numpy as np

from . import streams
from .errors import ConfigError, UsageError, UnsupportedModelError
from .estimator import GAUSSIAN, SPHERE, client_block_zoe, sample_direction, server_block_zoe
from .fedproto import (
    DelayModel,
    PartyNode,
    ServerNode,
    StalenessQueue,
    Transcript,
    warmup_cache,
)
from .models import (
    GlobalModel,
    LocalModel,
    PartitionedDataset,
    global_value,
    init_state,
    local_forward,
    nonconvex_reg,
)

ALGORITHMS = ("asyrevel_gau", "asyrevel_uni", "synrevel", "nonfed", "tig")

# heap event kinds, in tie-break priority order at equal times
_REPLY, _DELIVER, _FINISH = 0, 1, 2


@dataclass
class RunConfig:
    """Everything that determines a run; two runs with equal configs and the
    virtual clock produce byte-identical trajectories and transcripts."""

    algorithm: str
    q: int
    T: int
    eta: float = 1e-3
    eta_server: float | None = None
    mu: float = 1e-3
    lam_eff: float = 5e-5
    tau: int = 0
    p: list[float] | None = None
    seed: int = 0
    straggler: tuple[int, float] | None = None
    clock: str = "virtual"
    scheme: str = GAUSSIAN          # used by synrevel/nonfed; asyrevel_* pin it
    compute_dist: str = "constant"
    latency: float = 0.0
    latency_dist: str = "constant"
    base_compute: float = 1.0
    eval_every: int | None = None
    stop_loss: float | None = None
    record_snapshots: bool = False

    def validate(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}")
        if self.q < 1:
            raise ConfigError("need at least one party")
        if self.T < 0:
            raise ConfigError("event budget must be nonnegative")
        if self.eta <= 0 or self.mu <= 0:
            raise ConfigError("step size and smoothing radius must be positive")
        if self.tau < 0:
            raise ConfigError("delay bound must be nonnegative")
        if self.p is not None:
            if len(self.p) != self.q:
                raise ConfigError(f"p has {len(self.p)} entries for q={self.q}")
            if any(pm <= 0 for pm in self.p):
                raise ConfigError("activation probabilities must be positive")
            if abs(sum(self.p) - 1.0) > 1e-9:
                raise ConfigError("activation probabilities must sum to 1")
        if self.straggler is not None:
            party, factor = self.straggler
            if not 1 <= party <= self.q:
                raise ConfigError(f"straggler party {party} outside 1..{self.q}")
            if factor < 1.0:
                raise ConfigError("slowdown factor must be >= 1")
        if self.clock not in ("virtual", "wall"):
            raise ConfigError(f"unknown clock {self.clock!r}")
        if self.latency > 0 and self.tau < self.q - 1:
            raise ConfigError(
                f"bounded staleness infeasible: latency > 0 allows {self.q - 1} "
                f"concurrent uploads but tau={self.tau}"
            )

    @property
    def direction_scheme(self) -> str:
        if self.algorithm == "asyrevel_gau":
            return GAUSSIAN
        if self.algorithm == "asyrevel_uni":
            return SPHERE
        return self.scheme

    def activation_p(self) -> list[float]:
        return list(self.p) if self.p is not None else [1.0 / self.q] * self.q

    def party_means(self) -> list[float]:
        """Mean compute time per party: slowdown / (q p_m) in base units, so
        activation rates realize the configured probabilities."""
        p = self.activation_p()
        means = [self.base_compute / (self.q * p[m]) for m in range(self.q)]
        if self.straggler is not None:
            party, factor = self.straggler
            means[party - 1] *= factor
        return means


@dataclass
class MetricsRow:
    t: int
    vtime: float
    wtime: float
    loss: float
    acc: float
    bytes_up: int
    bytes_down: int
    staleness: int
    gnorm2: float


@dataclass
class RunMetrics:
    """Per-evaluation-point log plus run-level outcomes."""

    rows: list[MetricsRow] = field(default_factory=list)
    transcript: Transcript | None = None
    snapshots: list[tuple[int, np.ndarray, list[np.ndarray]]] = field(default_factory=list)
    activations: list[int] = field(default_factory=list)
    reached: bool = False
    time_to_target: float = float("nan")
    events_to_target: int = -1
    final_w0: np.ndarray | None = None
    final_w: list[np.ndarray] | None = None

    @property
    def final_loss(self) -> float:
        return self.rows[-1].loss if self.rows else float("nan")

    @property
    def final_accuracy(self) -> float:
        return self.rows[-1].acc if self.rows else float("nan")

    @property
    def total_bytes(self) -> int:
        return (self.rows[-1].bytes_up + self.rows[-1].bytes_down) if self.rows else 0

    @property
    def final_vtime(self) -> float:
        return self.rows[-1].vtime if self.rows else 0.0

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("t,vtime,wtime,loss,acc,bytes_up,bytes_down,staleness,gnorm2\n")
            for r in self.rows:
                fh.write(
                    f"{r.t},{r.vtime:.12g},{r.wtime:.12g},{r.loss:.12g},{r.acc:.12g},"
                    f"{r.bytes_up},{r.bytes_down},{r.staleness},{r.gnorm2:.12g}\n"
                )


def evaluate_loss(w0, w, data: PartitionedDataset, lam_eff,
                  local_model: LocalModel, global_model: GlobalModel) -> float:
    """Training objective at the given parameters (vectorized GLM fast path)."""
    if local_model.kind == "linear" and global_model.kind == "logistic":
        margin = np.zeros(data.n)
        for m in range(data.q):
            margin += data.blocks[m] @ w[m]
        loss = float(np.mean(np.logaddexp(0.0, -data.labels * margin)))
        return loss + lam_eff * sum(nonconvex_reg(wm) for wm in w)
    total = 0.0
    for i in range(data.n):
        c = [local_forward(local_model, w[m], data.blocks[m][i]) for m in range(data.q)]
        total += global_value(global_model, w0, c, data.labels[i])
    return total / data.n + lam_eff * sum(nonconvex_reg(wm) for wm in w)


def evaluate_accuracy(w0, w, data: PartitionedDataset | None,
                      local_model: LocalModel, global_model: GlobalModel) -> float:
    if data is None:
        return float("nan")
    if local_model.kind == "linear" and global_model.kind == "logistic":
        margin = np.zeros(data.n)
        for m in range(data.q):
            margin += data.blocks[m] @ w[m]
        pred = np.where(margin >= 0, 1, -1)
        return float(np.mean(pred == data.labels))
    correct = 0
    for i in range(data.n):
        c = [local_forward(local_model, w[m], data.blocks[m][i]) for m in range(data.q)]
        feats = np.concatenate(c)
        if global_model.kind == "logistic":
            pred = 1 if float(np.sum(feats)) >= 0 else -1
        else:
            logits = feats @ w0.reshape(feats.size, global_model.classes)
            pred = int(np.argmax(logits))
        correct += pred == data.labels[i]
    return correct / data.n


class _Recorder:
    """Shared evaluation/logging state across the drivers."""

    def __init__(self, cfg, data, test_data, local_model, global_model, transcript):
        self.cfg = cfg
        self.data = data
        self.test = test_data
        self.lm = local_model
        self.gm = global_model
        self.transcript = transcript
        self.every = cfg.eval_every if cfg.eval_every else data.n
        self.metrics = RunMetrics(transcript=transcript)
        self.last_v = [0.0] * (cfg.q + 1)
        self.max_stal = 0
        self.stopped = False
        # wall time is only meaningful (and only reproducible to record) in
        # wall-clock mode; the virtual clock writes 0 so metrics files are
        # byte-identical across invocations
        self._wall0 = _time.perf_counter() if cfg.clock == "wall" else None

    def gnorm2(self) -> float:
        return float(sum(self.last_v))

    def note_update(self, party: int, v_hat: np.ndarray) -> None:
        self.last_v[party] = float(np.dot(v_hat, v_hat))

    def due(self, t: int) -> bool:
        return t % self.every == 0

    def log(self, t: int, vtime: float, w0, w) -> bool:
        """Append one row; returns True when the stop criterion is hit."""
        loss = evaluate_loss(w0, w, self.data, self.cfg.lam_eff, self.lm, self.gm)
        acc = evaluate_accuracy(w0, w, self.test, self.lm, self.gm)
        bu = self.transcript.total_bytes("up") if self.transcript else 0
        bd = self.transcript.total_bytes("down") if self.transcript else 0
        wtime = _time.perf_counter() - self._wall0 if self._wall0 is not None else 0.0
        self.metrics.rows.append(MetricsRow(
            t, vtime, wtime, loss, acc,
            bu, bd, self.max_stal, self.gnorm2(),
        ))
        if self.cfg.record_snapshots:
            self.metrics.snapshots.append(
                (t, np.copy(w0), [np.copy(wm) for wm in w])
            )
        if self.cfg.stop_loss is not None and loss <= self.cfg.stop_loss:
            self.metrics.reached = True
            self.metrics.time_to_target = vtime
            self.metrics.events_to_target = t
            self.stopped = True
        return self.stopped

    def finish(self, w0, w, activations) -> RunMetrics:
        self.metrics.final_w0 = np.copy(w0)
        self.metrics.final_w = [np.copy(wm) for wm in w]
        self.metrics.activations = list(activations)
        return self.metrics


def _build_nodes(cfg: RunConfig, data: PartitionedDataset, local_model: LocalModel,
                 global_model: GlobalModel, transcript: Transcript | None):
    state = init_state(data, local_model, global_model, cfg.seed)
    scheme = cfg.direction_scheme
    eta0 = cfg.eta_server if cfg.eta_server is not None else cfg.eta / cfg.q
    parties = [
        PartyNode(m + 1, data.blocks[m], local_model, state.w[m],
                  mu=cfg.mu, eta=cfg.eta, lam_eff=cfg.lam_eff,
                  scheme=scheme, seed=cfg.seed)
        for m in range(cfg.q)
    ]
    server = ServerNode(global_model, state.w0, data.labels, data.n, cfg.q,
                        mu=cfg.mu, eta0=eta0, scheme=scheme, seed=cfg.seed,
                        transcript=transcript)
    return parties, server


def run_asyrevel(cfg: RunConfig, data: PartitionedDataset, local_model: LocalModel,
                 global_model: GlobalModel, test_data: PartitionedDataset | None = None,
                 schedule=None) -> RunMetrics:
    """Asynchronous run: warm-up then T client-activation events.

    With `schedule` (a list of (party, sample) pairs) the protocol runs
    serialized in that order, which is the replay hook the equivalence
    oracles use; otherwise activations emerge from the per-party compute
    clocks at the configured rates.
    """
    cfg.validate()
    if cfg.algorithm not in ("asyrevel_gau", "asyrevel_uni"):
        raise ConfigError(f"run_asyrevel got algorithm {cfg.algorithm!r}")
    if cfg.clock == "wall":
        from .wallclock import run_asyrevel_wall

        return run_asyrevel_wall(cfg, data, local_model, global_model, test_data)
    transcript = Transcript()
    parties, server = _build_nodes(cfg, data, local_model, global_model, transcript)
    warmup_cache(parties, server)
    rec = _Recorder(cfg, data, test_data, local_model, global_model, transcript)

    if schedule is not None:
        return _run_serialized(cfg, parties, server, rec, schedule)

    delay = DelayModel(tau=cfg.tau, compute=cfg.compute_dist,
                       latency=cfg.latency, latency_dist=cfg.latency_dist)
    means = cfg.party_means()
    queue = StalenessQueue(cfg.tau)
    heap: list = []
    serial = 0
    sent = 0
    inflight_msgs: dict[int, object] = {}
    processed = 0  # uploads the server has answered
    applied = 0    # client update events completed; the run's event counter

    def current_w():
        return server.w0, [p.w for p in parties]

    rec.log(0, 0.0, *current_w())

    for p in parties:
        heapq.heappush(heap, (delay.compute_time(cfg.seed, p.id, 0, means[p.id - 1]),
                              _FINISH, p.id, None))

    def drain(now: float) -> None:
        nonlocal processed
        while not rec.stopped:
            nxt = queue.pop_next(processed)
            if nxt is None:
                return
            upload, send_count, _ser = nxt
            rec.max_stal = max(rec.max_stal, processed - send_count)
            reply = server.handle_upload(upload, event=processed + 1)
            processed += 1
            transcript.record(now, "down", reply)
            if server.last_v0 is not None:
                rec.note_update(0, server.last_v0)
            lat = delay.latency_time(cfg.seed, upload.party, upload.seq)
            heapq.heappush(heap, (now + lat, _REPLY, upload.party, reply))

    while applied < cfg.T and heap and not rec.stopped:
        now, kind, idx, payload = heapq.heappop(heap)
        if kind == _FINISH:
            if sent >= cfg.T:
                continue  # event budget exhausted; party idles
            party = parties[idx - 1]
            upload = party.start_step()
            transcript.record(now, "up", upload)
            serial += 1
            sent += 1
            lat = delay.latency_time(cfg.seed, idx, upload.seq)
            queue.send(serial, now + lat, processed)
            inflight_msgs[serial] = upload
            heapq.heappush(heap, (now + lat, _DELIVER, serial, None))
        elif kind == _DELIVER:
            queue.deliver(idx, inflight_msgs.pop(idx))
            drain(now)
        else:  # _REPLY
            party = parties[idx - 1]
            v_hat = party.apply_reply(payload)
            rec.note_update(idx, v_hat)
            applied += 1
            if rec.due(applied):
                rec.log(applied, now, *current_w())
            if applied < cfg.T and not rec.stopped:
                nxt_t = now + delay.compute_time(cfg.seed, idx, party.steps, means[idx - 1])
                heapq.heappush(heap, (nxt_t, _FINISH, idx, None))

    return rec.finish(server.w0, [p.w for p in parties], [p.steps for p in parties])


def _run_serialized(cfg, parties, server, rec, schedule) -> RunMetrics:
    """Replay hook: process (party, sample) pairs one round-trip at a time."""
    transcript = rec.transcript
    clocks = [0.0] * cfg.q
    means = cfg.party_means()
    stopped = rec.log(0, 0.0, server.w0, [p.w for p in parties])
    for t, (m, i) in enumerate(schedule[: cfg.T], start=1):
        if stopped:
            break
        party = parties[m - 1]
        clocks[m - 1] += means[m - 1]
        now = clocks[m - 1]
        upload = party.start_step(sample=i)
        transcript.record(now, "up", upload)
        reply = server.handle_upload(upload, event=t)
        transcript.record(now, "down", reply)
        if server.last_v0 is not None:
            rec.note_update(0, server.last_v0)
        v_hat = party.apply_reply(reply)
        rec.note_update(m, v_hat)
        if rec.due(t):
            stopped = rec.log(t, now, server.w0, [p.w for p in parties])
    return rec.finish(server.w0, [p.w for p in parties], [p.steps for p in parties])


def round_sample(seed: int, r: int, n: int) -> int:
    """The shared per-round index used by synchronous rounds (party slot 0)."""
    return int(streams.stream(seed, streams.SAMPLE, 0, r).integers(n))


def matched_schedule(cfg: RunConfig, n: int, events: int | None = None):
    """Round-robin schedule using the synchronous rounds' shared sample draws.

    Feeding this to run_asyrevel serializes the protocol against the same
    indices the synchronous driver will use; with a single party the two
    trajectories coincide exactly (a barrier over one worker is a no-op).
    """
    events = events if events is not None else cfg.T
    sched = []
    r = 0
    while len(sched) < events:
        i = round_sample(cfg.seed, r, n)
        for m in range(1, cfg.q + 1):
            sched.append((m, i))
        r += 1
    return sched[:events]


def run_synrevel(cfg: RunConfig, data: PartitionedDataset, local_model: LocalModel,
                 global_model: GlobalModel, test_data: PartitionedDataset | None = None) -> RunMetrics:
    """Synchronous rounds: all parties compute on the shared sampled index,
    a barrier waits for the slowest, the server answers every party from the
    same-round outputs (staleness identically zero), then updates apply."""
    cfg.validate()
    transcript = Transcript()
    parties, server = _build_nodes(cfg, data, local_model, global_model, transcript)
    warmup_cache(parties, server)
    rec = _Recorder(cfg, data, test_data, local_model, global_model, transcript)
    delay = DelayModel(tau=0, compute=cfg.compute_dist,
                       latency=cfg.latency, latency_dist=cfg.latency_dist)
    means = cfg.party_means()

    vtime = 0.0
    t = 0
    stopped = rec.log(0, 0.0, server.w0, [p.w for p in parties])
    r = 0
    while t < cfg.T and not stopped:
        i = round_sample(cfg.seed, r, data.n)
        uploads = [party.start_step(sample=i) for party in parties]
        round_time = max(
            delay.compute_time(cfg.seed, m + 1, r, means[m]) for m in range(cfg.q)
        ) + 2 * cfg.latency
        vtime += round_time
        for up in uploads:
            transcript.record(vtime, "up", up)
        fresh = [up.c for up in uploads]
        replies = []
        v0_total = None
        w0_round = server.w0.copy()
        for up in uploads:
            reply, v0 = server.answer_round(up, fresh, w0_round, event=t + up.party)
            replies.append(reply)
            transcript.record(vtime, "down", reply)
            if v0 is not None:
                v0_total = v0 if v0_total is None else v0_total + v0
        if v0_total is not None:
            server.w0 = w0_round - server.eta0 * v0_total
            rec.note_update(0, v0_total)
        for party, reply in zip(parties, replies):
            v_hat = party.apply_reply(reply)
            rec.note_update(party.id, v_hat)
        told = t
        t += cfg.q
        r += 1
        boundary = (told // rec.every + 1) * rec.every
        if boundary <= t:
            stopped = rec.log(t, vtime, server.w0, [p.w for p in parties])
    return rec.finish(server.w0, [p.w for p in parties], [p.steps for p in parties])


def run_nonfederated(cfg: RunConfig, data: PartitionedDataset, local_model: LocalModel,
                     global_model: GlobalModel, test_data: PartitionedDataset | None = None) -> RunMetrics:
    """Centralized counterpart: all features on one node, the identical
    block-coordinate two-point updates from the same streams, no wire.

    Reuses per-(sample, block) output memoization, so with zero latency the
    trajectory is bit-identical to the federated run under shared streams.
    """
    cfg.validate()
    state = init_state(data, local_model, global_model, cfg.seed)
    w = [np.array(x) for x in state.w]
    w0 = np.array(state.w0)
    scheme = cfg.direction_scheme
    eta0 = cfg.eta_server if cfg.eta_server is not None else cfg.eta / cfg.q
    rec = _Recorder(cfg, data, test_data, local_model, global_model, None)
    means = cfg.party_means()
    delay = DelayModel(tau=0, compute=cfg.compute_dist)

    # warm per-(sample, block) output cache, mirroring the protocol's warm-up
    cache = [
        [local_forward(local_model, w[m], data.blocks[m][i]) for m in range(cfg.q)]
        for i in range(data.n)
    ]
    steps = [0] * cfg.q
    server_draws = 0
    heap = [(delay.compute_time(cfg.seed, m + 1, 0, means[m]), m + 1) for m in range(cfg.q)]
    heapq.heapify(heap)
    stopped = rec.log(0, 0.0, w0, w)
    t = 0
    while t < cfg.T and not stopped:
        now, pid = heapq.heappop(heap)
        m = pid - 1
        k = steps[m]
        i = int(streams.stream(cfg.seed, streams.SAMPLE, pid, k).integers(data.n))
        u = sample_direction(scheme, w[m].size,
                             streams.stream(cfg.seed, streams.DIRECTION, pid, k))
        x = data.blocks[m][i]
        c = local_forward(local_model, w[m], x)
        c_hat = local_forward(local_model, w[m] + cfg.mu * u.u, x)
        g0 = nonconvex_reg(w[m])
        g1 = nonconvex_reg(w[m] + cfg.mu * u.u)
        row = list(cache[i])
        row[m] = c
        y = data.labels[i]
        h = global_value(global_model, w0, row, y)
        row_bar = list(row)
        row_bar[m] = c_hat
        h_bar = global_value(global_model, w0, row_bar, y)
        if w0.size > 0:
            u0 = sample_direction(
                scheme, w0.size,
                streams.stream(cfg.seed, streams.SERVER_DIRECTION, 0, server_draws),
            )
            h_hat = global_value(global_model, w0 + cfg.mu * u0.u, row, y)
            v0 = server_block_zoe(h, h_hat, cfg.mu, u0)
            w0 = w0 - eta0 * v0
            rec.note_update(0, v0)
        server_draws += 1
        cache[i][m] = c
        v_hat = client_block_zoe(h, h_bar, g0, g1, w[m].size, cfg.mu, cfg.lam_eff, u)
        w[m] = w[m] - cfg.eta * v_hat
        rec.note_update(pid, v_hat)
        steps[m] = k + 1
        t += 1
        heapq.heappush(heap, (now + delay.compute_time(cfg.seed, pid, k + 1, means[m]), pid))
        if rec.due(t):
            stopped = rec.log(t, now, w0, w)
    return rec.finish(w0, w, steps)


def _head_gradient(global_model: GlobalModel, w0, row, label, m):
    """Intermediate gradient of the head w.r.t. party m's output vector."""
    if global_model.kind == "logistic":
        y = int(label)
        total = float(np.sum(np.concatenate([np.atleast_1d(c) for c in row])))
        sig = 1.0 / (1.0 + np.exp(y * total))
        return np.full(np.atleast_1d(row[m - 1]).size, -y * sig)
    feats = np.concatenate([np.atleast_1d(c) for c in row])
    W = w0.reshape(feats.size, global_model.classes)
    logits = feats @ W
    z = logits - np.max(logits)
    probs = np.exp(z) / np.sum(np.exp(z))
    probs[int(label)] -= 1.0
    dfeats = W @ probs
    odim = np.atleast_1d(row[m - 1]).size
    lo = (m - 1) * odim
    return dfeats[lo:lo + odim]


def _local_param_gradient(local_model: LocalModel, w_m, x, upstream):
    """Chain rule through the local model: d(head)/d(w_m) given d(head)/d(c)."""
    if local_model.kind == "linear":
        return float(upstream[0]) * x
    # manual backprop through the rectifier stack
    shapes = local_model.layer_shapes(x.size)
    acts = [np.asarray(x, dtype=np.float64)]
    pre = []
    off = 0
    for l, (width, fan_in) in enumerate(shapes):
        W = w_m[off:off + width * fan_in].reshape(width, fan_in)
        off += width * fan_in
        b = w_m[off:off + width]
        off += width
        z = W @ acts[-1] + b
        pre.append(z)
        acts.append(np.maximum(z, 0.0) if l != len(shapes) - 1 else z)
    grad = np.zeros_like(w_m)
    delta = np.asarray(upstream, dtype=np.float64)
    off = w_m.size
    for l in range(len(shapes) - 1, -1, -1):
        width, fan_in = shapes[l]
        off -= width
        b_slice = slice(off, off + width)
        off -= width * fan_in
        W_slice = slice(off, off + width * fan_in)
        W = w_m[W_slice].reshape(width, fan_in)
        grad[b_slice] = delta
        grad[W_slice] = np.outer(delta, acts[l]).ravel()
        if l > 0:
            delta = (W.T @ delta) * (pre[l - 1] > 0)
    return grad


def run_tig_baseline(cfg: RunConfig, data: PartitionedDataset, local_model: LocalModel,
                     global_model: GlobalModel, test_data: PartitionedDataset | None = None) -> RunMetrics:
    """Gradient-transmitting baseline.

    Per round the party uploads its output, the download carries the
    intermediate head gradient plus the parameter-gradient-sized chain
    payload, and the party applies the chain-rule update.  Declared
    black-box models are unsupported by construction: without an exposed
    gradient there is nothing to transmit.
    """
    cfg.validate()
    if local_model.black_box or global_model.black_box:
        raise UnsupportedModelError(
            "TIG baseline needs differentiable models with gradients exposed; "
            "a black-box model cannot supply the intermediate gradient"
        )
    transcript = Transcript()
    state = init_state(data, local_model, global_model, cfg.seed)
    w = [np.array(x) for x in state.w]
    w0 = np.array(state.w0)
    eta0 = cfg.eta_server if cfg.eta_server is not None else cfg.eta / cfg.q
    rec = _Recorder(cfg, data, test_data, local_model, global_model, transcript)
    means = cfg.party_means()
    delay = DelayModel(tau=0, compute=cfg.compute_dist)

    cache = [
        [local_forward(local_model, w[m], data.blocks[m][i]) for m in range(cfg.q)]
        for i in range(data.n)
    ]
    for i in range(data.n):
        for m in range(cfg.q):
            transcript.record_raw(0.0, "up", "tig_output", m + 1, i, -1, cache[i][m])
    steps = [0] * cfg.q
    heap = [(delay.compute_time(cfg.seed, m + 1, 0, means[m]), m + 1) for m in range(cfg.q)]
    heapq.heapify(heap)
    stopped = rec.log(0, 0.0, w0, w)
    t = 0
    while t < cfg.T and not stopped:
        now, pid = heapq.heappop(heap)
        m = pid - 1
        k = steps[m]
        i = int(streams.stream(cfg.seed, streams.SAMPLE, pid, k).integers(data.n))
        x = data.blocks[m][i]
        c = local_forward(local_model, w[m], x)
        transcript.record_raw(now, "up", "tig_output", pid, i, k, c)
        row = list(cache[i])
        row[m] = c
        upstream = _head_gradient(global_model, w0, row, data.labels[i], pid)
        transcript.record_raw(now, "down", "tig_grad", pid, i, k, upstream)
        grad = _local_param_gradient(local_model, w[m], x, upstream)
        transcript.record_raw(now, "down", "tig_chain", pid, i, k, grad)
        w[m] = w[m] - cfg.eta * grad
        rec.note_update(pid, grad)
        if w0.size > 0:
            feats = np.concatenate([np.atleast_1d(cc) for cc in row])
            W = w0.reshape(feats.size, global_model.classes)
            logits = feats @ W
            z = logits - np.max(logits)
            probs = np.exp(z) / np.sum(np.exp(z))
            probs[int(data.labels[i])] -= 1.0
            g0 = np.outer(feats, probs).ravel()
            w0 = w0 - eta0 * g0
            rec.note_update(0, g0)
        cache[i][m] = c
        steps[m] = k + 1
        t += 1
        heapq.heappush(heap, (now + delay.compute_time(cfg.seed, pid, k + 1, means[m]), pid))
        if rec.due(t):
            stopped = rec.log(t, now, w0, w)
    return rec.finish(w0, w, steps)


RUNNERS = {
    "asyrevel_gau": run_asyrevel,
    "asyrevel_uni": run_asyrevel,
    "synrevel": run_synrevel,
    "nonfed": run_nonfederated,
    "tig": run_tig_baseline,
}


def run_algorithm(cfg: RunConfig, data, local_model, global_model, test_data=None) -> RunMetrics:
    cfg.validate()
    return RUNNERS[cfg.algorithm](cfg, data, local_model, global_model, test_data)


@dataclass
class CommRow:
    label: str
    block_dim: int
    asy_bytes: int
    tig_bytes: int
    byte_ratio: float
    cost_ratio: float


def training_bytes(metrics: RunMetrics) -> int:
    """Wire bytes excluding warm-up traffic (seq >= 0 entries only)."""
    if metrics.transcript is None:
        return 0
    return sum(e.nbytes for e in metrics.transcript if e.seq >= 0)


def _link_cost(metrics: RunMetrics, per_message_overhead: float) -> float:
    if metrics.transcript is None:
        return 0.0
    entries = [e for e in metrics.transcript if e.seq >= 0]
    return sum(e.nbytes for e in entries) + per_message_overhead * len(entries)


def measure_comm(pairs, per_message_overhead: float = 128.0) -> list[CommRow]:
    """Byte and link-cost ratios of TIG to function-value traffic.

    pairs: iterable of (label, block_dim, asy_metrics, tig_metrics) with the
    two runs sharing an event count.  The link cost charges a fixed
    per-message overhead on top of payload bytes, modeling per-message
    latency at a configured bandwidth.
    """
    rows = []
    for label, block_dim, asy, tig in pairs:
        if not asy.rows or not tig.rows or asy.rows[-1].t != tig.rows[-1].t:
            raise UsageError(f"pair {label!r}: runs are not schedule-paired")
        ab, tb = training_bytes(asy), training_bytes(tig)
        if ab == 0:
            raise UsageError(f"pair {label!r}: no protocol traffic to compare")
        rows.append(CommRow(
            label=label,
            block_dim=block_dim,
            asy_bytes=ab,
            tig_bytes=tb,
            byte_ratio=tb / ab,
            cost_ratio=_link_cost(tig, per_message_overhead) / _link_cost(asy, per_message_overhead),
        ))
    return rows
