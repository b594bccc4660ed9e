"""Wire protocol: framing, server cache, bounded-delay semantics, and the audit.

Training traffic consists of exactly two message kinds.  A party uploads its
local output and the output at a perturbed parameter point; the server
replies with the head value at the cached outputs and at the perturbed
substitution.  No parameter or gradient vector ever crosses this wire, which
is the property the transcript audit mechanizes.

Frame layout (little endian): 4-byte length of the remainder, 1-byte variant
tag (0 = Upload, 1 = Reply), 4-byte party, 4-byte sample, 4-byte seq, 2-byte
vector length, then 64-bit floats (Upload carries two vectors of that
length, c followed by c_hat; Reply carries the pair h, h_bar).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from . import streams
from .errors import DecodeError, DomainError, ProtocolError, ShapeError
from .estimator import client_block_zoe, sample_direction, server_block_zoe
from .models import GlobalModel, LocalModel, global_value, local_forward, nonconvex_reg

_HEAD = struct.Struct("<IBiiiH")
HEADER_BYTES = _HEAD.size  # 19
UPLOAD_TAG = 0
REPLY_TAG = 1


@dataclass
class Upload:
    party: int
    sample: int
    c: np.ndarray
    c_hat: np.ndarray
    seq: int


@dataclass
class Reply:
    party: int
    sample: int
    h: float
    h_bar: float
    seq: int


def frame_bytes(n_floats: int) -> int:
    """Size of a frame carrying n_floats payload values."""
    return HEADER_BYTES + 8 * n_floats


def encode_message(msg) -> bytes:
    """Encode one message as a length-prefixed binary frame."""
    if isinstance(msg, Upload):
        c = np.asarray(msg.c, dtype=np.float64)
        c_hat = np.asarray(msg.c_hat, dtype=np.float64)
        if c.shape != c_hat.shape:
            raise ShapeError("upload vectors c and c_hat must have equal length")
        floats = np.concatenate([c, c_hat])
        head = _HEAD.pack(
            HEADER_BYTES - 4 + 8 * floats.size, UPLOAD_TAG,
            msg.party, msg.sample, msg.seq, c.size,
        )
    elif isinstance(msg, Reply):
        floats = np.array([msg.h, msg.h_bar], dtype=np.float64)
        head = _HEAD.pack(
            HEADER_BYTES - 4 + 16, REPLY_TAG, msg.party, msg.sample, msg.seq, 2
        )
    else:
        raise DomainError(f"cannot encode {type(msg).__name__}")
    return head + floats.astype("<f8").tobytes()


def decode_message(data: bytes):
    """Decode one frame; raises DecodeError naming the failing offset."""
    if len(data) < 4:
        raise DecodeError("truncated header at offset 0")
    if len(data) < HEADER_BYTES:
        raise DecodeError(f"truncated header at offset {len(data)}")
    length, tag, party, sample, seq, veclen = _HEAD.unpack_from(data, 0)
    if len(data) - 4 != length:
        raise DecodeError(
            f"length mismatch at offset 4: declared {length}, found {len(data) - 4}"
        )
    if tag == UPLOAD_TAG:
        n_floats = 2 * veclen
    elif tag == REPLY_TAG:
        if veclen != 2:
            raise DecodeError(f"length mismatch at offset {HEADER_BYTES - 2}: reply needs 2 values")
        n_floats = 2
    else:
        raise DecodeError(f"unknown variant tag {tag} at offset 4")
    if len(data) != frame_bytes(n_floats):
        raise DecodeError(
            f"length mismatch at offset {HEADER_BYTES}: payload needs {8 * n_floats} bytes"
        )
    floats = np.frombuffer(data, dtype="<f8", offset=HEADER_BYTES).copy()
    if tag == UPLOAD_TAG:
        return Upload(party, sample, floats[:veclen], floats[veclen:], seq)
    return Reply(party, sample, float(floats[0]), float(floats[1]), seq)


@dataclass
class TranscriptEntry:
    time: float
    direction: str  # 'up' or 'down'
    variant: str
    party: int
    sample: int
    seq: int
    payload: np.ndarray
    nbytes: int

    def vector_lengths(self) -> list[int]:
        """Semantic payload vector lengths used by the audit.

        Protocol uploads carry two equal vectors; protocol replies carry two
        scalars; baseline traffic (tig_* variants) carries one vector.
        """
        n = int(self.payload.size)
        if self.variant == "upload":
            return [n // 2, n - n // 2] if n else [0]
        if self.variant == "reply" and n == 2:
            return [1, 1]
        return [n]


class Transcript:
    """Append-only record of everything that crossed the wire."""

    def __init__(self) -> None:
        self.entries: list[TranscriptEntry] = []
        self._bytes = {"up": 0, "down": 0}

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def record(self, time: float, direction: str, msg) -> TranscriptEntry:
        raw = encode_message(msg)
        if isinstance(msg, Upload):
            entry = TranscriptEntry(
                time, direction, "upload", msg.party, msg.sample, msg.seq,
                np.concatenate([msg.c, msg.c_hat]), len(raw),
            )
        else:
            entry = TranscriptEntry(
                time, direction, "reply", msg.party, msg.sample, msg.seq,
                np.array([msg.h, msg.h_bar]), len(raw),
            )
        self.entries.append(entry)
        self._bytes[direction] += entry.nbytes
        return entry

    def record_raw(self, time, direction, variant, party, sample, seq, payload) -> TranscriptEntry:
        payload = np.asarray(payload, dtype=np.float64)
        entry = TranscriptEntry(
            time, direction, variant, party, sample, seq, payload,
            frame_bytes(payload.size),
        )
        self.entries.append(entry)
        self._bytes[direction] += entry.nbytes
        return entry

    def total_bytes(self, direction: str | None = None) -> int:
        if direction is None:
            return self._bytes["up"] + self._bytes["down"]
        return self._bytes[direction]

    def to_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for e in self.entries:
                fh.write(json.dumps({
                    "time": e.time,
                    "dir": e.direction,
                    "variant": e.variant,
                    "party": e.party,
                    "sample": e.sample,
                    "seq": e.seq,
                    "payload": [float(v) for v in e.payload],
                    "bytes": e.nbytes,
                }) + "\n")

    @classmethod
    def from_jsonl(cls, path) -> "Transcript":
        t = cls()
        with open(path) as fh:
            for line in fh:
                obj = json.loads(line)
                entry = TranscriptEntry(
                    obj["time"], obj["dir"], obj["variant"], obj["party"],
                    obj["sample"], obj["seq"], np.array(obj["payload"]), obj["bytes"],
                )
                t.entries.append(entry)
                t._bytes[entry.direction] += entry.nbytes
        return t


class ServerCache:
    """Latest local output per (sample, party) with receipt stamps."""

    def __init__(self, n: int, q: int) -> None:
        self.n = n
        self.q = q
        self.latest: list[list[np.ndarray | None]] = [[None] * q for _ in range(n)]
        self.stamp = -np.ones((n, q), dtype=np.int64)

    def put(self, sample: int, party: int, c: np.ndarray, stamp: int) -> None:
        prev = self.stamp[sample, party - 1]
        if stamp < prev:
            raise ProtocolError(f"cache stamp would decrease for sample {sample}, party {party}")
        self.latest[sample][party - 1] = np.asarray(c, dtype=np.float64)
        self.stamp[sample, party - 1] = stamp

    def get(self, sample: int, party: int) -> np.ndarray:
        v = self.latest[sample][party - 1]
        if v is None:
            raise ProtocolError(f"cache cell ({sample}, {party}) not warmed")
        return v

    def row(self, sample: int) -> list[np.ndarray]:
        return [self.get(sample, p) for p in range(1, self.q + 1)]

    def fully_populated(self) -> bool:
        return all(v is not None for row in self.latest for v in row)


@dataclass
class DelayModel:
    """Bounded-staleness timing model for the simulated protocol.

    tau bounds message-transit staleness (uploads processed between an
    upload's send and its own processing); the delay queue enforces it by
    construction.  Compute times and network latencies are drawn from the
    counter-based streams so timings replay exactly.
    """

    tau: int = 0
    compute: str = "constant"     # 'constant' | 'exponential'
    latency: float = 0.0          # mean one-way latency, virtual units
    latency_dist: str = "constant"  # 'constant' | 'uniform'

    def __post_init__(self) -> None:
        if self.tau < 0:
            raise DomainError("delay bound must be nonnegative")
        if self.compute not in ("constant", "exponential"):
            raise DomainError(f"unknown compute-time model {self.compute!r}")
        if self.latency_dist not in ("constant", "uniform"):
            raise DomainError(f"unknown latency model {self.latency_dist!r}")

    def compute_time(self, seed: int, party: int, step: int, mean: float) -> float:
        if self.compute == "constant":
            return mean
        rng = streams.stream(seed, streams.COMPUTE, party=party, step=step)
        return float(rng.exponential(mean))

    def latency_time(self, seed: int, party: int, step: int) -> float:
        if self.latency <= 0:
            return 0.0
        if self.latency_dist == "constant":
            return self.latency
        rng = streams.stream(seed, streams.LATENCY, party=party, step=step)
        return float(rng.uniform(0.0, 2.0 * self.latency))


class StalenessQueue:
    """Delivered-but-unprocessed uploads plus the tau clamp.

    Messages are normally processed in delivery order, but no message may see
    more than tau other uploads processed between its send and its own turn.
    Treating each unprocessed message as a unit job with deadline
    send_count + tau, the queue switches to oldest-first whenever the
    delivery-order schedule would miss a deadline, stalling (processing
    nothing) while the oldest message is still in flight.  With at most q - 1
    concurrent competitors per message this keeps staleness <= tau whenever
    tau >= q - 1, and degenerates to strict send order at tau = 0.
    """

    def __init__(self, tau: int) -> None:
        self.tau = tau
        self.pending: list[tuple[float, int, int, object]] = []  # (delivery, send_count, serial, msg)
        self.in_flight: dict[int, tuple[float, int]] = {}  # serial -> (delivery, send_count)

    def send(self, serial: int, delivery_time: float, send_count: int) -> None:
        self.in_flight[serial] = (delivery_time, send_count)

    def deliver(self, serial: int, msg) -> None:
        delivery, send_count = self.in_flight.pop(serial)
        self.pending.append((delivery, send_count, serial, msg))

    def _deadline_pressure(self, processed_count: int) -> bool:
        # Unprocessed messages sorted oldest-first; slot i is the earliest
        # count at which the i-th could run.  Pressure when some slot would
        # pass a deadline, i.e. processed_count + i >= send_count_i + tau.
        sends = sorted(
            [p[1] for p in self.pending] + [s for _, s in self.in_flight.values()]
        )
        return any(processed_count + i >= s + self.tau for i, s in enumerate(sends))

    def pop_next(self, processed_count: int):
        """Next message to process, or None to stall / when empty.

        Returns (msg, send_count, serial).  Stalls when the deadline rule
        demands the oldest unprocessed message but it is still in flight.
        """
        if not self.pending and not self.in_flight:
            return None
        if self._deadline_pressure(processed_count):
            oldest_pending = min(
                ((p[1], p[2]) for p in self.pending), default=None
            )
            oldest_flying = min(
                ((s, ser) for ser, (_, s) in self.in_flight.items()), default=None
            )
            if oldest_pending is None or (
                oldest_flying is not None and oldest_flying < oldest_pending
            ):
                return None  # stall for the in-flight oldest
            choice = next(
                p for p in self.pending if (p[1], p[2]) == oldest_pending
            )
        elif self.pending:
            choice = min(self.pending, key=lambda p: (p[0], p[1], p[2]))
        else:
            return None
        self.pending.remove(choice)
        delivery, send_count, serial, msg = choice
        return msg, send_count, serial


class PartyNode:
    """One feature-holding party: owns its block, parameters, and directions."""

    def __init__(self, party_id, X_block, local_model: LocalModel, w, *,
                 mu, eta, lam_eff, scheme, seed):
        self.id = party_id
        self.X = X_block
        self.model = local_model
        self.w = np.asarray(w, dtype=np.float64)
        self.mu = mu
        self.eta = eta
        self.lam_eff = lam_eff
        self.scheme = scheme
        self.seed = seed
        self.steps = 0          # activation counter, addresses the streams
        self.pending = None     # outstanding (sample, direction, g0, g1)

    @property
    def dim(self) -> int:
        return int(self.w.size)

    def start_step(self, sample: int | None = None) -> Upload:
        """Sample an index, perturb, and build the upload (one outstanding).

        An explicit sample overrides the index stream; directions always come
        from the party's own direction stream at its activation count.
        """
        if self.pending is not None:
            raise ProtocolError(f"party {self.id} already has an outstanding upload")
        k = self.steps
        if sample is None:
            i = int(streams.stream(self.seed, streams.SAMPLE, self.id, k).integers(self.X.shape[0]))
        else:
            i = int(sample)
        u = sample_direction(self.scheme, self.dim,
                             streams.stream(self.seed, streams.DIRECTION, self.id, k))
        x = self.X[i]
        c = local_forward(self.model, self.w, x)
        c_hat = local_forward(self.model, self.w + self.mu * u.u, x)
        g0 = nonconvex_reg(self.w)
        g1 = nonconvex_reg(self.w + self.mu * u.u)
        self.pending = (i, u, g0, g1)
        return Upload(party=self.id, sample=i, c=c, c_hat=c_hat, seq=k)

    def warm_upload(self, sample: int) -> Upload:
        c = local_forward(self.model, self.w, self.X[sample])
        return Upload(party=self.id, sample=sample, c=c, c_hat=c, seq=-1)

    def apply_reply(self, reply: Reply) -> np.ndarray:
        """Finish the step: form the block estimate and descend."""
        if self.pending is None:
            raise ProtocolError(f"party {self.id} got a reply with no pending upload")
        i, u, g0, g1 = self.pending
        if reply.sample != i or reply.seq != self.steps:
            raise ProtocolError(
                f"party {self.id} reply for sample {reply.sample}/seq {reply.seq}, "
                f"expected {i}/{self.steps}"
            )
        v_hat = client_block_zoe(reply.h, reply.h_bar, g0, g1, self.dim,
                                 self.mu, self.lam_eff, u)
        if not np.isfinite(v_hat).all():
            raise ProtocolError(f"party {self.id}: non-finite update rejected")
        self.w = self.w - self.eta * v_hat
        self.pending = None
        self.steps += 1
        return v_hat


class ServerNode:
    """Label holder: evaluates the head against cached party outputs."""

    def __init__(self, global_model: GlobalModel, w0, labels, n, q, *,
                 mu, eta0, scheme, seed, transcript: Transcript | None = None):
        self.model = global_model
        self.w0 = np.asarray(w0, dtype=np.float64)
        self.labels = labels
        self.cache = ServerCache(n, q)
        self.mu = mu
        self.eta0 = eta0
        self.scheme = scheme
        self.seed = seed
        self.transcript = transcript
        self.uploads_seen = 0
        self.last_v0: np.ndarray | None = None

    def warm(self, upload: Upload, time: float = 0.0) -> None:
        if self.transcript is not None:
            self.transcript.record(time, "up", upload)
        self.cache.put(upload.sample, upload.party, upload.c, stamp=0)

    def handle_upload(self, upload: Upload, event: int) -> Reply:
        """Head values from the pre-update cache, reply, then cache overwrite."""
        i, m = upload.sample, upload.party
        if not 0 <= i < self.cache.n:
            raise ProtocolError(f"unknown sample id {i}")
        row = self.cache.row(i)
        row[m - 1] = upload.c
        y = self.labels[i]
        h = global_value(self.model, self.w0, row, y)
        row_bar = list(row)
        row_bar[m - 1] = upload.c_hat
        h_bar = global_value(self.model, self.w0, row_bar, y)
        if self.w0.size > 0:
            u0 = sample_direction(
                self.scheme, self.w0.size,
                streams.stream(self.seed, streams.SERVER_DIRECTION, 0, self.uploads_seen),
            )
            h_hat = global_value(self.model, self.w0 + self.mu * u0.u, row, y)
            v0 = server_block_zoe(h, h_hat, self.mu, u0)
            if not np.isfinite(v0).all():
                raise ProtocolError("server: non-finite head update rejected")
            self.w0 = self.w0 - self.eta0 * v0
            self.last_v0 = v0
        self.uploads_seen += 1
        self.cache.put(i, m, upload.c, stamp=event)
        return Reply(party=m, sample=i, h=h, h_bar=h_bar, seq=upload.seq)

    def answer_round(self, upload: Upload, fresh: list[np.ndarray], w0_base: np.ndarray,
                     event: int):
        """Synchronous-round reply: head values against the same-round outputs
        of every party (staleness zero), estimates taken at w0_base.

        Returns (reply, head_estimate or None); the caller applies the head
        updates after the barrier.
        """
        i, m = upload.sample, upload.party
        if not 0 <= i < self.cache.n:
            raise ProtocolError(f"unknown sample id {i}")
        row = list(fresh)
        y = self.labels[i]
        h = global_value(self.model, w0_base, row, y)
        row_bar = list(row)
        row_bar[m - 1] = upload.c_hat
        h_bar = global_value(self.model, w0_base, row_bar, y)
        v0 = None
        if w0_base.size > 0:
            u0 = sample_direction(
                self.scheme, w0_base.size,
                streams.stream(self.seed, streams.SERVER_DIRECTION, 0, self.uploads_seen),
            )
            h_hat = global_value(self.model, w0_base + self.mu * u0.u, row, y)
            v0 = server_block_zoe(h, h_hat, self.mu, u0)
        self.uploads_seen += 1
        self.cache.put(i, m, upload.c, stamp=event)
        return Reply(party=m, sample=i, h=h, h_bar=h_bar, seq=upload.seq), v0


def warmup_cache(parties: list[PartyNode], server: ServerNode) -> ServerCache:
    """Every party uploads its initial output for every sample.

    Populates all (sample, party) cells; the uploads are logged in the
    transcript and counted in the byte totals.
    """
    for party in parties:
        for i in range(server.cache.n):
            server.warm(party.warm_upload(i))
    return server.cache


@dataclass
class AuditReport:
    ok: bool
    checked: int
    violation_index: int | None = None
    reason: str | None = None

    def __bool__(self) -> bool:
        return self.ok


def audit_transcript(transcript: Transcript, dims: list[int], d0: int = 0,
                     max_output_dim: int = 1) -> AuditReport:
    """Check that only function-value-shaped payloads crossed the wire.

    A transcript passes iff every payload vector is no longer than the
    largest local output and no payload vector length equals a parameter
    block dimension (a parameter- or gradient-shaped payload).  Reports the
    first offending entry otherwise.
    """
    blocked = {int(d) for d in dims}
    if d0 > 0:
        blocked.add(int(d0))
    checked = 0
    for idx, entry in enumerate(transcript):
        for length in entry.vector_lengths():
            checked += 1
            if length > max_output_dim:
                return AuditReport(
                    False, checked, idx,
                    f"entry {idx} ({entry.variant}, party {entry.party}): payload vector "
                    f"length {length} exceeds max local output dim {max_output_dim}",
                )
            if length in blocked:
                return AuditReport(
                    False, checked, idx,
                    f"entry {idx} ({entry.variant}, party {entry.party}): payload vector "
                    f"length {length} matches a parameter block dimension",
                )
    return AuditReport(True, checked)
