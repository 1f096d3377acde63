"""In-process simulation of federated weighted naive Bayes.

Each client fits its own probability table from its training rows and
never shares it. Only weight vectors travel: the server draws random
initial weights, every round each client overwrites its local weights with
the broadcast ones, runs a capped number of L-BFGS iterations on its own
conditional log-likelihood, and sends the result back; the server averages
the vectors and broadcasts the mean.

Every message is encoded to its wire form and decoded again before the
server sees it, so the wire format is exercised on every round.
"""

from __future__ import annotations

import json
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dataset import DiscreteDataset, derive_rng
from .exceptions import AggregationError, MessageError, OptimizerError
from .generative import ParamTable, fit_counts, normalize
from .optimize import OptimizeReport, OptimizerConfig, minimize
from .weighted import CllObjective

MAGIC = b"FNBW"
WIRE_VERSION = 1
_HEADER = struct.Struct("<4sHIIQQ")

__all__ = [
    "WeightMessage",
    "ClientState",
    "ClientRoundStats",
    "RoundRecord",
    "FederationResult",
    "init_global_weights",
    "local_round",
    "aggregate",
    "run_federation",
    "personalize",
]


@dataclass(eq=False)
class WeightMessage:
    """One client's weight vector for one round.

    Binary layout (little-endian): magic ``FNBW``, u16 version, u32 round,
    u32 client id, u64 schema hash, u64 payload length, then that many
    float64 values.
    """

    round: int
    client_id: int
    schema_hash: int
    payload: np.ndarray

    def to_bytes(self) -> bytes:
        payload = np.ascontiguousarray(self.payload, dtype="<f8")
        head = _HEADER.pack(
            MAGIC, WIRE_VERSION, self.round, self.client_id, self.schema_hash, len(payload)
        )
        return head + payload.tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "WeightMessage":
        if len(blob) < _HEADER.size:
            raise MessageError("message shorter than its header")
        magic, version, rnd, cid, shash, n = _HEADER.unpack_from(blob)
        if magic != MAGIC:
            raise MessageError(f"bad magic {magic!r}")
        if version != WIRE_VERSION:
            raise MessageError(f"unsupported wire version {version}")
        body = blob[_HEADER.size:]
        if len(body) != 8 * n:
            raise MessageError(f"payload holds {len(body)} bytes, header says {8 * n}")
        payload = np.frombuffer(body, dtype="<f8").astype(float)
        return cls(rnd, cid, shash, payload)

    def to_json(self) -> str:
        return json.dumps(
            {
                "magic": MAGIC.decode(),
                "version": WIRE_VERSION,
                "round": self.round,
                "client_id": self.client_id,
                "schema_hash": f"{self.schema_hash:016x}",
                "payload": [float(v) for v in self.payload],
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "WeightMessage":
        try:
            doc = json.loads(text)
            if doc["magic"] != MAGIC.decode() or doc["version"] != WIRE_VERSION:
                raise MessageError("bad magic or version")
            return cls(
                int(doc["round"]),
                int(doc["client_id"]),
                int(doc["schema_hash"], 16),
                np.asarray(doc["payload"], dtype=float),
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise MessageError(f"malformed JSON message: {exc}") from exc

    def roundtrip(self, message_format="binary") -> "WeightMessage":
        if message_format == "binary":
            return WeightMessage.from_bytes(self.to_bytes())
        if message_format == "json":
            return WeightMessage.from_json(self.to_json())
        raise ValueError(f"unknown message format {message_format!r}")


@dataclass(eq=False)
class ClientState:
    """Local view of one client: its table, its rows and its current weights."""

    client_id: int
    params: ParamTable
    train: CllObjective
    test: CllObjective | None
    train_rows: np.ndarray
    test_rows: np.ndarray
    local_weights: np.ndarray | None = None
    last_report: OptimizeReport | None = None

    @classmethod
    def fit(cls, client_id, data: DiscreteDataset, train_rows, test_rows=(), alpha=1.0):
        """Fit the client's table on ``train_rows`` only."""
        train_rows = np.asarray(train_rows, dtype=np.int64)
        test_rows = np.asarray(test_rows, dtype=np.int64)
        params = normalize(fit_counts(data, train_rows), alpha)
        train = CllObjective(
            params, data.X[train_rows], data.y[train_rows], data.missing[train_rows]
        )
        test = None
        if len(test_rows):
            test = CllObjective(
                params, data.X[test_rows], data.y[test_rows], data.missing[test_rows]
            )
        return cls(client_id, params, train, test, train_rows, test_rows)

    @property
    def dimension(self):
        return self.params.layout.size

    @property
    def n_train(self):
        return len(self.train_rows)

    def accuracy(self, weights, split="test"):
        objective = self.train if split == "train" else self.test
        if objective is None:
            return float("nan")
        return objective.accuracy(weights)


@dataclass
class ClientRoundStats:
    client_id: int
    start_objective: float
    objective: float
    iterations_used: int
    termination: str
    objective_trace: list
    train_acc: float
    test_acc: float
    global_train_acc: float = float("nan")
    global_test_acc: float = float("nan")


@dataclass
class RoundRecord:
    round: int
    per_client: list
    global_weights_norm: float
    global_train_acc: float
    global_test_acc: float


@dataclass
class FederationResult:
    global_weights: np.ndarray
    records: list = field(default_factory=list)


def init_global_weights(dimension: int, seed: int) -> np.ndarray:
    """Initial server weights, i.i.d. uniform on [0.5, 1.5]."""
    if dimension <= 0:
        raise ValueError("dimension must be positive")
    return derive_rng(seed, "init-weights").uniform(0.5, 1.5, size=dimension)


def local_round(client: ClientState, global_weights, opt: OptimizerConfig, round=0):
    """Replace the client's weights by ``global_weights`` and optimise locally."""
    global_weights = np.asarray(global_weights, dtype=float)
    if global_weights.shape != (client.dimension,):
        raise ValueError(
            f"client {client.client_id}: global weights have shape {global_weights.shape}, "
            f"expected ({client.dimension},)"
        )
    client.local_weights = global_weights.copy()
    try:
        report = minimize(client.train, client.local_weights, opt)
    except OptimizerError as exc:
        raise OptimizerError(f"client {client.client_id}: {exc}") from exc
    client.local_weights = report.final_point
    client.last_report = report
    return WeightMessage(
        round, client.client_id, client.params.layout.schema_hash(), report.final_point.copy()
    )


def personalize(client: ClientState, global_weights, opt: OptimizerConfig) -> np.ndarray:
    """One more local optimisation from the final global weights (never aggregated)."""
    return local_round(client, global_weights, opt).payload


def aggregate(messages, *, expected_clients=None, round=None, mode="uniform", sizes=None):
    """Coordinatewise mean of the message payloads, summed in client-id order.

    Parameters
    ----------
    messages : list of WeightMessage
    expected_clients : iterable of int, optional
        Client ids that must all be present.
    round : int, optional
        Round number every message must carry.
    mode : {"uniform", "weighted"}
        ``"weighted"`` averages proportionally to ``sizes[client_id]``.
    sizes : mapping or sequence, optional
        Training-set size per client id, needed for ``mode="weighted"``.
    """
    messages = sorted(messages, key=lambda m: m.client_id)
    if not messages:
        raise AggregationError("no messages to aggregate")
    ids = [m.client_id for m in messages]
    if len(set(ids)) != len(ids):
        raise AggregationError(f"duplicate client ids in {ids}")
    if expected_clients is not None:
        missing = sorted(set(expected_clients) - set(ids))
        extra = sorted(set(ids) - set(expected_clients))
        if missing or extra:
            raise AggregationError(f"missing clients {missing}, unexpected clients {extra}")
    rounds = {m.round for m in messages}
    if len(rounds) != 1 or (round is not None and rounds != {round}):
        raise AggregationError(f"round mismatch: {sorted(rounds)} (expected {round})")
    hashes = {m.schema_hash for m in messages}
    if len(hashes) != 1:
        raise AggregationError("schema hash mismatch between clients")
    dims = {len(m.payload) for m in messages}
    if len(dims) != 1:
        raise AggregationError(f"payload lengths differ: {sorted(dims)}")

    total = np.zeros(dims.pop())
    if mode == "uniform":
        for m in messages:
            total += m.payload
        return total / len(messages)
    if mode == "weighted":
        if sizes is None:
            raise AggregationError("weighted aggregation needs client sizes")
        weight_sum = 0.0
        for m in messages:
            total += sizes[m.client_id] * m.payload
            weight_sum += sizes[m.client_id]
        return total / weight_sum
    raise ValueError(f"unknown aggregation mode {mode!r}")


def _stats_for(client, evaluate):
    report = client.last_report
    return ClientRoundStats(
        client_id=client.client_id,
        start_objective=report.objective_trace[0],
        objective=report.final_value,
        iterations_used=report.iterations_used,
        termination=report.termination.value,
        objective_trace=list(report.objective_trace),
        train_acc=client.accuracy(client.local_weights, "train") if evaluate else float("nan"),
        test_acc=client.accuracy(client.local_weights, "test") if evaluate else float("nan"),
    )


def run_federation(
    clients,
    rounds: int,
    opt: OptimizerConfig,
    seed: int,
    *,
    initial_weights=None,
    aggregation="uniform",
    message_format="binary",
    evaluate=True,
    n_jobs=1,
    on_round=None,
) -> FederationResult:
    """Run ``rounds`` rounds of broadcast / local optimisation / averaging.

    Parameters
    ----------
    clients : list of ClientState
    rounds : int
        Number of federated rounds, at least 1.
    opt : OptimizerConfig
        Local optimiser settings; ``max_iterations`` is the per-round cap.
    seed : int
        Seeds the random initial weights.
    initial_weights : array, optional
        Overrides the random initialisation.
    aggregation : {"uniform", "weighted"}
    message_format : {"binary", "json"}
        Wire encoding used for the per-round round trip.
    evaluate : bool
        Record per-client accuracies every round.
    n_jobs : int
        Threads used for the local rounds. Results do not depend on it.
    on_round : callable, optional
        Called as ``on_round(record, messages)`` after every round.
    """
    clients = list(clients)
    if not clients:
        raise ValueError("need at least one client")
    if rounds < 1:
        raise ValueError("rounds must be at least 1")
    dims = {c.dimension for c in clients}
    if len(dims) != 1:
        raise ValueError("clients disagree on the weight dimension")
    dim = dims.pop()
    if initial_weights is None:
        weights = init_global_weights(dim, seed)
    else:
        weights = np.array(initial_weights, dtype=float)
    ids = [c.client_id for c in clients]
    sizes = {c.client_id: c.n_train for c in clients}
    records = []

    pool = ThreadPoolExecutor(n_jobs) if n_jobs > 1 else None
    try:
        for t in range(1, rounds + 1):
            broadcast = weights.copy()
            broadcast.setflags(write=False)

            def work(client, t=t, broadcast=broadcast):
                return local_round(client, broadcast, opt, round=t)

            sent = list(pool.map(work, clients)) if pool else [work(c) for c in clients]
            received = [m.roundtrip(message_format) for m in sent]
            weights = aggregate(
                received, expected_clients=ids, round=t, mode=aggregation, sizes=sizes
            )
            stats = [_stats_for(c, evaluate) for c in clients]
            if evaluate:
                for c, s in zip(clients, stats):
                    s.global_train_acc = c.accuracy(weights, "train")
                    s.global_test_acc = c.accuracy(weights, "test")
            record = RoundRecord(
                round=t,
                per_client=stats,
                global_weights_norm=float(np.linalg.norm(weights)),
                global_train_acc=float(np.mean([s.global_train_acc for s in stats])),
                global_test_acc=float(np.mean([s.global_test_acc for s in stats])),
            )
            records.append(record)
            if on_round is not None:
                on_round(record, received)
    finally:
        if pool:
            pool.shutdown()
    return FederationResult(weights, records)
