"""Client/server exchange of per-mode statistics.

Clients fit locally and upload only (mean, std, n) per mode. The server
pools the uploads once a quorum is reached and broadcasts the resulting
global mixture to every waiting client. Messages are newline-delimited JSON
objects carrying ``protocol_version``.
"""
from __future__ import annotations

import enum
import json
import logging
import math
import socket
import socketserver
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from .core import EM_MODES, ActLabel, ActMixture, GaussianComponent
from .em import EmConfig, fit
from .errors import (
    ConnectionLost,
    IncompleteModes,
    NoClients,
    ProtocolError,
    ValidationError,
    VersionMismatch,
)

log = logging.getLogger(__name__)

PROTOCOL_VERSION = "1"


class AggregationStrategy(str, enum.Enum):
    WEIGHTED_AVERAGE = "weighted"
    MAX_POOLING = "max"


@dataclass(frozen=True)
class ModeStats:
    label: ActLabel
    mean: float
    std: float
    n: int

    def __post_init__(self):
        object.__setattr__(self, "label", ActLabel(self.label))
        if self.n < 1:
            raise ValidationError(f"mode {self.label} needs n >= 1")
        if not self.std >= 0 or not math.isfinite(self.mean):
            raise ValidationError(f"invalid stats for mode {self.label}")


@dataclass(frozen=True)
class ClientStats:
    client_id: str
    records: tuple[ModeStats, ...]

    def __post_init__(self):
        recs = tuple(self.records)
        labels = [r.label for r in recs]
        if sorted(labels) != sorted(EM_MODES) or len(labels) != len(EM_MODES):
            raise IncompleteModes(f"client {self.client_id!r} must report exactly {[m.value for m in EM_MODES]}")
        object.__setattr__(self, "records", tuple(sorted(recs, key=lambda r: r.label.order)))

    def __getitem__(self, label) -> ModeStats:
        label = ActLabel(label)
        return next(r for r in self.records if r.label == label)

    def to_dict(self) -> dict:
        return {
            "client_id": self.client_id,
            "modes": [{"label": r.label.value, "mean": r.mean, "std": r.std, "n": r.n} for r in self.records],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ClientStats":
        try:
            recs = tuple(ModeStats(ActLabel.parse(m["label"]), float(m["mean"]), float(m["std"]), int(m["n"])) for m in d["modes"])
            return cls(str(d["client_id"]), recs)
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed client stats: {exc}") from exc


def summarize_client(client_id: str, mixture: ActMixture, n_per_mode: Union[int, Mapping]) -> ClientStats:
    if isinstance(n_per_mode, Mapping):
        counts = {ActLabel(k): int(v) for k, v in n_per_mode.items()}
    else:
        counts = {label: int(n_per_mode) for label in EM_MODES}
    missing = [m for m in EM_MODES if m not in counts]
    if missing:
        raise IncompleteModes(f"no sample count for {[m.value for m in missing]}")
    recs = tuple(ModeStats(label, c.mean, c.std, counts[label]) for label, c in mixture.components.items())
    return ClientStats(client_id, recs)


def aggregate(stats: Sequence[ClientStats], strategy=AggregationStrategy.WEIGHTED_AVERAGE, min_std: float = 0.05) -> ActMixture:
    """Pool client statistics into the global five-mode mixture.

    Weighted average pools population moments, so the result equals the
    moments of the union of the clients' per-mode samples. Max pooling takes
    the (mean, std) of the client with the most samples for that mode, ties
    broken by the smallest client id. Global mode weights are equal. A
    pooled std below ``min_std`` (a single-sample mode) is raised to it.
    """
    strategy = AggregationStrategy(strategy)
    # fixed summation order makes the result independent of client order
    stats = sorted(stats, key=lambda s: s.client_id)
    if not stats:
        raise NoClients("aggregation needs at least one client")
    comps = {}
    for label in EM_MODES:
        recs = [(s.client_id, s[label]) for s in stats]
        if len(recs) == 1:
            mean, std = recs[0][1].mean, recs[0][1].std
        elif strategy is AggregationStrategy.WEIGHTED_AVERAGE:
            n = np.array([r.n for _, r in recs], dtype=float)
            mu = np.array([r.mean for _, r in recs])
            var = np.array([r.std for _, r in recs]) ** 2
            total = n.sum()
            mean = float((n * mu).sum() / total)
            # same as sum(n(var + mu^2))/N - mean^2, centered to limit cancellation
            pooled_var = float((n * (var + (mu - mean) ** 2)).sum() / total)
            std = math.sqrt(max(pooled_var, 0.0))
        else:
            _, best = min(recs, key=lambda cr: (-cr[1].n, cr[0]))
            mean, std = best.mean, best.std
        if std < min_std:
            log.warning("pooled std for %s is %.3g; clamped to %.3g", label.value, std, min_std)
            std = min_std
        comps[label] = GaussianComponent(mean, std, 1.0 / len(EM_MODES))
    return ActMixture(comps)


# -- wire format -----------------------------------------------------------------


def encode(msg: Mapping) -> bytes:
    body = {"protocol_version": PROTOCOL_VERSION, **msg}
    return (json.dumps(body, sort_keys=True, separators=(",", ":")) + "\n").encode("utf-8")


def decode(line: bytes) -> dict:
    try:
        msg = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"malformed frame: {exc}") from exc
    if not isinstance(msg, dict) or "type" not in msg:
        raise ProtocolError("frame is not a typed message object")
    if msg.get("protocol_version") != PROTOCOL_VERSION:
        raise VersionMismatch(f"expected protocol_version {PROTOCOL_VERSION!r}, got {msg.get('protocol_version')!r}")
    return msg


def register_msg(client_id: str) -> dict:
    return {"type": "Register", "client_id": client_id}


def stats_msg(stats: ClientStats) -> dict:
    return {"type": "StatsUpload", "stats": stats.to_dict()}


def global_msg(mixture: ActMixture, round_no: int) -> dict:
    return {"type": "GlobalModel", "round": round_no, "model": mixture.to_dict()}


def error_msg(code: str, text: str) -> dict:
    return {"type": "Error", "code": code, "text": text}


def parse_addr(addr: str) -> tuple[str, int]:
    host, _, port = str(addr).rpartition(":")
    if not host or not port.isdigit():
        raise ValidationError(f"address must be host:port, got {addr!r}")
    return host, int(port)


def write_global_model(path, mixture: ActMixture, round_no: int) -> None:
    Path(path).write_text(json.dumps({**mixture.to_dict(), "round": round_no}, indent=2) + "\n")


def read_model(path) -> ActMixture:
    return ActMixture.from_dict(json.loads(Path(path).read_text()))


# -- server ----------------------------------------------------------------------


class _RoundState:
    def __init__(self, strategy, quorum: int, rounds: int, out_path):
        self.strategy = AggregationStrategy(strategy)
        self.quorum = quorum
        self.rounds = rounds
        self.out_path = out_path
        self.cond = threading.Condition()
        self.round = 1
        self.pending: dict[str, ClientStats] = {}
        self.results: dict[int, bytes] = {}
        self.models: list[ActMixture] = []
        self.waiting = 0

    def submit(self, stats: ClientStats) -> int:
        with self.cond:
            if stats.client_id in self.pending:
                log.info("client %s re-uploaded in round %d; latest upload wins", stats.client_id, self.round)
            self.pending[stats.client_id] = stats
            my_round = self.round
            if len(self.pending) >= self.quorum:
                self._close_round()
            return my_round

    def _close_round(self):
        ordered = [self.pending[k] for k in sorted(self.pending)]
        model = aggregate(ordered, self.strategy)
        line = encode(global_msg(model, self.round))
        self.results[self.round] = line
        self.models.append(model)
        if self.out_path is not None:
            write_global_model(self.out_path, model, self.round)
        log.info("round %d aggregated from %d clients", self.round, len(ordered))
        self.pending = {}
        self.round += 1
        self.cond.notify_all()

    def wait_result(self, round_no: int, timeout=None) -> Optional[bytes]:
        with self.cond:
            self.cond.wait_for(lambda: round_no in self.results, timeout=timeout)
            return self.results.get(round_no)


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        state: _RoundState = self.server.state
        client_id = None
        try:
            for raw in self.rfile:
                if not raw.strip():
                    continue
                try:
                    msg = decode(raw)
                except VersionMismatch as exc:
                    self._send(encode(error_msg("version_mismatch", str(exc))))
                    return
                except ProtocolError as exc:
                    self._send(encode(error_msg("malformed", str(exc))))
                    return
                kind = msg["type"]
                if kind == "Register":
                    client_id = str(msg.get("client_id", ""))
                    if not client_id:
                        self._send(encode(error_msg("bad_register", "client_id missing")))
                        return
                elif kind == "StatsUpload":
                    if client_id is None:
                        self._send(encode(error_msg("not_registered", "Register must precede StatsUpload")))
                        continue
                    try:
                        stats = ClientStats.from_dict(msg.get("stats", {}))
                    except ValidationError as exc:
                        self._send(encode(error_msg("bad_stats", str(exc))))
                        continue
                    if stats.client_id != client_id:
                        self._send(encode(error_msg("bad_stats", "client_id differs from registration")))
                        continue
                    with state.cond:
                        state.waiting += 1
                    try:
                        round_no = state.submit(stats)
                        line = state.wait_result(round_no)
                        if line is not None:
                            self._send(line)
                    finally:
                        with state.cond:
                            state.waiting -= 1
                            state.cond.notify_all()
                else:
                    self._send(encode(error_msg("unexpected", f"server does not accept {kind}")))
        except (ConnectionError, OSError) as exc:
            log.info("session for %s ended: %s", client_id, exc)

    def _send(self, data: bytes):
        self.wfile.write(data)
        self.wfile.flush()


class _TCPServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


class FederationServer:
    """Aggregation server; ``start`` binds and serves in a background thread."""

    def __init__(self, bind_addr, strategy=AggregationStrategy.WEIGHTED_AVERAGE, quorum: int = 1, rounds: int = 1, out_path=None):
        if quorum < 1 or rounds < 1:
            raise ValidationError("quorum and rounds must be >= 1")
        self.bind_addr = parse_addr(bind_addr) if isinstance(bind_addr, str) else tuple(bind_addr)
        self.state = _RoundState(strategy, quorum, rounds, out_path)
        self._server: Optional[_TCPServer] = None
        self._thread: Optional[threading.Thread] = None

    @property
    def address(self) -> str:
        host, port = self._server.server_address[:2]
        return f"{host}:{port}"

    @property
    def models(self) -> list[ActMixture]:
        return list(self.state.models)

    def start(self) -> "FederationServer":
        self._server = _TCPServer(self.bind_addr, _Handler)
        self._server.state = self.state
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def wait(self, timeout=None) -> bool:
        """Block until all rounds are aggregated and delivered."""
        st = self.state
        with st.cond:
            return st.cond.wait_for(lambda: len(st.results) >= st.rounds and st.waiting == 0, timeout=timeout)

    def stop(self):
        if self._server is not None:
            self._server.shutdown()
            self._server.server_close()
            self._server = None

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


def serve(bind_addr, strategy=AggregationStrategy.WEIGHTED_AVERAGE, quorum: int = 1, rounds: int = 1, out_path="global_model.json", timeout=None) -> list[ActMixture]:
    server = FederationServer(bind_addr, strategy, quorum, rounds, out_path).start()
    log.info("federation server listening on %s (quorum=%d)", server.address, quorum)
    try:
        if not server.wait(timeout):
            raise ProtocolError("server timed out before all rounds completed")
    finally:
        server.stop()
    return server.models


# -- client ----------------------------------------------------------------------


def _connect(addr, retries: int, backoff: float, timeout) -> socket.socket:
    host, port = parse_addr(addr)
    delay = backoff
    for attempt in range(retries + 1):
        try:
            return socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            if attempt == retries:
                raise ConnectionLost(f"could not reach {addr} after {retries} retries: {exc}") from exc
            log.info("connect to %s failed (%s); retrying in %.2fs", addr, exc, delay)
            time.sleep(delay)
            delay *= 2
    raise AssertionError("unreachable")


class FederationClient:
    """One client site: local fit, upload of statistics, receipt of the global model."""

    def __init__(self, server_addr: str, client_id: str, retries: int = 5, backoff: float = 0.25, timeout: Optional[float] = 60.0):
        self.server_addr = server_addr
        self.client_id = client_id
        self.retries = retries
        self.backoff = backoff
        self.timeout = timeout
        self.local_model: Optional[ActMixture] = None
        self.global_model: Optional[ActMixture] = None
        self.global_bytes: Optional[bytes] = None
        self.round: Optional[int] = None

    def upload(self, stats: ClientStats) -> ActMixture:
        sock = _connect(self.server_addr, self.retries, self.backoff, self.timeout)
        try:
            with sock, sock.makefile("rwb") as stream:
                stream.write(encode(register_msg(self.client_id)))
                stream.write(encode(stats_msg(stats)))
                stream.flush()
                line = stream.readline()
        except OSError as exc:
            raise ConnectionLost(f"connection to {self.server_addr} lost: {exc}") from exc
        if not line:
            raise ConnectionLost("server closed the connection before sending the global model")
        msg = decode(line)
        if msg["type"] == "Error":
            if msg.get("code") == "version_mismatch":
                raise VersionMismatch(msg.get("text", ""))
            raise ProtocolError(f"server error {msg.get('code')}: {msg.get('text')}")
        if msg["type"] != "GlobalModel":
            raise ProtocolError(f"unexpected reply {msg['type']}")
        self.global_bytes = line
        self.round = int(msg["round"])
        self.global_model = ActMixture.from_dict(msg["model"])
        return self.global_model

    def run(self, samples, config: Optional[EmConfig] = None) -> ActMixture:
        x = np.asarray(samples, dtype=float)
        mixture, _ = fit(x, config)
        self.local_model = mixture
        counts = {label: max(1, int(round(c.weight * len(x)))) for label, c in mixture.components.items()}
        return self.upload(summarize_client(self.client_id, mixture, counts))


def run_client(server_addr: str, samples, config: Optional[EmConfig] = None, client_id: Optional[str] = None, **kwargs) -> ActMixture:
    client = FederationClient(server_addr, client_id or f"client-{socket.gethostname()}", **kwargs)
    return client.run(samples, config)
