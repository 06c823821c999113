"""Deterministic in-process message-passing simulator.

Virtual time is an integer tick counter driven by an event heap. Every source
of nondeterminism (link delays, per-node randomness) derives from the scenario
seed, so equal configs replay to byte-identical transcripts. Faults are
phase-targeted: a disconnected node neither sends nor receives, a node with
drop_outbound loses everything it emits during that phase, and reconnect
brings a node back at a phase boundary.

Messages between participants can ride authenticated channels: AES-GCM with
the envelope header (src, dst, kind, round, seq) as associated data and a
deterministic per-(src, dst, seq) nonce. Tampering with the ciphertext or
re-addressing an envelope raises AuthFailure.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import random
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .errors import AuthFailure, ConfigError

PHASES = ("setup", "masking", "aggregation", "verification", "decryption")
FAULT_ACTIONS = ("drop_outbound", "disconnect", "reconnect")

DEFAULT_BUDGETS = {
    "setup": 500,
    "masking": 500,
    "aggregation": 200,
    "verification": 500,
    "decryption": 300,
}

AGGREGATOR_ID = 0


# ---- canonical serialization ---------------------------------------------------------


def canonical_json(obj: Any) -> bytes:
    """Stable byte encoding: sorted keys, no whitespace."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def payload_digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()[:16]


def derive_seed(root_seed: int, *parts: Any) -> int:
    """Stable 64-bit sub-seed, independent of process hash randomization."""
    tag = "/".join(str(p) for p in (root_seed, *parts)).encode()
    return int.from_bytes(hashlib.sha256(b"secel/rng/" + tag).digest()[:8], "big")


# ---- configuration -------------------------------------------------------------------


@dataclass(frozen=True)
class Fault:
    """One scheduled fault: applied `offset` ticks after the phase opens."""

    id: int
    phase: str
    action: str
    offset: int = 0


@dataclass
class SimConfig:
    """Scenario-level knobs: everything the transcript depends on."""

    seed: int = 0
    n: int = 3
    delay_min: int = 1
    delay_max: int = 5
    budgets: dict[str, int] = field(default_factory=lambda: dict(DEFAULT_BUDGETS))
    faults: list[Fault] = field(default_factory=list)

    def validate(self) -> None:
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed must be a nonnegative integer")
        if not isinstance(self.n, int) or self.n < 1:
            raise ConfigError("n must be a positive integer")
        if not (1 <= self.delay_min <= self.delay_max):
            raise ConfigError("need 1 <= delay_min <= delay_max")
        for name in PHASES:
            budget = self.budgets.get(name)
            if not isinstance(budget, int) or budget <= 0:
                raise ConfigError(f"missing or invalid budget for phase {name!r}")
            if budget < 10 * self.delay_max:
                raise ConfigError(
                    f"budget for {name!r} too small for the configured delays"
                )
        for f in self.faults:
            if f.phase not in PHASES:
                raise ConfigError(f"unknown phase {f.phase!r} in fault schedule")
            if f.action not in FAULT_ACTIONS:
                raise ConfigError(f"unknown fault action {f.action!r}")
            if not (1 <= f.id <= self.n):
                raise ConfigError(f"fault references unknown participant {f.id}")
            if f.offset < 0:
                raise ConfigError("fault offset must be >= 0")

    @classmethod
    def from_dict(cls, raw: dict) -> SimConfig:
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        delay = raw.get("delay", {})
        budgets = dict(DEFAULT_BUDGETS)
        budgets.update(raw.get("budgets", {}))
        faults = []
        for entry in raw.get("faults", []):
            try:
                faults.append(
                    Fault(
                        id=entry["id"],
                        phase=entry["phase"],
                        action=entry["action"],
                        offset=entry.get("offset", 0),
                    )
                )
            except (TypeError, KeyError) as exc:
                raise ConfigError(f"malformed fault entry {entry!r}") from exc
        cfg = cls(
            seed=raw.get("seed", 0),
            n=raw.get("n", 3),
            delay_min=delay.get("min", 1),
            delay_max=delay.get("max", 5),
            budgets=budgets,
            faults=faults,
        )
        cfg.validate()
        return cfg


# ---- envelopes and transcript -----------------------------------------------------


@dataclass
class Envelope:
    src: int
    dst: int
    kind: str
    round: int
    seq: int
    send_time: int
    deliver_time: int
    secured: bool
    body: dict | None = None  # plaintext payload
    blob: bytes | None = None  # ciphertext payload

    def header(self) -> dict:
        return {
            "src": self.src,
            "dst": self.dst,
            "kind": self.kind,
            "round": self.round,
            "seq": self.seq,
        }

    def digest(self) -> str:
        data = self.blob if self.secured else canonical_json(self.body)
        return payload_digest(data)


class Transcript:
    """Append-only audit log; replay artifact. NDJSON on disk."""

    def __init__(self) -> None:
        self.records: list[dict] = []

    def add(self, **record: Any) -> None:
        self.records.append(record)

    def envelope(self, rtype: str, env: Envelope, **extra: Any) -> None:
        rec = {
            "type": rtype,
            "src": env.src,
            "dst": env.dst,
            "kind": env.kind,
            "round": env.round,
            "seq": env.seq,
            "secured": env.secured,
            "digest": env.digest(),
        }
        rec.update(extra)
        self.records.append(rec)

    def count(self, **match: Any) -> int:
        return sum(
            1
            for rec in self.records
            if all(rec.get(k) == v for k, v in match.items())
        )

    def to_ndjson(self) -> str:
        return "".join(
            json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n"
            for rec in self.records
        )

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_ndjson())


# ---- authenticated channel codec ---------------------------------------------------


def channel_key(shared_secret: int, context: bytes = b"pairwise") -> bytes:
    """32-byte AES key from a shared field/group value."""
    material = shared_secret.to_bytes(64, "big")
    return hashlib.sha256(b"secel/chan/v1/" + context + b"/" + material).digest()


def _nonce(src: int, dst: int, seq: int) -> bytes:
    raw = src.to_bytes(8, "big") + dst.to_bytes(8, "big") + seq.to_bytes(8, "big")
    return hashlib.sha256(b"secel/nonce/v1" + raw).digest()[:12]


def seal(key: bytes, header: dict, body: dict) -> bytes:
    """Encrypt-then-authenticate with the envelope header as associated data."""
    nonce = _nonce(header["src"], header["dst"], header["seq"])
    return AESGCM(key).encrypt(nonce, canonical_json(body), canonical_json(header))


def open_sealed(key: bytes, header: dict, blob: bytes) -> dict:
    """Inverse of seal; AuthFailure on any mismatch (key, header, ciphertext)."""
    nonce = _nonce(header["src"], header["dst"], header["seq"])
    try:
        data = AESGCM(key).decrypt(nonce, blob, canonical_json(header))
    except InvalidTag as exc:
        raise AuthFailure(
            f"envelope {header['kind']} {header['src']}->{header['dst']} failed"
        ) from exc
    return json.loads(data)


def secure_send(sim: Simulator, key: bytes, src: int, dst: int, kind: str, body: dict) -> None:
    """Send one sealed envelope over the simulator."""
    sim.send(src, dst, kind, body, key=key)


def secure_recv(key: bytes, env: Envelope) -> dict:
    """Decrypt a delivered envelope; AuthFailure if it was tampered with."""
    if not env.secured:
        raise AuthFailure("envelope is not channel-secured")
    return open_sealed(key, env.header(), env.blob)


# ---- nodes ---------------------------------------------------------------------------


class Node:
    """Event-driven endpoint. Handlers may only touch own state + the sim API."""

    id: int

    def on_phase_start(self, sim: Simulator, phase: str) -> None:  # pragma: no cover
        pass

    def on_message(self, sim: Simulator, env: Envelope) -> None:  # pragma: no cover
        pass

    def on_timer(self, sim: Simulator, name: str, data: Any) -> None:  # pragma: no cover
        pass


# ---- the simulator -------------------------------------------------------------------


class Simulator:
    """Single-threaded event loop over integer virtual time."""

    def __init__(self, config: SimConfig):
        config.validate()
        self.config = config
        self.now = 0
        self.phase: str | None = None
        self.round = 0
        self.nodes: dict[int, Node] = {}
        self.offline: set[int] = set()
        self.dropping: set[int] = set()  # drop_outbound for the current phase
        self.transcript = Transcript()
        self._heap: list[tuple[int, int, tuple]] = []
        self._tick = 0  # heap tie-break, also total event counter
        self._net_rng = random.Random(derive_seed(config.seed, "net"))
        self._pair_seq: dict[tuple[int, int], int] = {}

    # -- wiring --------------------------------------------------------------------

    def add_node(self, node: Node) -> None:
        self.nodes[node.id] = node

    def node_rng(self, node_id: int) -> random.Random:
        return random.Random(derive_seed(self.config.seed, "node", node_id))

    def online_ids(self) -> list[int]:
        return sorted(set(self.nodes) - self.offline)

    def is_online(self, node_id: int) -> bool:
        return node_id in self.nodes and node_id not in self.offline

    # -- event heap ----------------------------------------------------------------

    def _push(self, time: int, item: tuple) -> None:
        self._tick += 1
        heapq.heappush(self._heap, (time, self._tick, item))

    def schedule_timer(self, node_id: int, at: int, name: str, data: Any = None) -> None:
        self._push(at, ("timer", node_id, name, data))

    def pending_events(self) -> int:
        return len(self._heap)

    # -- sending -------------------------------------------------------------------

    def send(
        self,
        src: int,
        dst: int,
        kind: str,
        body: dict,
        key: bytes | None = None,
    ) -> None:
        if src in self.offline:
            return  # an offline node emits nothing, not even audit records
        seq = self._pair_seq.get((src, dst), 0)
        self._pair_seq[(src, dst)] = seq + 1
        delay = self._net_rng.randint(self.config.delay_min, self.config.delay_max)
        env = Envelope(
            src=src,
            dst=dst,
            kind=kind,
            round=self.round,
            seq=seq,
            send_time=self.now,
            deliver_time=self.now + delay,
            secured=key is not None,
        )
        if key is not None:
            env.blob = seal(key, env.header(), body)
        else:
            env.body = body
        if src in self.dropping:
            self.transcript.envelope("drop", env, t=self.now, reason="drop_outbound")
            return
        self.transcript.envelope("send", env, t=self.now)
        self._push(env.deliver_time, ("deliver", env))

    def broadcast(
        self,
        src: int,
        dsts: Iterable[int],
        kind: str,
        body_for: Callable[[int], dict] | dict,
        key_for: Callable[[int], bytes | None] | None = None,
    ) -> None:
        for dst in sorted(dsts):
            if dst == src:
                continue
            body = body_for(dst) if callable(body_for) else body_for
            key = key_for(dst) if key_for is not None else None
            self.send(src, dst, kind, body, key=key)

    # -- faults ----------------------------------------------------------------------

    def _apply_fault(self, fault: Fault) -> None:
        self.transcript.add(
            t=self.now,
            type="fault",
            id=fault.id,
            action=fault.action,
            phase=self.phase,
        )
        if fault.action == "disconnect":
            self.offline.add(fault.id)
        elif fault.action == "reconnect":
            self.offline.discard(fault.id)
        elif fault.action == "drop_outbound":
            self.dropping.add(fault.id)

    # -- phase execution ---------------------------------------------------------------

    def run_phase(self, phase: str, round_no: int) -> None:
        """Open a phase window, drive events to the budget boundary, close it."""
        if phase not in PHASES:
            raise ConfigError(f"unknown phase {phase!r}")
        self.phase = phase
        self.round = round_no
        self.dropping = set()
        start = self.now
        budget = self.config.budgets[phase]
        self.transcript.add(t=start, type="phase", phase=phase, round=round_no)

        for fault in self.config.faults:
            if fault.phase == phase:
                if fault.offset == 0:
                    self._apply_fault(fault)
                else:
                    self._push(start + fault.offset, ("fault", fault))

        for node_id in sorted(self.nodes):
            if self.is_online(node_id):
                self.nodes[node_id].on_phase_start(self, phase)

        end = start + budget
        while self._heap and self._heap[0][0] < end:
            time, _, item = heapq.heappop(self._heap)
            self.now = time
            if item[0] == "deliver":
                env: Envelope = item[1]
                if env.dst in self.offline or env.dst not in self.nodes:
                    self.transcript.envelope("drop", env, t=self.now, reason="offline_dst")
                    continue
                self.transcript.envelope("deliver", env, t=self.now)
                self.nodes[env.dst].on_message(self, env)
            elif item[0] == "timer":
                _, node_id, name, data = item
                if self.is_online(node_id):
                    self.nodes[node_id].on_timer(self, name, data)
            elif item[0] == "fault":
                self._apply_fault(item[1])
        self.now = end

    def log_note(self, kind: str, **data: Any) -> None:
        self.transcript.add(t=self.now, type="note", note=kind, **data)

    def log_auth_failure(self, env: Envelope) -> None:
        self.transcript.envelope("auth_fail", env, t=self.now)


def run_scenario(config, round_spec=None):
    """Execute a full scenario: parse config, drive the round state machines.

    Accepts a SimConfig plus a protocol RoundSpec, or a single flat dict/JSON
    document carrying both. Returns the protocol's ScenarioResult (final round
    states + transcript).
    """
    from .protocol import RoundSpec, run_rounds

    if isinstance(config, dict):
        sim_config = SimConfig.from_dict(config)
        spec = RoundSpec.from_dict(config) if round_spec is None else round_spec
    else:
        sim_config = config
        spec = round_spec
    if spec is None:
        raise ConfigError("no round spec supplied")
    return run_rounds(spec, sim_config)
