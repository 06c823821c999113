"""Five-phase verifiable-aggregation rounds driven over the virtual-time simulator.

Node 0 is the untrusted aggregator; nodes 1..n are participants. Each round
walks the fixed phase sequence:

  setup         two-step dealing of bivariate-polynomial rows, pairwise channel
                keys, and the round authentication key (group mode: one-time,
                wrapped into the group so holders only ever see lifts)
  masking       every participant one-time-pads its encoded gradient vector and
                submits (c1, c2) pairs to the aggregator in the clear
  aggregation   the aggregator sums component-wise (or is told to tamper) and
                broadcasts the aggregate together with the contributor set M
  verification  intact share-holders elect a leader by commit/reveal; the leader
                gathers share evaluations, rebuilds missing contributor keys,
                checks the homomorphic tag, and reconstructs lost shares
  decryption    the leader strips the pad and hands the plaintext sum only to
                online contributors; everyone else just learns the verdict

Dealing traffic rides plaintext envelopes: the simulator models participant-to-
participant links as private (the only adversary here is the aggregator, which
is never a relay). Everything that flows after shares may have been lost —
share evaluations for recovery and the decrypted result — uses AEAD channels
keyed from the dealt polynomials, so a fresh key exists even for a participant
that lost every received share.
"""

from __future__ import annotations

import hashlib
import random
from collections import Counter
from dataclasses import dataclass, field
from typing import Any

from .algebra import (
    DEFAULT_PRIME,
    FieldElement,
    FixedPointCodec,
    PrimeModulus,
    UniPoly,
    is_probable_prime,
    lagrange_at,
    lagrange_at_zero,
)
from .errors import (
    AuthFailure,
    ConfigError,
    RecoveryQuorumFailure,
    RevealTimeout,
    SetupQuorumFailure,
    VerificationFailed,
)
from .group_variant import (
    DEFAULT_GROUP,
    TOY_GROUP,
    GroupMaskedPair,
    GroupParams,
    KeyPair,
    bsgs,
    combine_key_lifts,
    exp_lagrange_at,
    exp_lagrange_at_zero,
    group_aggregate,
    group_mask_vector,
    group_unmask,
    group_verify,
    unwrap_share,
    wrap_share,
)
from .maskmac import MaskedPair, aggregate_vectors, mask_vector, unmask_vector, verify_vector
from .sharing import (
    DealerState,
    accumulate_sv,
    new_dealer,
    pairwise_key,
    recover_lost_share,
    step1_messages,
    step2_messages,
)
from .simnet import (
    AGGREGATOR_ID,
    PHASES,
    Node,
    SimConfig,
    Simulator,
    Transcript,
    channel_key,
    derive_seed,
    secure_recv,
    secure_send,
)

VARIANTS = ("scalar", "group")
TAMPER_POLICIES = ("honest", "flip_element", "substitute_all", "inject_offset")
TAMPER_OFFSET = 3  # additive constant used by the inject_offset policy

# Each message kind is only meaningful inside one phase window; anything that
# straggles across a boundary (or arrives for the wrong round) is ignored.
PHASE_OF_KIND = {
    "setup1": "setup",
    "setup2": "setup",
    "pk": "setup",
    "gsetup1": "setup",
    "gsetup2": "setup",
    "refresh": "masking",
    "submission": "masking",
    "aggregate": "aggregation",
    "abort": "aggregation",
    "commit": "verification",
    "reveal": "verification",
    "share_req": "verification",
    "share_resp": "verification",
    "share_resp_fb": "verification",
    "reject": "verification",
    "result": "decryption",
    "round_done": "decryption",
}


# ---- pure protocol operations ---------------------------------------------------


def _commitment(value: int, salt: bytes, voter: int) -> str:
    h = hashlib.sha256()
    h.update(b"secel/elect/v1")
    h.update(value.to_bytes(8, "big"))
    h.update(salt)
    h.update(voter.to_bytes(8, "big"))
    return h.hexdigest()


def elect_leader(reveals: dict[int, int]) -> int:
    """Pick the leader from valid commit/reveal pairs.

    The revealed values are summed and reduced modulo the electorate size; the
    winner is that index into the id-sorted electorate. Any single honest
    reveal makes the sum uniform, so no coalition of the others can steer the
    choice. An empty electorate is a liveness failure.
    """
    if not reveals:
        raise RevealTimeout("no valid reveals; cannot elect a leader")
    ids = sorted(reveals)
    return ids[sum(reveals.values()) % len(ids)]


def mask_key_note(received_v: dict[int, Any]) -> frozenset[int]:
    """Bookkeeping note: which dealers' first-round evaluations a holder keeps.

    The leader consults these notes to decide whether a dealer's key material
    is still reachable after dropouts and share loss.
    """
    return frozenset(received_v)


def recovery_quorum(
    notes: dict[int, frozenset[int]], dealer: int, t: int
) -> list[int]:
    """Holders able to help rebuild `dealer`'s key material, id-sorted.

    A holder helps iff its note lists the dealer; the dealer itself never
    counts. Callers compare the length against t.
    """
    return sorted(h for h, note in notes.items() if dealer in note and h != dealer)


@dataclass
class SetupResult:
    """Offline (simulator-free) outcome of a full-attendance two-step dealing."""

    dealers: dict[int, DealerState]
    received_v: dict[int, dict[int, FieldElement]]  # holder -> dealer -> V_dealer(holder)
    received_a: dict[int, dict[int, FieldElement]]  # holder -> dealer -> A_dealer(holder)
    survivors: list[int]  # ids still holding a complete bundle (the set T)


def run_setup(
    ids: list[int],
    t: int,
    modulus: PrimeModulus,
    rng: random.Random,
    share_loss: tuple[int, ...] = (),
) -> SetupResult:
    """Run both dealing rounds among `ids`, then apply share loss.

    This is the pure-math twin of the simulator's setup phase: every dealer is
    present, messages are exchanged instantly, and the survivor set T is
    whoever still holds a complete bundle afterwards. Raises
    SetupQuorumFailure when fewer than t survive — nothing dealt this round
    could ever be recovered or verified.
    """
    ids = sorted(ids)
    n = len(ids)
    dealers = {i: new_dealer(i, t, n, modulus, rng) for i in ids}
    received_v: dict[int, dict[int, FieldElement]] = {i: {} for i in ids}
    received_a: dict[int, dict[int, FieldElement]] = {i: {} for i in ids}
    for i in ids:
        for j, value in step1_messages(dealers[i], ids).items():
            received_v[j][i] = value
    for i in ids:
        accumulate_sv(dealers[i], received_v[i], ids)
    for i in ids:
        for j, value in step2_messages(dealers[i], ids, rng).items():
            received_a[j][i] = value
    for q in share_loss:
        received_v[q] = {}
        received_a[q] = {}
        dealers[q].a_poly = None
        dealers[q].s_v = None
    survivors = [i for i in ids if i not in set(share_loss)]
    if len(survivors) < t:
        raise SetupQuorumFailure(
            f"only {len(survivors)} complete bundles survived; need {t}"
        )
    return SetupResult(dealers, received_v, received_a, survivors)


# ---- round configuration and reporting ---------------------------------------------


@dataclass
class RoundSpec:
    """Everything a round's math depends on (network knobs live in SimConfig)."""

    n: int
    t: int = 2
    length: int = 4
    s_min: int | None = None  # aggregation quorum; defaults to n
    rounds: int = 1
    variant: str = "scalar"
    tamper: str = "honest"
    share_loss: tuple[int, ...] = ()
    gradients: list[list[float]] | None = None
    prime: int = DEFAULT_PRIME
    group: GroupParams = field(default_factory=lambda: TOY_GROUP)
    scale_bits: int | None = None  # None -> 16 (scalar) / 10 (group)
    clip_bound: float = 8.0

    # -- derived pieces ----------------------------------------------------------

    @property
    def quorum(self) -> int:
        return self.n if self.s_min is None else self.s_min

    @property
    def participant_ids(self) -> list[int]:
        return list(range(1, self.n + 1))

    def codec(self) -> FixedPointCodec:
        if self.variant == "group":
            # shift into [0, 2*clip] so sums stay small enough to brute-decode
            return FixedPointCodec(
                scale_bits=self.scale_bits or 10,
                clip_bound=self.clip_bound,
                signed=False,
            )
        return FixedPointCodec(
            scale_bits=self.scale_bits or 16,
            clip_bound=self.clip_bound,
            signed=True,
        )

    def field_modulus(self) -> PrimeModulus:
        if self.variant == "group":
            return self.group.exponent_field()
        return PrimeModulus(self.prime)

    def decode_bound(self, m_count: int) -> int:
        """Largest decodable aggregate in group mode: m parties, full clip range."""
        codec = self.codec()
        return m_count * round(2 * codec.clip_bound * codec.scale) + 1

    def validate(self) -> None:
        if not isinstance(self.n, int) or self.n < 2:
            raise ConfigError("n must be an integer >= 2")
        if not isinstance(self.t, int) or not (2 <= self.t <= self.n):
            raise ConfigError("threshold t must satisfy 2 <= t <= n")
        if not isinstance(self.length, int) or self.length < 1:
            raise ConfigError("vector length must be a positive integer")
        if not isinstance(self.rounds, int) or self.rounds < 1:
            raise ConfigError("rounds must be a positive integer")
        if self.s_min is not None and not (1 <= self.s_min <= self.n):
            raise ConfigError("s_min must lie in [1, n]")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        if self.tamper not in TAMPER_POLICIES:
            raise ConfigError(f"unknown tamper policy {self.tamper!r}")
        ids = set(self.participant_ids)
        losses = list(self.share_loss)
        if len(set(losses)) != len(losses) or not set(losses) <= ids:
            raise ConfigError("share_loss must list distinct participant ids")
        if self.gradients is not None:
            if len(self.gradients) != self.n or any(
                len(g) != self.length for g in self.gradients
            ):
                raise ConfigError("gradients must be an n x length matrix")
        if self.variant == "scalar" and not is_probable_prime(self.prime):
            raise ConfigError("prime must be prime")
        try:
            self.codec().ensure_capacity(self.n, self.field_modulus())
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.variant == "group" and self.decode_bound(self.n) > (1 << 32):
            raise ConfigError(
                "group decode bound exceeds 2^32; shrink scale_bits/clip/n"
            )

    _SIM_KEYS = frozenset({"seed", "n", "delay", "budgets", "faults"})
    _OWN_KEYS = frozenset(
        {
            "n",
            "t",
            "l",
            "length",
            "s_min",
            "rounds",
            "variant",
            "tamper",
            "share_loss",
            "gradients",
            "prime",
            "group",
            "scale_bits",
            "clip_bound",
        }
    )

    @classmethod
    def from_dict(cls, raw: dict) -> "RoundSpec":
        if not isinstance(raw, dict):
            raise ConfigError("round spec must be a JSON object")
        unknown = set(raw) - cls._OWN_KEYS - cls._SIM_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "n" not in raw:
            raise ConfigError("round spec needs n")
        group = raw.get("group", "toy")
        if isinstance(group, str):
            try:
                group = {"toy": TOY_GROUP, "default": DEFAULT_GROUP}[group]
            except KeyError:
                raise ConfigError(f"unknown group {group!r}") from None
        elif isinstance(group, dict):
            try:
                group = GroupParams(p=group["p"], q=group["q"], g=group["g"])
            except (KeyError, TypeError, ValueError) as exc:
                raise ConfigError(f"bad group parameters: {exc}") from exc
        else:
            raise ConfigError("group must be a name or a {p, q, g} object")
        spec = cls(
            n=raw["n"],
            t=raw.get("t", 2),
            length=raw.get("length", raw.get("l", 4)),
            s_min=raw.get("s_min"),
            rounds=raw.get("rounds", 1),
            variant=raw.get("variant", "scalar"),
            tamper=raw.get("tamper", "honest"),
            share_loss=tuple(raw.get("share_loss", ())),
            gradients=raw.get("gradients"),
            prime=raw.get("prime", DEFAULT_PRIME),
            group=group,
            scale_bits=raw.get("scale_bits"),
            clip_bound=raw.get("clip_bound", 8.0),
        )
        spec.validate()
        return spec


@dataclass
class RoundState:
    """Per-round report assembled by the runner at each phase barrier."""

    round: int
    phase: str = "setup"  # last phase entered; "done"/"rejected" once finished
    t_set: list[int] = field(default_factory=list)  # intact bundle holders
    m_set: list[int] = field(default_factory=list)  # contributors in the aggregate
    u_set: list[int] = field(default_factory=list)  # holders of this round's aggregate
    failed: list[int] = field(default_factory=list)  # expected but silent submitters
    leader: int | None = None
    verified: bool | None = None
    error: str | None = None
    field_sum: list[int] | None = None
    decrypted: list[float] | None = None
    delivered_to: list[int] = field(default_factory=list)  # ended round with plaintext
    recovered: list[int] = field(default_factory=list)  # share-losers made whole


@dataclass
class ScenarioResult:
    """Final output of run_rounds: per-round reports plus the full audit log."""

    spec: RoundSpec
    sim_config: SimConfig
    rounds: list[RoundState]
    transcript: Transcript
    inputs: dict[int, list[float]]
    nodes: dict[int, Node]
    budget_exhausted: bool = False

    @property
    def ok(self) -> bool:
        return all(r.phase == "done" and r.verified for r in self.rounds)

    def summary_lines(self) -> list[str]:
        lines = []
        for r in self.rounds:
            verified = "true" if r.verified else "false"
            if r.phase == "done":
                body = f"decrypted={r.decrypted}"
            else:
                body = f"error={r.error}"
            lines.append(
                f"round={r.round} status={r.phase} verified={verified} "
                f"m={r.m_set} {body}"
            )
        return lines


# ---- helpers shared by the node implementations --------------------------------------


def _fold(values, modulus: PrimeModulus) -> FieldElement:
    acc = modulus.element(0)
    for v in values:
        acc = acc + v
    return acc


def _nudge_nonzero(total: FieldElement) -> FieldElement:
    # A zero round key would void every tag. All parties share the same view
    # of the summands, so they all apply the same deterministic fix.
    if total.value == 0:
        return total.modulus.element(1)
    return total


class _LeaderFindings:
    """What the leader knows after recover-and-verify, kept for decryption."""

    def __init__(self) -> None:
        self.sums: list[int] | None = None  # unmasked field values
        self.recovered: dict[int, int] = {}  # share-loser -> rebuilt share
        self.fb_channel: set[int] = set()  # responders reached via fallback keys


# ---- participant ----------------------------------------------------------------------


class ParticipantNode(Node):
    """One protocol participant: dealer, contributor, elector, potential leader."""

    def __init__(self, node_id: int, spec: RoundSpec, rng: random.Random):
        self.id = node_id
        self.spec = spec
        self.rng = rng
        self.modulus = spec.field_modulus()
        self.codec = spec.codec()
        self.gradients: list[float] = []
        self.keypair: KeyPair | None = None  # group mode unwrapping keys
        self.peer_pks: dict[int, int] = {}
        self._reset_setup()
        self.begin_round(0)

    # -- state lifecycle ---------------------------------------------------------

    def _reset_setup(self) -> None:
        self.dealer: DealerState | None = None
        self.a_exp = None  # group mode second-row polynomial (random constant)
        self.received_v: dict[int, FieldElement] = {}
        self.received_a: dict[int, FieldElement] = {}
        self.chan_keys: dict[int, bytes] = {}
        self.complete = False
        self.s_setup: dict[int, int] = {}
        self.s_own: FieldElement | None = None
        self.s_total: FieldElement | None = None
        # group-mode holdings: everything arrives wrapped, so only lifts exist
        self.lift_v: dict[int, int] = {}
        self.lift_a: dict[int, int] = {}
        self.share_lift: int | None = None

    def begin_round(self, round_no: int) -> None:
        self.round_no = round_no
        self.has_aggregate = False
        self.agg: list[list[int]] | None = None
        self.m_set: list[int] = []
        self.failed: list[int] = []
        self.elector = False
        self.commit_value: int | None = None
        self.commit_salt: bytes | None = None
        self.commits: dict[int, str] = {}
        self.reveals: dict[int, int] = {}
        self.leader: int | None = None
        self.s_refresh: dict[int, int] = {}
        self.field_sum: list[int] | None = None
        self.plaintext: list[float] | None = None
        self.status = "working"
        self.reject_reason: str | None = None
        self.resp: dict[int, dict] = {}
        self.resp_fb: dict[int, dict] = {}
        self.verdict: bool | None = None
        self.findings = _LeaderFindings()

    def wipe_shares(self) -> None:
        """Lose every received share plus the second-row material derived from them.

        The own first-row polynomial and the round key survive: they are this
        party's to keep, and they are exactly what the fallback recovery
        channel and later resubmissions are built from.
        """
        self.received_v = {}
        self.received_a = {}
        self.chan_keys = {}
        self.complete = False
        self.lift_v = {}
        self.lift_a = {}
        self.share_lift = None
        if self.dealer is not None:
            # the second row's constant term is the very share being lost
            self.dealer.a_poly = None
            self.dealer.s_v = None

    # -- small conveniences --------------------------------------------------------

    @property
    def _peers(self) -> list[int]:
        return [i for i in self.spec.participant_ids if i != self.id]

    def _elem(self, v: int) -> FieldElement:
        return self.modulus.element(v)

    def _fallback_key(self, peer: int) -> bytes:
        """AEAD key from the one secret a share-loser still shares with a peer."""
        if self.spec.variant == "group":
            value = self.spec.group.lift(self.dealer.v_poly.eval(peer).value)
        else:
            value = self.dealer.v_poly.eval(peer).value
        return channel_key(value, context=b"fallback")

    def _fallback_key_for(self, loser: int) -> bytes | None:
        """The helper-side twin of _fallback_key, from the received copy."""
        if self.spec.variant == "group":
            lift = self.lift_v.get(loser)
            return None if lift is None else channel_key(lift, context=b"fallback")
        value = self.received_v.get(loser)
        return None if value is None else channel_key(value.value, context=b"fallback")

    # -- phase starts ---------------------------------------------------------------

    def on_phase_start(self, sim: Simulator, phase: str) -> None:
        if phase == "setup":
            self._start_setup(sim)
        elif phase == "masking":
            self._start_masking(sim)
        elif phase == "verification":
            self._start_verification(sim)
        elif phase == "decryption":
            self._start_decryption(sim)

    def _start_setup(self, sim: Simulator) -> None:
        spec = self.spec
        self._reset_setup()
        self.dealer = new_dealer(self.id, spec.t, spec.n, self.modulus, self.rng)
        self.s_own = self.modulus.random_nonzero(self.rng)
        if spec.variant == "group":
            # the second row only feeds pairwise DH keys here, so its constant
            # term is free — holders never see scalars to sum into s_v anyway
            self.a_exp = UniPoly.random(spec.t - 1, self.modulus, self.rng)
            self.keypair = KeyPair.generate(spec.group, self.rng)
            self.peer_pks = {}
            sim.broadcast(self.id, self._peers, "pk", {"pk": self.keypair.pk})
            return
        out = step1_messages(self.dealer, spec.participant_ids)
        for j in sorted(out):
            sim.send(self.id, j, "setup1", {"v": out[j].value, "s": self.s_own.value})

    def _start_masking(self, sim: Simulator) -> None:
        spec = self.spec
        if self.dealer is None or (spec.variant == "scalar" and self.s_total is None):
            return  # setup never finished for this party
        if spec.variant == "group" and self.round_no > 0:
            # the one-time dealt state is reused; only the round key is fresh
            self.s_own = self.modulus.random_nonzero(self.rng)
            self.s_total = None
            sim.broadcast(self.id, self._peers, "refresh", {"s": self.s_own.value})
            window = sim.config.budgets["masking"] // 3
            sim.schedule_timer(self.id, sim.now + window, "submit")
            return
        if self.s_total is None:
            return
        self._submit(sim)

    def _submit(self, sim: Simulator) -> None:
        spec = self.spec
        values = self.codec.encode(self.gradients, self.modulus)
        if spec.variant == "group":
            pairs = group_mask_vector(
                [v.value for v in values],
                masking_secret=self.dealer.v_poly.constant_term().value,
                self_key=self.dealer.v_poly.eval(self.id).value,
                s=self.s_total.value,
                round_no=self.round_no,
                params=spec.group,
            )
            wire = [[p.c1, p.c2] for p in pairs]
        else:
            pairs = mask_vector(
                values,
                masking_secret=self.dealer.masking_secret(),
                self_key=self.dealer.self_key(),
                s=self.s_total,
                round_no=self.round_no,
            )
            wire = [[p.c1.value, p.c2.value] for p in pairs]
        sim.send(self.id, AGGREGATOR_ID, "submission", {"c": wire})

    def _start_verification(self, sim: Simulator) -> None:
        if not self.has_aggregate:
            return
        budget = sim.config.budgets["verification"]
        slot = budget // 5
        if self.complete:
            # intact aggregate-holders form the electorate
            self.elector = True
            self.commit_value = self.rng.randrange(1 << 32)
            self.commit_salt = self.rng.getrandbits(64).to_bytes(8, "big")
            digest = _commitment(self.commit_value, self.commit_salt, self.id)
            self.commits[self.id] = digest
            sim.broadcast(self.id, self._peers, "commit", {"h": digest})
            sim.schedule_timer(self.id, sim.now + slot, "reveal")
        sim.schedule_timer(self.id, sim.now + 2 * slot, "tally")
        # half a slot of slack so responses sent right after the tally cannot
        # tie with (and lose to) the leader's processing timer
        sim.schedule_timer(self.id, sim.now + 3 * slot + slot // 2, "lead")

    def _start_decryption(self, sim: Simulator) -> None:
        if self.leader == self.id and self.verdict and self.status == "working":
            self._distribute(sim)

    # -- timers ----------------------------------------------------------------------

    def on_timer(self, sim: Simulator, name: str, data: Any) -> None:
        if name == "submit":
            if self.status != "working" or self.s_total is not None:
                return
            total = _fold(
                [self.s_own] + [self._elem(v) for _, v in sorted(self.s_refresh.items())],
                self.modulus,
            )
            self.s_total = _nudge_nonzero(total)
            self._submit(sim)
        elif name == "reveal":
            if self.elector and self.status == "working":
                self.reveals[self.id] = self.commit_value
                sim.broadcast(
                    self.id,
                    self._peers,
                    "reveal",
                    {"v": self.commit_value, "salt": self.commit_salt.hex()},
                )
        elif name == "tally":
            self._tally(sim)
        elif name == "lead":
            self._lead(sim)

    def _tally(self, sim: Simulator) -> None:
        if not self.has_aggregate or self.status != "working":
            return
        if not self.reveals:
            # nobody opened a valid commitment in time: the round cannot elect
            self.status = "rejected"
            self.reject_reason = "RevealTimeout"
            return
        self.leader = elect_leader(self.reveals)
        if self.leader == self.id:
            sim.broadcast(self.id, self._peers, "share_req", {"m": self.m_set})

    def _lead(self, sim: Simulator) -> None:
        if self.leader != self.id or self.status != "working":
            return
        try:
            if self.spec.variant == "group":
                self._recover_and_verify_group(sim)
            else:
                self._recover_and_verify_scalar(sim)
        except (RecoveryQuorumFailure, VerificationFailed) as exc:
            reason = type(exc).__name__
            self.verdict = False if isinstance(exc, VerificationFailed) else None
            self.status = "rejected"
            self.reject_reason = reason
            sim.log_note("reject", by=self.id, reason=reason, detail=str(exc))
            sim.broadcast(self.id, self._peers, "reject", {"reason": reason})
            return
        self.verdict = True

    # -- message handling ---------------------------------------------------------------

    def on_message(self, sim: Simulator, env) -> None:
        if env.round != self.round_no or PHASE_OF_KIND.get(env.kind) != sim.phase:
            sim.log_note("stale_message", dst=self.id, kind=env.kind, round=env.round)
            return
        handler = getattr(self, f"_on_{env.kind}", None)
        if handler is not None:
            handler(sim, env)

    # setup (scalar) ...............................................................

    def _on_setup1(self, sim: Simulator, env) -> None:
        self.received_v[env.src] = self._elem(env.body["v"])
        self.s_setup[env.src] = env.body["s"]
        if len(self.received_v) == self.spec.n - 1:
            accumulate_sv(self.dealer, self.received_v, self.spec.participant_ids)
            total = _fold(
                [self.s_own]
                + [self._elem(v) for _, v in sorted(self.s_setup.items())],
                self.modulus,
            )
            self.s_total = _nudge_nonzero(total)
            out = step2_messages(self.dealer, self.spec.participant_ids, self.rng)
            for j in sorted(out):
                sim.send(self.id, j, "setup2", {"a": out[j].value})
            self._maybe_finish_scalar_setup()

    def _on_setup2(self, sim: Simulator, env) -> None:
        self.received_a[env.src] = self._elem(env.body["a"])
        self._maybe_finish_scalar_setup()

    def _maybe_finish_scalar_setup(self) -> None:
        # a fast peer's second-round share may outrun this node's own dealing;
        # channel keys need both sides, so wait for whichever lands last
        if self.complete or self.dealer is None or self.dealer.a_poly is None:
            return
        if len(self.received_a) < self.spec.n - 1:
            return
        for j in self._peers:
            shared = pairwise_key(self.dealer, j, self.received_a[j])
            self.chan_keys[j] = channel_key(shared.value)
        self.complete = True

    # setup (group) ................................................................

    def _on_pk(self, sim: Simulator, env) -> None:
        self.peer_pks[env.src] = env.body["pk"]
        if len(self.peer_pks) == self.spec.n - 1:
            group = self.spec.group
            for j in self._peers:
                pk = self.peer_pks[j]
                sim.send(
                    self.id,
                    j,
                    "gsetup1",
                    {
                        "w": wrap_share(self.dealer.v_poly.eval(j).value, pk, group),
                        "s": self.s_own.value,
                    },
                )
                sim.send(
                    self.id,
                    j,
                    "gsetup2",
                    {"w": wrap_share(self.a_exp.eval(j).value, pk, group)},
                )

    def _on_gsetup1(self, sim: Simulator, env) -> None:
        self.lift_v[env.src] = unwrap_share(
            env.body["w"], self.keypair.sk, self.spec.group
        )
        self.s_setup[env.src] = env.body["s"]
        self._maybe_finish_group_setup()

    def _on_gsetup2(self, sim: Simulator, env) -> None:
        self.lift_a[env.src] = unwrap_share(
            env.body["w"], self.keypair.sk, self.spec.group
        )
        self._maybe_finish_group_setup()

    def _maybe_finish_group_setup(self) -> None:
        n = self.spec.n
        if len(self.lift_v) < n - 1 or len(self.lift_a) < n - 1:
            return
        group = self.spec.group
        # persistent share: G^(V(id)) where V is the sum of all dealt rows
        acc = group.lift(self.dealer.v_poly.eval(self.id).value)
        for j in sorted(self.lift_v):
            acc = (acc * self.lift_v[j]) % group.p
        self.share_lift = acc
        total = _fold(
            [self.s_own] + [self._elem(v) for _, v in sorted(self.s_setup.items())],
            self.modulus,
        )
        self.s_total = _nudge_nonzero(total)
        for j in self._peers:
            # Diffie-Hellman on the second rows: G^(A_i(j) * A_j(i)) both ways
            shared = pow(self.lift_a[j], self.a_exp.eval(j).value, group.p)
            self.chan_keys[j] = channel_key(shared, context=b"group")
        self.complete = True

    # masking / aggregation ..........................................................

    def _on_refresh(self, sim: Simulator, env) -> None:
        self.s_refresh[env.src] = env.body["s"]

    def _on_aggregate(self, sim: Simulator, env) -> None:
        self.agg = env.body["c"]
        self.m_set = list(env.body["m"])
        self.failed = list(env.body["failed"])
        self.has_aggregate = True

    def _on_abort(self, sim: Simulator, env) -> None:
        self.status = "rejected"
        self.reject_reason = env.body["reason"]

    # verification ...................................................................

    def _on_commit(self, sim: Simulator, env) -> None:
        self.commits.setdefault(env.src, env.body["h"])

    def _on_reveal(self, sim: Simulator, env) -> None:
        expected = self.commits.get(env.src)
        if expected is None:
            return
        value = env.body["v"]
        salt = bytes.fromhex(env.body["salt"])
        if _commitment(value, salt, env.src) == expected:
            self.reveals[env.src] = value
        else:
            sim.log_note("bad_reveal", voter=env.src, seen_by=self.id)

    def _on_share_req(self, sim: Simulator, env) -> None:
        if self.status != "working" or self.dealer is None:
            return
        leader = env.src
        self.leader = leader
        m = list(env.body["m"])
        spec = self.spec
        if self.complete:
            if spec.variant == "group":
                body = {
                    "v_lifts": {str(i): self.lift_v[i] for i in m if i in self.lift_v},
                    "share_lift": self.share_lift,
                    "self": self._self_lifts() if self.id in m else None,
                }
            else:
                body = {
                    "v_evals": {
                        str(i): self.received_v[i].value
                        for i in m
                        if i in self.received_v
                    },
                    "a_evals": {str(q): v.value for q, v in self.received_a.items()},
                    "s_v": self.dealer.s_v.value,
                    "self": self._self_keys() if self.id in m else None,
                }
            secure_send(sim, self.chan_keys[leader], self.id, leader, "share_resp", body)
        else:
            # every received share is gone; reach the leader over the fallback
            # channel keyed from this party's own surviving first row
            body = {
                "need": self.share_lift is None
                if spec.variant == "group"
                else self.dealer.s_v is None,
                "self": (
                    (self._self_lifts() if spec.variant == "group" else self._self_keys())
                    if self.id in m
                    else None
                ),
            }
            secure_send(
                sim, self._fallback_key(leader), self.id, leader, "share_resp_fb", body
            )

    def _self_keys(self) -> list[int]:
        return [self.dealer.self_key().value, self.dealer.masking_secret().value]

    def _self_lifts(self) -> list[int]:
        group = self.spec.group
        return [
            group.lift(self.dealer.v_poly.eval(self.id).value),
            group.lift(self.dealer.v_poly.constant_term().value),
        ]

    def _on_share_resp(self, sim: Simulator, env) -> None:
        if self.leader != self.id:
            return
        try:
            self.resp[env.src] = secure_recv(self.chan_keys[env.src], env)
        except (AuthFailure, KeyError):
            sim.log_auth_failure(env)

    def _on_share_resp_fb(self, sim: Simulator, env) -> None:
        if self.leader != self.id:
            return
        key = self._fallback_key_for(env.src)
        if key is None:
            sim.log_auth_failure(env)
            return
        try:
            body = secure_recv(key, env)
        except AuthFailure:
            sim.log_auth_failure(env)
            return
        self.resp_fb[env.src] = body
        self.findings.fb_channel.add(env.src)

    def _on_reject(self, sim: Simulator, env) -> None:
        if env.src == self.leader:
            self.status = "rejected"
            self.reject_reason = env.body["reason"]

    # decryption .....................................................................

    def _on_result(self, sim: Simulator, env) -> None:
        if self.leader is None:
            return
        key = (
            self.chan_keys.get(env.src)
            if self.complete
            else self._fallback_key(env.src)
        )
        if key is None:
            sim.log_auth_failure(env)
            return
        try:
            body = secure_recv(key, env)
        except AuthFailure:
            sim.log_auth_failure(env)
            return
        self._apply_recovered(body.get("recovered"))
        self.field_sum = list(body["sum"])
        m_count = len(body["m"])
        self.plaintext = [
            self.codec.decode_sum(self._elem(v), m_count) for v in self.field_sum
        ]
        self.status = "done"

    def _on_round_done(self, sim: Simulator, env) -> None:
        if env.secured:
            try:
                body = secure_recv(self._fallback_key(env.src), env)
            except AuthFailure:
                sim.log_auth_failure(env)
                return
            self._apply_recovered(body.get("recovered"))
        self.status = "done"

    def _apply_recovered(self, value) -> None:
        if value is None:
            return
        if self.spec.variant == "group":
            self.share_lift = value
        else:
            self.dealer.s_v = self._elem(value)

    # -- leader: recovery, verification, decryption ------------------------------------

    def _recover_and_verify_scalar(self, sim: Simulator) -> None:
        spec = self.spec
        t = spec.t
        m = sorted(self.m_set)
        # pool the evaluations this leader can see: its own plus each response
        v_holdings: dict[int, dict[int, FieldElement]] = {
            self.id: dict(self.received_v)
        }
        a_holdings: dict[int, dict[int, FieldElement]] = {
            self.id: dict(self.received_a)
        }
        sv_map: dict[int, FieldElement] = {}
        if self.dealer.s_v is not None:
            sv_map[self.id] = self.dealer.s_v
        self_kv: dict[int, tuple[FieldElement, FieldElement]] = {}
        if self.id in m:
            self_kv[self.id] = (self.dealer.self_key(), self.dealer.masking_secret())
        need_recovery: set[int] = set()
        for src, body in self.resp.items():
            v_holdings[src] = {
                int(i): self._elem(v) for i, v in body["v_evals"].items()
            }
            a_holdings[src] = {
                int(q): self._elem(v) for q, v in body["a_evals"].items()
            }
            if body.get("s_v") is not None:
                sv_map[src] = self._elem(body["s_v"])
            if body.get("self") is not None:
                k, v0 = body["self"]
                self_kv[src] = (self._elem(k), self._elem(v0))
        for src, body in self.resp_fb.items():
            if body.get("self") is not None:
                k, v0 = body["self"]
                self_kv[src] = (self._elem(k), self._elem(v0))
            if body.get("need"):
                need_recovery.add(src)

        # contributor keys: online members vouch for themselves; anyone silent
        # now is rebuilt from t first-row evaluations
        k_map: dict[int, FieldElement] = {}
        v0_map: dict[int, FieldElement] = {}
        for i in m:
            if i in self_kv:
                k_map[i], v0_map[i] = self_kv[i]
                continue
            pts = [
                (self._elem(j), v_holdings[j][i])
                for j in sorted(v_holdings)
                if i in v_holdings[j]
            ]
            if len(pts) < t:
                raise RecoveryQuorumFailure(
                    f"contributor {i}: {len(pts)} evaluations held, need {t}"
                )
            k_map[i] = lagrange_at(pts[:t], i, t)
            v0_map[i] = lagrange_at_zero(pts[:t], t)
            sim.log_note(
                "recover",
                what="contributor_keys",
                target=i,
                helpers=sorted(j for j in v_holdings if i in v_holdings[j])[:t],
            )

        # share-losers: rebuild s_v from t second-row evaluations
        for q in sorted(need_recovery):
            helper_shares = {
                j: a_holdings[j][q]
                for j in a_holdings
                if q in a_holdings[j] and j != q
            }
            if len(helper_shares) < t:
                raise RecoveryQuorumFailure(
                    f"share loser {q}: {len(helper_shares)} helpers, need {t}"
                )
            value = recover_lost_share(q, helper_shares, t)
            self.findings.recovered[q] = value.value
            sim.log_note(
                "recover", what="lost_share", target=q, helpers=sorted(helper_shares)[:t]
            )

        pairs = [
            MaskedPair(self._elem(a), self._elem(b), self.round_no, idx)
            for idx, (a, b) in enumerate(self.agg)
        ]
        k = _fold(k_map.values(), self.modulus)
        if not verify_vector(pairs, k, self.s_total, self.round_no):
            raise VerificationFailed("aggregate failed the tag check")

        if set(m) == set(spec.participant_ids) and len(sv_map) >= t:
            # full attendance: the pad is V(0), one interpolation instead of |M|
            pts = [(self._elem(j), sv_map[j]) for j in sorted(sv_map)[:t]]
            pad = lagrange_at_zero(pts, t)
        else:
            pad = _fold((v0_map[i] for i in m), self.modulus)
        self.findings.sums = [
            e.value for e in unmask_vector(pairs, pad, self.round_no)
        ]

    def _recover_and_verify_group(self, sim: Simulator) -> None:
        spec = self.spec
        group = spec.group
        t = spec.t
        m = sorted(self.m_set)
        lift_holdings: dict[int, dict[int, int]] = {self.id: dict(self.lift_v)}
        share_lifts: dict[int, int] = {}
        if self.share_lift is not None:
            share_lifts[self.id] = self.share_lift
        self_kv: dict[int, tuple[int, int]] = {}
        if self.id in m:
            self_kv[self.id] = tuple(self._self_lifts())
        need_recovery: set[int] = set()
        for src, body in self.resp.items():
            lift_holdings[src] = {int(i): v for i, v in body["v_lifts"].items()}
            if body.get("share_lift") is not None:
                share_lifts[src] = body["share_lift"]
            if body.get("self") is not None:
                self_kv[src] = tuple(body["self"])
        for src, body in self.resp_fb.items():
            if body.get("self") is not None:
                self_kv[src] = tuple(body["self"])
            if body.get("need"):
                need_recovery.add(src)

        k_lifts: dict[int, int] = {}
        v0_lifts: dict[int, int] = {}
        for i in m:
            if i in self_kv:
                k_lifts[i], v0_lifts[i] = self_kv[i]
                continue
            pts = [
                (j, lift_holdings[j][i])
                for j in sorted(lift_holdings)
                if i in lift_holdings[j]
            ]
            if len(pts) < t:
                raise RecoveryQuorumFailure(
                    f"contributor {i}: {len(pts)} lifted evaluations held, need {t}"
                )
            k_lifts[i] = exp_lagrange_at(pts[:t], i, t, group)
            v0_lifts[i] = exp_lagrange_at_zero(pts[:t], t, group)
            sim.log_note(
                "recover",
                what="contributor_keys",
                target=i,
                helpers=[j for j, _ in pts[:t]],
            )

        for q in sorted(need_recovery):
            pts = [(j, share_lifts[j]) for j in sorted(share_lifts) if j != q]
            if len(pts) < t:
                raise RecoveryQuorumFailure(
                    f"share loser {q}: {len(pts)} helpers, need {t}"
                )
            self.findings.recovered[q] = exp_lagrange_at(pts[:t], q, t, group)
            sim.log_note(
                "recover", what="lost_share", target=q, helpers=[j for j, _ in pts[:t]]
            )

        pairs = [
            GroupMaskedPair(c1=a, c2=b, round=self.round_no, index=idx)
            for idx, (a, b) in enumerate(self.agg)
        ]
        g_k = combine_key_lifts([k_lifts[i] for i in m], group)
        if not group_verify(pairs, g_k, self.s_total.value, self.round_no, group):
            raise VerificationFailed("aggregate failed the lifted tag check")

        if set(m) == set(spec.participant_ids) and len(share_lifts) >= t:
            pts = [(j, share_lifts[j]) for j in sorted(share_lifts)[:t]]
            g_pad = exp_lagrange_at_zero(pts, t, group)
        else:
            g_pad = combine_key_lifts([v0_lifts[i] for i in m], group)
        lifted_sums = group_unmask(pairs, g_pad, self.round_no, group)
        bound = spec.decode_bound(len(m))
        self.findings.sums = [bsgs(h, bound, group) for h in lifted_sums]

    def _distribute(self, sim: Simulator) -> None:
        m = sorted(self.m_set)
        sums = self.findings.sums
        body_base = {"sum": sums, "m": m, "failed": sorted(self.failed)}
        for u in self._peers:
            if not sim.is_online(u):
                continue
            recovered = self.findings.recovered.get(u)
            if u in m:
                body = dict(body_base)
                if recovered is not None:
                    body["recovered"] = recovered
                key = (
                    self._fallback_key_for(u)
                    if u in self.findings.fb_channel
                    else self.chan_keys.get(u)
                )
                if key is None:
                    sim.log_note("undeliverable", dst=u)
                    continue
                secure_send(sim, key, self.id, u, "result", body)
            elif recovered is not None:
                # a share-loser outside M still gets its share back, privately
                key = self._fallback_key_for(u)
                if key is None:
                    sim.log_note("undeliverable", dst=u)
                    continue
                secure_send(
                    sim,
                    key,
                    self.id,
                    u,
                    "round_done",
                    {"verified": True, "recovered": recovered},
                )
            else:
                sim.send(self.id, u, "round_done", {"verified": True})
        if self.id in m:
            self.field_sum = list(sums)
            self.plaintext = [
                self.codec.decode_sum(self._elem(v), len(m)) for v in sums
            ]
        self.status = "done"


# ---- aggregator -------------------------------------------------------------------------


class AggregatorNode(Node):
    """Untrusted collector: sums submissions, optionally tampers, never verifies."""

    def __init__(self, spec: RoundSpec, rng: random.Random):
        self.id = AGGREGATOR_ID
        self.spec = spec
        self.rng = rng
        self.modulus = spec.field_modulus()
        self.begin_round(0)

    def begin_round(self, round_no: int) -> None:
        self.round_no = round_no
        self.received: dict[int, list[list[int]]] = {}
        self.aborted = False
        self.m: list[int] = []
        self.failed: list[int] = []

    def on_message(self, sim: Simulator, env) -> None:
        if env.kind != "submission" or env.round != self.round_no:
            return
        body = env.body or {}
        pairs = body.get("c")
        if (
            not isinstance(pairs, list)
            or len(pairs) != self.spec.length
            or any(not isinstance(p, list) or len(p) != 2 for p in pairs)
        ):
            sim.log_note("malformed_submission", src=env.src)
            return
        self.received[env.src] = pairs

    def on_phase_start(self, sim: Simulator, phase: str) -> None:
        if phase != "aggregation":
            return
        spec = self.spec
        if len(self.received) < spec.quorum:
            self.aborted = True
            sim.log_note(
                "staleness", have=sorted(self.received), need=spec.quorum
            )
            sim.broadcast(
                self.id,
                spec.participant_ids,
                "abort",
                {"reason": "StalenessTimeout"},
            )
            return
        self.m = sorted(self.received)
        self.failed = sorted(set(spec.participant_ids) - set(self.m))
        agg = self._aggregate()
        agg = self._tamper(agg)
        sim.broadcast(
            self.id,
            spec.participant_ids,
            "aggregate",
            {"m": self.m, "failed": self.failed, "c": agg},
        )

    def _aggregate(self) -> list[list[int]]:
        spec = self.spec
        if spec.variant == "group":
            vectors = [
                [
                    GroupMaskedPair(c1=a, c2=b, round=self.round_no, index=idx)
                    for idx, (a, b) in enumerate(self.received[i])
                ]
                for i in self.m
            ]
            agg = group_aggregate(vectors, spec.group)
            return [[p.c1, p.c2] for p in agg]
        vectors = [
            [
                MaskedPair(
                    self.modulus.element(a),
                    self.modulus.element(b),
                    self.round_no,
                    idx,
                )
                for idx, (a, b) in enumerate(self.received[i])
            ]
            for i in self.m
        ]
        agg = aggregate_vectors(vectors)
        return [[p.c1.value, p.c2.value] for p in agg]

    def _tamper(self, agg: list[list[int]]) -> list[list[int]]:
        spec = self.spec
        policy = spec.tamper
        if policy == "honest":
            return agg
        if spec.variant == "group":
            group = spec.group
            if policy == "flip_element":
                agg[0][0] = (agg[0][0] * group.g) % group.p
            elif policy == "inject_offset":
                shift = pow(group.g, TAMPER_OFFSET, group.p)
                agg = [[(a * shift) % group.p, b] for a, b in agg]
            elif policy == "substitute_all":
                agg = [
                    [
                        group.lift(self.rng.randrange(group.q)),
                        group.lift(self.rng.randrange(group.q)),
                    ]
                    for _ in agg
                ]
            return agg
        p = self.modulus.p
        if policy == "flip_element":
            agg[0][0] = (agg[0][0] + 1) % p
        elif policy == "inject_offset":
            agg = [[(a + TAMPER_OFFSET) % p, b] for a, b in agg]
        elif policy == "substitute_all":
            agg = [[self.rng.randrange(p), self.rng.randrange(p)] for _ in agg]
        return agg


# ---- scenario runner ----------------------------------------------------------------------


def _phase_list(spec: RoundSpec, round_no: int) -> tuple[str, ...]:
    if spec.variant == "group" and round_no > 0:
        return PHASES[1:]  # the dealt state is reused; only the key refreshes
    return PHASES


def run_rounds(spec: RoundSpec | dict, sim_config: SimConfig | None = None) -> ScenarioResult:
    """Drive `spec.rounds` full protocol rounds and report what happened.

    Any phase barrier can end a round early: too few intact bundles after
    setup, too few submissions at aggregation, no electorate, a failed tag
    check, or a recovery quorum shortfall. A failed round is reported as
    rejected — never raised — so multi-round scenarios keep going.
    """
    if isinstance(spec, dict):
        spec = RoundSpec.from_dict(spec)
    spec.validate()
    if sim_config is None:
        sim_config = SimConfig(n=spec.n)
    if sim_config.n != spec.n:
        raise ConfigError(f"sim config n={sim_config.n} != round spec n={spec.n}")
    sim = Simulator(sim_config)
    aggregator = AggregatorNode(spec, sim.node_rng(AGGREGATOR_ID))
    sim.add_node(aggregator)
    participants: dict[int, ParticipantNode] = {}
    inputs: dict[int, list[float]] = {}
    codec = spec.codec()
    for i in spec.participant_ids:
        node = ParticipantNode(i, spec, sim.node_rng(i))
        if spec.gradients is not None:
            node.gradients = list(spec.gradients[i - 1])
        else:
            grad_rng = random.Random(derive_seed(sim_config.seed, "grad", i))
            node.gradients = [
                grad_rng.uniform(-codec.clip_bound, codec.clip_bound)
                for _ in range(spec.length)
            ]
        inputs[i] = list(node.gradients)
        participants[i] = node
        sim.add_node(node)

    states: list[RoundState] = []
    for r in range(spec.rounds):
        aggregator.begin_round(r)
        for node in participants.values():
            node.begin_round(r)
        state = RoundState(round=r)
        phases = _phase_list(spec, r)
        if "setup" not in phases:
            state.t_set = sorted(i for i, n in participants.items() if n.complete)
        for phase in phases:
            state.phase = phase
            sim.run_phase(phase, r)
            if phase == "setup":
                for q in spec.share_loss:
                    participants[q].wipe_shares()
                    sim.log_note("share_loss", id=q)
                state.t_set = sorted(
                    i for i, n in participants.items() if n.complete
                )
                if len(state.t_set) < spec.t:
                    state.error = "SetupQuorumFailure"
                    break
            elif phase == "aggregation":
                if aggregator.aborted:
                    state.error = "StalenessTimeout"
                    break
                state.m_set = list(aggregator.m)
                state.failed = list(aggregator.failed)
                state.u_set = sorted(
                    i for i, n in participants.items() if n.has_aggregate
                )
            elif phase == "verification":
                # A fault can split the electorate's view (a dropper counts its
                # own vanished reveal), so several nodes may claim leadership.
                # The round stands iff some claimed leader finished with a True
                # verdict; local failures of phantom leaders don't veto it.
                claims = Counter(
                    n.leader for n in participants.values() if n.leader is not None
                )
                candidates = sorted(claims, key=lambda c: (-claims[c], c))
                winner = next(
                    (c for c in candidates if participants[c].verdict is True), None
                )
                if winner is not None:
                    state.leader = winner
                    state.verified = True
                else:
                    state.leader = candidates[0] if candidates else None
                    reasons = sorted(
                        {
                            n.reject_reason
                            for n in participants.values()
                            if n.reject_reason is not None
                        }
                    )
                    if state.leader is not None and (
                        participants[state.leader].reject_reason is not None
                    ):
                        state.error = participants[state.leader].reject_reason
                    elif reasons:
                        state.error = reasons[0]
                    else:
                        # the elected leader went silent before finishing
                        state.error = "BudgetExhausted"
                    if state.error == "VerificationFailed":
                        state.verified = False
                    break
            elif phase == "decryption":
                leader = participants[state.leader]
                modulus = spec.field_modulus()
                state.field_sum = list(leader.findings.sums)
                state.decrypted = [
                    codec.decode_sum(modulus.element(v), len(state.m_set))
                    for v in state.field_sum
                ]
                state.recovered = sorted(leader.findings.recovered)
        state.delivered_to = sorted(
            i for i, n in participants.items() if n.plaintext is not None
        )
        if state.error is None and state.phase == "decryption":
            state.phase = "done"
        elif state.error is not None:
            state.phase = "rejected"
            sim.log_note("round_rejected", round=r, reason=state.error)
        states.append(state)

    nodes: dict[int, Node] = {AGGREGATOR_ID: aggregator}
    nodes.update(participants)
    result = ScenarioResult(
        spec=spec,
        sim_config=sim_config,
        rounds=states,
        transcript=sim.transcript,
        inputs=inputs,
        nodes=nodes,
        budget_exhausted=sim.pending_events() > 0,
    )
    if result.budget_exhausted:
        sim.log_note("budget_exhausted", pending=sim.pending_events())
    return result
