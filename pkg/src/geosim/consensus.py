"""Four-phase HotStuff rounds with round-robin leaders and BLS quorum certificates.

:func:`run_round` replays one round message by message through an event
queue, with optional real signing and QC verification.  The engine uses the
closed-form kernels in :mod:`geosim.kernels` for whole runs; this module is
the validator-level reference they are tested against.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import kernels
from .bls import (
    Consortium,
    GroupPublicKey,
    Phase,
    QuorumCertificate,
    SignatureVote,
    aggregate,
    digest,
    qc_size,
    verify_qc,
    verify_qc_digest,
)
from .events import SimEvent, encode_detail
from .netsim import VOTE_SIZE, BroadcastStrategy, LinkParams, simulate_broadcast
from .records import (
    DEFAULT_HEADER_SIZE,
    DEFAULT_TX_SIZE,
    Block,
    BlockHeader,
    IRecord,
    IReport,
    Ledger,
    MemoryPool,
    append_block,
    content_digest,
    phase_message,
)

ConsensusPhase = Phase
MSG_OVERHEAD = 40


class UnknownNibError(KeyError):
    """iReport from an NIB that is not registered in the GIB genesis."""


def leader_for_round(round_number: int, n: int) -> int:
    if n < 1:
        raise ValueError("need at least one validator")
    return round_number % n


def quorum_size(n: int) -> int:
    if n < 1:
        raise ValueError("need at least one validator")
    return -(-2 * n // 3)


@dataclass(frozen=True)
class TimingModel:
    """Modelled CPU cost of crypto and verification work, in seconds."""

    sign: float = 0.3e-3
    aggregate_per_signer: float = 0.02e-3
    qc_verify: float = 2.5e-3
    dvf: float = 0.1e-3
    dvf_report: float = 2.5e-3
    timeout_factor: float = 10.0
    msg_overhead: int = MSG_OVERHEAD
    vote_size: int = VOTE_SIZE


@dataclass(frozen=True)
class Network:
    link: LinkParams
    strategy: BroadcastStrategy = BroadcastStrategy()
    jitter: float = 0.0
    seed: int = 0


@dataclass
class Validator:
    index: int
    ledger: Ledger
    alive: bool = True

    @property
    def member_id(self) -> int:
        return self.index + 1


@dataclass(frozen=True)
class ConsensusMessage:
    kind: str  # "proposal" or "vote"
    phase: Phase
    sender_id: int
    payload_size: int
    block: Block | None = None
    qc: QuorumCertificate | None = None
    ireport: IReport | None = None


@dataclass
class RoundState:
    round_number: int
    n: int
    leader_id: int = 0
    current_phase: Phase = Phase.PREPARE
    proposed_block: Block | None = None
    collected_votes: dict = field(default_factory=dict)
    phase_qcs: dict = field(default_factory=dict)
    phase_start_times: dict = field(default_factory=dict)
    last_reported_height: int = 0

    def __post_init__(self):
        self.leader_id = leader_for_round(self.round_number, self.n)

    def advance(self, phase: Phase) -> None:
        if phase < self.current_phase:
            raise ValueError("phases advance strictly in order")
        self.current_phase = phase


@dataclass
class RoundResult:
    status: int  # kernels.ST_*
    block: Block | None
    qcs: dict
    latency: float
    start: float
    end: float
    next_start: float
    phase_starts: list
    qc_times: list
    fail_phase: int = -1
    ireport: IReport | None = None


def verify_block(block: Block, dvf: float) -> tuple[bool, float]:
    """Structural check of every transaction; charges ``|R| * dvf`` seconds."""
    ok = block.header.content_digest == content_digest(block.transactions)
    if ok and not isinstance(block.transactions, range):
        for tx in block.transactions:
            if isinstance(tx, (IRecord, IReport)) and not tx.digest_ok():
                ok = False
                break
    return ok, len(block.transactions) * dvf


def attach_ireport(
    state: RoundState,
    ledger: Ledger,
    gamma: int,
    *,
    country_code: str = "XX",
    default_vaccine: str = "COVID-19",
    timestamp: float | None = None,
) -> IReport | None:
    """Report on blocks committed since the last report, every ``gamma`` heights."""
    h = ledger.height
    if gamma < 1 or h == 0 or h % gamma != 0 or h <= state.last_reported_height:
        return None
    counts: dict[str, int] = {}
    for blk in ledger.blocks[state.last_reported_height + 1 : h + 1]:
        if isinstance(blk.transactions, range):
            counts[default_vaccine] = counts.get(default_vaccine, 0) + len(blk.transactions)
            continue
        for tx in blk.transactions:
            name = tx.manufacturer.vaccine_name if isinstance(tx, IRecord) else default_vaccine
            counts[name] = counts.get(name, 0) + 1
    tip = ledger.tip
    report = IReport(
        timestamp=tip.header.proposal_time if timestamp is None else timestamp,
        country_code=country_code,
        report=tuple(sorted(counts.items())),
        qc=tip.commit_qc,
        signer_id=str(state.leader_id + 1),
        first_height=state.last_reported_height + 1,
        last_height=h,
    ).sealed()
    state.last_reported_height = h
    return report


def gib_verify_ireport(
    report: IReport,
    nib_gpk: GroupPublicKey | Mapping[str, GroupPublicKey] | None,
    dvf_report: float,
) -> tuple[bool, float]:
    if isinstance(nib_gpk, Mapping):
        if report.country_code not in nib_gpk:
            raise UnknownNibError(report.country_code)
        nib_gpk = nib_gpk[report.country_code]
    if nib_gpk is None:
        raise UnknownNibError(report.country_code)
    qc = report.qc
    ok = report.digest_ok() and qc is not None and qc.agg_sig is not None
    ok = ok and qc.phase_tag == Phase.DECIDE and len(qc.signer_ids) >= quorum_size(len(nib_gpk.members))
    if ok:
        try:
            ok = verify_qc_digest(qc, nib_gpk)
        except KeyError:
            ok = False
    return ok, dvf_report


# ---------------------------------------------------------------- event-level round


def _jitter(network: Network, rnd: int, phase: int, m: int) -> np.ndarray | None:
    if network.jitter <= 0.0 or m == 0:
        return None
    u = kernels._uniform_np(kernels.phase_key(network.seed, rnd, phase), m)
    return 1.0 + network.jitter * (2.0 * u - 1.0)


def _recipients(leader: int, validators: Sequence[Validator]) -> list[int]:
    n = len(validators)
    return [(leader + j) % n for j in range(1, n) if validators[(leader + j) % n].alive]


def _expected_phase(size, verify, n, q, network, timing) -> float:
    full = np.ones(n, dtype=np.int8)
    return kernels.phase_np(
        size, verify, 0, full, n, q, network.link.bandwidth, network.link.propagation,
        timing.sign, timing.aggregate_per_signer, timing.vote_size,
        network.strategy.code, network.strategy.beta, 0.0, np.uint64(0),
    )


def _broadcast(size, leader, validators, network, rnd, phase):
    rec = _recipients(leader, validators)
    if not rec:
        return rec, np.empty(0)
    d = simulate_broadcast(size, len(rec) + 1, network.link, network.strategy)
    jit = _jitter(network, rnd, phase, len(rec))
    if jit is not None:
        d = d * jit
    return rec, d


def _run_phase(
    phase: Phase,
    start: float,
    size: float,
    verify: float,
    message: bytes,
    state: RoundState,
    validators: Sequence[Validator],
    network: Network,
    timing: TimingModel,
    consortium: Consortium | None,
    log: list | None,
):
    """Simulate one phase; returns (qc_time or None, QC or None)."""
    n = len(validators)
    q = quorum_size(n)
    leader = state.leader_id
    state.advance(phase)
    state.phase_start_times[phase] = start
    if log is not None:
        log.append(SimEvent(start, 0, "phase_start", leader, state.round_number, int(phase)))
    if not validators[leader].alive:
        return None, None
    rec, d = _broadcast(size, leader, validators, network, state.round_number, int(phase))
    prop = network.link.propagation
    tv = 8.0 * timing.vote_size / network.link.bandwidth
    heap: list = []
    seq = 0
    for v, dv in zip(rec, d):
        heapq.heappush(heap, (start + dv, seq, "deliver", v))
        seq += 1
    heapq.heappush(heap, (start + timing.sign, seq, "own", leader))
    seq += 1
    downlink_free = -math.inf
    voters: list[int] = []
    qc_time = None
    while heap:
        t, _, kind, v = heapq.heappop(heap)
        if kind == "deliver":
            if log is not None:
                log.append(SimEvent(t, 0, "msg_delivery", v, state.round_number, int(phase), encode_detail(size=int(size))))
            heapq.heappush(heap, (t + verify + timing.sign + prop, seq, "arrive", v))
            seq += 1
        elif kind == "arrive":
            # FIFO queue on the leader's downlink
            downlink_free = max(downlink_free, t) + tv
            heapq.heappush(heap, (downlink_free, seq, "recv", v))
            seq += 1
        else:
            if qc_time is not None:
                continue
            voters.append(v)
            if log is not None and kind == "recv":
                log.append(SimEvent(t, 0, "vote", v, state.round_number, int(phase)))
            if len(voters) >= q:
                qc_time = t + timing.aggregate_per_signer * q
    state.collected_votes[phase] = list(voters)
    if qc_time is None:
        return None, None
    ids = sorted(v + 1 for v in voters)
    if consortium is not None:
        votes: list[SignatureVote] = [consortium.sign(i, message) for i in ids]
        qc = aggregate(votes, phase)
    else:
        qc = QuorumCertificate(tuple(ids), None, int(phase), digest(message))
    state.phase_qcs[phase] = qc
    if log is not None:
        log.append(SimEvent(qc_time, 0, "qc", leader, state.round_number, int(phase), encode_detail(signers=len(ids))))
    return qc_time, qc


def run_round(
    state: RoundState,
    validators: Sequence[Validator],
    network: Network,
    pool: MemoryPool,
    *,
    now: float,
    capacity: int,
    timing: TimingModel = TimingModel(),
    consortium: Consortium | None = None,
    header_size: int = DEFAULT_HEADER_SIZE,
    tx_size: int = DEFAULT_TX_SIZE,
    ireport: IReport | None = None,
    report_size: int = 0,
    empty_blocks: bool = False,
    log: list | None = None,
) -> RoundResult:
    """Run one consensus round starting at ``now``.

    On success the block is appended to every live validator's ledger and
    ``latency`` is measured from the start of the block proposal broadcast
    to Decide-QC formation at the leader.
    """
    n = len(validators)
    q = quorum_size(n)
    qcb = qc_size(q)
    small = timing.msg_overhead + qcb
    leader = state.leader_id
    lv = validators[leader]
    tf = timing.timeout_factor
    if log is not None:
        log.append(SimEvent(now, 0, "round_start", leader, state.round_number))
    starts = [math.nan] * 4
    qc_times = [math.nan] * 4

    def timeout(phase: Phase, start: float, expected: float, batch=None) -> RoundResult:
        end = start + tf * expected
        if batch:
            pool.requeue(batch)
        if log is not None:
            log.append(SimEvent(end, 0, "phase_timeout", leader, state.round_number, int(phase)))
        return RoundResult(kernels.ST_TIMEOUT, None, dict(state.phase_qcs), math.nan, now, end, end, starts, qc_times, int(phase), ireport)

    exp_small = _expected_phase(small, timing.qc_verify, n, q, network, timing)
    tip = lv.ledger.tip
    starts[0] = now
    prep_msg = phase_message(Phase.PREPARE, tip.height + 1, tip.digest())
    t_qc, _ = _run_phase(Phase.PREPARE, now, small, timing.qc_verify, prep_msg, state, validators, network, timing, consortium, log)
    if t_qc is None or t_qc - now > tf * exp_small:
        return timeout(Phase.PREPARE, now, exp_small)
    t1 = t_qc
    qc_times[0] = starts[1] = t1

    batch = pool.take(capacity, t1)
    if not batch and not empty_blocks:
        raise ValueError("empty pool with empty-block proposals disabled")
    txs = tuple(tx for tx, _ in batch)
    if txs and all(isinstance(tx, int) for tx in txs) and txs == tuple(range(txs[0], txs[0] + len(txs))):
        txs = range(txs[0], txs[0] + len(txs))
    header = BlockHeader(tip.height + 1, tip.digest(), content_digest(txs), t1, header_size)
    block = Block(header, txs)
    state.proposed_block = block
    size1 = header_size + len(txs) * tx_size + qcb + (report_size if ireport is not None else 0)
    _, vtime = verify_block(block, timing.dvf)
    ver1 = timing.qc_verify + vtime
    exp1 = _expected_phase(size1, ver1, n, q, network, timing)
    bd = block.digest()
    t_qc, _ = _run_phase(Phase.PRE_COMMIT, t1, size1, ver1, phase_message(Phase.PRE_COMMIT, block.height, bd),
                         state, validators, network, timing, consortium, log)
    if t_qc is None or t_qc - t1 > tf * exp1:
        return timeout(Phase.PRE_COMMIT, t1, exp1, batch)
    t = t_qc
    qc_times[1] = starts[2] = t
    if ireport is not None and log is not None:
        log.append(SimEvent(t, 0, "report_emit", leader, state.round_number, int(Phase.PRE_COMMIT),
                            encode_detail(first=ireport.first_height, last=ireport.last_height, count=ireport.total)))
    for phase in (Phase.COMMIT, Phase.DECIDE):
        msg = phase_message(phase, block.height, bd)
        t_qc, qc = _run_phase(phase, t, small, timing.qc_verify, msg, state, validators, network, timing, consortium, log)
        if t_qc is None or t_qc - t > tf * exp_small:
            return timeout(phase, t, exp_small, batch)
        qc_times[phase] = t_qc
        t = t_qc
        if phase != Phase.DECIDE:
            starts[phase + 1] = t
    decide_qc = state.phase_qcs[Phase.DECIDE]
    if consortium is not None and not verify_qc(decide_qc, phase_message(Phase.DECIDE, block.height, bd), consortium.gpk):
        raise AssertionError("leader formed an invalid Decide QC")
    committed = None
    for v in validators:
        if v.alive:
            append_block(v.ledger, block, decide_qc)
            committed = v.ledger.tip
    if log is not None:
        log.append(SimEvent(t, 0, "commit", leader, state.round_number, int(Phase.DECIDE),
                            encode_detail(height=block.height, txs=len(txs))))
    rec, d = _broadcast(small, leader, validators, network, state.round_number, 4)
    nxt = (leader + 1) % n
    if not rec:
        hand = 0.0
    elif validators[nxt].alive:
        hand = float(d[0])
    else:
        hand = float(d.max())
    return RoundResult(kernels.ST_COMMITTED, committed, dict(state.phase_qcs), t - t1, now, t, t + hand,
                       starts, qc_times, -1, ireport)
