"""Whole-run simulation of one NIB or GIB chain and the two-layer GEOS composition.

A run draws the arrival stream, drives the round kernel over the full
horizon, then derives the per-block records and the aggregate metrics:

* average transactions per block, the mean of ``|R_i|`` over committed blocks
* average consensus latency, the mean of ``dt_i`` from the start of the
  block proposal to the leader's Decide QC
* throughput, average block size divided by average latency
* confirmation time, the mean over committed transactions of
  ``commit_time - arrival_time``

Aggregates only count blocks committed after the warm-up window.
:func:`recompute_metrics` rebuilds them from the event log by a plain
sequential fold and must agree with the inline values bit for bit.
"""

from __future__ import annotations

import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from . import kernels
from .bls import Consortium, Phase, QuorumCertificate, digest, qc_size
from .consensus import MSG_OVERHEAD, TimingModel, quorum_size
from .events import SimEvent, encode_detail
from .netsim import GIB_LINK, NIB_LINK, VOTE_SIZE, BroadcastStrategy, LinkParams
from .records import (
    DEFAULT_HEADER_SIZE,
    DEFAULT_REPORT_BASE_SIZE,
    DEFAULT_TX_SIZE,
    MIB,
    ZERO_DIGEST,
    Block,
    BlockHeader,
    GenesisParams,
    Ledger,
    append_block,
    content_digest,
    make_genesis,
    max_txs_per_block,
    phase_message,
)
from .workload import GIB_STREAM, country, generate_arrivals, gib_arrival_rate

log = logging.getLogger(__name__)

CHUNK_ROWS = 1 << 15
DIVERGENCE_TAIL = 0.25
DIVERGENCE_WINDOWS = 10
DIVERGENCE_SAMPLES = 20


class DivergenceWarning(UserWarning):
    """Mempool occupancy keeps growing: arrivals outpace the chain's throughput."""


class LogGapError(ValueError):
    """The event log is missing commit records."""


@dataclass(frozen=True)
class SimConfig:
    role: str = "NIB"
    n: int = 4
    b_max: int = 4 * MIB
    header_size: int = DEFAULT_HEADER_SIZE
    tx_size: int | None = None
    dvf: float = 0.1e-3
    dvf_report: float = 2.5e-3
    bandwidth: float = NIB_LINK.bandwidth
    propagation: float = NIB_LINK.propagation
    strategy: str = "tree"
    beta: int = 2
    rate: float | None = None
    country: str | None = "IND"
    gamma: int = 1
    duration: float = 3600.0
    seed: int = 0
    stream: int = 0
    sign_time: float = 0.3e-3
    aggregate_time: float = 0.02e-3
    qc_verify_time: float = 2.5e-3
    timeout_factor: float = 10.0
    jitter: float = 0.0
    empty_blocks: bool = False
    warmup_fraction: float = 0.05
    crashed: tuple[int, ...] = ()
    report_base_size: int = DEFAULT_REPORT_BASE_SIZE
    nib_n: int | None = None
    event_log: bool = False
    track_ledgers: bool = False
    real_crypto: bool = False

    def __post_init__(self):
        if self.role not in ("NIB", "GIB"):
            raise ValueError("role must be NIB or GIB")
        for name in ("n", "b_max", "header_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        for name in ("dvf", "dvf_report", "sign_time", "aggregate_time", "qc_verify_time", "jitter", "duration"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} cannot be negative")
        if self.timeout_factor < 1:
            raise ValueError("timeout factor must be at least one expected phase")
        if not 0 <= self.warmup_fraction < 1:
            raise ValueError("warm-up fraction must lie in [0, 1)")
        if self.gamma < 0:
            raise ValueError("report cadence cannot be negative")
        if self.jitter >= 1:
            raise ValueError("jitter must stay below 100%")
        if any(not 0 <= v < self.n for v in self.crashed):
            raise ValueError("crashed validator index out of range")
        if self.rate is None and self.country is None:
            raise ValueError("need an arrival rate or a country")
        if self.rate is not None and self.rate < 0:
            raise ValueError("arrival rate cannot be negative")
        self.link  # validates bandwidth and propagation
        self.broadcast
        self.capacity

    @property
    def link(self) -> LinkParams:
        return LinkParams(self.bandwidth, self.propagation)

    @property
    def broadcast(self) -> BroadcastStrategy:
        return BroadcastStrategy(self.strategy, self.beta)

    @property
    def quorum(self) -> int:
        return quorum_size(self.n)

    @property
    def report_size(self) -> int:
        """Wire size of an iReport from a chain of this config's validator count."""
        return self.report_base_size + qc_size(self.quorum)

    @property
    def transaction_size(self) -> int:
        if self.tx_size is not None:
            return self.tx_size
        if self.role == "GIB":
            return self.report_base_size + qc_size(quorum_size(self.nib_n or self.n))
        return DEFAULT_TX_SIZE

    @property
    def verify_per_tx(self) -> float:
        return self.dvf_report if self.role == "GIB" else self.dvf

    @property
    def capacity(self) -> int:
        return max_txs_per_block(self.b_max, self.header_size, self.transaction_size)

    @property
    def arrival_rate(self) -> float:
        return self.rate if self.rate is not None else country(self.country).rate

    @property
    def timing(self) -> TimingModel:
        return TimingModel(self.sign_time, self.aggregate_time, self.qc_verify_time, self.dvf, self.dvf_report, self.timeout_factor)

    def echo(self) -> dict:
        out = asdict(self)
        out["crashed"] = list(self.crashed)
        out["arrival_rate"] = self.arrival_rate
        out["capacity"] = self.capacity
        out["transaction_size"] = self.transaction_size
        return out


def nib_config(**kw) -> SimConfig:
    return SimConfig(**{"role": "NIB", "bandwidth": NIB_LINK.bandwidth, "propagation": NIB_LINK.propagation, **kw})


def gib_config(**kw) -> SimConfig:
    base = {"role": "GIB", "bandwidth": GIB_LINK.bandwidth, "propagation": GIB_LINK.propagation,
            "country": None, "rate": 0.0, "gamma": 0, "stream": GIB_STREAM}
    return SimConfig(**{**base, **kw})


@dataclass
class MetricsReport:
    config: SimConfig
    heights: np.ndarray
    txs: np.ndarray
    latency: np.ndarray
    proposal_time: np.ndarray
    commit_time: np.ndarray
    wait_sum: np.ndarray
    steady: np.ndarray
    avg_txs_per_block: float
    avg_latency_s: float
    throughput_tps: float
    confirmation_s: float
    blocks_per_s: float
    warmup_end: float
    arrivals: int = 0
    rounds: int = 0
    timeouts: int = 0
    incomplete: int = 0
    occupancy_t: np.ndarray = field(default_factory=lambda: np.empty(0))
    occupancy: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    divergence: bool = False
    report_times: np.ndarray = field(default_factory=lambda: np.empty(0))
    report_first: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    report_last: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    report_counts: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    events: list | None = None
    ledgers: list | None = None
    arrival_weights: np.ndarray | None = None
    kernel: str = ""

    @property
    def blocks(self) -> int:
        return int(self.heights.size)

    @property
    def committed_txs(self) -> int:
        return int(self.txs.sum())

    @property
    def pending(self) -> int:
        return self.arrivals - self.committed_txs

    @property
    def strategy(self) -> str:
        return self.config.broadcast.describe()

    def confirmation_extrapolated_s(self, horizon: float | None = None) -> float:
        """Mean confirmation time over ``horizon`` for a backlog growing at the measured rates.

        Uses the steady commit rate ``mu``; returns the measured value unless
        the run carries the divergence warning.
        """
        if not self.divergence:
            return self.confirmation_s
        horizon = self.config.duration if horizon is None else horizon
        lam = self.config.arrival_rate if self.arrival_weights is None else self.arrivals / max(self.config.duration, 1e-12)
        window = self.config.duration - self.warmup_end
        mu = float(self.txs[self.steady].sum()) / window if window > 0 else 0.0
        if mu <= 0:
            return math.inf
        if lam <= mu:
            return self.confirmation_s
        return float(max(self.confirmation_s, (lam / mu - 1.0) * horizon / 2.0))

    def summary(self) -> dict:
        return {
            "avg_latency_s": self.avg_latency_s,
            "throughput_tps": self.throughput_tps,
            "confirmation_s": self.confirmation_s,
            "blocks_per_s": self.blocks_per_s,
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("height,txs,consensus_latency_s\n")
        for h, k, d in zip(self.heights.tolist(), self.txs.tolist(), self.latency.tolist()):
            buf.write(f"{h},{k},{d!r}\n")
        buf.write("avg_latency_s,throughput_tps,confirmation_s,blocks_per_s\n")
        buf.write(",".join(repr(float(v)) for v in self.summary().values()) + "\n")
        return buf.getvalue()


# ---------------------------------------------------------------- kernel driver


def _params(cfg: SimConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    fp = np.zeros(kernels.N_FP)
    fp[kernels.P_BW] = cfg.bandwidth
    fp[kernels.P_PROP] = cfg.propagation
    fp[kernels.P_SIGN] = cfg.sign_time
    fp[kernels.P_AGG] = cfg.aggregate_time
    fp[kernels.P_QCV] = cfg.qc_verify_time
    fp[kernels.P_DVF] = cfg.verify_per_tx
    fp[kernels.P_DVF_REP] = 0.0
    fp[kernels.P_HEADER] = cfg.header_size
    fp[kernels.P_TX] = cfg.transaction_size
    fp[kernels.P_REPORT] = cfg.report_size if cfg.role == "NIB" and cfg.gamma > 0 else 0.0
    fp[kernels.P_DURATION] = cfg.duration
    fp[kernels.P_TIMEOUT] = cfg.timeout_factor
    fp[kernels.P_VOTE] = VOTE_SIZE
    fp[kernels.P_JITTER] = cfg.jitter
    fp[kernels.P_OVERHEAD] = MSG_OVERHEAD
    ip = np.zeros(kernels.N_IP, dtype=np.int64)
    ip[kernels.I_N] = cfg.n
    ip[kernels.I_Q] = cfg.quorum
    ip[kernels.I_CAP] = cfg.capacity
    ip[kernels.I_STRAT] = cfg.broadcast.code
    ip[kernels.I_BETA] = cfg.beta
    ip[kernels.I_GAMMA] = cfg.gamma if cfg.role == "NIB" else 0
    ip[kernels.I_EMPTY] = int(cfg.empty_blocks)
    ip[kernels.I_SEED] = cfg.seed & 0x7FFFFFFFFFFFFFFF
    ip[kernels.I_ROUND_LIMIT] = -1
    full = np.ones(cfg.n, dtype=np.int8)
    small = MSG_OVERHEAD + qc_size(cfg.quorum)
    e = kernels.phase_np(small, cfg.qc_verify_time, 0, full, cfg.n, cfg.quorum, cfg.bandwidth, cfg.propagation,
                         cfg.sign_time, cfg.aggregate_time, VOTE_SIZE, cfg.broadcast.code, cfg.beta, 0.0, np.uint64(0))
    exp = np.array([e, math.nan, e, e])
    return fp, ip, exp


def alive_mask(cfg: SimConfig) -> np.ndarray:
    alive = np.ones(cfg.n, dtype=np.int8)
    alive[list(cfg.crashed)] = 0
    return alive


def simulate_rounds(cfg: SimConfig, arrivals: np.ndarray, use_numba: bool | None = None):
    """Drive the round kernel over the horizon; returns per-round output arrays."""
    loop = kernels.get_round_loop(use_numba)
    fp, ip, exp = _params(cfg)
    alive = alive_mask(cfg)
    full = np.ones(cfg.n, dtype=np.int8)
    st_f = np.zeros(1)
    st_i = np.zeros(kernels.N_SI, dtype=np.int64)
    st_i[kernels.S_REP_LO] = 1
    parts_f, parts_i, parts_p = [], [], []
    arrivals = np.ascontiguousarray(arrivals, dtype=np.float64)
    while st_i[kernels.S_DONE] == 0:
        out_f = np.empty((CHUNK_ROWS, kernels.N_OF))
        out_i = np.empty((CHUNK_ROWS, kernels.N_OI), dtype=np.int64)
        out_p = np.empty((CHUNK_ROWS, 8))
        rows = loop(arrivals, alive, full, fp, ip, exp, st_f, st_i, out_f, out_i, out_p)
        parts_f.append(out_f[:rows])
        parts_i.append(out_i[:rows])
        parts_p.append(out_p[:rows])
    return np.concatenate(parts_f), np.concatenate(parts_i), np.concatenate(parts_p), st_i.copy()


def _seq_sum(x: np.ndarray) -> float:
    # left-to-right accumulation; np.sum's pairwise order would differ from the log fold
    return float(np.cumsum(x)[-1]) if x.size else 0.0


def _aggregates(k, lat, wait, steady, duration, warmup_end):
    b = int(steady.sum())
    if b == 0:
        return math.nan, math.nan, math.nan, math.nan, 0.0
    sum_k = int(k[steady].sum())
    avg_txs = sum_k / b
    avg_lat = _seq_sum(lat[steady]) / b
    tau = avg_txs / avg_lat
    conf = _seq_sum(wait[steady]) / sum_k if sum_k else math.nan
    bps = b / (duration - warmup_end)
    return avg_txs, avg_lat, tau, conf, bps


def occupancy_at(t: np.ndarray, arrivals: np.ndarray, commit_time: np.ndarray, txs: np.ndarray) -> np.ndarray:
    arrived = np.searchsorted(arrivals, t, side="right")
    done = np.concatenate(([0], np.cumsum(txs)))[np.searchsorted(commit_time, t, side="right")]
    return arrived - done


def diverging(duration, arrivals, commit_time, txs) -> bool:
    """Window means of pool occupancy strictly increase over the run's tail."""
    if duration <= 0:
        return False
    grid = np.linspace(duration * (1 - DIVERGENCE_TAIL), duration, DIVERGENCE_WINDOWS * DIVERGENCE_SAMPLES, endpoint=False)
    occ = occupancy_at(grid, arrivals, commit_time, txs).reshape(DIVERGENCE_WINDOWS, DIVERGENCE_SAMPLES).mean(axis=1)
    return bool(np.all(np.diff(occ) > 0))


def run(config: SimConfig, arrivals: np.ndarray | None = None, *, use_numba: bool | None = None,
        arrival_weights: np.ndarray | None = None) -> MetricsReport:
    cfg = config
    if arrivals is None:
        arrivals = generate_arrivals(cfg.arrival_rate, cfg.duration, cfg.seed, cfg.stream)
    arrivals = np.asarray(arrivals, dtype=np.float64)
    arrivals = arrivals[arrivals < cfg.duration] if cfg.duration > 0 else arrivals[:0]
    if arrivals.size and np.any(np.diff(arrivals) < 0):
        raise ValueError("arrival times must be sorted")
    warm = cfg.warmup_fraction * cfg.duration
    if cfg.duration > 0:
        of, oi, op, _ = simulate_rounds(cfg, arrivals, use_numba)
    else:
        of = np.empty((0, kernels.N_OF))
        oi = np.empty((0, kernels.N_OI), dtype=np.int64)
        op = np.empty((0, 8))
    status = oi[:, kernels.O_STATUS]
    ok = status == kernels.ST_COMMITTED
    heights = oi[ok, kernels.O_HEIGHT]
    k = oi[ok, kernels.O_K]
    t1 = op[ok, 1]
    t4 = op[ok, 7]
    lat = t4 - t1
    wait = of[ok, kernels.F_WAIT]
    steady = t4 >= warm
    avg_txs, avg_lat, tau, conf, bps = _aggregates(k, lat, wait, steady, cfg.duration, warm)

    emitted = ~np.isnan(of[:, kernels.F_EMIT])
    rep_first = oi[emitted, kernels.O_REP_LO]
    rep_last = oi[emitted, kernels.O_REP_HI]
    ksum = np.concatenate(([0], np.cumsum(k)))
    rep_counts = ksum[rep_last] - ksum[rep_first - 1] if rep_first.size else np.empty(0, dtype=np.int64)

    report = MetricsReport(
        config=cfg,
        heights=heights,
        txs=k,
        latency=lat,
        proposal_time=t1,
        commit_time=t4,
        wait_sum=wait,
        steady=steady,
        avg_txs_per_block=avg_txs,
        avg_latency_s=avg_lat,
        throughput_tps=tau,
        confirmation_s=conf,
        blocks_per_s=bps,
        warmup_end=warm,
        arrivals=int(arrivals.size),
        rounds=int(status.size),
        timeouts=int((status == kernels.ST_TIMEOUT).sum()),
        incomplete=int((status == kernels.ST_INCOMPLETE).sum()),
        occupancy_t=of[:, kernels.F_START].copy(),
        occupancy=oi[:, kernels.O_POOL_START].copy(),
        divergence=diverging(cfg.duration, arrivals, t4, k),
        report_times=of[emitted, kernels.F_EMIT],
        report_first=rep_first,
        report_last=rep_last,
        report_counts=rep_counts,
        arrival_weights=arrival_weights,
        kernel="numba" if (kernels.numba_enabled() if use_numba is None else use_numba) else "numpy",
    )
    if report.divergence:
        log.warning("%s n=%d: mempool occupancy diverges (arrivals %.1f/s exceed throughput)",
                    cfg.role, cfg.n, report.arrivals / max(cfg.duration, 1e-12))
    if cfg.event_log:
        report.events = build_event_log(cfg, arrivals, of, oi, op)
    if cfg.track_ledgers:
        report.ledgers = build_ledgers(cfg, of, oi, op)
    return report


# ---------------------------------------------------------------- event log


def _phase_trace(cfg, size, verify, leader, alive, rnd, phase):
    key = kernels.phase_key(cfg.seed & 0x7FFFFFFFFFFFFFFF, rnd, phase)
    rec, d = kernels.deliveries_np(size, leader, alive, cfg.n, cfg.bandwidth, cfg.propagation,
                                   cfg.broadcast.code, cfg.beta, cfg.jitter, key)
    vrec, _, done = kernels.votes_np(d, rec, verify, cfg.sign_time, cfg.bandwidth, cfg.propagation, VOTE_SIZE, cfg.jitter)
    return rec, d, vrec, done


def build_event_log(cfg: SimConfig, arrivals, of, oi, op) -> list[SimEvent]:
    """Expand kernel output into the ordered (time, seq) event record."""
    raw: list[tuple] = [(0.0, "run_start", -1, -1, -1, encode_detail(duration=float(cfg.duration), warmup_end=cfg.warmup_fraction * cfg.duration, n=cfg.n))]
    raw.extend((float(a), "tx_arrival", -1, -1, -1, f"id={i}") for i, a in enumerate(arrivals.tolist()))
    alive = alive_mask(cfg)
    q = cfg.quorum
    small = MSG_OVERHEAD + qc_size(q)
    for row in range(oi.shape[0]):
        rnd = int(oi[row, kernels.O_ROUND])
        leader = int(oi[row, kernels.O_LEADER])
        raw.append((float(of[row, kernels.F_START]), "round_start", leader, rnd, -1, encode_detail(pool=int(oi[row, kernels.O_POOL_START]))))
        for p in range(4):
            ps = op[row, p]
            if math.isnan(ps):
                break
            raw.append((float(ps), "phase_start", leader, rnd, p, ""))
            if not alive[leader]:
                break
            if p == 1:
                size = of[row, kernels.F_SIZE1]
                verify = cfg.qc_verify_time + int(oi[row, kernels.O_K]) * cfg.verify_per_tx
            else:
                size, verify = small, cfg.qc_verify_time
            rec, d, vrec, done = _phase_trace(cfg, size, verify, leader, alive, rnd, p)
            for v, dv in zip(rec.tolist(), d.tolist()):
                raw.append((ps + dv, "msg_delivery", v, rnd, p, f"size={int(size)}"))
            qt = op[row, 4 + p]
            for v, dn in zip(vrec.tolist(), done.tolist()):
                if not math.isnan(qt) and ps + dn > qt:
                    break
                raw.append((ps + dn, "vote", v, rnd, p, ""))
            if math.isnan(qt):
                break
            raw.append((float(qt), "qc", leader, rnd, p, f"signers={q}"))
            if p == 1 and oi[row, kernels.O_CARRY] and not math.isnan(of[row, kernels.F_EMIT]):
                raw.append((float(of[row, kernels.F_EMIT]), "report_emit", leader, rnd, 1,
                            f"first={int(oi[row, kernels.O_REP_LO])};last={int(oi[row, kernels.O_REP_HI])}"))
        st = oi[row, kernels.O_STATUS]
        if st == kernels.ST_TIMEOUT:
            raw.append((float(of[row, kernels.F_END]), "phase_timeout", leader, rnd, int(oi[row, kernels.O_FAIL]), ""))
        elif st == kernels.ST_COMMITTED:
            raw.append((float(op[row, 7]), "commit", leader, rnd, 3, encode_detail(
                height=int(oi[row, kernels.O_HEIGHT]), txs=int(oi[row, kernels.O_K]), first=int(oi[row, kernels.O_FIRST]))))
    order = sorted(range(len(raw)), key=lambda i: raw[i][0])  # stable: causal order breaks ties
    return [SimEvent(raw[i][0], s, raw[i][1], raw[i][2], raw[i][3], raw[i][4], raw[i][5]) for s, i in enumerate(order)]


def recompute_metrics(events: Sequence[SimEvent]) -> MetricsReport:
    """Rebuild all aggregates from the event log with a straight sequential fold."""
    duration = warm = None
    n = 0
    pending_arrivals: list[float] = []
    head = 0
    proposal: dict[int, float] = {}
    heights, txs, lats, props, commits, waits = [], [], [], [], [], []
    timeouts = rounds = 0
    report_first, report_last, report_times = [], [], []
    for e in events:
        if e.kind == "run_start":
            f = e.fields()
            duration = float(f["duration"])
            warm = float(f["warmup_end"])
            n = int(f["n"])
        elif e.kind == "tx_arrival":
            pending_arrivals.append(e.time)
        elif e.kind == "round_start":
            rounds += 1
        elif e.kind == "phase_start" and e.phase == 1:
            proposal[e.round] = e.time
        elif e.kind == "phase_timeout":
            timeouts += 1
        elif e.kind == "report_emit":
            f = e.fields()
            report_first.append(int(f["first"]))
            report_last.append(int(f["last"]))
            report_times.append(e.time)
        elif e.kind == "commit":
            f = e.fields()
            h, k, first = int(f["height"]), int(f["txs"]), int(f["first"])
            if h != len(heights) + 1:
                raise LogGapError(f"commit for height {h} follows height {len(heights)}")
            if first != head:
                raise LogGapError(f"block {h} starts at tx {first}, expected {head}")
            if head + k > len(pending_arrivals):
                raise LogGapError(f"block {h} commits transactions that never arrived")
            acc = 0.0
            for j in range(head, head + k):
                acc += e.time - pending_arrivals[j]
            head += k
            heights.append(h)
            txs.append(k)
            lats.append(e.time - proposal[e.round])
            props.append(proposal[e.round])
            commits.append(e.time)
            waits.append(acc)
    if duration is None:
        raise LogGapError("event log has no run_start record")
    b = sum_k = 0
    sum_lat = sum_wait = 0.0
    steady = []
    for k, d, w, t in zip(txs, lats, waits, commits):
        s = t >= warm
        steady.append(s)
        if s:
            b += 1
            sum_k += k
            sum_lat += d
            sum_wait += w
    if b:
        avg_txs = sum_k / b
        avg_lat = sum_lat / b
        tau = avg_txs / avg_lat
        conf = sum_wait / sum_k if sum_k else math.nan
        bps = b / (duration - warm)
    else:
        avg_txs = avg_lat = tau = conf = math.nan
        bps = 0.0
    ksum = [0]
    for k in txs:
        ksum.append(ksum[-1] + k)
    cfg = SimConfig(n=n or 1, duration=duration, rate=len(pending_arrivals) / duration if duration else 0.0, country=None)
    return MetricsReport(
        config=cfg,
        heights=np.array(heights, dtype=np.int64),
        txs=np.array(txs, dtype=np.int64),
        latency=np.array(lats),
        proposal_time=np.array(props),
        commit_time=np.array(commits),
        wait_sum=np.array(waits),
        steady=np.array(steady, dtype=bool),
        avg_txs_per_block=avg_txs,
        avg_latency_s=avg_lat,
        throughput_tps=tau,
        confirmation_s=conf,
        blocks_per_s=bps,
        warmup_end=warm,
        arrivals=len(pending_arrivals),
        rounds=rounds,
        timeouts=timeouts,
        report_times=np.array(report_times),
        report_first=np.array(report_first, dtype=np.int64),
        report_last=np.array(report_last, dtype=np.int64),
        report_counts=np.array([ksum[l] - ksum[f - 1] for f, l in zip(report_first, report_last)], dtype=np.int64),
        kernel="fold",
    )


# ---------------------------------------------------------------- ledgers


def _modelled_genesis(cfg: SimConfig) -> GenesisParams:
    ids = tuple(range(1, cfg.n + 1))
    return GenesisParams(ids, tuple(bytes(48) for _ in ids), bytes(48), cfg.b_max)


def build_ledgers(cfg: SimConfig, of, oi, op) -> list[Ledger | None]:
    """Replay commits onto one ledger per live validator; crashed validators hold None.

    Each block is checked by :func:`append_block` on every live ledger,
    against a real BLS Decide QC when ``real_crypto`` is set.
    """
    consortium = Consortium.generate(cfg.n, seed=cfg.seed) if cfg.real_crypto else None
    genesis = make_genesis(consortium, cfg.b_max) if consortium else _modelled_genesis(cfg)
    alive = alive_mask(cfg)
    ledgers = [Ledger(genesis, real_crypto=cfg.real_crypto, quorum=cfg.quorum) if alive[v] else None for v in range(cfg.n)]
    small = MSG_OVERHEAD + qc_size(cfg.quorum)
    live = [lg for lg in ledgers if lg is not None]
    for row in np.flatnonzero(oi[:, kernels.O_STATUS] == kernels.ST_COMMITTED):
        rnd = int(oi[row, kernels.O_ROUND])
        leader = int(oi[row, kernels.O_LEADER])
        first, k = int(oi[row, kernels.O_FIRST]), int(oi[row, kernels.O_K])
        tip = ledgers[leader].tip
        txs = range(first, first + k)
        header = BlockHeader(tip.height + 1, tip.digest(), content_digest(txs), float(op[row, 1]), cfg.header_size)
        block = Block(header, txs)
        # the leader's own vote plus the first q - 1 votes through its downlink
        _, _, vrec, _ = _phase_trace(cfg, small, cfg.qc_verify_time, leader, alive, rnd, 3)
        signers = sorted([leader + 1] + [int(v) + 1 for v in vrec[: cfg.quorum - 1]])
        msg = phase_message(Phase.DECIDE, block.height, block.digest())
        if consortium is not None:
            qc = consortium.certify(signers, msg, Phase.DECIDE)
        else:
            qc = QuorumCertificate(tuple(signers), None, int(Phase.DECIDE), digest(msg))
        for lg in live:
            append_block(lg, block, qc)
    return ledgers


# ---------------------------------------------------------------- two layers


@dataclass
class GeosResult:
    nibs: list[MetricsReport]
    gib: MetricsReport
    gib_rate: float
    coupled: bool

    def conservation(self) -> tuple[int, int, int]:
        """(committed iRecords, counts in committed iReports, counts still pending report)."""
        committed = sum(r.committed_txs for r in self.nibs)
        if not self.coupled or self.gib.arrival_weights is None:
            raise ValueError("conservation accounting needs an event-coupled run")
        in_gib = int(self.gib.arrival_weights[: self.gib.committed_txs].sum())
        return committed, in_gib, committed - in_gib

    def pending_breakdown(self) -> tuple[int, int]:
        """Pending counts split into unreported NIB blocks and reports not yet committed on the GIB."""
        unreported = sum(r.committed_txs - int(r.report_counts.sum()) for r in self.nibs)
        in_flight = int(self.gib.arrival_weights[self.gib.committed_txs :].sum())
        return unreported, in_flight


def _run_one(cfg: SimConfig) -> MetricsReport:
    return run(cfg)


def run_nibs(nib_configs: Sequence[SimConfig], parallel: int = 1) -> list[MetricsReport]:
    if parallel > 1 and len(nib_configs) > 1:
        with ProcessPoolExecutor(max_workers=parallel) as ex:
            return list(ex.map(_run_one, nib_configs))
    return [run(c) for c in nib_configs]


def run_geos(nib_configs: Sequence[SimConfig], gib_config: SimConfig, *, coupled: bool = False,
             parallel: int = 1, nib_reports: Sequence[MetricsReport] | None = None) -> GeosResult:
    """Run every NIB, then the GIB fed by their iReports.

    Default coupling is by rate: the GIB sees Poisson report arrivals at the
    summed NIB block rate over each NIB's cadence.  ``coupled=True`` feeds the
    actual report emission times instead, which allows exact accounting.
    """
    if not nib_configs and nib_reports is None:
        raise ValueError("need at least one NIB")
    nibs = list(nib_reports) if nib_reports is not None else run_nibs(nib_configs, parallel)
    for r in nibs:
        if r.divergence:
            log.warning("NIB %s diverges", r.config.country or r.config.stream)
    if coupled:
        times = np.concatenate([r.report_times for r in nibs]) if nibs else np.empty(0)
        weights = np.concatenate([r.report_counts for r in nibs]) if nibs else np.empty(0, dtype=np.int64)
        order = np.argsort(times, kind="mergesort")
        times, weights = times[order], weights[order]
        keep = times < gib_config.duration
        rate = float(keep.sum()) / gib_config.duration if gib_config.duration else 0.0
        gib = run(replace(gib_config, rate=rate), times[keep], arrival_weights=weights)
        gib.arrival_weights = weights
        return GeosResult(nibs, gib, rate, True)
    rate = sum(gib_arrival_rate([r], max(r.config.gamma, 1)) for r in nibs)
    gib = run(replace(gib_config, rate=rate))
    return GeosResult(nibs, gib, rate, False)
