"""Hot loops of the round simulator.

The whole-run round loop is written once and instantiated twice: compiled
with numba ``@njit`` around scalar helper kernels, or run as plain Python
around vectorised numpy helpers.  Both helper sets perform the same
floating-point operations in the same order, so the two paths agree bit for
bit.  Set ``GEOSIM_DISABLE_NUMBA=1`` to force the numpy path.
"""

from __future__ import annotations

import math
import os

import numpy as np

try:
    import numba
    from numba import njit
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

STRAT_TREE = 0
STRAT_DIRECT = 1

ST_COMMITTED = 0
ST_TIMEOUT = 1
ST_INCOMPLETE = 2

# float parameter slots
P_BW, P_PROP, P_SIGN, P_AGG, P_QCV, P_DVF, P_DVF_REP, P_HEADER, P_TX, P_REPORT, P_DURATION, P_TIMEOUT, P_VOTE, P_JITTER, P_OVERHEAD = range(15)
N_FP = 15
# int parameter slots
I_N, I_Q, I_CAP, I_STRAT, I_BETA, I_GAMMA, I_EMPTY, I_SEED, I_ROUND_LIMIT = range(9)
N_IP = 9

# per-round float outputs
F_START, F_END, F_NEXT, F_WAIT, F_EMIT, F_SIZE1 = range(6)
N_OF = 6
# per-round int outputs
O_ROUND, O_LEADER, O_STATUS, O_FAIL, O_K, O_FIRST, O_POOL_START, O_POOL_FILL, O_CARRY, O_REP_LO, O_REP_HI, O_HEIGHT = range(12)
N_OI = 12
# phase start times occupy columns 0..3, QC times 4..7

# loop state
S_CURSOR, S_ARRIVED, S_ROUND, S_HEIGHT, S_PENDING, S_REP_LO, S_REP_HI, S_DONE = range(8)
N_SI = 8

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30, _S27, _S31, _S11 = np.uint64(30), np.uint64(27), np.uint64(31), np.uint64(11)
_TWO53 = 1.0 / 9007199254740992.0


def numba_enabled() -> bool:
    flag = os.environ.get("GEOSIM_DISABLE_NUMBA", "").strip().lower()
    return numba is not None and flag not in ("1", "true", "yes", "on")


def phase_key(seed: int, rnd: int, phase: int) -> np.uint64:
    """Jitter stream key of one broadcast (``phase`` 4 is the commit notification)."""
    with np.errstate(over="ignore"):
        return _mix64_np(np.uint64(seed) + np.uint64(rnd * 8 + phase + 1) * GOLDEN)


def qc_bytes(q: int) -> int:
    return 131 + 4 * q


# ---------------------------------------------------------------- numpy kernels

def _mix64_np(z):
    with np.errstate(over="ignore"):
        z = (z ^ (z >> _S30)) * _M1
        z = (z ^ (z >> _S27)) * _M2
        return z ^ (z >> _S31)


def _uniform_np(key, m):
    with np.errstate(over="ignore"):
        idx = np.arange(1, m + 1, dtype=np.uint64)
        z = _mix64_np(np.uint64(key) + idx * GOLDEN)
    return (z >> _S11).astype(np.float64) * _TWO53


def _levels_np(m, beta):
    out = np.empty(m, dtype=np.int64)
    filled, depth, width = 0, 1, beta
    while filled < m:
        take = min(width, m - filled)
        out[filled : filled + take] = depth
        filled += take
        depth += 1
        width *= beta
    return out


def deliveries_np(size, leader, alive, n, bw, prop, strat, beta, jit, key):
    """Recipients (alive, ring order from the leader) and their delivery offsets."""
    ring = (leader + np.arange(1, n)) % n
    rec = ring[alive[ring] != 0]
    m = rec.size
    t = 8.0 * size / bw
    if strat == STRAT_TREE:
        d = _levels_np(m, beta) * (beta * t + prop)
    else:
        d = np.arange(1, m + 1) * t + prop
    if jit > 0.0 and m > 0:
        d = d * (1.0 + jit * (2.0 * _uniform_np(key, m) - 1.0))
    return rec, d


def votes_np(d, rec, verify, sign, bw, prop, vote, jit):
    """Vote arrival order and downlink completion times at the leader."""
    arr = d + verify + sign + prop
    if jit > 0.0:
        order = np.argsort(arr, kind="mergesort")
        arr = arr[order]
        rec = rec[order]
    m = arr.size
    tv = 8.0 * vote / bw
    g = arr - np.arange(m) * tv
    done = np.maximum.accumulate(g) + np.arange(1, m + 1) * tv
    return rec, arr, done


def quorum_time(done, own, q, sign, agg):
    need = q - own
    if need <= 0:
        return sign + agg * q
    if need > done.size:
        return math.inf
    return done[need - 1] + agg * q


def phase_np(size, verify, leader, alive, n, q, bw, prop, sign, agg, vote, strat, beta, jit, key):
    rec, d = deliveries_np(size, leader, alive, n, bw, prop, strat, beta, jit, key)
    _, _, done = votes_np(d, rec, verify, sign, bw, prop, vote, jit)
    return quorum_time(done, 1 if alive[leader] else 0, q, sign, agg)


def notify_np(size, leader, nxt, alive, n, bw, prop, strat, beta, jit, key):
    if n < 2:
        return 0.0
    rec, d = deliveries_np(size, leader, alive, n, bw, prop, strat, beta, jit, key)
    if rec.size == 0:
        return 0.0
    if alive[nxt]:
        return d[0]
    return d.max()


def advance_np(arrivals, arrived, t):
    return max(arrived, int(np.searchsorted(arrivals, t, side="right")))


def wait_sum_np(arrivals, first, k, t):
    if k == 0:
        return 0.0
    return np.cumsum(t - arrivals[first : first + k])[-1]


def key_np(seed, rnd, phase):
    return phase_key(seed, rnd, phase)


# ---------------------------------------------------------------- round loop

def _make_round_loop(phase, notify, advance, wait_sum, key):
    def round_loop(arrivals, alive, full, fp, ip, exp, st_f, st_i, out_f, out_i, out_ph):
        bw = fp[P_BW]
        prop = fp[P_PROP]
        sign = fp[P_SIGN]
        agg = fp[P_AGG]
        qcv = fp[P_QCV]
        dvf = fp[P_DVF]
        dvf_rep = fp[P_DVF_REP]
        header = fp[P_HEADER]
        tx = fp[P_TX]
        rep_size = fp[P_REPORT]
        duration = fp[P_DURATION]
        tf = fp[P_TIMEOUT]
        vote = fp[P_VOTE]
        jit = fp[P_JITTER]
        overhead = fp[P_OVERHEAD]
        n = ip[I_N]
        q = ip[I_Q]
        cap = ip[I_CAP]
        strat = ip[I_STRAT]
        beta = ip[I_BETA]
        gamma = ip[I_GAMMA]
        empty_blocks = ip[I_EMPTY]
        seed = ip[I_SEED]
        round_limit = ip[I_ROUND_LIMIT]
        all_alive = True
        for v in range(n):
            if alive[v] == 0:
                all_alive = False
        exact_expected = all_alive and jit == 0.0
        small = overhead + (131.0 + 4.0 * q)
        limit_small = tf * exp[0]

        t = st_f[0]
        cursor = st_i[S_CURSOR]
        arrived = st_i[S_ARRIVED]
        rnd = st_i[S_ROUND]
        height = st_i[S_HEIGHT]
        pending = st_i[S_PENDING]
        rep_lo = st_i[S_REP_LO]
        rep_hi = st_i[S_REP_HI]
        done = st_i[S_DONE]
        n_arr = arrivals.shape[0]
        rows = 0
        cap_rows = out_f.shape[0]

        while rows < cap_rows and done == 0:
            if round_limit >= 0 and rnd >= round_limit:
                done = 1
                break
            arrived = advance(arrivals, arrived, t)
            if arrived == cursor and empty_blocks == 0:
                if arrived >= n_arr:
                    done = 1
                    break
                # idle leader waits for the next arrival
                if arrivals[arrived] > t:
                    t = arrivals[arrived]
                arrived = advance(arrivals, arrived, t)
            if t >= duration:
                done = 1
                break

            leader = rnd % n
            for c in range(N_OF):
                out_f[rows, c] = math.nan
            for c in range(N_OI):
                out_i[rows, c] = 0
            for c in range(8):
                out_ph[rows, c] = math.nan
            out_i[rows, O_ROUND] = rnd
            out_i[rows, O_LEADER] = leader
            out_i[rows, O_POOL_START] = arrived - cursor
            out_i[rows, O_FAIL] = -1
            out_i[rows, O_REP_LO] = rep_lo
            out_i[rows, O_REP_HI] = rep_hi
            out_f[rows, F_START] = t
            status = ST_COMMITTED
            carry = pending
            out_i[rows, O_CARRY] = carry

            # Prepare: QC of the previous block
            ts = t
            out_ph[rows, 0] = ts
            if alive[leader] == 0:
                qc0 = math.inf
            else:
                qc0 = phase(small, qcv, leader, alive, n, q, bw, prop, sign, agg, vote, strat, beta, jit, key(seed, rnd, 0))
            end = 0.0
            if not (qc0 <= limit_small):
                status = ST_TIMEOUT
                out_i[rows, O_FAIL] = 0
                end = ts + limit_small
            else:
                t1 = ts + qc0
                out_ph[rows, 4] = t1
                out_ph[rows, 1] = t1
                arrived = advance(arrivals, arrived, t1)
                avail = arrived - cursor
                k = cap if avail > cap else avail
                out_i[rows, O_POOL_FILL] = avail
                out_i[rows, O_K] = k
                out_i[rows, O_FIRST] = cursor
                size1 = header + k * tx + (131.0 + 4.0 * q)
                ver1 = qcv + k * dvf
                if carry != 0:
                    size1 = size1 + rep_size
                    ver1 = ver1 + dvf_rep
                out_f[rows, F_SIZE1] = size1
                qc1 = phase(size1, ver1, leader, alive, n, q, bw, prop, sign, agg, vote, strat, beta, jit, key(seed, rnd, 1))
                if exact_expected:
                    exp1 = qc1
                else:
                    exp1 = phase(size1, ver1, leader, full, n, q, bw, prop, sign, agg, vote, strat, beta, 0.0, key(seed, rnd, 1))
                limit1 = tf * exp1
                if not (qc1 <= limit1):
                    status = ST_TIMEOUT
                    out_i[rows, O_FAIL] = 1
                    end = t1 + limit1
                else:
                    t2 = t1 + qc1
                    out_ph[rows, 5] = t2
                    out_ph[rows, 2] = t2
                    if carry != 0:
                        out_f[rows, F_EMIT] = t2
                        pending = 0
                        rep_lo = rep_hi + 1
                    qc2 = phase(small, qcv, leader, alive, n, q, bw, prop, sign, agg, vote, strat, beta, jit, key(seed, rnd, 2))
                    if not (qc2 <= limit_small):
                        status = ST_TIMEOUT
                        out_i[rows, O_FAIL] = 2
                        end = t2 + limit_small
                    else:
                        t3 = t2 + qc2
                        out_ph[rows, 6] = t3
                        out_ph[rows, 3] = t3
                        qc3 = phase(small, qcv, leader, alive, n, q, bw, prop, sign, agg, vote, strat, beta, jit, key(seed, rnd, 3))
                        if not (qc3 <= limit_small):
                            status = ST_TIMEOUT
                            out_i[rows, O_FAIL] = 3
                            end = t3 + limit_small
                        else:
                            t4 = t3 + qc3
                            out_ph[rows, 7] = t4
                            end = t4
                            if t4 > duration:
                                status = ST_INCOMPLETE
                            else:
                                height += 1
                                out_i[rows, O_HEIGHT] = height
                                out_f[rows, F_WAIT] = wait_sum(arrivals, cursor, k, t4)
                                cursor += k
                                if gamma > 0 and height % gamma == 0:
                                    pending = 1
                                    rep_hi = height
            out_i[rows, O_STATUS] = status
            out_f[rows, F_END] = end
            if status == ST_COMMITTED:
                nxt = (rnd + 1) % n
                nt = end + notify(small, leader, nxt, alive, n, bw, prop, strat, beta, jit, key(seed, rnd, 4))
            else:
                nt = end
            out_f[rows, F_NEXT] = nt
            rows += 1
            rnd += 1
            t = nt
            if status == ST_INCOMPLETE:
                done = 1

        st_f[0] = t
        st_i[S_CURSOR] = cursor
        st_i[S_ARRIVED] = arrived
        st_i[S_ROUND] = rnd
        st_i[S_HEIGHT] = height
        st_i[S_PENDING] = pending
        st_i[S_REP_LO] = rep_lo
        st_i[S_REP_HI] = rep_hi
        st_i[S_DONE] = done
        return rows

    return round_loop


round_loop_np = _make_round_loop(phase_np, notify_np, advance_np, wait_sum_np, key_np)


# ---------------------------------------------------------------- numba kernels

if numba is not None:

    @njit(cache=True)
    def _mix64_nb(z):
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))

    @njit(cache=True)
    def key_nb(seed, rnd, phase):
        return _mix64_nb(np.uint64(seed) + np.uint64(rnd * 8 + phase + 1) * np.uint64(0x9E3779B97F4A7C15))

    @njit(cache=True)
    def deliveries_nb(size, leader, alive, n, bw, prop, strat, beta, jit, key):
        m = 0
        for j in range(1, n):
            if alive[(leader + j) % n] != 0:
                m += 1
        rec = np.empty(m, dtype=np.int64)
        d = np.empty(m, dtype=np.float64)
        t = 8.0 * size / bw
        hop = beta * t + prop
        i = 0
        depth = 1
        width = beta
        in_level = 0
        for j in range(1, n):
            v = (leader + j) % n
            if alive[v] == 0:
                continue
            rec[i] = v
            if strat == 0:
                d[i] = depth * hop
                in_level += 1
                if in_level == width:
                    depth += 1
                    width *= beta
                    in_level = 0
            else:
                d[i] = (i + 1) * t + prop
            i += 1
        if jit > 0.0:
            for i in range(m):
                z = _mix64_nb(np.uint64(key) + np.uint64(i + 1) * np.uint64(0x9E3779B97F4A7C15))
                u = np.float64(z >> np.uint64(11)) * (1.0 / 9007199254740992.0)
                d[i] = d[i] * (1.0 + jit * (2.0 * u - 1.0))
        return rec, d

    @njit(cache=True)
    def phase_nb(size, verify, leader, alive, n, q, bw, prop, sign, agg, vote, strat, beta, jit, key):
        rec, d = deliveries_nb(size, leader, alive, n, bw, prop, strat, beta, jit, key)
        m = d.shape[0]
        arr = np.empty(m, dtype=np.float64)
        for i in range(m):
            arr[i] = d[i] + verify + sign + prop
        if jit > 0.0:
            arr = arr[np.argsort(arr, kind="mergesort")]
        own = 1 if alive[leader] != 0 else 0
        need = q - own
        if need <= 0:
            return sign + agg * q
        if need > m:
            return np.inf
        tv = 8.0 * vote / bw
        best = -np.inf
        for i in range(need):
            g = arr[i] - i * tv
            if g > best:
                best = g
        return best + need * tv + agg * q

    @njit(cache=True)
    def notify_nb(size, leader, nxt, alive, n, bw, prop, strat, beta, jit, key):
        if n < 2:
            return 0.0
        rec, d = deliveries_nb(size, leader, alive, n, bw, prop, strat, beta, jit, key)
        if d.shape[0] == 0:
            return 0.0
        if alive[nxt] != 0:
            return d[0]
        return d.max()

    @njit(cache=True)
    def advance_nb(arrivals, arrived, t):
        n_arr = arrivals.shape[0]
        while arrived < n_arr and arrivals[arrived] <= t:
            arrived += 1
        return arrived

    @njit(cache=True)
    def wait_sum_nb(arrivals, first, k, t):
        acc = 0.0
        for j in range(first, first + k):
            acc += t - arrivals[j]
        return acc

    round_loop_nb = njit(cache=False)(_make_round_loop(phase_nb, notify_nb, advance_nb, wait_sum_nb, key_nb))
else:  # pragma: no cover
    round_loop_nb = None


def get_round_loop(use_numba: bool | None = None):
    if use_numba is None:
        use_numba = numba_enabled()
    if use_numba and round_loop_nb is not None:
        return round_loop_nb
    return round_loop_np
