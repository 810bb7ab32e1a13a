"""Standalone property suite for the quorum-certificate scheme.

Checks that every quorum-sized signer subset yields an accepted certificate
and that mutated certificates (flipped message bit, wrong signer set,
forged aggregate point) are all rejected.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field

import numpy as np
from py_arkworks_bls12381 import G2Point

from .bls import (
    Consortium,
    Phase,
    QuorumCertificate,
    UnknownSignerError,
    aggregate,
    hash_to_g2,
    verify_qc,
)
from .consensus import quorum_size

MUTATIONS = ("flip_bit", "wrong_signers", "forged_point")


@dataclass
class SuiteResult:
    honest_total: int = 0
    honest_accepted: int = 0
    mutation_total: int = 0
    mutation_rejected: int = 0
    by_kind: dict = field(default_factory=dict)
    seconds: float = 0.0

    @property
    def ok(self) -> bool:
        return self.honest_accepted == self.honest_total and self.mutation_rejected == self.mutation_total

    def lines(self) -> list[str]:
        out = [f"honest quorum subsets accepted: {self.honest_accepted}/{self.honest_total}",
               f"mutations rejected: {self.mutation_rejected}/{self.mutation_total}"]
        out += [f"  {k}: {r}/{t}" for k, (r, t) in sorted(self.by_kind.items())]
        out.append(f"elapsed: {self.seconds:.1f} s")
        return out


def _rejected(qc: QuorumCertificate, message: bytes, cons: Consortium) -> bool:
    try:
        return not verify_qc(qc, message, cons.gpk)
    except UnknownSignerError:
        return True


def _mutate(kind: str, qc: QuorumCertificate, message: bytes, cons: Consortium, rng: np.random.Generator):
    if kind == "flip_bit":
        bit = int(rng.integers(len(message) * 8))
        msg = bytearray(message)
        msg[bit // 8] ^= 1 << (bit % 8)
        return qc, bytes(msg)
    if kind == "wrong_signers":
        ids = list(qc.signer_ids)
        outside = [m.member_id for m in cons.members if m.member_id not in ids]
        choice = int(rng.integers(3)) if outside else 1
        if choice == 0:  # swap one signer for a non-signer
            ids[int(rng.integers(len(ids)))] = outside[int(rng.integers(len(outside)))]
        elif choice == 1 and len(ids) > 1:  # drop one claimed signer
            del ids[int(rng.integers(len(ids)))]
        else:  # claim an extra signer
            ids.append(outside[int(rng.integers(len(outside)))] if outside else cons.n + 1)
        return QuorumCertificate(tuple(sorted(ids)), qc.agg_sig, qc.phase_tag, qc.message_digest), message
    noise = G2Point.from_compressed_bytes(hash_to_g2(rng.bytes(32), b"GEOS-SUITE-FORGERY"))
    if rng.integers(2):
        forged = noise
    else:
        forged = G2Point.from_compressed_bytes(qc.agg_sig) + noise
    return QuorumCertificate(qc.signer_ids, bytes(forged.to_compressed_bytes()), qc.phase_tag, qc.message_digest), message


def run_suite(ns=(1, 4, 7, 16), mutations: int = 1000, seed: int = 7) -> SuiteResult:
    t0 = time.perf_counter()
    res = SuiteResult(by_kind={k: [0, 0] for k in MUTATIONS})
    rng = np.random.default_rng(seed)
    samples = []
    for n in ns:
        cons = Consortium.generate(n, seed=seed + n)
        q = quorum_size(n)
        message = b"suite-message-n%d" % n
        votes = {m.member_id: cons.sign(m.member_id, message) for m in cons.members}
        for subset in itertools.combinations(range(1, n + 1), q):
            qc = aggregate([votes[i] for i in subset], Phase.DECIDE)
            res.honest_total += 1
            res.honest_accepted += bool(verify_qc(qc, message, cons.gpk))
            if len(samples) < 64 or rng.random() < 0.01:
                samples.append((cons, qc, message))
    for i in range(mutations):
        kind = MUTATIONS[i % len(MUTATIONS)]
        cons, qc, message = samples[int(rng.integers(len(samples)))]
        mqc, mmsg = _mutate(kind, qc, message, cons, rng)
        rej = _rejected(mqc, mmsg, cons)
        res.mutation_total += 1
        res.mutation_rejected += rej
        res.by_kind[kind][0] += rej
        res.by_kind[kind][1] += 1
    res.by_kind = {k: tuple(v) for k, v in res.by_kind.items()}
    res.seconds = time.perf_counter() - t0
    return res
