"""Transactions, blocks, the append-only ledger and the FIFO memory pool."""

from __future__ import annotations

import hashlib
import json
import struct
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

from .bls import GroupPublicKey, Phase, QuorumCertificate, qc_size, verify_qc

DEFAULT_TX_SIZE = 1024
DEFAULT_HEADER_SIZE = 1024
DEFAULT_REPORT_BASE_SIZE = 512
MIB = 1 << 20

ZERO_DIGEST = bytes(32)


class LedgerError(ValueError):
    pass


class ChainLinkError(LedgerError):
    pass


class DuplicateHeightError(LedgerError):
    pass


class InvalidQCError(LedgerError):
    pass


class EmptyLedgerError(LedgerError):
    pass


class CapacityError(ValueError):
    pass


def _canonical(obj) -> bytes:
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def _sha(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


@dataclass(frozen=True)
class Vaccine:
    code: str
    route: str
    administered_at: str
    dose: int

    def __post_init__(self):
        if self.dose < 1:
            raise ValueError("dose number starts at 1")


@dataclass(frozen=True)
class Manufacturer:
    manufacturer_id: str
    country: str
    vaccine_name: str
    serial: str
    batch: str


@dataclass(frozen=True)
class HealthcareProvider:
    name: str
    location: str
    country: str


@dataclass(frozen=True)
class IRecord:
    """One vaccination event, serialized in the iRecord JSON layout."""

    timestamp: float
    recipient_id: str
    country_code: str
    vaccine: Vaccine
    manufacturer: Manufacturer
    healthcare: HealthcareProvider
    signer_id: str
    sig: str
    tx_id: str = ""

    def _body(self, tx_id: str) -> dict:
        return {
            "txId": tx_id,
            "timestamp": repr(float(self.timestamp)),
            "recipient": {"Id": self.recipient_id, "cc": self.country_code},
            "vaccine": {
                "vaccode": self.vaccine.code,
                "route": self.vaccine.route,
                "timestamp": self.vaccine.administered_at,
                "dose": str(self.vaccine.dose),
            },
            "manufacturer": {
                "name": self.manufacturer.manufacturer_id,
                "cc": self.manufacturer.country,
                "vacname": self.manufacturer.vaccine_name,
                "serialnum": self.manufacturer.serial,
                "batchnum": self.manufacturer.batch,
            },
            "healthcare": {
                "name": self.healthcare.name,
                "location": self.healthcare.location,
                "cc": self.healthcare.country,
            },
            "signerID": self.signer_id,
            "sig": self.sig,
        }

    def compute_tx_id(self) -> str:
        return _sha(_canonical(self._body(""))).hex()

    def sealed(self) -> "IRecord":
        return replace(self, tx_id=self.compute_tx_id())

    def serialize(self) -> bytes:
        return _canonical(self._body(self.tx_id))

    @property
    def wire_size(self) -> int:
        return len(self.serialize())

    def digest_ok(self) -> bool:
        return self.tx_id == self.compute_tx_id()


def _qc_json(qc: QuorumCertificate | None):
    if qc is None:
        return None
    return {
        "QId": list(qc.signer_ids),
        "aggSig": qc.agg_sig.hex() if qc.agg_sig is not None else None,
        "msg": qc.message_digest.hex(),
        "phase": qc.phase_tag,
    }


@dataclass(frozen=True)
class IReport:
    """National statistics report sent from an NIB to the GIB."""

    timestamp: float
    country_code: str
    report: tuple[tuple[str, int], ...]
    qc: QuorumCertificate | None
    signer_id: str = ""
    sig: str = ""
    tx_id: str = ""
    first_height: int = 0
    last_height: int = 0

    def __post_init__(self):
        if any(count < 0 for _, count in self.report):
            raise ValueError("report counts must be nonnegative")

    def _body(self, tx_id: str) -> dict:
        return {
            "txId": tx_id,
            "timestamp": repr(float(self.timestamp)),
            "cc": self.country_code,
            "report": [{"vacname": name, "count": count} for name, count in self.report],
            "Q": _qc_json(self.qc),
            "blocks": [self.first_height, self.last_height],
            "signerId": self.signer_id,
            "sig": self.sig,
        }

    def compute_tx_id(self) -> str:
        return _sha(_canonical(self._body(""))).hex()

    def sealed(self) -> "IReport":
        return replace(self, tx_id=self.compute_tx_id())

    def serialize(self) -> bytes:
        return _canonical(self._body(self.tx_id))

    @property
    def total(self) -> int:
        return sum(c for _, c in self.report)

    def digest_ok(self) -> bool:
        return self.tx_id == self.compute_tx_id()


def ireport_size(quorum: int, base: int = DEFAULT_REPORT_BASE_SIZE) -> int:
    """Modelled wire size of an iReport carrying a ``quorum``-signer QC."""
    return base + qc_size(quorum)


def content_digest(transactions: Sequence) -> bytes:
    """Digest covering a block's transactions.

    Synthetic simulator batches are ``range`` objects of stream sequence
    numbers; the range bounds identify them fully.
    """
    if isinstance(transactions, range):
        return _sha(b"range" + struct.pack(">qq", transactions.start, transactions.stop))
    h = hashlib.sha256(b"txs")
    for tx in transactions:
        tid = tx.tx_id if hasattr(tx, "tx_id") else tx
        h.update(tid if isinstance(tid, bytes) else str(tid).encode())
    return h.digest()


@dataclass(frozen=True)
class BlockHeader:
    height: int
    parent_digest: bytes
    content_digest: bytes
    proposal_time: float
    header_size: int = DEFAULT_HEADER_SIZE

    def digest(self) -> bytes:
        return _sha(
            struct.pack(">q", self.height)
            + self.parent_digest
            + self.content_digest
            + struct.pack(">d", self.proposal_time)
        )


@dataclass(frozen=True)
class Block:
    header: BlockHeader
    transactions: Sequence = ()
    commit_qc: QuorumCertificate | None = None

    @property
    def height(self) -> int:
        return self.header.height

    def __len__(self) -> int:
        return len(self.transactions)

    def digest(self) -> bytes:
        return self.header.digest()


def phase_message(phase: int, height: int, block_digest: bytes) -> bytes:
    """Bytes signed by validators voting in ``phase`` for the block at ``height``."""
    return b"GEOS-PHASE" + struct.pack(">Bq", int(phase), height) + block_digest


@dataclass(frozen=True)
class GenesisParams:
    member_ids: tuple[int, ...]
    public_keys: tuple[bytes, ...]
    group_public_key: bytes
    b_max: int
    contracts: tuple[str, ...] = ("vaccination",)
    gpk: GroupPublicKey | None = field(default=None, compare=False, repr=False)


class Ledger:
    """Append-only chain ``b_0, b_1, ...`` held by one validator."""

    def __init__(self, genesis: GenesisParams, *, real_crypto: bool = True, quorum: int | None = None):
        self.genesis = genesis
        self.real_crypto = real_crypto and genesis.gpk is not None
        self.quorum = quorum if quorum is not None else len(genesis.member_ids)
        gheader = BlockHeader(0, ZERO_DIGEST, _sha(_canonical(self._genesis_body())), 0.0)
        self.blocks: list[Block] = [Block(gheader)]

    def _genesis_body(self) -> dict:
        g = self.genesis
        return {
            "ids": list(g.member_ids),
            "pks": [pk.hex() for pk in g.public_keys],
            "gpk": g.group_public_key.hex(),
            "b_max": g.b_max,
            "contracts": list(g.contracts),
        }

    def __len__(self) -> int:
        return len(self.blocks)

    @property
    def tip(self) -> Block:
        return self.blocks[-1]

    @property
    def height(self) -> int:
        return self.blocks[-1].height

    def committed(self) -> list[Block]:
        return self.blocks[1:]

    def digests(self) -> list[bytes]:
        return [b.digest() for b in self.blocks]

    def verify_chain(self) -> bool:
        for prev, blk in zip(self.blocks, self.blocks[1:]):
            if blk.height != prev.height + 1 or blk.header.parent_digest != prev.digest():
                return False
        return True


def append_block(ledger: Ledger, block: Block, qc: QuorumCertificate) -> Ledger:
    tip = ledger.tip
    if block.height <= tip.height:
        raise DuplicateHeightError(f"height {block.height} already committed")
    if block.height != tip.height + 1:
        raise ChainLinkError(f"expected height {tip.height + 1}, got {block.height}")
    if block.header.parent_digest != tip.digest():
        raise ChainLinkError("parent digest does not match the ledger tip")
    if block.header.content_digest != content_digest(block.transactions):
        raise ChainLinkError("content digest does not cover the transactions")
    if qc.phase_tag != Phase.DECIDE:
        raise InvalidQCError("block must be certified by a Decide-phase QC")
    if len(qc.signer_ids) < ledger.quorum:
        raise InvalidQCError("certificate below quorum size")
    msg = phase_message(Phase.DECIDE, block.height, block.digest())
    if ledger.real_crypto:
        if not verify_qc(qc, msg, ledger.genesis.gpk):
            raise InvalidQCError("Decide QC fails verification")
    elif qc.message_digest != hashlib.sha256(msg).digest():
        raise InvalidQCError("Decide QC certifies a different block")
    if block.commit_qc is not qc:
        block = replace(block, commit_qc=qc)
    ledger.blocks.append(block)
    return ledger


def max_txs_per_block(b_max: int, header_size: int, tx_size: int) -> int:
    if tx_size <= 0:
        raise CapacityError("transaction size must be positive")
    if b_max <= header_size:
        raise CapacityError("block size must exceed the header size")
    cap = (b_max - header_size) // tx_size
    if cap == 0:
        raise CapacityError("block cannot hold a single transaction")
    return cap


def avg_txs_per_block(ledger: Ledger) -> float:
    blocks = ledger.committed()
    if not blocks:
        raise EmptyLedgerError("no committed blocks beyond genesis")
    return sum(len(b) for b in blocks) / len(blocks)


class MemoryPool:
    """FIFO queue of pending transactions with their arrival times."""

    def __init__(self):
        self._queue: deque = deque()
        self._ids: set = set()
        self.duplicates = 0
        self.arrived = 0

    def push(self, tx, arrival_time: float) -> bool:
        tid = getattr(tx, "tx_id", tx)
        if tid in self._ids:
            self.duplicates += 1
            return False
        if self._queue and arrival_time < self._queue[-1][1]:
            raise ValueError("arrivals must be pushed in time order")
        self._ids.add(tid)
        self._queue.append((tx, arrival_time))
        self.arrived += 1
        return True

    def __len__(self) -> int:
        return len(self._queue)

    def occupancy(self, now: float | None = None) -> int:
        if now is None:
            return len(self._queue)
        return sum(1 for _, t in self._queue if t <= now)

    def peek(self) -> list:
        return [tx for tx, _ in self._queue]

    def requeue(self, batch: Sequence[tuple[object, float]]) -> None:
        """Return a batch taken by an aborted round to the head of the queue."""
        for tx, t in reversed(batch):
            self._queue.appendleft((tx, t))
            self._ids.add(getattr(tx, "tx_id", tx))

    def take(self, k: int, now: float | None = None) -> list[tuple[object, float]]:
        out = []
        while self._queue and len(out) < k:
            if now is not None and self._queue[0][1] > now:
                break
            tx, t = self._queue.popleft()
            self._ids.discard(getattr(tx, "tx_id", tx))
            out.append((tx, t))
        return out


def fill_block(
    pool: MemoryPool,
    now: float,
    capacity: int,
    ledger: Ledger,
    *,
    empty_blocks: bool = False,
    header_size: int = DEFAULT_HEADER_SIZE,
) -> Block | None:
    """Dequeue ``min(capacity, |pool|)`` transactions into a block on the ledger tip.

    Returns None for an empty pool unless empty-block proposals are enabled.
    """
    batch = pool.take(capacity, now)
    if not batch and not empty_blocks:
        return None
    txs = tuple(tx for tx, _ in batch)
    header = BlockHeader(ledger.height + 1, ledger.tip.digest(), content_digest(txs), now, header_size)
    return Block(header, txs)


def make_genesis(consortium, b_max: int) -> GenesisParams:
    gpk = consortium.gpk
    return GenesisParams(
        tuple(m.member_id for m in consortium.members),
        tuple(m.public.data for m in consortium.members),
        gpk.point,
        b_max,
        gpk=gpk,
    )


def count_committed(blocks: Iterable[Block]) -> int:
    return sum(len(b) for b in blocks)
