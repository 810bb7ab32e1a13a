"""Accountable-subgroup BLS multisignatures on BLS12-381.

Public keys live in G1 (48-byte compressed), signatures, membership keys and
hash-to-curve outputs in G2 (96-byte compressed).  Group arithmetic and
pairings come from arkworks; hashing to G2 uses the RFC 9380
``BLS12381G2_XMD:SHA-256_SSWU_RO_`` suite as exposed by ``blspy``.

Scheme, for a consortium with keys ``pk_v = s_v * G`` and Ids ``Id_v``::

    a_v  = Hs(pk_v, pk_1 || ... || pk_n)
    pk_B = sum_v a_v * pk_v
    mk_v = (sum_u a_u * s_u) * H(pk_B, Id_v)
    sig_v = s_v * H(pk_B, m) + mk_v

and a quorum certificate over signers ``Q`` verifies when::

    e(G, sum_{v in Q} sig_v) == e(sum_{v in Q} pk_v, H(pk_B, m)) * e(pk_B, sum_{v in Q} H(pk_B, Id_v))
"""

from __future__ import annotations

import hashlib
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from enum import IntEnum
from functools import lru_cache
from typing import Iterable, Mapping, Sequence

import numpy as np
from blspy import G2Element
from py_arkworks_bls12381 import GT, G1Point, G2Point, Scalar

CURVE_ORDER = 0x73EDA753299D7D483339D80809A1D80553BDA402FFFE5BFEFFFFFFFF00000001

PUBLIC_KEY_SIZE = 48
SIGNATURE_SIZE = 96
DIGEST_SIZE = 32

DST_MESSAGE = b"GEOS-V01-CS01-with-BLS12381G2_XMD:SHA-256_SSWU_RO_MSG_"
DST_MEMBER = b"GEOS-V01-CS01-with-BLS12381G2_XMD:SHA-256_SSWU_RO_MID_"
COEFFICIENT_TAG = b"GEOS-V01-ASM-COEFFICIENT"

_G1_GEN = G1Point()
_NEG_G1_GEN = -_G1_GEN


class CryptoError(ValueError):
    pass


class DuplicateKeyError(CryptoError):
    pass


class DuplicateSignerError(CryptoError):
    pass


class UnknownSignerError(CryptoError, KeyError):
    pass


class Phase(IntEnum):
    PREPARE = 0
    PRE_COMMIT = 1
    COMMIT = 2
    DECIDE = 3


def digest(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


@lru_cache(maxsize=65536)
def hash_to_g2(data: bytes, dst: bytes = DST_MESSAGE) -> bytes:
    """Hash ``data`` to a G2 point; returns the compressed encoding."""
    return bytes(G2Element.from_message(data, dst))


@lru_cache(maxsize=65536)
def _g2(data: bytes) -> G2Point:
    return G2Point.from_compressed_bytes_unchecked(data)


def hash_to_scalar(data: bytes) -> int:
    return int.from_bytes(hashlib.sha256(COEFFICIENT_TAG + data).digest(), "big") % CURVE_ORDER


def in_g1_subgroup(data: bytes) -> bool:
    try:
        G1Point.from_compressed_bytes(data)
    except ValueError:
        return False
    return True


def in_g2_subgroup(data: bytes) -> bool:
    try:
        G2Point.from_compressed_bytes(data)
    except ValueError:
        return False
    return True


def _encode_id(member_id: int) -> bytes:
    return struct.pack(">I", member_id)


@dataclass(frozen=True)
class SecretKey:
    scalar: int

    def __post_init__(self):
        if not 0 < self.scalar < CURVE_ORDER:
            raise CryptoError("secret scalar must lie in [1, r)")

    def __repr__(self) -> str:
        return "SecretKey(<hidden>)"


@dataclass(frozen=True)
class PublicKey:
    data: bytes

    def __post_init__(self):
        if len(self.data) != PUBLIC_KEY_SIZE:
            raise CryptoError(f"public key must be {PUBLIC_KEY_SIZE} bytes")

    @property
    def point(self) -> G1Point:
        return G1Point.from_compressed_bytes_unchecked(self.data)

    @classmethod
    def from_bytes(cls, data: bytes) -> "PublicKey":
        if not in_g1_subgroup(data):
            raise CryptoError("public key is not a valid G1 subgroup point")
        return cls(bytes(data))

    def __bytes__(self) -> bytes:
        return self.data


@dataclass(frozen=True)
class GroupPublicKey:
    """Aggregated consortium key plus the member list it was derived from."""

    point: bytes
    coefficients: tuple[int, ...]
    members: tuple[PublicKey, ...]
    member_ids: tuple[int, ...]
    _by_id: dict = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "_by_id", dict(zip(self.member_ids, self.members)))

    def member(self, member_id: int) -> PublicKey:
        try:
            return self._by_id[member_id]
        except KeyError:
            raise UnknownSignerError(member_id) from None

    def __bytes__(self) -> bytes:
        return self.point


@dataclass(frozen=True)
class MembershipKey:
    point: bytes
    member_id: int


@dataclass(frozen=True)
class SignatureVote:
    point: bytes
    signer_id: int
    message_digest: bytes


@dataclass(frozen=True)
class QuorumCertificate:
    signer_ids: tuple[int, ...]
    agg_sig: bytes | None
    phase_tag: int
    message_digest: bytes

    def __post_init__(self):
        if len(set(self.signer_ids)) != len(self.signer_ids):
            raise DuplicateSignerError("quorum certificate lists a signer twice")

    @property
    def size(self) -> int:
        return qc_size(len(self.signer_ids))

    def to_bytes(self) -> bytes:
        if self.agg_sig is None:
            raise CryptoError("modelled certificate has no signature to serialize")
        out = [struct.pack(">H", len(self.signer_ids))]
        out += [_encode_id(i) for i in self.signer_ids]
        out += [self.agg_sig, self.message_digest, struct.pack(">B", self.phase_tag)]
        return b"".join(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "QuorumCertificate":
        (count,) = struct.unpack_from(">H", data, 0)
        expected = qc_size(count)
        if len(data) != expected:
            raise CryptoError(f"QC encoding is {len(data)} bytes, expected {expected}")
        ids = struct.unpack_from(f">{count}I", data, 2)
        off = 2 + 4 * count
        agg = data[off : off + SIGNATURE_SIZE]
        off += SIGNATURE_SIZE
        msg = data[off : off + DIGEST_SIZE]
        (tag,) = struct.unpack_from(">B", data, off + DIGEST_SIZE)
        return cls(tuple(ids), bytes(agg), tag, bytes(msg))


def qc_size(n_signers: int) -> int:
    """Wire size of a quorum certificate with ``n_signers`` Ids."""
    return 2 + 4 * n_signers + SIGNATURE_SIZE + DIGEST_SIZE + 1


def keygen(rng_seed: int) -> tuple[SecretKey, PublicKey]:
    rng = np.random.Generator(np.random.PCG64(rng_seed))
    scalar = int.from_bytes(rng.bytes(64), "big") % (CURVE_ORDER - 1) + 1
    sk = SecretKey(scalar)
    return sk, public_key(sk)


def public_key(sk: SecretKey) -> PublicKey:
    return PublicKey(bytes((_G1_GEN * Scalar(sk.scalar)).to_compressed_bytes()))


def group_public_key(members: Sequence[PublicKey], member_ids: Sequence[int] | None = None) -> GroupPublicKey:
    """Aggregate ``members`` (already in canonical Id order) into ``pk_B``.

    The coefficient of each key hashes it together with the concatenation of
    the whole list, so the result depends on list order.
    """
    if not members:
        raise CryptoError("group public key needs at least one member")
    if len({pk.data for pk in members}) != len(members):
        raise DuplicateKeyError("aggregation coefficients assume distinct keys")
    if member_ids is None:
        member_ids = range(1, len(members) + 1)
    member_ids = tuple(int(i) for i in member_ids)
    if len(member_ids) != len(members) or len(set(member_ids)) != len(member_ids):
        raise CryptoError("member ids must be unique and match the key list")
    concat = b"".join(pk.data for pk in members)
    coeffs = tuple(hash_to_scalar(pk.data + concat) for pk in members)
    acc = G1Point.identity()
    for a, pk in zip(coeffs, members):
        acc = acc + pk.point * Scalar(a)
    return GroupPublicKey(bytes(acc.to_compressed_bytes()), coeffs, tuple(members), member_ids)


def _membership_point(gpk: GroupPublicKey | bytes, member_id: int) -> bytes:
    return hash_to_g2(bytes(gpk) + _encode_id(member_id), DST_MEMBER)


def _message_point(gpk: GroupPublicKey | bytes, message_digest: bytes) -> bytes:
    return hash_to_g2(bytes(gpk) + message_digest, DST_MESSAGE)


def membership_keys(members: Sequence[tuple[SecretKey, PublicKey, int]]) -> list[MembershipKey]:
    """Trusted-genesis derivation of every member's membership key.

    ``members`` may come in any order; the group key is built over the
    Id-sorted list.  Output order follows the input.
    """
    if not members:
        raise CryptoError("no members")
    for entry in members:
        if len(entry) != 3:
            raise CryptoError("each member entry must be (SecretKey, PublicKey, Id)")
    for sk, pk, _ in members:
        if public_key(sk) != pk:
            raise CryptoError("secret key does not match its public key")
    ordered = sorted(members, key=lambda e: e[2])
    gpk = group_public_key([e[1] for e in ordered], [e[2] for e in ordered])
    weighted = sum(a * e[0].scalar for a, e in zip(gpk.coefficients, ordered)) % CURVE_ORDER
    w = Scalar(weighted)
    return [
        MembershipKey(bytes((_g2(_membership_point(gpk, mid)) * w).to_compressed_bytes()), mid)
        for _, _, mid in members
    ]


def sign(message: bytes, sk: SecretKey, gpk: GroupPublicKey, mk: MembershipKey) -> SignatureVote:
    md = digest(message)
    h = _g2(_message_point(gpk, md))
    point = h * Scalar(sk.scalar) + _g2(mk.point)
    return SignatureVote(bytes(point.to_compressed_bytes()), mk.member_id, md)


def aggregate(votes: Iterable[SignatureVote], phase_tag: int = Phase.DECIDE) -> QuorumCertificate:
    votes = list(votes)
    if not votes:
        raise CryptoError("cannot aggregate an empty vote list")
    ids = [v.signer_id for v in votes]
    if len(set(ids)) != len(ids):
        raise DuplicateSignerError("vote list contains a signer twice")
    md = votes[0].message_digest
    if any(v.message_digest != md for v in votes):
        raise CryptoError("votes sign different messages")
    acc = G2Point.identity()
    for v in votes:
        acc = acc + _g2(v.point)
    return QuorumCertificate(tuple(sorted(ids)), bytes(acc.to_compressed_bytes()), int(phase_tag), md)


def _resolve_pubkeys(gpk: GroupPublicKey, member_pubkeys) -> Mapping[int, PublicKey]:
    if member_pubkeys is None:
        return gpk._by_id
    if isinstance(member_pubkeys, Mapping):
        return member_pubkeys
    return dict(member_pubkeys)


_VERIFIED: OrderedDict = OrderedDict()
_VERIFIED_MAX = 4096


def verify_qc_digest(qc: QuorumCertificate, gpk: GroupPublicKey, member_pubkeys=None) -> bool:
    """Pairing check for a certificate whose message is known only by digest."""
    keys = _resolve_pubkeys(gpk, member_pubkeys)
    missing = [i for i in qc.signer_ids if i not in keys]
    if missing:
        raise UnknownSignerError(missing[0])
    if qc.agg_sig is None or not qc.signer_ids:
        return False
    if member_pubkeys is not None:
        return _pairing_check(qc, gpk, keys)
    # every live validator checks the same certificate; memoise the pure result
    memo = (qc.to_bytes(), gpk.point, tuple(gpk.member_ids), tuple(pk.data for pk in gpk.members))
    hit = _VERIFIED.get(memo)
    if hit is None:
        hit = _pairing_check(qc, gpk, keys)
        _VERIFIED[memo] = hit
        if len(_VERIFIED) > _VERIFIED_MAX:
            _VERIFIED.popitem(last=False)
    return hit


def _pairing_check(qc: QuorumCertificate, gpk: GroupPublicKey, keys) -> bool:
    try:
        sig = G2Point.from_compressed_bytes(qc.agg_sig)
    except ValueError:
        return False
    pk_q = G1Point.identity()
    ids_point = G2Point.identity()
    for i in qc.signer_ids:
        pk_q = pk_q + keys[i].point
        ids_point = ids_point + _g2(_membership_point(gpk, i))
    h = _g2(_message_point(gpk, qc.message_digest))
    pkb = G1Point.from_compressed_bytes_unchecked(gpk.point)
    return GT.multi_pairing([_NEG_G1_GEN, pk_q, pkb], [sig, h, ids_point]) == GT.one()


def verify_qc(qc: QuorumCertificate, message: bytes, gpk: GroupPublicKey, member_pubkeys=None) -> bool:
    """True iff ``qc`` is a valid multisignature on ``message`` by ``qc.signer_ids``.

    Raises UnknownSignerError when a listed signer is not a consortium member.
    """
    keys = _resolve_pubkeys(gpk, member_pubkeys)
    missing = [i for i in qc.signer_ids if i not in keys]
    if missing:
        raise UnknownSignerError(missing[0])
    if digest(message) != qc.message_digest:
        return False
    return verify_qc_digest(qc, gpk, keys)


@dataclass(frozen=True)
class Member:
    member_id: int
    secret: SecretKey
    public: PublicKey
    membership: MembershipKey


@dataclass(frozen=True)
class Consortium:
    """Genesis key material for one validator set (trusted setup)."""

    members: tuple[Member, ...]
    gpk: GroupPublicKey

    @classmethod
    def generate(cls, n: int, seed: int = 0) -> "Consortium":
        ss = np.random.SeedSequence(seed)
        seeds = [int(s.generate_state(1, np.uint64)[0]) for s in ss.spawn(n)]
        keys = [keygen(s) for s in seeds]
        if len({pk.data for _, pk in keys}) != n:
            raise DuplicateKeyError("key generation collided")
        entries = [(sk, pk, i + 1) for i, (sk, pk) in enumerate(keys)]
        mks = membership_keys(entries)
        gpk = group_public_key([pk for _, pk, _ in entries], [i for _, _, i in entries])
        members = tuple(Member(i, sk, pk, mk) for (sk, pk, i), mk in zip(entries, mks))
        return cls(members, gpk)

    @property
    def n(self) -> int:
        return len(self.members)

    def by_id(self, member_id: int) -> Member:
        return self.members[member_id - 1]

    def sign(self, member_id: int, message: bytes) -> SignatureVote:
        m = self.by_id(member_id)
        return sign(message, m.secret, self.gpk, m.membership)

    def certify(self, signer_ids: Iterable[int], message: bytes, phase_tag: int) -> QuorumCertificate:
        return aggregate([self.sign(i, message) for i in signer_ids], phase_tag)

    def verify(self, qc: QuorumCertificate, message: bytes) -> bool:
        return verify_qc(qc, message, self.gpk)
