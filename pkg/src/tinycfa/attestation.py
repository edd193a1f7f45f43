"""Challenge-response attestation over EXEC, ER and OR.

Measurement input, byte-exact::

    nonce (16) || exec (1) || ER bytes || OR bytes || bounds (4 x u16 LE:
    er_min, er_max, or_min, or_max)

MAC is HMAC-SHA256 with a 32-byte device key.
"""

from __future__ import annotations

import enum
import hashlib
import hmac
import random
import struct
from dataclasses import dataclass, field

from .device import DeviceState, check_before_attest

NONCE_BYTES = 16
KEY_BYTES = 32
TOKEN_BYTES = 32
REPORT_MAGIC = b"TCFA"
REPORT_VERSION = 1

TAG_NONCE, TAG_EXEC, TAG_BOUNDS, TAG_OR, TAG_TOKEN = 1, 2, 3, 4, 5


class ReportFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Challenge:
    nonce: bytes

    def __post_init__(self):
        if len(self.nonce) != NONCE_BYTES:
            raise ValueError("nonce must be 16 bytes")

    def hex(self) -> str:
        return self.nonce.hex()

    @classmethod
    def from_hex(cls, text: str) -> "Challenge":
        return cls(bytes.fromhex(text.strip()))


@dataclass(frozen=True)
class DeviceKey:
    key: bytes = field(repr=False)

    def __post_init__(self):
        if len(self.key) != KEY_BYTES:
            raise ValueError("device key must be 32 bytes")

    @classmethod
    def from_hex(cls, text: str) -> "DeviceKey":
        return cls(bytes.fromhex(text.strip()))

    @classmethod
    def generate(cls, rng: random.Random) -> "DeviceKey":
        return cls(rng.randbytes(KEY_BYTES))


@dataclass(frozen=True)
class AttestationReport:
    nonce: bytes
    exec_bit: int
    er_min: int
    er_max: int
    or_min: int
    or_max: int
    or_snapshot: bytes
    token: bytes

    @property
    def bounds(self) -> bytes:
        return struct.pack("<4H", self.er_min, self.er_max, self.or_min, self.or_max)

    def or_word(self, addr: int) -> int:
        off = addr - self.or_min
        return self.or_snapshot[off] | (self.or_snapshot[off + 1] << 8)


class TokenCheck(enum.Enum):
    VALID = "TokenValid"
    INVALID = "TokenInvalid"


def mac(key: bytes, data: bytes) -> bytes:
    return hmac.new(key, data, hashlib.sha256).digest()


def measurement(nonce: bytes, exec_bit: int, er: bytes, or_snapshot: bytes, bounds: bytes) -> bytes:
    return nonce + bytes([exec_bit & 1]) + er + or_snapshot + bounds


# RFC 4231 HMAC-SHA256 vectors (key, data, tag), test cases 1-4, 6, 7
RFC4231_VECTORS = (
    (
        "0b" * 20,
        "4869205468657265",
        "b0344c61d8db38535ca8afceaf0bf12b881dc200c9833da726e9376c2e32cff7",
    ),
    (
        "4a656665",
        "7768617420646f2079612077616e7420666f72206e6f7468696e673f",
        "5bdcc146bf60754e6a042426089575c75a003f089d2739839dec58b964ec3843",
    ),
    (
        "aa" * 20,
        "dd" * 50,
        "773ea91e36800e46854db8ebd09181a72959098b3ef8c122d9635514ced565fe",
    ),
    (
        "0102030405060708090a0b0c0d0e0f10111213141516171819",
        "cd" * 50,
        "82558a389a443c0ea4cc819899f2083a85f0faa3e578f8077a2e3ff46729665b",
    ),
    (
        "aa" * 131,
        "54657374205573696e67204c6172676572205468616e20426c6f636b2d53697a65"
        "204b6579202d2048617368204b6579204669727374",
        "60e431591ee0b67f0d8a26aacbf5b77f8e0bc6213728c5140546040f0ee37f54",
    ),
    (
        "aa" * 131,
        "5468697320697320612074657374207573696e672061206c6172676572207468"
        "616e20626c6f636b2d73697a65206b657920616e642061206c61726765722074"
        "68616e20626c6f636b2d73697a6520646174612e20546865206b6579206e6565"
        "647320746f20626520686173686564206265666f7265206265696e6720757365"
        "642062792074686520484d414320616c676f726974686d2e",
        "9b09ffa71b942fcb27635fbcd5b0e944bfdc63644f0713938a7f51535c3a35e2",
    ),
)


def mac_self_test() -> bool:
    return all(
        mac(bytes.fromhex(k), bytes.fromhex(d)).hex() == t for k, d, t in RFC4231_VECTORS
    )


class NonceLog:
    """Verifier-side record of issued and consumed nonces."""

    def __init__(self):
        self.issued: set[bytes] = set()
        self.used: set[bytes] = set()

    def issue(self, nonce: bytes) -> None:
        self.issued.add(nonce)

    def consume(self, nonce: bytes) -> bool:
        """True the first time a nonce is presented, False on replay."""
        if nonce in self.used:
            return False
        self.used.add(nonce)
        return True


def gen_challenge(rng: random.Random, log: NonceLog | None = None) -> Challenge:
    c = Challenge(rng.randbytes(NONCE_BYTES))
    if log is not None:
        log.issue(c.nonce)
    return c


def attest(s: DeviceState, c: Challenge, k: DeviceKey) -> AttestationReport:
    check_before_attest(s)
    m = s.layout
    exec_bit = s.exec_bit
    orb = s.or_bytes()
    bounds = struct.pack("<4H", s.er_min, s.er_max, m.or_min, m.or_max)
    token = mac(k.key, measurement(c.nonce, exec_bit, s.er_bytes(), orb, bounds))
    return AttestationReport(c.nonce, exec_bit, s.er_min, s.er_max, m.or_min, m.or_max, orb, token)


def verify_report(
    r: AttestationReport,
    c: Challenge,
    k: DeviceKey,
    expected_er: bytes,
    nonce_log: NonceLog | None = None,
) -> TokenCheck:
    if r.nonce != c.nonce:
        return TokenCheck.INVALID
    if r.er_max - r.er_min + 2 != len(expected_er):
        return TokenCheck.INVALID
    if len(r.or_snapshot) != r.or_max - r.or_min + 2:
        return TokenCheck.INVALID
    want = mac(k.key, measurement(c.nonce, r.exec_bit, expected_er, r.or_snapshot, r.bounds))
    if not hmac.compare_digest(want, r.token):
        return TokenCheck.INVALID
    if nonce_log is not None and not nonce_log.consume(c.nonce):
        return TokenCheck.INVALID
    return TokenCheck.VALID


# ---------------------------------------------------------------------------
# serialization


def _section(tag: int, data: bytes) -> bytes:
    return struct.pack("<BH", tag, len(data)) + data


def serialize_report(r: AttestationReport) -> bytes:
    return (
        REPORT_MAGIC
        + bytes([REPORT_VERSION])
        + _section(TAG_NONCE, r.nonce)
        + _section(TAG_EXEC, bytes([r.exec_bit]))
        + _section(TAG_BOUNDS, r.bounds)
        + _section(TAG_OR, r.or_snapshot)
        + _section(TAG_TOKEN, r.token)
    )


def deserialize_report(data: bytes) -> AttestationReport:
    if data[:4] != REPORT_MAGIC or len(data) < 5 or data[4] != REPORT_VERSION:
        raise ReportFormatError("not a report")
    pos, sections = 5, {}
    while pos < len(data):
        if pos + 3 > len(data):
            raise ReportFormatError("truncated section header")
        tag, n = struct.unpack_from("<BH", data, pos)
        pos += 3
        if pos + n > len(data):
            raise ReportFormatError("truncated section")
        if tag in sections:
            raise ReportFormatError(f"duplicate section {tag}")
        sections[tag] = data[pos : pos + n]
        pos += n
    try:
        nonce, ex, bounds = sections[TAG_NONCE], sections[TAG_EXEC], sections[TAG_BOUNDS]
        orb, token = sections[TAG_OR], sections[TAG_TOKEN]
    except KeyError as exc:
        raise ReportFormatError(f"missing section {exc}") from None
    if len(nonce) != NONCE_BYTES or len(ex) != 1 or ex[0] > 1 or len(bounds) != 8 or len(token) != TOKEN_BYTES:
        raise ReportFormatError("bad section length")
    er_min, er_max, or_min, or_max = struct.unpack("<4H", bounds)
    if len(orb) != or_max - or_min + 2:
        raise ReportFormatError("OR section does not match bounds")
    return AttestationReport(nonce, ex[0], er_min, er_max, or_min, or_max, orb, token)


def render_report(r: AttestationReport) -> str:
    """Structured text form, one ``key value`` per line."""
    lines = [
        f"nonce {r.nonce.hex()}",
        f"exec {r.exec_bit}",
        f"er 0x{r.er_min:04x} 0x{r.er_max:04x}",
        f"or 0x{r.or_min:04x} 0x{r.or_max:04x}",
        f"or_snapshot {r.or_snapshot.hex()}",
        f"token {r.token.hex()}",
    ]
    return "\n".join(lines) + "\n"


def parse_report_text(text: str) -> AttestationReport:
    kv = {}
    for line in text.splitlines():
        if line.strip():
            key, _, rest = line.partition(" ")
            kv[key] = rest.split()
    try:
        er = [int(v, 16) for v in kv["er"]]
        orr = [int(v, 16) for v in kv["or"]]
        return AttestationReport(
            bytes.fromhex(kv["nonce"][0]),
            int(kv["exec"][0]),
            er[0],
            er[1],
            orr[0],
            orr[1],
            bytes.fromhex(kv["or_snapshot"][0]),
            bytes.fromhex(kv["token"][0]),
        )
    except (KeyError, IndexError, ValueError) as exc:
        raise ReportFormatError(f"malformed report text: {exc}") from None
