"""Typed data elements and the canonical wire codec.

Every value that crosses a channel lives in a DataElementMap: a mapping from
registered tags to typed values. The tag registry (names, codes, wire kinds,
flag bit positions) is loaded from fixtures/codec.json so traces stay
self-describing; this module refuses unknown tags and unknown flag bits.

The canonical encoding is deterministic and injective: entries are sorted by
tag code, every value is length-prefixed, and an empty map encodes to the
fixed two-byte zero header. MAC and signature inputs are always built from
``DataElementMap.encode()``.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, fields
from importlib import resources
from typing import Any, Iterator


class CodecError(ValueError):
    """Malformed value, unknown tag or non-canonical wire data."""


class MissingDolEntry(CodecError):
    """A DOL asked for a tag the environment does not provide."""


def _load_codec() -> dict:
    with resources.files("tapsim.fixtures").joinpath("codec.json").open("rb") as fh:
        return json.load(fh)


_CODEC = _load_codec()

TRANSIT_MCCS = frozenset(_CODEC["transit_mccs"])


# ---------------------------------------------------------------------------
# tag registry
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TagInfo:
    name: str
    code: int
    kind: str

    def __repr__(self) -> str:  # keep traces and asserts readable
        return f"Tag.{self.name}"


TAGS_BY_NAME: dict[str, TagInfo] = {}
TAGS_BY_CODE: dict[int, TagInfo] = {}

for _entry in _CODEC["tags"]:
    _info = TagInfo(_entry["name"], _entry["code"], _entry["kind"])
    if _info.name in TAGS_BY_NAME or _info.code in TAGS_BY_CODE:
        raise CodecError(f"codec table duplicates tag {_info.name}/{_info.code}")
    TAGS_BY_NAME[_info.name] = _info
    TAGS_BY_CODE[_info.code] = _info


class _TagNamespace:
    """Attribute access to the registry: ``Tag.AMOUNT`` etc."""

    def __getattr__(self, name: str) -> TagInfo:
        try:
            return TAGS_BY_NAME[name]
        except KeyError:
            raise AttributeError(f"unknown tag name {name!r}") from None

    def by_name(self, name: str) -> TagInfo:
        try:
            return TAGS_BY_NAME[name]
        except KeyError:
            raise CodecError(f"unknown tag name {name!r}") from None

    def by_code(self, code: int) -> TagInfo:
        try:
            return TAGS_BY_CODE[code]
        except KeyError:
            raise CodecError(f"unknown tag code {code}") from None


Tag = _TagNamespace()


# ---------------------------------------------------------------------------
# enums
# ---------------------------------------------------------------------------

class CID(enum.IntEnum):
    """Cryptogram type returned by the card."""

    AAC = 0   # refuse
    ARQC = 1  # ask the issuer
    TC = 2    # approve offline


class CVMMethod(enum.IntEnum):
    NoCVM = 0
    OnlinePIN = 1
    EncryptedOfflinePIN = 2
    PaperSignature = 3
    CDCVM = 4


class CVMCondition(enum.IntEnum):
    Always = 0
    IfAboveCvmLimit = 1
    IfBelowCvmLimit = 2


class CVMResult(enum.IntEnum):
    NotPerformed = 0
    Performed = 1
    Failed = 2


class DeviceType(enum.IntEnum):
    plastic = 0
    phone = 1


# ---------------------------------------------------------------------------
# flag maps (bit positions pinned in codec.json)
# ---------------------------------------------------------------------------

def _bit_positions(flag_set: str) -> dict[str, int]:
    names = _CODEC["flag_fields"][flag_set]
    return {name: i for i, name in enumerate(names)}


class _Flags:
    """Base for one-byte flag maps; subclasses declare boolean fields only."""

    _positions: dict[str, int] = {}

    def to_int(self) -> int:
        value = 0
        for name, pos in self._positions.items():
            if getattr(self, name):
                value |= 1 << pos
        return value

    @classmethod
    def from_int(cls, value: int):
        if value < 0 or value >= (1 << 8):
            raise CodecError(f"{cls.__name__} bitmap out of range: {value}")
        known = 0
        for pos in cls._positions.values():
            known |= 1 << pos
        if value & ~known:
            raise CodecError(f"{cls.__name__} has unknown bits set: {value:#x}")
        return cls(**{name: bool(value & (1 << pos)) for name, pos in cls._positions.items()})

    def replace(self, **changes):
        current = {f.name: getattr(self, f.name) for f in fields(self)}
        current.update(changes)
        return type(self)(**current)


@dataclass(frozen=True)
class AIP(_Flags):
    """Application Interchange Profile: what the card claims to support."""

    sda_supported: bool = False
    dda_supported: bool = False
    cda_supported: bool = False
    cardholder_verification_supported: bool = False
    on_device_cvm_supported: bool = False
    emv_mode_supported: bool = True

    _positions = _bit_positions("aip")


@dataclass(frozen=True)
class TTQ(_Flags):
    """Terminal Transaction Qualifiers: terminal capabilities/requirements."""

    online_pin_supported: bool = False
    signature_supported: bool = False
    cvm_required: bool = False
    oda_for_online_supported: bool = False
    emv_mode_supported: bool = True

    _positions = _bit_positions("ttq")


@dataclass(frozen=True)
class CTQ(_Flags):
    """Card Transaction Qualifiers: the card's CVM demands/claims."""

    online_pin_required: bool = False
    signature_required: bool = False
    cdcvm_performed: bool = False

    _positions = _bit_positions("ctq")


@dataclass(frozen=True)
class TVR(_Flags):
    """Terminal Verification Results. Only the auth-failure bit is modeled;
    the remaining bits are reserved and always zero."""

    cda_failed: bool = False

    _positions = _bit_positions("tvr")


for _cls in (AIP, TTQ, CTQ, TVR):
    _declared = {f.name for f in fields(_cls)}
    if _declared != set(_cls._positions):
        raise CodecError(f"{_cls.__name__} fields disagree with codec.json")


# ---------------------------------------------------------------------------
# structured values
# ---------------------------------------------------------------------------

@dataclass(frozen=True, order=False)
class Amount:
    """Transaction amount in minor units plus ISO-ish currency code."""

    value: int
    currency: str

    def __post_init__(self) -> None:
        if not (0 <= self.value <= 10**12):
            raise CodecError(f"amount out of range: {self.value}")
        if len(self.currency) != 3 or not self.currency.isalpha() or not self.currency.isupper():
            raise CodecError(f"bad currency code: {self.currency!r}")

    def __str__(self) -> str:
        return f"{self.value / 100:.2f} {self.currency}"


@dataclass(frozen=True)
class IAD:
    """Issuer Application Data (modeled subset): the card's own statement of
    whether on-device CVM happened and what kind of device it is."""

    cdcvm_performed: bool = False
    device_type: str = "plastic"
    filler: bytes = b""

    def __post_init__(self) -> None:
        if self.device_type not in DeviceType.__members__:
            raise CodecError(f"bad device type {self.device_type!r}")


@dataclass(frozen=True)
class AFL:
    """Application File Locator: which records the terminal should read."""

    records: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        for nr in self.records:
            if not (0 <= nr <= 0xFF):
                raise CodecError(f"record number out of range: {nr}")


@dataclass(frozen=True)
class DOL:
    """Data Object List: an ordered tag wish-list (PDOL / CDOL)."""

    tags: tuple[TagInfo, ...] = ()


@dataclass(frozen=True)
class CVMEntry:
    method: CVMMethod
    condition: CVMCondition


@dataclass(frozen=True)
class CVMList:
    """Card CVM preferences, in priority order. An empty list is meaningful
    (no method available) and encodes distinctly from an absent one."""

    entries: tuple[CVMEntry, ...] = ()


@dataclass(frozen=True)
class CVMResults:
    method: CVMMethod = CVMMethod.NoCVM
    condition: CVMCondition = CVMCondition.Always
    result: CVMResult = CVMResult.NotPerformed


@dataclass(frozen=True)
class ActionCodes:
    """Denial / online / default masks matched against the TVR."""

    denial: TVR = field(default_factory=TVR)
    online: TVR = field(default_factory=TVR)
    default: TVR = field(default_factory=TVR)


@dataclass(frozen=True)
class Track2EquivalentData:
    """The mag-stripe image carried by EMV-mode cards (and mag-stripe mode)."""

    pan: str
    expiry: str
    service_code: str
    discretionary: str

    def __post_init__(self) -> None:
        validate_pan(self.pan)
        if len(self.expiry) != 4 or not self.expiry.isdigit():
            raise CodecError(f"expiry must be YYMM digits: {self.expiry!r}")


# ---------------------------------------------------------------------------
# PAN / brand / MCC helpers
# ---------------------------------------------------------------------------

def luhn_valid(pan: str) -> bool:
    """Standard mod-10 check over a digit string."""
    if not pan.isdigit():
        return False
    total = 0
    for i, ch in enumerate(reversed(pan)):
        d = ord(ch) - 48
        if i % 2 == 1:
            d *= 2
            if d > 9:
                d -= 9
        total += d
    return total % 10 == 0


def validate_pan(pan: str) -> str:
    if not pan.isdigit() or not (12 <= len(pan) <= 19):
        raise CodecError(f"PAN must be 12-19 digits: {pan!r}")
    if not luhn_valid(pan):
        raise CodecError(f"PAN fails Luhn check: {pan!r}")
    return pan


def brand_of(pan: str) -> str:
    """Scheme brand from the leading digit: 4=visa, 5=mastercard, 6=maestro."""
    lead = pan[:1]
    if lead == "4":
        return "visa"
    if lead == "5":
        return "mastercard"
    if lead == "6":
        return "maestro"
    raise CodecError(f"no brand for PAN prefix {lead!r}")


BRAND_FAMILIES = {
    "visa": "visa",
    "mastercard": "mastercard",
    "maestro": "mastercard",  # same network family as mastercard
}


def is_transit_mcc(mcc: str) -> bool:
    return mcc in TRANSIT_MCCS


# Application identifiers (public protocol constants).
AID_VISA = bytes.fromhex("A0000000031010")
AID_MASTERCARD = bytes.fromhex("A0000000041010")
AID_MAESTRO = bytes.fromhex("A0000000043060")

AID_BRANDS = {
    AID_VISA: "visa",
    AID_MASTERCARD: "mastercard",
    AID_MAESTRO: "maestro",
}

AID_KERNELS = {
    AID_VISA: 3,
    AID_MASTERCARD: 2,
    AID_MAESTRO: 2,
}


# ---------------------------------------------------------------------------
# wire codec per kind
# ---------------------------------------------------------------------------

def _enc_uint(value: Any, width: int) -> bytes:
    if not isinstance(value, int) or isinstance(value, bool):
        if isinstance(value, (enum.IntEnum,)):
            value = int(value)
        else:
            raise CodecError(f"expected int, got {type(value).__name__}")
    if value < 0 or value >= (1 << (8 * width)):
        raise CodecError(f"uint{width} out of range: {value}")
    return value.to_bytes(width, "big")


def _enc_text(value: Any) -> bytes:
    if not isinstance(value, str):
        raise CodecError(f"expected str, got {type(value).__name__}")
    return value.encode("utf-8")


def _enc_lp(raw: bytes) -> bytes:
    """Length-prefix a chunk (2-byte length)."""
    if len(raw) > 0xFFFF:
        raise CodecError("chunk too long")
    return len(raw).to_bytes(2, "big") + raw


def _read_lp(buf: bytes, off: int) -> tuple[bytes, int]:
    if off + 2 > len(buf):
        raise CodecError("truncated length prefix")
    n = int.from_bytes(buf[off:off + 2], "big")
    off += 2
    if off + n > len(buf):
        raise CodecError("truncated chunk")
    return buf[off:off + n], off + n


def encode_value(tag: TagInfo, value: Any) -> bytes:
    """Canonical byte encoding for a single element value."""
    kind = tag.kind
    if kind.startswith("uint"):
        return _enc_uint(value, int(kind[4:]))
    if kind == "text":
        return _enc_text(value)
    if kind == "bytes":
        if not isinstance(value, (bytes, bytearray)):
            raise CodecError(f"{tag.name}: expected bytes")
        return bytes(value)
    if kind == "bytes_list":
        if not isinstance(value, tuple) or not all(isinstance(b, bytes) for b in value):
            raise CodecError(f"{tag.name}: expected tuple of bytes")
        out = bytes([len(value)])
        for item in value:
            out += _enc_lp(item)
        return out
    if kind == "amount":
        if not isinstance(value, Amount):
            raise CodecError(f"{tag.name}: expected Amount")
        return value.value.to_bytes(8, "big") + value.currency.encode("ascii")
    if kind.startswith("flags:"):
        expected = {"ttq": TTQ, "ctq": CTQ, "aip": AIP, "tvr": TVR}[kind[6:]]
        if not isinstance(value, expected):
            raise CodecError(f"{tag.name}: expected {expected.__name__}")
        return bytes([value.to_int()])
    if kind == "iad":
        if not isinstance(value, IAD):
            raise CodecError(f"{tag.name}: expected IAD")
        return bytes([int(value.cdcvm_performed), DeviceType[value.device_type]]) + _enc_lp(value.filler)
    if kind == "cid":
        if not isinstance(value, CID):
            raise CodecError(f"{tag.name}: expected CID")
        return bytes([value])
    if kind == "afl":
        if not isinstance(value, AFL):
            raise CodecError(f"{tag.name}: expected AFL")
        return bytes([len(value.records)]) + bytes(value.records)
    if kind == "dol":
        if not isinstance(value, DOL):
            raise CodecError(f"{tag.name}: expected DOL")
        out = bytes([len(value.tags)])
        for t in value.tags:
            out += t.code.to_bytes(2, "big")
        return out
    if kind == "cvm_list":
        if not isinstance(value, CVMList):
            raise CodecError(f"{tag.name}: expected CVMList")
        out = bytes([len(value.entries)])
        for e in value.entries:
            out += bytes([e.method, e.condition])
        return out
    if kind == "cvm_results":
        if not isinstance(value, CVMResults):
            raise CodecError(f"{tag.name}: expected CVMResults")
        return bytes([value.method, value.condition, value.result])
    if kind == "action_codes":
        if not isinstance(value, ActionCodes):
            raise CodecError(f"{tag.name}: expected ActionCodes")
        return bytes([value.denial.to_int(), value.online.to_int(), value.default.to_int()])
    if kind == "track2":
        if not isinstance(value, Track2EquivalentData):
            raise CodecError(f"{tag.name}: expected Track2EquivalentData")
        return b"".join(_enc_lp(part.encode("utf-8"))
                        for part in (value.pan, value.expiry, value.service_code, value.discretionary))
    raise CodecError(f"no encoder for kind {kind!r}")


def decode_value(tag: TagInfo, raw: bytes) -> Any:
    """Inverse of encode_value; rejects trailing bytes."""
    kind = tag.kind

    def done(value, consumed):
        if consumed != len(raw):
            raise CodecError(f"{tag.name}: trailing bytes")
        return value

    if kind.startswith("uint"):
        width = int(kind[4:])
        if len(raw) != width:
            raise CodecError(f"{tag.name}: expected {width} bytes")
        return int.from_bytes(raw, "big")
    if kind == "text":
        return raw.decode("utf-8")
    if kind == "bytes":
        return raw
    if kind == "bytes_list":
        if not raw:
            raise CodecError(f"{tag.name}: empty bytes_list encoding")
        count, off, items = raw[0], 1, []
        for _ in range(count):
            item, off = _read_lp(raw, off)
            items.append(item)
        return done(tuple(items), off)
    if kind == "amount":
        if len(raw) != 11:
            raise CodecError(f"{tag.name}: expected 11 bytes")
        return Amount(int.from_bytes(raw[:8], "big"), raw[8:].decode("ascii"))
    if kind.startswith("flags:"):
        cls = {"ttq": TTQ, "ctq": CTQ, "aip": AIP, "tvr": TVR}[kind[6:]]
        if len(raw) != 1:
            raise CodecError(f"{tag.name}: expected 1 byte")
        return cls.from_int(raw[0])
    if kind == "iad":
        if len(raw) < 2:
            raise CodecError(f"{tag.name}: truncated IAD")
        filler, off = _read_lp(raw, 2)
        return done(IAD(bool(raw[0]), DeviceType(raw[1]).name, filler), off)
    if kind == "cid":
        if len(raw) != 1:
            raise CodecError(f"{tag.name}: expected 1 byte")
        return CID(raw[0])
    if kind == "afl":
        if not raw or len(raw) != 1 + raw[0]:
            raise CodecError(f"{tag.name}: bad AFL encoding")
        return AFL(tuple(raw[1:]))
    if kind == "dol":
        if not raw or len(raw) != 1 + 2 * raw[0]:
            raise CodecError(f"{tag.name}: bad DOL encoding")
        return DOL(tuple(Tag.by_code(int.from_bytes(raw[i:i + 2], "big"))
                         for i in range(1, len(raw), 2)))
    if kind == "cvm_list":
        if not raw or len(raw) != 1 + 2 * raw[0]:
            raise CodecError(f"{tag.name}: bad CVM list encoding")
        return CVMList(tuple(CVMEntry(CVMMethod(raw[i]), CVMCondition(raw[i + 1]))
                             for i in range(1, len(raw), 2)))
    if kind == "cvm_results":
        if len(raw) != 3:
            raise CodecError(f"{tag.name}: expected 3 bytes")
        return CVMResults(CVMMethod(raw[0]), CVMCondition(raw[1]), CVMResult(raw[2]))
    if kind == "action_codes":
        if len(raw) != 3:
            raise CodecError(f"{tag.name}: expected 3 bytes")
        return ActionCodes(TVR.from_int(raw[0]), TVR.from_int(raw[1]), TVR.from_int(raw[2]))
    if kind == "track2":
        parts, off = [], 0
        for _ in range(4):
            part, off = _read_lp(raw, off)
            parts.append(part.decode("utf-8"))
        return done(Track2EquivalentData(*parts), off)
    raise CodecError(f"no decoder for kind {kind!r}")


def render_value(tag: TagInfo, value: Any) -> Any:
    """JSON-friendly rendering for traces/reports (bytes as hex)."""
    if isinstance(value, (bytes, bytearray)):
        return bytes(value).hex()
    if isinstance(value, Amount):
        return {"value": value.value, "currency": value.currency}
    if isinstance(value, _Flags):
        return {f.name: getattr(value, f.name) for f in fields(value)}
    if isinstance(value, IAD):
        return {"cdcvm_performed": value.cdcvm_performed, "device_type": value.device_type,
                "filler": value.filler.hex()}
    if isinstance(value, enum.IntEnum):
        return value.name
    if isinstance(value, AFL):
        return list(value.records)
    if isinstance(value, DOL):
        return [t.name for t in value.tags]
    if isinstance(value, CVMList):
        return [[e.method.name, e.condition.name] for e in value.entries]
    if isinstance(value, CVMResults):
        return [value.method.name, value.condition.name, value.result.name]
    if isinstance(value, ActionCodes):
        return {"denial": value.denial.to_int(), "online": value.online.to_int(),
                "default": value.default.to_int()}
    if isinstance(value, Track2EquivalentData):
        return {"pan": value.pan, "expiry": value.expiry,
                "service_code": value.service_code, "discretionary": value.discretionary}
    if isinstance(value, tuple):
        return [render_value(tag, v) for v in value]
    return value


# ---------------------------------------------------------------------------
# the element map
# ---------------------------------------------------------------------------

class DataElementMap:
    """Tag -> typed value map with a canonical, injective byte encoding."""

    __slots__ = ("_items",)

    def __init__(self, items: dict[TagInfo, Any] | None = None):
        self._items: dict[TagInfo, Any] = {}
        if items:
            for tag, value in items.items():
                self.put(tag, value)

    def put(self, tag: TagInfo, value: Any) -> "DataElementMap":
        if not isinstance(tag, TagInfo):
            raise CodecError(f"keys must be registered tags, got {tag!r}")
        encode_value(tag, value)  # type/range validation up front
        self._items[tag] = value
        return self

    def get(self, tag: TagInfo, default: Any = None) -> Any:
        return self._items.get(tag, default)

    def __getitem__(self, tag: TagInfo) -> Any:
        try:
            return self._items[tag]
        except KeyError:
            raise CodecError(f"missing element {tag.name}") from None

    def __contains__(self, tag: TagInfo) -> bool:
        return tag in self._items

    def __iter__(self) -> Iterator[TagInfo]:
        return iter(self._items)

    def __len__(self) -> int:
        return len(self._items)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, DataElementMap) and self.encode() == other.encode()

    def __repr__(self) -> str:
        inner = ", ".join(f"{t.name}={render_value(t, v)!r}" for t, v in self._items.items())
        return f"DataElementMap({inner})"

    def tags(self) -> frozenset[TagInfo]:
        return frozenset(self._items)

    def copy(self) -> "DataElementMap":
        clone = DataElementMap()
        clone._items = dict(self._items)
        return clone

    def merged(self, other: "DataElementMap") -> "DataElementMap":
        clone = self.copy()
        for tag in other:
            clone.put(tag, other.get(tag))
        return clone

    def encode(self) -> bytes:
        """Canonical encoding: u16 count, entries ascending by tag code,
        each as (u16 code, u32 length, value bytes)."""
        entries = sorted(self._items.items(), key=lambda kv: kv[0].code)
        out = [len(entries).to_bytes(2, "big")]
        for tag, value in entries:
            raw = encode_value(tag, value)
            out.append(tag.code.to_bytes(2, "big"))
            out.append(len(raw).to_bytes(4, "big"))
            out.append(raw)
        return b"".join(out)

    @classmethod
    def decode(cls, buf: bytes) -> "DataElementMap":
        if len(buf) < 2:
            raise CodecError("truncated map header")
        count = int.from_bytes(buf[:2], "big")
        off = 2
        out = cls()
        prev_code = -1
        for _ in range(count):
            if off + 6 > len(buf):
                raise CodecError("truncated map entry")
            code = int.from_bytes(buf[off:off + 2], "big")
            if code <= prev_code:
                raise CodecError("map entries not in canonical order")
            prev_code = code
            length = int.from_bytes(buf[off + 2:off + 6], "big")
            off += 6
            if off + length > len(buf):
                raise CodecError("truncated map value")
            tag = Tag.by_code(code)
            out._items[tag] = decode_value(tag, buf[off:off + length])
            off += length
        if off != len(buf):
            raise CodecError("trailing bytes after map")
        return out

    def render(self) -> dict[str, Any]:
        """Name-keyed JSON-friendly view (insertion order preserved)."""
        return {tag.name: render_value(tag, value) for tag, value in self._items.items()}


def build_dol_data(dol: DOL, env: DataElementMap) -> DataElementMap:
    """Project the environment onto a DOL's tags, in DOL order."""
    out = DataElementMap()
    for tag in dol.tags:
        if tag not in env:
            raise MissingDolEntry(f"environment lacks {tag.name} requested by DOL")
        out.put(tag, env.get(tag))
    return out
