"""Modeled cryptography for the sandbox.

Real primitives, modeled constructions: application cryptograms are HMACs
over the canonical encoding of a declared coverage set, dynamic signatures
are Ed25519 over a one-byte method header plus a coverage set, and the PKI
is a two-level chain (CA -> issuer -> card) of Ed25519-signed certificates.
Online PIN travels under AES-GCM between terminal and issuer.

The point is not cryptographic strength but *binding*: what each signature
or MAC does and does not cover is exactly what the attack catalogue probes.
"""

from __future__ import annotations

import hashlib
import hmac
from dataclasses import dataclass

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .elements import DataElementMap, Tag, TagInfo


class CryptoError(Exception):
    pass


class LookupFailure(CryptoError):
    """The terminal has no CA key for the index the card named."""


class BadSignature(CryptoError):
    """A certificate or static signature failed verification."""


# --- coverage sets -----------------------------------------------------------
# What each cryptogram/signature binds. Gaps here are deliberate attack surface.

AC_COVERAGE_KERNEL2 = frozenset({Tag.AMOUNT, Tag.UN, Tag.CVM_RESULTS, Tag.AIP, Tag.ATC, Tag.IAD})
AC_COVERAGE_KERNEL3_BASE = frozenset({Tag.AMOUNT, Tag.UN, Tag.AIP, Tag.ATC, Tag.IAD})


def ac_coverage_kernel3(include_ttq: bool) -> frozenset[TagInfo]:
    if include_ttq:
        return AC_COVERAGE_KERNEL3_BASE | {Tag.TTQ}
    return AC_COVERAGE_KERNEL3_BASE


# Dynamic signature method headers; the first SDAD byte names the method,
# so a signature made for one method cannot pass as another.
METHOD_HEADERS = {"sda": 0x05, "dda": 0x06, "cda": 0x07, "fdda": 0x15}

SDAD_COVERAGE = {
    "dda": frozenset({Tag.UN_CARD, Tag.UN}),
    "cda": frozenset({Tag.UN_CARD, Tag.UN, Tag.AC, Tag.ATC, Tag.IAD}),
    "fdda": frozenset({Tag.UN_CARD, Tag.UN, Tag.ATC, Tag.CTQ, Tag.AIP}),
}

# Records under the issuer's static signature (read from the card's files).
STATIC_SIGNED_TAGS = frozenset(
    {Tag.PAN, Tag.EXPIRY, Tag.AIP, Tag.CVM_LIST, Tag.IAC, Tag.CA_PK_INDEX}
)


def _project(elements: DataElementMap, coverage: frozenset[TagInfo]) -> DataElementMap:
    out = DataElementMap()
    for tag in coverage:
        if tag not in elements:
            raise CryptoError(f"coverage element {tag.name} missing")
        out.put(tag, elements.get(tag))
    return out


# --- session keys and cryptograms ---------------------------------------------

def kdf(master_key: bytes, atc: int) -> bytes:
    """Per-transaction session key from the card master key and the ATC."""
    return hmac.new(master_key, b"sess" + atc.to_bytes(2, "big"), hashlib.sha256).digest()


def compute_ac(session_key: bytes, elements: DataElementMap,
               coverage: frozenset[TagInfo]) -> bytes:
    """MAC over the canonical encoding of exactly the covered elements."""
    msg = _project(elements, coverage).encode()
    return hmac.new(session_key, b"ac" + msg, hashlib.sha256).digest()


def verify_ac(session_key: bytes, elements: DataElementMap,
              coverage: frozenset[TagInfo], ac: bytes) -> bool:
    try:
        expected = compute_ac(session_key, elements, coverage)
    except CryptoError:
        return False
    return hmac.compare_digest(expected, ac)


# --- dynamic signatures ---------------------------------------------------------

def generate_signing_key(seed32: bytes) -> Ed25519PrivateKey:
    if len(seed32) != 32:
        raise CryptoError("signing key seed must be 32 bytes")
    return Ed25519PrivateKey.from_private_bytes(seed32)


def public_bytes(private_key: Ed25519PrivateKey) -> bytes:
    from cryptography.hazmat.primitives.serialization import (
        Encoding,
        PublicFormat,
    )
    return private_key.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)


def _public_key(raw: bytes) -> Ed25519PublicKey:
    return Ed25519PublicKey.from_public_bytes(raw)


def sign_sdad(private_key: Ed25519PrivateKey, method: str,
              elements: DataElementMap) -> bytes:
    """Signed Dynamic Application Data: method header byte + signature."""
    header = METHOD_HEADERS[method]
    msg = bytes([header]) + _project(elements, SDAD_COVERAGE[method]).encode()
    return bytes([header]) + private_key.sign(msg)


def verify_sdad(card_public: bytes, method: str, elements: DataElementMap,
                sdad: bytes) -> bool:
    """True iff the SDAD names the expected method and the signature holds."""
    header = METHOD_HEADERS[method]
    if len(sdad) != 65 or sdad[0] != header:
        return False
    try:
        msg = bytes([header]) + _project(elements, SDAD_COVERAGE[method]).encode()
    except CryptoError:
        return False
    try:
        _public_key(card_public).verify(sdad[1:], msg)
        return True
    except InvalidSignature:
        return False


# --- static signature and the certificate chain -------------------------------

def sign_static_records(issuer_private: Ed25519PrivateKey,
                        records: DataElementMap) -> bytes:
    """Issuer signature over the card's static records (SDA-style)."""
    header = METHOD_HEADERS["sda"]
    msg = bytes([header]) + _project(records, STATIC_SIGNED_TAGS).encode()
    return bytes([header]) + issuer_private.sign(msg)


def verify_static_records(issuer_public: bytes, records: DataElementMap,
                          signature: bytes) -> bool:
    header = METHOD_HEADERS["sda"]
    if len(signature) != 65 or signature[0] != header:
        return False
    try:
        msg = bytes([header]) + _project(records, STATIC_SIGNED_TAGS).encode()
    except CryptoError:
        return False
    try:
        _public_key(issuer_public).verify(signature[1:], msg)
        return True
    except InvalidSignature:
        return False


@dataclass(frozen=True)
class Certificate:
    """Minimal certificate: subject name, raw public key, parent signature."""

    subject: str
    public_key: bytes
    signature: bytes

    def payload(self) -> bytes:
        subj = self.subject.encode("utf-8")
        return (b"cert" + len(subj).to_bytes(2, "big") + subj
                + len(self.public_key).to_bytes(2, "big") + self.public_key)

    def to_bytes(self) -> bytes:
        return self.payload() + self.signature

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Certificate":
        if len(raw) < 8 or raw[:4] != b"cert":
            raise CryptoError("malformed certificate")
        ns = int.from_bytes(raw[4:6], "big")
        subject = raw[6:6 + ns].decode("utf-8")
        off = 6 + ns
        nk = int.from_bytes(raw[off:off + 2], "big")
        off += 2
        public_key = raw[off:off + nk]
        return cls(subject, public_key, raw[off + nk:])


def issue_certificate(parent_private: Ed25519PrivateKey, subject: str,
                      subject_public: bytes) -> Certificate:
    cert = Certificate(subject, subject_public, b"")
    return Certificate(subject, subject_public, parent_private.sign(cert.payload()))


def _check_certificate(parent_public: bytes, cert: Certificate) -> None:
    try:
        _public_key(parent_public).verify(cert.signature, cert.payload())
    except InvalidSignature:
        raise BadSignature(f"certificate for {cert.subject!r} does not verify") from None


class CAStore:
    """Terminal-side root keys, looked up by the card's one-byte CA index."""

    def __init__(self) -> None:
        self._roots: dict[int, bytes] = {}

    def add(self, index: int, ca_public: bytes) -> None:
        if not (0 <= index <= 0xFF):
            raise CryptoError(f"CA index out of range: {index}")
        self._roots[index] = ca_public

    def lookup(self, index: int) -> bytes:
        try:
            return self._roots[index]
        except KeyError:
            raise LookupFailure(f"no CA key under index {index}") from None

    def verify_chain(self, index: int, issuer_cert: Certificate,
                     card_cert: Certificate, pan: str) -> bytes:
        """Walk CA -> issuer -> card; return the card's public key.

        Raises LookupFailure for an unknown index and BadSignature for any
        broken link, including a card certificate naming a different PAN.
        """
        ca_public = self.lookup(index)
        _check_certificate(ca_public, issuer_cert)
        _check_certificate(issuer_cert.public_key, card_cert)
        if card_cert.subject != pan:
            raise BadSignature("card certificate bound to a different PAN")
        return card_cert.public_key


# --- online PIN ------------------------------------------------------------------

def encrypt_pin(shared_key: bytes, pin: str, nonce: bytes) -> bytes:
    """Terminal-side PIN encryption for the authorization leg."""
    if len(nonce) != 12:
        raise CryptoError("PIN nonce must be 12 bytes")
    return nonce + AESGCM(shared_key).encrypt(nonce, pin.encode("ascii"), b"pin")


def decrypt_pin(shared_key: bytes, blob: bytes) -> str | None:
    """Issuer-side decryption; None when the blob does not authenticate."""
    if len(blob) < 13:
        return None
    try:
        return AESGCM(shared_key).decrypt(blob[:12], blob[12:], b"pin").decode("ascii")
    except Exception:
        return None


# --- mag-stripe dynamic code --------------------------------------------------------

def compute_cvc3(cvc3_key: bytes, atc: int, un: int) -> bytes:
    """Dynamic card verification code: 3-byte truncated MAC over (ATC, UN)."""
    msg = b"cvc3" + atc.to_bytes(2, "big") + un.to_bytes(4, "big")
    return hmac.new(cvc3_key, msg, hashlib.sha256).digest()[:3]
