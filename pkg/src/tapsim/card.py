"""Cards, phones and clones: everything that answers on the contactless hop.

A ``Card`` wraps a ``CardProfile`` (personalization: keys, AIDs, CVM rules,
weak spots) plus per-card state (ATC, PIN try counter). Phones are cards with
a wallet behavior attached; the wallet decides whether a locked device will
transact and what it claims about on-device cardholder verification.

Clone classes at the bottom imitate cards from harvested data and are what
the cloning attacks actually present to terminals. They never produce
``card_tx`` markers — only a real card can do that — which is exactly how
the property checker tells a clone-fed acceptance from a genuine one.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Any

from .channel import Message, TransactionTrace
from .crypto import (
    AC_COVERAGE_KERNEL2,
    Certificate,
    ac_coverage_kernel3,
    compute_ac,
    compute_cvc3,
    kdf,
    sign_sdad,
)
from .elements import (
    AFL,
    AIP,
    ActionCodes,
    Amount,
    CID,
    CTQ,
    CVMList,
    CVMResults,
    DataElementMap,
    DOL,
    IAD,
    Tag,
    TTQ,
    Track2EquivalentData,
    brand_of,
)

# What a transit gate blurts out before the protocol starts. A phone that has
# seen these bytes may open its express-transit path for the following tap.
TRANSIT_MAGIC = bytes.fromhex("47415445")

KERNEL3_PDOL = DOL((Tag.TTQ, Tag.AMOUNT, Tag.UN))
KERNEL2_CDOL1 = DOL((Tag.AMOUNT, Tag.UN, Tag.CVM_RESULTS))


@dataclass
class WalletDecision:
    accept: bool
    ctq_cdcvm: bool = False   # claimed toward the terminal (CTQ)
    iad_cdcvm: bool = False   # claimed toward the issuer (IAD)
    genuine_cvm: bool = False  # the cardholder really verified themselves


class Wallet:
    """Base behavior for phone wallets. ``unlocked`` means the cardholder
    authenticated to the device for this tap."""

    kind = "wallet"

    def __init__(self, tx_limit: int = 3000, cdcvm_always: bool = False):
        self.tx_limit = tx_limit
        self.cdcvm_always = cdcvm_always
        self.unlocked = False
        self.magic_seen = False

    def on_magic(self, magic: bytes) -> None:
        pass

    def decide(self, amount: Amount, ttq: TTQ) -> WalletDecision:
        raise NotImplementedError


class GoogleLikeWallet(Wallet):
    """Transacts while locked for small amounts, or whenever the terminal's
    TTQ says no CVM is required. With ``cdcvm_always`` it claims on-device
    verification even for those locked taps."""

    kind = "google_like"

    def decide(self, amount: Amount, ttq: TTQ) -> WalletDecision:
        if self.unlocked:
            return WalletDecision(True, ctq_cdcvm=True, iad_cdcvm=True, genuine_cvm=True)
        if amount.value <= self.tx_limit or not ttq.cvm_required:
            claim = self.cdcvm_always
            return WalletDecision(True, ctq_cdcvm=claim, iad_cdcvm=claim)
        return WalletDecision(False)


class AppleLikeWallet(Wallet):
    """Locked device transacts only on the express-transit path: the gate's
    magic bytes followed by a TTQ that looks like a transit reader (ODA for
    online authorizations). Express taps honestly state that no cardholder
    verification took place. The magic priming is consumed per decision."""

    kind = "apple_like"

    def on_magic(self, magic: bytes) -> None:
        if magic == TRANSIT_MAGIC:
            self.magic_seen = True

    def decide(self, amount: Amount, ttq: TTQ) -> WalletDecision:
        if self.unlocked:
            return WalletDecision(True, ctq_cdcvm=True, iad_cdcvm=True, genuine_cvm=True)
        primed, self.magic_seen = self.magic_seen, False
        if primed and ttq.oda_for_online_supported and ttq.emv_mode_supported:
            return WalletDecision(True, ctq_cdcvm=False, iad_cdcvm=False)
        return WalletDecision(False)


class SamsungLikeWallet(Wallet):
    """Locked device only ever answers zero-amount taps (gate entry)."""

    kind = "samsung_like"

    def decide(self, amount: Amount, ttq: TTQ) -> WalletDecision:
        if self.unlocked:
            return WalletDecision(True, ctq_cdcvm=True, iad_cdcvm=True, genuine_cvm=True)
        if amount.value == 0:
            return WalletDecision(True, ctq_cdcvm=True, iad_cdcvm=False)
        return WalletDecision(False)


WALLET_KINDS = {
    "google_like": GoogleLikeWallet,
    "apple_like": AppleLikeWallet,
    "samsung_like": SamsungLikeWallet,
}


@dataclass
class CardProfile:
    """Personalization data plus the configuration toggles under study."""

    name: str
    pan: str
    expiry: str
    cardholder_name: str
    csc: str
    aid: bytes
    kernel: int
    home_currency: str = "EUR"
    device_type: str = "plastic"

    master_key: bytes = b""
    cvc3_key: bytes = b""
    signing_key: Any = None  # Ed25519PrivateKey when ODA is personalized

    sda: bool = False
    dda: bool = False
    cda: bool = False
    fdda: bool = False
    emv_mode: bool = True
    magstripe_capable: bool = False  # answers dynamic-code queries

    cvm_list: CVMList = field(default_factory=CVMList)
    cvm_limit: int = 5000
    foreign_no_cvm: bool = False

    offline_pin_enabled: bool = False
    pin: str = "1234"
    pin_try_limit: int = 3

    iac: ActionCodes = field(default_factory=ActionCodes)
    ca_pk_index: int | None = None
    issuer_cert: Certificate | None = None
    card_cert: Certificate | None = None
    static_signature: bytes | None = None

    service_code: str = "201"
    n_un_digits: int = 3
    include_ttq_in_ac: bool = False  # mirrors the issuer's TTQ-binding policy
    wallet: Wallet | None = None

    @property
    def brand(self) -> str:
        return brand_of(self.pan)

    @property
    def aip(self) -> AIP:
        return AIP(
            sda_supported=self.sda,
            dda_supported=self.dda or self.fdda,
            cda_supported=self.cda,
            cardholder_verification_supported=bool(self.cvm_list.entries)
            or self.offline_pin_enabled or self.wallet is not None,
            on_device_cvm_supported=self.device_type == "phone",
            emv_mode_supported=self.emv_mode,
        )

    @property
    def track2(self) -> Track2EquivalentData:
        return Track2EquivalentData(self.pan, self.expiry, self.service_code,
                                    self.csc + "00000")

    @property
    def track1(self) -> str:
        return (f"B{self.pan}^{self.cardholder_name.replace(' ', '/')}"
                f"^{self.expiry}{self.service_code}")

    def face(self) -> dict[str, str]:
        """What is printed on the physical card."""
        return {"PAN": self.pan, "EXPIRY": self.expiry,
                "CARDHOLDER_NAME": self.cardholder_name, "CSC": self.csc}


class Card:
    """Contactless card/phone state machine: answers SELECT, GPO,
    READ RECORD, GENERATE AC, VERIFY and the transit magic broadcast."""

    def __init__(self, profile: CardProfile, rng: random.Random):
        self.profile = profile
        self.rng = rng
        self.atc = 0
        self.pin_tries_remaining = profile.pin_try_limit
        self._trace: TransactionTrace | None = None
        self._session: int | None = None
        self._current_ctq = CTQ()

    # channels call this when the card is placed on a hop
    def bind(self, trace: TransactionTrace, session: int) -> None:
        self._trace = trace
        self._session = session

    def face(self) -> dict[str, str]:
        return self.profile.face()

    @property
    def blocked(self) -> bool:
        return self.pin_tries_remaining <= 0

    # --- dispatch -------------------------------------------------------

    def exchange(self, msg: Message) -> Message:
        handler = {
            "SELECT": self._on_select,
            "GET_PROCESSING_OPTIONS": self._on_gpo,
            "READ_RECORD": self._on_read_record,
            "GENERATE_AC": self._on_generate_ac,
            "VERIFY": self._on_verify,
            "MAGIC_BYTES": self._on_magic,
        }.get(msg.name)
        if handler is None:
            return Message(msg.name)
        return handler(msg)

    # --- handlers -------------------------------------------------------

    def _on_select(self, msg: Message) -> Message:
        aid = msg.payload.get(Tag.AID)
        if aid != self.profile.aid:
            return Message("SELECT")  # empty: not on this card
        pdol = KERNEL3_PDOL if self.profile.kernel == 3 else DOL(())
        return Message("SELECT", DataElementMap({
            Tag.AID: aid,
            Tag.KERNEL_ID: self.profile.kernel,
            Tag.PDOL: pdol,
        }))

    def _on_magic(self, msg: Message) -> Message:
        if self.profile.wallet is not None:
            self.profile.wallet.on_magic(msg.payload.get(Tag.MAGIC, b""))
        return Message("MAGIC_BYTES")

    def _afl(self) -> AFL:
        if not self.profile.emv_mode:
            return AFL((1,))
        return AFL((1, 2, 3) if self.profile.ca_pk_index is not None else (1, 2))

    def _on_gpo(self, msg: Message) -> Message:
        p = self.profile
        if not p.emv_mode:
            # mag-stripe mode: static profile now, dynamic code at GENERATE AC
            return Message("GET_PROCESSING_OPTIONS", DataElementMap({
                Tag.AIP: p.aip,
                Tag.AFL: self._afl(),
                Tag.N_UN_DIGITS: p.n_un_digits,
            }))
        if p.kernel == 2:
            return Message("GET_PROCESSING_OPTIONS", DataElementMap({
                Tag.AIP: p.aip,
                Tag.AFL: self._afl(),
            }))
        return self._kernel3_transact(msg)

    def _kernel3_transact(self, msg: Message) -> Message:
        """Kernel-3 cards do the whole cryptographic transaction at GPO."""
        p = self.profile
        ttq: TTQ = msg.payload[Tag.TTQ]
        amount: Amount = msg.payload[Tag.AMOUNT]
        un: int = msg.payload[Tag.UN]

        if p.offline_pin_enabled and self.blocked:
            # exhausted PIN counter takes the whole card out of service
            self.atc += 1
            return Message("GET_PROCESSING_OPTIONS", DataElementMap({
                Tag.AIP: p.aip, Tag.AFL: self._afl(),
                Tag.ATC: self.atc, Tag.CID: CID.AAC, Tag.CTQ: CTQ(),
            }))

        genuine_cvm = False
        if p.wallet is not None:
            decision = p.wallet.decide(amount, ttq)
            if not decision.accept:
                self.atc += 1
                return Message("GET_PROCESSING_OPTIONS", DataElementMap({
                    Tag.AIP: p.aip, Tag.AFL: self._afl(),
                    Tag.ATC: self.atc, Tag.CID: CID.AAC,
                    Tag.CTQ: CTQ(),
                }))
            ctq = CTQ(cdcvm_performed=decision.ctq_cdcvm)
            iad_cdcvm = decision.iad_cdcvm
            genuine_cvm = decision.genuine_cvm
        else:
            waived = p.foreign_no_cvm and amount.currency != p.home_currency
            need_cvm = ttq.cvm_required and not waived
            ctq = CTQ(
                online_pin_required=need_cvm and amount.value > p.cvm_limit,
                signature_required=need_cvm and amount.value <= p.cvm_limit,
            )
            iad_cdcvm = False

        self.atc += 1
        self._current_ctq = ctq
        iad = type(self)._make_iad(iad_cdcvm, p.device_type)
        un_card = self.rng.randrange(1 << 32)

        elements = DataElementMap({
            Tag.AMOUNT: amount, Tag.UN: un, Tag.AIP: p.aip,
            Tag.ATC: self.atc, Tag.IAD: iad, Tag.TTQ: ttq,
        })
        ac = compute_ac(kdf(p.master_key, self.atc), elements,
                        ac_coverage_kernel3(p.include_ttq_in_ac))

        payload = DataElementMap({
            Tag.AIP: p.aip, Tag.AFL: self._afl(), Tag.ATC: self.atc,
            Tag.CID: CID.TC if amount.value == 0 else CID.ARQC,
            Tag.AC: ac, Tag.IAD: iad, Tag.CTQ: ctq, Tag.UN_CARD: un_card,
        })
        if p.fdda and p.signing_key is not None and ttq.oda_for_online_supported:
            sdad = sign_sdad(p.signing_key, "fdda", DataElementMap({
                Tag.UN_CARD: un_card, Tag.UN: un, Tag.ATC: self.atc,
                Tag.CTQ: ctq, Tag.AIP: p.aip,
            }))
            payload.put(Tag.SDAD, sdad)

        if genuine_cvm and self._trace is not None:
            self._trace.mark("cvm", session=self._session, genuine=True,
                             method="CDCVM", by="cardholder")
        self._mark_tx(mode="emv", kernel=3, amount=amount, un=un, ttq=ttq,
                      ctq=ctq, iad=iad, ac=ac, un_card=un_card,
                      cid=payload[Tag.CID])
        return Message("GET_PROCESSING_OPTIONS", payload)

    @staticmethod
    def _make_iad(cdcvm: bool, device_type: str) -> IAD:
        return IAD(cdcvm_performed=cdcvm, device_type=device_type)

    def _records(self) -> dict[int, DataElementMap]:
        p = self.profile
        r1 = DataElementMap({
            Tag.PAN: p.pan, Tag.EXPIRY: p.expiry,
            Tag.CARDHOLDER_NAME: p.cardholder_name,
            Tag.TRACK2: p.track2, Tag.SERVICE_CODE: p.service_code,
        })
        if not p.emv_mode:
            r1.put(Tag.TRACK1, p.track1)
            return {1: r1}
        r2 = DataElementMap({
            Tag.CVM_LIST: p.cvm_list,
            Tag.IAC: p.iac,
        })
        if p.kernel == 2:
            r2.put(Tag.CDOL1, KERNEL2_CDOL1)
        else:
            r2.put(Tag.CTQ, self._current_ctq)
        out = {1: r1, 2: r2}
        if p.ca_pk_index is not None:
            r2.put(Tag.CA_PK_INDEX, p.ca_pk_index)
            out[3] = DataElementMap({
                Tag.ISSUER_CERT: p.issuer_cert.to_bytes(),
                Tag.CARD_CERT: p.card_cert.to_bytes(),
                Tag.STATIC_SIGNATURE: p.static_signature,
            })
        return out

    def _on_read_record(self, msg: Message) -> Message:
        number = msg.payload.get(Tag.RECORD_NUMBER, 0)
        record = self._records().get(number)
        if record is None:
            return Message("READ_RECORD")
        return Message("READ_RECORD", record.copy().put(Tag.RECORD_NUMBER, number))

    def _on_generate_ac(self, msg: Message) -> Message:
        p = self.profile
        if Tag.AMOUNT not in msg.payload and Tag.UN in msg.payload:
            return self._dynamic_code(msg)
        if p.kernel != 2 or not p.emv_mode:
            return Message("GENERATE_AC")

        amount: Amount = msg.payload[Tag.AMOUNT]
        un: int = msg.payload[Tag.UN]
        cvm_results: CVMResults = msg.payload[Tag.CVM_RESULTS]
        requested: CID = msg.payload.get(Tag.CID, CID.ARQC)
        want_cda = bool(msg.payload.get(Tag.CDA_REQUESTED, 0))

        if p.offline_pin_enabled and self.blocked:
            self.atc += 1
            return Message("GENERATE_AC", DataElementMap({
                Tag.ATC: self.atc, Tag.CID: CID.AAC,
            }))

        self.atc += 1
        iad = self._make_iad(False, p.device_type)
        elements = DataElementMap({
            Tag.AMOUNT: amount, Tag.UN: un, Tag.CVM_RESULTS: cvm_results,
            Tag.AIP: p.aip, Tag.ATC: self.atc, Tag.IAD: iad,
        })
        ac = compute_ac(kdf(p.master_key, self.atc), elements, AC_COVERAGE_KERNEL2)

        payload = DataElementMap({
            Tag.ATC: self.atc, Tag.CID: requested, Tag.AC: ac, Tag.IAD: iad,
        })
        un_card = None
        if want_cda and p.cda and p.signing_key is not None:
            un_card = self.rng.randrange(1 << 32)
            sdad = sign_sdad(p.signing_key, "cda", DataElementMap({
                Tag.UN_CARD: un_card, Tag.UN: un, Tag.AC: ac,
                Tag.ATC: self.atc, Tag.IAD: iad,
            }))
            payload.put(Tag.UN_CARD, un_card).put(Tag.SDAD, sdad)

        self._mark_tx(mode="emv", kernel=2, amount=amount, un=un,
                      cvm_results=cvm_results, iad=iad, ac=ac,
                      un_card=un_card, cid=requested)
        return Message("GENERATE_AC", payload)

    def _dynamic_code(self, msg: Message) -> Message:
        p = self.profile
        if not p.cvc3_key or not (p.magstripe_capable or not p.emv_mode):
            return Message("GENERATE_AC")
        un: int = msg.payload[Tag.UN]
        self.atc += 1
        code = compute_cvc3(p.cvc3_key, self.atc, un)
        self._mark_tx(mode="ms", kernel=p.kernel, un=un, cvc3=code)
        return Message("GENERATE_AC", DataElementMap({
            Tag.ATC: self.atc, Tag.CVC3: code,
        }))

    def _on_verify(self, msg: Message) -> Message:
        p = self.profile
        if not p.offline_pin_enabled:
            return Message("VERIFY", DataElementMap({Tag.DECISION: "not_supported"}))
        guess = msg.payload.get(Tag.PIN_GUESS)
        if guess is None:
            return Message("VERIFY", DataElementMap({
                Tag.DECISION: "query",
                Tag.PIN_TRIES_REMAINING: self.pin_tries_remaining,
            }))
        if self.blocked:
            return Message("VERIFY", DataElementMap({
                Tag.DECISION: "blocked", Tag.PIN_TRIES_REMAINING: 0,
            }))
        if guess == p.pin:
            self.pin_tries_remaining = p.pin_try_limit
            decision = "ok"
        else:
            self.pin_tries_remaining -= 1
            decision = "blocked" if self.blocked else "fail"
        return Message("VERIFY", DataElementMap({
            Tag.DECISION: decision,
            Tag.PIN_TRIES_REMAINING: self.pin_tries_remaining,
        }))

    # --- bookkeeping -------------------------------------------------------

    def _mark_tx(self, **data: Any) -> None:
        if self._trace is None:
            return
        p = self.profile
        base: dict[str, Any] = {
            "pan": p.pan, "aid": p.aid, "atc": self.atc, "aip": p.aip,
            "cvm_list": p.cvm_list, "iac_denial": p.iac.denial,
            "ca_pk_index": p.ca_pk_index, "brand": p.brand,
            "device_type": p.device_type,
        }
        base.update(data)
        self._trace.mark("card_tx", session=self._session, **base)


# ---------------------------------------------------------------------------
# clones
# ---------------------------------------------------------------------------

class StaticMagstripeClone:
    """A blank card written with skimmed track data. Enough for a swipe;
    it cannot answer dynamic-code queries."""

    def __init__(self, track2: Track2EquivalentData, track1: str = ""):
        self.track2 = track2
        self.track1 = track1


class Cvc3MagstripeClone:
    """Pre-played mag-stripe-mode clone: a harvested (UN -> ATC, code) table
    plus copied static records. Answers the terminal like the real card as
    long as the terminal happens to pick a UN that is in the table."""

    def __init__(self, aid: bytes, record1: DataElementMap, n_un_digits: int,
                 table: dict[int, tuple[int, bytes]]):
        self.aid = aid
        self.record1 = record1
        self.n_un_digits = n_un_digits
        self.table = table

    def exchange(self, msg: Message) -> Message:
        if msg.name == "SELECT":
            if msg.payload.get(Tag.AID) != self.aid:
                return Message("SELECT")
            return Message("SELECT", DataElementMap({
                Tag.AID: self.aid, Tag.KERNEL_ID: 2, Tag.PDOL: DOL(()),
            }))
        if msg.name == "GET_PROCESSING_OPTIONS":
            return Message("GET_PROCESSING_OPTIONS", DataElementMap({
                Tag.AIP: AIP(emv_mode_supported=False),
                Tag.AFL: AFL((1,)),
                Tag.N_UN_DIGITS: self.n_un_digits,
            }))
        if msg.name == "READ_RECORD":
            if msg.payload.get(Tag.RECORD_NUMBER) == 1:
                return Message("READ_RECORD", self.record1.copy())
            return Message("READ_RECORD")
        if msg.name == "GENERATE_AC" and Tag.UN in msg.payload:
            un = msg.payload[Tag.UN]
            hit = self.table.get(un)
            if hit is None:
                # must answer something; a wrong code gets declined upstream
                last_atc = max((atc for atc, _ in self.table.values()), default=1)
                return Message("GENERATE_AC", DataElementMap({
                    Tag.ATC: last_atc, Tag.CVC3: b"\x00\x00\x00",
                }))
            atc, code = hit
            return Message("GENERATE_AC", DataElementMap({
                Tag.ATC: atc, Tag.CVC3: code,
            }))
        return Message(msg.name)
