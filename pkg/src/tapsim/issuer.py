"""Issuer back end: authorization, clearing and the policy toggles.

The 2019-era baseline policy trusts the cryptogram and nothing else; every
additional back-end check that would have stopped an attack in the catalogue
is an explicit boolean on ``IssuerPolicy``, so runs can demonstrate both the
weak and the hardened configurations.

Checks run in a fixed order and the first failure wins, which keeps decline
reasons deterministic for the tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any

from .channel import Message
from .crypto import (
    AC_COVERAGE_KERNEL2,
    ac_coverage_kernel3,
    compute_cvc3,
    decrypt_pin,
    kdf,
    verify_ac,
)
from .elements import (
    AID_BRANDS,
    BRAND_FAMILIES,
    Amount,
    CVMMethod,
    CVMResult,
    DataElementMap,
    Tag,
    brand_of,
    is_transit_mcc,
)


@dataclass(frozen=True)
class IssuerPolicy:
    name: str
    check_atc_order: bool = False
    check_un_reuse: bool = False
    check_aid_pan_match: bool = False
    check_plastic_cdcvm: bool = False
    check_mcc_for_wallet_no_cdcvm: bool = False
    check_ttq_in_ac: bool = False
    foreign_cvm_limit_enforced: bool = False
    cvm_limit: int = 5000

    def with_fixes(self, **changes) -> "IssuerPolicy":
        return replace(self, **changes)


PERMISSIVE_2019 = IssuerPolicy(name="permissive_2019")
HARDENED = IssuerPolicy(
    name="hardened",
    check_atc_order=True,
    check_un_reuse=True,
    check_aid_pan_match=True,
    check_plastic_cdcvm=True,
    check_mcc_for_wallet_no_cdcvm=True,
    check_ttq_in_ac=True,
    foreign_cvm_limit_enforced=True,
)


@dataclass
class CardRecord:
    """What the issuer knows about one issued card."""

    pan: str
    expiry: str
    master_key: bytes
    cvc3_key: bytes
    pin: str
    home_currency: str
    device_type: str
    kernel: int
    foreign_no_cvm: bool = False
    track2_discretionary: str = ""
    service_code: str = "201"

    # per-card running state
    last_atc: int = 0
    seen_atcs: set[int] = field(default_factory=set)


class Issuer:
    """Authorizes and clears transactions against issued-card records."""

    def __init__(self, policy: IssuerPolicy):
        self.policy = policy
        self.cards: dict[str, CardRecord] = {}
        self.pin_keys: dict[str, bytes] = {}
        self.seen_uns: set[tuple[str, int]] = set()

    def register_card(self, record: CardRecord) -> None:
        self.cards[record.pan] = record

    def register_terminal(self, terminal_id: str, pin_key: bytes) -> None:
        self.pin_keys[terminal_id] = pin_key

    # --- message entry points ------------------------------------------------

    def handle_auth(self, request: Message) -> Message:
        decision, reason = self._evaluate(request.payload, clearing=False)
        return Message("AUTH_RESPONSE", DataElementMap({
            Tag.DECISION: decision, Tag.REASON: reason,
        }))

    def handle_clearing(self, request: Message) -> Message:
        decision, reason = self._evaluate(request.payload, clearing=True)
        return Message("CLEARING_RESPONSE", DataElementMap({
            Tag.DECISION: decision, Tag.REASON: reason,
        }))

    # --- evaluation pipeline ----------------------------------------------------

    def _evaluate(self, p: DataElementMap, clearing: bool) -> tuple[str, str]:
        pan = p.get(Tag.PAN)
        record = self.cards.get(pan or "")
        if record is None:
            return "decline", "unknown_card"
        if Tag.CVC3 in p:
            return self._evaluate_magstripe(p, record)
        if Tag.TRACK2 in p and Tag.AC not in p:
            return self._evaluate_swipe(p, record)
        if Tag.AC in p:
            return self._evaluate_emv(p, record, clearing=clearing)
        return "decline", "malformed_request"

    def _evaluate_swipe(self, p: DataElementMap, record: CardRecord) -> tuple[str, str]:
        # legacy static stripe: whoever holds the track data *is* the card
        t2 = p[Tag.TRACK2]
        if (t2.pan, t2.expiry, t2.service_code, t2.discretionary) != (
                record.pan, record.expiry, record.service_code,
                record.track2_discretionary):
            return "decline", "bad_track_data"
        return "approve", "swipe_ok"

    def _evaluate_magstripe(self, p: DataElementMap, record: CardRecord) -> tuple[str, str]:
        pol = self.policy
        atc, un, code = p[Tag.ATC], p[Tag.UN], p[Tag.CVC3]
        if compute_cvc3(record.cvc3_key, atc, un) != code:
            return "decline", "bad_dynamic_code"
        if pol.check_atc_order and (atc <= record.last_atc or atc in record.seen_atcs):
            return "decline", "atc_replay"
        terminal_id = p.get(Tag.TERMINAL_ID, "")
        if pol.check_un_reuse and (terminal_id, un) in self.seen_uns:
            return "decline", "un_reuse"
        amount: Amount = p[Tag.AMOUNT]
        if amount.value > pol.cvm_limit:
            cvm = p.get(Tag.CVM_RESULTS)
            if cvm is None or cvm.result != CVMResult.Performed \
                    or cvm.method == CVMMethod.NoCVM:
                return "decline", "cvm_limit"
        self._consume(record, atc, terminal_id, un)
        return "approve", "magstripe_ok"

    def _evaluate_emv(self, p: DataElementMap, record: CardRecord,
                      clearing: bool) -> tuple[str, str]:
        pol = self.policy
        atc = p[Tag.ATC]
        amount: Amount = p[Tag.AMOUNT]
        terminal_id = p.get(Tag.TERMINAL_ID, "")
        # the issuer validates against what it issued, not against whatever
        # kernel the terminal claims to have spoken
        kernel = record.kernel

        # 1. the cryptogram must verify over the covered elements
        session_key = kdf(record.master_key, atc)
        if kernel == 3:
            coverage = ac_coverage_kernel3(pol.check_ttq_in_ac)
        else:
            coverage = AC_COVERAGE_KERNEL2
        if not verify_ac(session_key, p, coverage, p[Tag.AC]):
            return "decline", "bad_ac"

        # 2. counters move strictly forward
        if pol.check_atc_order and (atc <= record.last_atc or atc in record.seen_atcs):
            return "decline", "atc_replay"

        # 3. a terminal never reuses its nonce
        if pol.check_un_reuse and Tag.UN in p \
                and (terminal_id, p[Tag.UN]) in self.seen_uns:
            return "decline", "un_reuse"

        # 4. the application must belong to the card's brand family
        if pol.check_aid_pan_match and Tag.AID in p:
            aid_brand = AID_BRANDS.get(p[Tag.AID])
            if aid_brand is None or (BRAND_FAMILIES[aid_brand]
                                     != BRAND_FAMILIES[brand_of(record.pan)]):
                return "decline", "aid_pan_mismatch"

        ctq = p.get(Tag.CTQ)
        cvm = p.get(Tag.CVM_RESULTS)
        claimed_cdcvm = bool(ctq and ctq.cdcvm_performed) or bool(
            cvm and cvm.method == CVMMethod.CDCVM and cvm.result == CVMResult.Performed)

        # 5. plastic cannot perform on-device verification
        if pol.check_plastic_cdcvm and claimed_cdcvm \
                and record.device_type == "plastic":
            return "decline", "plastic_cdcvm"

        # 6. a phone that did not verify its holder only belongs in transit
        iad = p.get(Tag.IAD)
        if pol.check_mcc_for_wallet_no_cdcvm and record.device_type == "phone" \
                and iad is not None and not iad.cdcvm_performed \
                and not is_transit_mcc(p.get(Tag.MCC, "")) \
                and amount.value > pol.cvm_limit:
            return "decline", "wallet_no_cdcvm"

        # 7. an enclosed online PIN must be the right one
        pin_verified = False
        if Tag.ENC_PIN in p:
            key = self.pin_keys.get(terminal_id)
            pin = decrypt_pin(key, p[Tag.ENC_PIN]) if key else None
            if pin is None or pin != record.pin:
                return "decline", "bad_pin"
            pin_verified = True

        # 8. high value requires some accepted verification story
        if amount.value > pol.cvm_limit:
            waived = (amount.currency != record.home_currency
                      and record.foreign_no_cvm
                      and not pol.foreign_cvm_limit_enforced)
            claimed_signature = bool(cvm and cvm.method == CVMMethod.PaperSignature
                                     and cvm.result == CVMResult.Performed)
            if not (pin_verified or claimed_cdcvm or claimed_signature or waived):
                return "decline", "cvm_limit"

        self._consume(record, atc, terminal_id, p.get(Tag.UN))
        return "approve", "cleared" if clearing else "authorized"

    def _consume(self, record: CardRecord, atc: int, terminal_id: str,
                 un: Any) -> None:
        record.last_atc = max(record.last_atc, atc)
        record.seen_atcs.add(atc)
        if un is not None:
            self.seen_uns.add((terminal_id, un))
