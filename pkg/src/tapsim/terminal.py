"""Point-of-sale behavior: kernel selection, ODA, CVM and the accept path.

One ``Terminal`` instance drives complete purchases against whatever sits on
the other side of an ``NfcChannel`` (card, phone, clone, relay bridge or
replayer). Every final outcome is logged as a ``decision`` marker carrying
the *terminal's view* of the transaction, which the property checker later
holds against the card's own ``card_tx`` marker.

Two details deliberately mirror 2019-era deployments and are central to the
attack catalogue:

* A dynamic-signature failure on data the terminal *could* verify is a hard
  decline, but an ODA that cannot even be attempted (unknown CA index,
  broken certificate, bad static signature) only sets a TVR bit that flows
  through terminal/issuer action-code analysis — and the default TAC denies
  nothing.
* Kernel-3 dynamic signatures are verified whenever present, but their
  absence is tolerated unless ``require_oda_kernel3`` is switched on.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Any

from .channel import MESSAGES, Message, NfcChannel, PaymentRails
from .crypto import BadSignature, CAStore, Certificate, LookupFailure, encrypt_pin, verify_sdad, verify_static_records
from .elements import (
    AID_MAESTRO,
    AID_MASTERCARD,
    AID_VISA,
    AIP,
    ActionCodes,
    Amount,
    CID,
    CTQ,
    CVMCondition,
    CVMList,
    CVMMethod,
    CVMResult,
    CVMResults,
    DataElementMap,
    DOL,
    Tag,
    TTQ,
    TVR,
    Track2EquivalentData,
    build_dol_data,
)

from .card import TRANSIT_MAGIC


@dataclass
class TerminalConfig:
    name: str
    terminal_id: str
    merchant_id: str
    mcc: str = "5999"
    currency: str = "EUR"
    aid_list: tuple[bytes, ...] = (AID_VISA, AID_MASTERCARD, AID_MAESTRO)

    cvm_limit: int = 5000        # above this a CVM is required
    floor_limit: int = 2500      # at or below this an offline approval is allowed
    ceiling: int = 100000        # terminal refuses larger amounts outright

    online_capable: bool = True
    offline_capable: bool = False
    online_pin_supported: bool = True
    signature_supported: bool = True
    # plain shops authorize online and skip offline data authentication;
    # transit readers (and hardened terminals) ask for it in their TTQ
    oda_for_online: bool = False
    allow_magstripe: bool = True

    tac: ActionCodes = field(default_factory=ActionCodes)
    request_cda: bool = True
    require_oda_kernel3: bool = False
    lenient_cashier: bool = False
    fixed_un: int | None = None  # a broken terminal that never varies its nonce
    transit: bool = False
    interface: str = "nfc"       # or "swipe"

    def ttq(self, amount: Amount) -> TTQ:
        return TTQ(
            online_pin_supported=self.online_pin_supported,
            signature_supported=self.signature_supported,
            cvm_required=amount.value > self.cvm_limit,
            oda_for_online_supported=(self.oda_for_online or self.transit
                                      or self.require_oda_kernel3),
            emv_mode_supported=True,
        )


class Terminal:
    """Drives purchases and remembers offline approvals for end-of-day clearing."""

    def __init__(self, config: TerminalConfig, rng: random.Random,
                 rails: PaymentRails, ca_store: CAStore, pin_key: bytes):
        self.config = config
        self.rng = rng
        self.rails = rails
        self.ca_store = ca_store
        self.pin_key = pin_key
        self.offline_batch: list[tuple[Message, int]] = []

    # --- entry points -----------------------------------------------------

    def run_purchase(self, channel: NfcChannel, amount: Amount, *,
                     pin: str | None = None,
                     performed_by: str = "cardholder") -> dict[str, Any]:
        cfg = self.config
        view: dict[str, Any] = {"amount": amount, "mode": "emv"}
        if amount.value > cfg.ceiling:
            return self._decide(channel, view, "decline", "over_ceiling")

        if cfg.transit:
            channel.exchange(Message("MAGIC_BYTES",
                                     DataElementMap({Tag.MAGIC: TRANSIT_MAGIC})))

        selected = self._select(channel)
        if selected is None:
            return self._decide(channel, view, "decline", "no_application")
        aid, kernel, pdol = selected
        view.update(aid=aid, kernel=kernel)

        ttq = cfg.ttq(amount)
        un = cfg.fixed_un if cfg.fixed_un is not None else self.rng.randrange(1 << 32)
        view.update(ttq=ttq, un=un)

        env = DataElementMap({
            Tag.TTQ: ttq, Tag.AMOUNT: amount, Tag.UN: un,
            Tag.MCC: cfg.mcc, Tag.MERCHANT_ID: cfg.merchant_id,
            Tag.TERMINAL_ID: cfg.terminal_id,
        })
        gpo = channel.exchange(Message("GET_PROCESSING_OPTIONS",
                                       build_dol_data(pdol, env)))
        aip: AIP | None = gpo.payload.get(Tag.AIP)
        if aip is None:
            return self._decide(channel, view, "decline", "gpo_failed")
        view["aip"] = aip

        if not aip.emv_mode_supported:
            if not cfg.allow_magstripe:
                return self._decide(channel, view, "decline", "magstripe_refused")
            return self._magstripe_flow(channel, amount, gpo, view,
                                        pin=pin, performed_by=performed_by)
        if kernel == 3:
            return self._kernel3_flow(channel, amount, ttq, un, gpo, view,
                                      pin=pin, performed_by=performed_by)
        return self._kernel2_flow(channel, amount, un, gpo, view,
                                  pin=pin, performed_by=performed_by)

    def run_transit_tap(self, channel: NfcChannel) -> dict[str, Any]:
        return self.run_purchase(channel, Amount(0, self.config.currency))

    def run_swipe(self, stripe: Track2EquivalentData, amount: Amount,
                  trace_session: int) -> dict[str, Any]:
        """Legacy swipe: no chip dialogue, the track data is all there is."""
        view = {"amount": amount, "mode": "swipe", "pan": stripe.pan,
                "track2": stripe, "session": trace_session}
        request = Message("AUTH_REQUEST", DataElementMap({
            Tag.PAN: stripe.pan, Tag.EXPIRY: stripe.expiry,
            Tag.TRACK2: stripe, Tag.AMOUNT: amount,
            Tag.MCC: self.config.mcc, Tag.MERCHANT_ID: self.config.merchant_id,
            Tag.TERMINAL_ID: self.config.terminal_id, Tag.TX_TYPE: "swipe",
        }))
        response = self.rails.authorize(request, session=trace_session)
        if response.payload[Tag.DECISION] == "approve":
            return self._decide(None, view, "approve_online", "issuer_approved")
        return self._decide(None, view, "decline",
                            "issuer_declined:" + response.payload.get(Tag.REASON, ""))

    # --- shared pieces ------------------------------------------------------

    def _select(self, channel: NfcChannel) -> tuple[bytes, int, DOL] | None:
        for aid in self.config.aid_list:
            resp = channel.exchange(Message("SELECT",
                                            DataElementMap({Tag.AID: aid})))
            got = resp.payload.get(Tag.AID)
            if got is not None:
                return got, resp.payload.get(Tag.KERNEL_ID, 2), \
                    resp.payload.get(Tag.PDOL, DOL(()))
        return None

    def _read_records(self, channel: NfcChannel, afl) -> dict[int, DataElementMap]:
        records = {}
        for number in afl.records:
            resp = channel.exchange(Message("READ_RECORD",
                                            DataElementMap({Tag.RECORD_NUMBER: number})))
            records[number] = resp.payload
        return records

    def _collect_cvm(self, channel: NfcChannel, method: CVMMethod,
                     condition: CVMCondition, *, pin: str | None,
                     performed_by: str,
                     view: dict[str, Any]) -> tuple[CVMResults | None, str | None]:
        """Carry out the chosen CVM at the terminal. Returns (results, decline_reason)."""
        trace = channel.trace
        if method == CVMMethod.OnlinePIN:
            if pin is None:
                return None, "pin_unavailable"
            view["enc_pin"] = encrypt_pin(self.pin_key, pin,
                                          self.rng.randbytes(12))
            trace.mark("cvm", session=channel.session, method="OnlinePIN",
                       genuine=performed_by == "cardholder", by=performed_by)
        elif method == CVMMethod.PaperSignature:
            if performed_by != "cardholder" and not self.config.lenient_cashier:
                return None, "signature_rejected"
            trace.mark("cvm", session=channel.session, method="PaperSignature",
                       genuine=performed_by == "cardholder", by=performed_by)
        return CVMResults(method, condition, CVMResult.Performed), None

    # --- kernel 3 ------------------------------------------------------------

    def _kernel3_flow(self, channel: NfcChannel, amount: Amount, ttq: TTQ,
                      un: int, gpo: Message, view: dict[str, Any], *,
                      pin: str | None, performed_by: str) -> dict[str, Any]:
        p = gpo.payload
        cid = p.get(Tag.CID)
        if cid == CID.AAC or cid is None or Tag.AC not in p:
            return self._decide(channel, view, "decline", "card_declined")
        ctq: CTQ = p[Tag.CTQ]
        view.update(ctq=ctq, atc=p[Tag.ATC], ac=p[Tag.AC], iad=p[Tag.IAD],
                    cid=cid, un_card=p.get(Tag.UN_CARD))

        records = self._read_records(channel, p[Tag.AFL])
        r1 = records.get(1, DataElementMap())
        r2 = records.get(2, DataElementMap())
        view.update(pan=r1.get(Tag.PAN), expiry=r1.get(Tag.EXPIRY),
                    ca_pk_index=r2.get(Tag.CA_PK_INDEX),
                    cvm_list=r2.get(Tag.CVM_LIST),
                    iac_denial=(r2.get(Tag.IAC).denial
                                if Tag.IAC in r2 else None))

        # the card's CVM statement must be consistent between GPO and records
        if Tag.CTQ in r2 and r2[Tag.CTQ] != ctq:
            return self._decide(channel, view, "decline", "ctq_mismatch")

        card_public = None
        if 3 in records and Tag.CA_PK_INDEX in r2:
            try:
                card_public = self.ca_store.verify_chain(
                    r2[Tag.CA_PK_INDEX],
                    Certificate.from_bytes(records[3][Tag.ISSUER_CERT]),
                    Certificate.from_bytes(records[3][Tag.CARD_CERT]),
                    r1.get(Tag.PAN, ""),
                )
            except (LookupFailure, BadSignature):
                return self._decide(channel, view, "decline", "oda_chain_failed")

        sdad = p.get(Tag.SDAD)
        if sdad is not None:
            if card_public is None:
                return self._decide(channel, view, "decline", "oda_chain_failed")
            signed_view = DataElementMap({
                Tag.UN_CARD: p.get(Tag.UN_CARD, 0), Tag.UN: un,
                Tag.ATC: p[Tag.ATC], Tag.CTQ: ctq, Tag.AIP: p[Tag.AIP],
            })
            if not verify_sdad(card_public, "fdda", signed_view, sdad):
                return self._decide(channel, view, "decline", "fdda_failed")
        elif self.config.require_oda_kernel3:
            return self._decide(channel, view, "decline", "fdda_missing")

        # CVM cascade
        if ctq.cdcvm_performed:
            cvm_results = CVMResults(CVMMethod.CDCVM, CVMCondition.Always,
                                     CVMResult.Performed)
        elif ctq.online_pin_required and self.config.online_pin_supported:
            cvm_results, why = self._collect_cvm(channel, CVMMethod.OnlinePIN,
                                                 CVMCondition.IfAboveCvmLimit,
                                                 pin=pin, performed_by=performed_by,
                                                 view=view)
            if why:
                return self._decide(channel, view, "decline", why)
        elif ctq.signature_required and self.config.signature_supported:
            cvm_results, why = self._collect_cvm(channel, CVMMethod.PaperSignature,
                                                 CVMCondition.IfBelowCvmLimit,
                                                 pin=pin, performed_by=performed_by,
                                                 view=view)
            if why:
                return self._decide(channel, view, "decline", why)
        elif not ttq.cvm_required:
            cvm_results = CVMResults()
        else:
            return self._decide(channel, view, "decline", "no_cvm_agreed")
        view["cvm_results"] = cvm_results

        if cid == CID.TC and amount.value <= self.config.floor_limit \
                and (self.config.offline_capable or self.config.transit):
            submit = self._clearing_payload(view, kernel=3)
            self.offline_batch.append((submit, channel.session))
            return self._decide(channel, view, "approve_offline", "offline_floor")
        if not self.config.online_capable:
            return self._decide(channel, view, "decline", "offline_only_terminal")
        return self._go_online(channel, view, kernel=3)

    # --- kernel 2 -------------------------------------------------------------

    def _kernel2_flow(self, channel: NfcChannel, amount: Amount, un: int,
                      gpo: Message, view: dict[str, Any], *,
                      pin: str | None, performed_by: str) -> dict[str, Any]:
        cfg = self.config
        aip: AIP = gpo.payload[Tag.AIP]
        records = self._read_records(channel, gpo.payload[Tag.AFL])
        r1 = records.get(1, DataElementMap())
        r2 = records.get(2, DataElementMap())
        pan = r1.get(Tag.PAN, "")
        cvm_list: CVMList = r2.get(Tag.CVM_LIST, CVMList())
        iac: ActionCodes = r2.get(Tag.IAC, ActionCodes())
        view.update(pan=pan, expiry=r1.get(Tag.EXPIRY),
                    cvm_list=cvm_list, iac_denial=iac.denial,
                    ca_pk_index=r2.get(Tag.CA_PK_INDEX))

        tvr = TVR()
        card_public = None
        if Tag.CA_PK_INDEX in r2 and 3 in records:
            try:
                card_public = self.ca_store.verify_chain(
                    r2[Tag.CA_PK_INDEX],
                    Certificate.from_bytes(records[3][Tag.ISSUER_CERT]),
                    Certificate.from_bytes(records[3][Tag.CARD_CERT]),
                    pan,
                )
                static = DataElementMap({
                    Tag.PAN: pan, Tag.EXPIRY: r1.get(Tag.EXPIRY, ""),
                    Tag.AIP: aip, Tag.CVM_LIST: cvm_list, Tag.IAC: iac,
                    Tag.CA_PK_INDEX: r2[Tag.CA_PK_INDEX],
                })
                issuer_public = Certificate.from_bytes(records[3][Tag.ISSUER_CERT]).public_key
                if not verify_static_records(issuer_public, static,
                                             records[3].get(Tag.STATIC_SIGNATURE, b"")):
                    tvr = tvr.replace(cda_failed=True)
            except (LookupFailure, BadSignature):
                # ODA could not be completed; record it and let the action
                # codes decide, as fielded terminals do
                tvr = tvr.replace(cda_failed=True)
                card_public = None
        view["tvr"] = tvr

        chosen = self._choose_cvm_kernel2(cvm_list, amount, aip)
        if chosen is None:
            return self._decide(channel, view, "decline", "no_cvm_agreed")
        method, condition = chosen
        cvm_results = CVMResults(method, condition, CVMResult.Performed)
        if method in (CVMMethod.OnlinePIN, CVMMethod.PaperSignature):
            cvm_results, why = self._collect_cvm(channel, method, condition,
                                                 pin=pin, performed_by=performed_by,
                                                 view=view)
            if why:
                return self._decide(channel, view, "decline", why)
        elif method == CVMMethod.NoCVM:
            cvm_results = CVMResults(CVMMethod.NoCVM, condition, CVMResult.Performed)
        view["cvm_results"] = cvm_results

        want_offline = cfg.offline_capable and amount.value <= cfg.floor_limit
        requested_cid = CID.TC if want_offline else CID.ARQC
        want_cda = cfg.request_cda and aip.cda_supported

        cdol_env = DataElementMap({
            Tag.AMOUNT: amount, Tag.UN: un, Tag.CVM_RESULTS: cvm_results,
        })
        payload = build_dol_data(r2.get(Tag.CDOL1, DOL(())), cdol_env)
        payload.put(Tag.CID, requested_cid)
        payload.put(Tag.CDA_REQUESTED, 1 if want_cda else 0)
        resp = channel.exchange(Message("GENERATE_AC", payload))
        rp = resp.payload
        if rp.get(Tag.CID) == CID.AAC:
            return self._decide(channel, view, "decline", "card_declined")
        if Tag.AC not in rp:
            return self._decide(channel, view, "decline", "no_cryptogram")
        cid: CID = rp[Tag.CID]
        view.update(atc=rp[Tag.ATC], ac=rp[Tag.AC], iad=rp[Tag.IAD], cid=cid,
                    un_card=rp.get(Tag.UN_CARD))

        if want_cda:
            sdad = rp.get(Tag.SDAD)
            if sdad is None:
                return self._decide(channel, view, "decline", "cda_missing")
            if card_public is None:
                # asked for CDA but cannot check it: same bucket as broken ODA
                tvr = tvr.replace(cda_failed=True)
                view["tvr"] = tvr
            else:
                signed_view = DataElementMap({
                    Tag.UN_CARD: rp.get(Tag.UN_CARD, 0), Tag.UN: un,
                    Tag.AC: rp[Tag.AC], Tag.ATC: rp[Tag.ATC], Tag.IAD: rp[Tag.IAD],
                })
                if not verify_sdad(card_public, "cda", signed_view, sdad):
                    # a checkable-but-wrong dynamic signature is never survivable
                    return self._decide(channel, view, "decline", "cda_invalid")

        # action analysis: card (IAC) and terminal (TAC) both get a say
        denial_mask = iac.denial.to_int() | cfg.tac.denial.to_int()
        if tvr.to_int() & denial_mask:
            return self._decide(channel, view, "decline", "action_code_denial")

        if cid == CID.TC and want_offline:
            submit = self._clearing_payload(view, kernel=2)
            self.offline_batch.append((submit, channel.session))
            return self._decide(channel, view, "approve_offline", "offline_floor")
        if not cfg.online_capable:
            return self._decide(channel, view, "decline", "offline_only_terminal")
        return self._go_online(channel, view, kernel=2)

    def _choose_cvm_kernel2(self, cvm_list: CVMList, amount: Amount,
                            aip: AIP) -> tuple[CVMMethod, CVMCondition] | None:
        cfg = self.config
        above = amount.value > cfg.cvm_limit
        for entry in cvm_list.entries:
            if entry.condition == CVMCondition.IfAboveCvmLimit and not above:
                continue
            if entry.condition == CVMCondition.IfBelowCvmLimit and above:
                continue
            feasible = {
                CVMMethod.OnlinePIN: cfg.online_pin_supported,
                CVMMethod.PaperSignature: cfg.signature_supported,
                CVMMethod.NoCVM: not above,
                CVMMethod.CDCVM: aip.on_device_cvm_supported,
                CVMMethod.EncryptedOfflinePIN: False,  # not on this interface
            }[entry.method]
            if feasible:
                return entry.method, entry.condition
        if not above:
            return CVMMethod.NoCVM, CVMCondition.IfBelowCvmLimit
        return None

    # --- mag-stripe mode ----------------------------------------------------------

    def _magstripe_flow(self, channel: NfcChannel, amount: Amount, gpo: Message,
                        view: dict[str, Any], *, pin: str | None,
                        performed_by: str) -> dict[str, Any]:
        cfg = self.config
        view["mode"] = "ms"
        n_digits = gpo.payload.get(Tag.N_UN_DIGITS, 3)
        space = 10 ** n_digits
        un = (cfg.fixed_un % space if cfg.fixed_un is not None
              else self.rng.randrange(space))
        view["un"] = un

        records = self._read_records(channel, gpo.payload[Tag.AFL])
        r1 = records.get(1, DataElementMap())
        track2: Track2EquivalentData | None = r1.get(Tag.TRACK2)
        if track2 is None:
            return self._decide(channel, view, "decline", "no_track_data")
        view.update(pan=r1.get(Tag.PAN, track2.pan), expiry=track2.expiry,
                    track2=track2)

        if amount.value > cfg.cvm_limit:
            cvm_results, why = self._collect_cvm(
                channel, CVMMethod.PaperSignature, CVMCondition.IfAboveCvmLimit,
                pin=pin, performed_by=performed_by, view=view)
            if why:
                return self._decide(channel, view, "decline", why)
        else:
            cvm_results = CVMResults()
        view["cvm_results"] = cvm_results

        resp = channel.exchange(Message("GENERATE_AC",
                                        DataElementMap({Tag.UN: un})))
        if Tag.CVC3 not in resp.payload:
            return self._decide(channel, view, "decline", "no_dynamic_code")
        view.update(cvc3=resp.payload[Tag.CVC3], atc=resp.payload[Tag.ATC],
                    n_un_digits=n_digits)

        if not cfg.online_capable:
            return self._decide(channel, view, "decline", "offline_only_terminal")
        return self._go_online(channel, view, kernel=2)

    # --- authorization / clearing ---------------------------------------------------

    def _auth_payload(self, view: dict[str, Any], kernel: int) -> DataElementMap:
        cfg = self.config
        payload = DataElementMap({
            Tag.AMOUNT: view["amount"],
            Tag.MCC: cfg.mcc, Tag.MERCHANT_ID: cfg.merchant_id,
            Tag.TERMINAL_ID: cfg.terminal_id, Tag.KERNEL_ID: kernel,
            Tag.TX_TYPE: "purchase",
        })
        optional = {
            Tag.PAN: view.get("pan"), Tag.EXPIRY: view.get("expiry"),
            Tag.UN: view.get("un"), Tag.ATC: view.get("atc"),
            Tag.AC: view.get("ac"), Tag.CID: view.get("cid"),
            Tag.IAD: view.get("iad"), Tag.CVM_RESULTS: view.get("cvm_results"),
            Tag.CTQ: view.get("ctq"), Tag.TTQ: view.get("ttq"),
            Tag.AIP: view.get("aip"), Tag.AID: view.get("aid"),
            Tag.ENC_PIN: view.get("enc_pin"), Tag.CVC3: view.get("cvc3"),
            Tag.TRACK2: view.get("track2"),
            Tag.N_UN_DIGITS: view.get("n_un_digits"),
            Tag.UN_CARD: view.get("un_card"),
        }
        for tag, value in optional.items():
            if value is not None:
                payload.put(tag, value)
        return payload

    def _clearing_payload(self, view: dict[str, Any], kernel: int) -> Message:
        auth = self._auth_payload(view, kernel)
        payload = DataElementMap()
        keep = MESSAGES["CLEARING_SUBMIT"]
        for tag in auth:
            if tag in keep:
                payload.put(tag, auth.get(tag))
        payload.put(Tag.DECISION, "offline_approved")
        return Message("CLEARING_SUBMIT", payload)

    def _go_online(self, channel: NfcChannel, view: dict[str, Any],
                   kernel: int) -> dict[str, Any]:
        request = Message("AUTH_REQUEST", self._auth_payload(view, kernel))
        response = self.rails.authorize(request, session=channel.session)
        if response.payload[Tag.DECISION] == "approve":
            return self._decide(channel, view, "approve_online", "issuer_approved")
        return self._decide(channel, view, "decline",
                            "issuer_declined:" + response.payload.get(Tag.REASON, ""))

    def submit_clearing(self) -> list[str]:
        """End-of-day: push every offline approval to the payment rails."""
        outcomes = []
        for submit, session in self.offline_batch:
            response = self.rails.clear(submit, session=session)
            outcomes.append(response.payload[Tag.DECISION])
        self.offline_batch = []
        return outcomes

    # --- decisions ---------------------------------------------------------------

    def _decide(self, channel: NfcChannel | None, view: dict[str, Any],
                outcome: str, reason: str) -> dict[str, Any]:
        session = view.get("session")
        if channel is not None:
            session = channel.session
        trace = channel.trace if channel is not None else self.rails.trace
        data = dict(view)
        data.pop("enc_pin", None)
        data.pop("session", None)
        data.update(outcome=outcome, reason=reason,
                    terminal=self.config.name, mcc=self.config.mcc)
        trace.mark("decision", session=session, **data)
        return {"outcome": outcome, "reason": reason, "session": session,
                "view": view}
