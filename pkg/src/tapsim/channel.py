"""Channels, traces and the adversary.

Three channels exist: the contactless air gap between card and terminal
(``nfc``), the authorization leg between terminal and issuer (``acquirer``)
and the clearing leg (``payment``). Every exchanged message is logged with
the sender's view *and* the receiver's view, so a man-in-the-middle edit is
visible in the trace as a disagreement between the two.

The adversary is a hook container. Capabilities gate what the hooks may do:

* ``A1`` — own the NFC hop: eavesdrop, modify, inject, relay.
* ``A5`` — talk to the payment rails directly (submit authorizations or
  clearing records without an honest terminal).
* ``A8`` — physically look at the card (printed PAN, expiry, name, CSC).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Callable, Iterator, Protocol

from .elements import CodecError, DataElementMap, Tag, TagInfo, render_value

CAPABILITIES = frozenset({"A1", "A5", "A8"})

# Fixed message vocabulary and the tags each message may legally carry
# (union over both directions; construction-time typo guard).
_T = Tag
MESSAGES: dict[str, frozenset[TagInfo]] = {
    "SELECT": frozenset({_T.AID, _T.AID_LIST, _T.PDOL, _T.KERNEL_ID}),
    "GET_PROCESSING_OPTIONS": frozenset({
        _T.TTQ, _T.AMOUNT, _T.UN, _T.MCC, _T.MERCHANT_ID, _T.TERMINAL_ID, _T.TX_TYPE,
        _T.AIP, _T.AFL, _T.ATC, _T.CID, _T.AC, _T.IAD, _T.CTQ, _T.UN_CARD, _T.SDAD,
        _T.N_UN_DIGITS, _T.TRACK2, _T.PAN,
    }),
    "READ_RECORD": frozenset({
        _T.RECORD_NUMBER, _T.PAN, _T.EXPIRY, _T.CARDHOLDER_NAME, _T.TRACK1, _T.TRACK2,
        _T.CVM_LIST, _T.IAC, _T.CA_PK_INDEX, _T.ISSUER_CERT, _T.CARD_CERT,
        _T.STATIC_SIGNATURE, _T.CTQ, _T.AIP, _T.SERVICE_CODE, _T.CDOL1, _T.SDAD,
    }),
    "GENERATE_AC": frozenset({
        _T.AMOUNT, _T.UN, _T.CVM_RESULTS, _T.TX_TYPE, _T.CDA_REQUESTED, _T.ATC,
        _T.CID, _T.AC, _T.IAD, _T.SDAD, _T.UN_CARD, _T.CVC3, _T.TRACK2,
    }),
    "VERIFY": frozenset({_T.PIN_GUESS, _T.PIN_TRIES_REMAINING, _T.DECISION}),
    "AUTH_REQUEST": frozenset({
        _T.PAN, _T.EXPIRY, _T.AMOUNT, _T.UN, _T.ATC, _T.AC, _T.CID, _T.IAD,
        _T.CVM_RESULTS, _T.CTQ, _T.TTQ, _T.AIP, _T.ENC_PIN, _T.MCC, _T.MERCHANT_ID,
        _T.TERMINAL_ID, _T.AID, _T.TX_TYPE, _T.TRACK2, _T.CVC3, _T.N_UN_DIGITS,
        _T.KERNEL_ID, _T.SERVICE_CODE, _T.UN_CARD,
    }),
    "AUTH_RESPONSE": frozenset({_T.DECISION, _T.REASON, _T.PIN_TRIES_REMAINING}),
    "CLEARING_SUBMIT": frozenset({
        _T.PAN, _T.EXPIRY, _T.AMOUNT, _T.UN, _T.ATC, _T.AC, _T.CID, _T.IAD,
        _T.CVM_RESULTS, _T.CTQ, _T.TTQ, _T.AIP, _T.MCC, _T.MERCHANT_ID,
        _T.TERMINAL_ID, _T.AID, _T.TX_TYPE, _T.KERNEL_ID, _T.UN_CARD, _T.DECISION,
    }),
    "CLEARING_RESPONSE": frozenset({_T.DECISION, _T.REASON}),
    "MAGIC_BYTES": frozenset({_T.MAGIC}),
}

MARKER_KINDS = frozenset({
    "meta", "card_tx", "decision", "auth", "clearing", "cvm", "knowledge",
    "genuine_probe", "note",
})


class ChannelError(Exception):
    pass


@dataclass(frozen=True)
class Message:
    """A named protocol message with a typed payload."""

    name: str
    payload: DataElementMap = field(default_factory=DataElementMap)

    def __post_init__(self) -> None:
        allowed = MESSAGES.get(self.name)
        if allowed is None:
            raise ChannelError(f"unknown message name {self.name!r}")
        extra = self.payload.tags() - allowed
        if extra:
            names = ", ".join(sorted(t.name for t in extra))
            raise ChannelError(f"{self.name} payload may not carry: {names}")

    def render(self) -> dict[str, Any]:
        return {"name": self.name, "payload": self.payload.render()}

    def with_payload(self, **by_name: Any) -> "Message":
        """Copy with named payload elements replaced/added."""
        p = self.payload.copy()
        for name, value in by_name.items():
            p.put(Tag.by_name(name), value)
        return Message(self.name, p)

    def without(self, *names: str) -> "Message":
        keep = DataElementMap()
        drop = {Tag.by_name(n) for n in names}
        for tag in self.payload:
            if tag not in drop:
                keep.put(tag, self.payload.get(tag))
        return Message(self.name, keep)


def _render_any(value: Any) -> Any:
    if isinstance(value, Message):
        return value.render()
    if isinstance(value, DataElementMap):
        return value.render()
    if isinstance(value, (bytes, bytearray)):
        return bytes(value).hex()
    if isinstance(value, dict):
        return {k: _render_any(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, set, frozenset)):
        items = [_render_any(v) for v in value]
        if isinstance(value, (set, frozenset)):
            items.sort(key=repr)
        return items
    try:
        return render_value(None, value)  # type: ignore[arg-type]
    except Exception:
        return repr(value)


@dataclass
class TraceEvent:
    idx: int
    kind: str                      # "msg" or a marker kind
    session: int | None = None
    channel: str | None = None
    direction: str | None = None
    relay_active: bool = False
    status: str = "ok"
    sent: Message | None = None    # what the sender put on the wire
    received: Message | None = None  # what the receiver actually got
    data: dict[str, Any] = field(default_factory=dict)

    @property
    def tampered(self) -> bool:
        return (self.sent is not None and self.received is not None
                and self.sent.render() != self.received.render())

    def render(self) -> dict[str, Any]:
        out: dict[str, Any] = {"idx": self.idx, "kind": self.kind}
        if self.session is not None:
            out["session"] = self.session
        if self.kind == "msg":
            out.update({
                "channel": self.channel,
                "direction": self.direction,
                "relay": self.relay_active,
                "status": self.status,
                "sent": self.sent.render() if self.sent else None,
                "received": self.received.render() if self.received else None,
            })
        if self.data:
            out["data"] = _render_any(self.data)
        return out


class TransactionTrace:
    """Ordered log of everything that happened in one scenario run."""

    def __init__(self, meta: dict[str, Any] | None = None):
        self.meta: dict[str, Any] = dict(meta or {})
        self.events: list[TraceEvent] = []
        self._next_session = 1

    def new_session(self) -> int:
        sid = self._next_session
        self._next_session += 1
        return sid

    def log_msg(self, channel: str, session: int, direction: str, sent: Message,
                received: Message, relay_active: bool = False,
                status: str = "ok") -> TraceEvent:
        ev = TraceEvent(idx=len(self.events), kind="msg", session=session,
                        channel=channel, direction=direction,
                        relay_active=relay_active, status=status,
                        sent=sent, received=received)
        self.events.append(ev)
        return ev

    def mark(self, kind: str, session: int | None = None, **data: Any) -> TraceEvent:
        if kind not in MARKER_KINDS:
            raise ChannelError(f"unknown marker kind {kind!r}")
        ev = TraceEvent(idx=len(self.events), kind=kind, session=session, data=data)
        self.events.append(ev)
        return ev

    def msgs(self, channel: str | None = None, name: str | None = None,
             session: int | None = None) -> Iterator[TraceEvent]:
        for ev in self.events:
            if ev.kind != "msg":
                continue
            if channel is not None and ev.channel != channel:
                continue
            if name is not None and (ev.sent is None or ev.sent.name != name):
                continue
            if session is not None and ev.session != session:
                continue
            yield ev

    def markers(self, kind: str, session: int | None = None) -> list[TraceEvent]:
        return [ev for ev in self.events
                if ev.kind == kind and (session is None or ev.session == session)]

    def session_saw_relay(self, session: int) -> bool:
        return any(ev.relay_active for ev in self.msgs(session=session))

    def to_jsonl(self) -> str:
        lines = [json.dumps({"kind": "meta", **_render_any(self.meta)}, sort_keys=True)]
        lines.extend(json.dumps(ev.render(), sort_keys=True) for ev in self.events)
        return "\n".join(lines) + "\n"

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_jsonl())


# --- adversary ------------------------------------------------------------------

Hook = Callable[[Message, "Adversary"], Message]
Observer = Callable[[str, Message, "Adversary"], None]


class Adversary:
    """Capability-gated hook container for man-in-the-middle behavior."""

    def __init__(self, capabilities: frozenset[str] | set[str] | tuple[str, ...] = ("A1",),
                 trace: TransactionTrace | None = None):
        caps = frozenset(capabilities)
        unknown = caps - CAPABILITIES
        if unknown:
            raise ChannelError(f"unknown capabilities: {sorted(unknown)}")
        self.capabilities = caps
        self.trace = trace
        self.to_card_hooks: list[Hook] = []
        self.from_card_hooks: list[Hook] = []
        self.observers: list[Observer] = []
        self.knowledge: set[tuple[str, str]] = set()
        self.notes: dict[str, Any] = {}

    def can(self, cap: str) -> bool:
        return cap in self.capabilities

    def require(self, cap: str) -> None:
        if not self.can(cap):
            raise ChannelError(f"adversary lacks capability {cap}")

    def on_to_card(self, hook: Hook) -> None:
        self.to_card_hooks.append(hook)

    def on_from_card(self, hook: Hook) -> None:
        self.from_card_hooks.append(hook)

    def observe_with(self, observer: Observer) -> None:
        self.observers.append(observer)

    def learn(self, category: str, value: Any, session: int | None = None) -> None:
        if not isinstance(value, str):
            rendered = _render_any(value)
            value = rendered if isinstance(rendered, str) \
                else json.dumps(rendered, sort_keys=True)
        item = (category, value)
        if item in self.knowledge:
            return
        self.knowledge.add(item)
        if self.trace is not None:
            self.trace.mark("knowledge", session=session, category=item[0], value=item[1])

    def knows(self, category: str) -> set[str]:
        return {v for c, v in self.knowledge if c == category}

    def _apply(self, hooks: list[Hook], msg: Message) -> Message:
        for hook in hooks:
            msg = hook(msg, self)
        return msg

    def pass_to_card(self, msg: Message, session: int | None = None) -> Message:
        for obs in self.observers:
            obs("to_card", msg, self)
        return self._apply(self.to_card_hooks, msg)

    def pass_from_card(self, msg: Message, session: int | None = None) -> Message:
        for obs in self.observers:
            obs("from_card", msg, self)
        return self._apply(self.from_card_hooks, msg)


class CardFace(Protocol):
    def exchange(self, msg: Message) -> Message: ...


class NfcChannel:
    """One contactless hop. With an A1 adversary attached, every message in
    both directions flows through its hooks; the trace records both views."""

    def __init__(self, trace: TransactionTrace, card: CardFace,
                 session: int | None = None, adversary: Adversary | None = None,
                 relay_active: bool = False):
        self.trace = trace
        self.card = card
        self.session = trace.new_session() if session is None else session
        self.adversary = adversary
        self.relay_active = relay_active
        if adversary is not None and not adversary.can("A1"):
            raise ChannelError("attaching to the NFC hop requires A1")
        # real cards log what they themselves committed to; clones and
        # replayers have no bind() and leave no card-side record
        bind = getattr(card, "bind", None)
        if callable(bind):
            bind(trace, self.session)

    def exchange(self, msg: Message) -> Message:
        delivered = msg
        if self.adversary is not None:
            delivered = self.adversary.pass_to_card(msg, self.session)
        self.trace.log_msg("nfc", self.session, "to_card", sent=msg,
                           received=delivered, relay_active=self.relay_active)
        reply = self.card.exchange(delivered)
        returned = reply
        if self.adversary is not None:
            returned = self.adversary.pass_from_card(reply, self.session)
        self.trace.log_msg("nfc", self.session, "from_card", sent=reply,
                           received=returned, relay_active=self.relay_active)
        return returned


class RelayBridge:
    """Far leg of a relay: looks like a card, forwards to the real card over
    a second NFC hop that shares the near leg's session id."""

    def __init__(self, trace: TransactionTrace, real_card: CardFace,
                 adversary: Adversary, session: int):
        adversary.require("A1")
        self.trace = trace
        self.session = session
        self.far = NfcChannel(trace, real_card, session=session,
                              adversary=adversary, relay_active=True)
        self.hops = 0

    def exchange(self, msg: Message) -> Message:
        self.hops += 1
        return self.far.exchange(msg)


def make_relay(trace: TransactionTrace, real_card: CardFace,
               adversary: Adversary) -> tuple[RelayBridge, int]:
    """Build the far leg; run the near leg with the same session id and
    relay_active=True so the trace shows one logical session across both."""
    session = trace.new_session()
    return RelayBridge(trace, real_card, adversary, session), session


class Recorder:
    """Pass-through card wrapper that transcribes the dialogue for later replay."""

    def __init__(self, card: CardFace):
        self.card = card
        self.transcript: list[tuple[Message, Message]] = []

    def bind(self, trace: "TransactionTrace", session: int) -> None:
        bind = getattr(self.card, "bind", None)
        if callable(bind):
            bind(trace, session)

    def exchange(self, msg: Message) -> Message:
        reply = self.card.exchange(msg)
        self.transcript.append((msg, reply))
        return reply


class Replayer:
    """Answers from a recorded transcript; no card is present. Requests are
    matched by message name in recorded order, so a replay against a terminal
    that asks the same questions reproduces the old answers verbatim."""

    def __init__(self, transcript: list[tuple[Message, Message]]):
        self.remaining = list(transcript)

    def exchange(self, msg: Message) -> Message:
        for i, (req, resp) in enumerate(self.remaining):
            if req.name == msg.name:
                del self.remaining[i]
                return resp
        raise ChannelError(f"transcript has no reply for {msg.name}")


class PaymentRails:
    """Authorization and clearing legs. Adversary-driven submissions require
    A5 and are labeled as such in the trace."""

    def __init__(self, trace: TransactionTrace, issuer: Any):
        self.trace = trace
        self.issuer = issuer

    def authorize(self, request: Message, session: int,
                  submitted_by: str = "terminal",
                  adversary: Adversary | None = None) -> Message:
        if submitted_by != "terminal":
            if adversary is None:
                raise ChannelError("non-terminal submission needs an adversary")
            adversary.require("A5")
        response = self.issuer.handle_auth(request)
        self.trace.log_msg("acquirer", session, "to_issuer", sent=request,
                           received=request)
        self.trace.log_msg("acquirer", session, "from_issuer", sent=response,
                           received=response)
        self.trace.mark("auth", session=session, submitted_by=submitted_by,
                        decision=response.payload[Tag.DECISION],
                        reason=response.payload.get(Tag.REASON),
                        request=request)
        return response

    def clear(self, submit: Message, session: int,
              submitted_by: str = "terminal",
              adversary: Adversary | None = None) -> Message:
        if submitted_by != "terminal":
            if adversary is None:
                raise ChannelError("non-terminal submission needs an adversary")
            adversary.require("A5")
        response = self.issuer.handle_clearing(submit)
        self.trace.log_msg("payment", session, "to_issuer", sent=submit,
                           received=submit)
        self.trace.log_msg("payment", session, "from_issuer", sent=response,
                           received=response)
        self.trace.mark("clearing", session=session, submitted_by=submitted_by,
                        decision=response.payload[Tag.DECISION],
                        reason=response.payload.get(Tag.REASON),
                        request=submit)
        return response


def visual_read(adversary: Adversary, face: dict[str, str],
                session: int | None = None) -> None:
    """A8: read what is printed on the card."""
    adversary.require("A8")
    for category in ("PAN", "EXPIRY", "CARDHOLDER_NAME", "CSC"):
        if category in face:
            adversary.learn(category, face[category], session=session)
