"""Allowlist access passes and signed request/response envelopes with replay protection.

The signature primitive is injected. ``ToyScheme`` is deterministic and trivially
forgeable, meant for tests only; ``Ed25519Scheme`` wraps the ``cryptography``
package. Signed material is a length-prefixed concatenation of fields in
declaration order: each field is a 4-byte big-endian length followed by its
bytes, timestamps are IEEE-754 doubles in big-endian order.
"""
from __future__ import annotations

import enum
import hashlib
import json
import os
import struct
import threading
from dataclasses import dataclass
from typing import Callable, Iterable, Protocol, Sequence

DEFAULT_WINDOW = 60.0
MIN_NONCE = 16


class IdentityRejected(Exception):
    pass


class NotAllowlisted(Exception):
    pass


class Malformed(ValueError):
    pass


class Reason(str, enum.Enum):
    MALFORMED = "Malformed"
    TOKEN_INVALID = "TokenInvalid"
    TOKEN_EXPIRED = "TokenExpired"
    BAD_SIGNATURE = "BadSignature"
    CLOCK_SKEW = "ClockSkew"
    NONCE_REPLAYED = "NonceReplayed"
    WRONG_RECIPIENT = "WrongRecipient"
    NONCE_MISMATCH = "NonceMismatch"
    SENDER_MISMATCH = "SenderMismatch"


@dataclass(frozen=True)
class Accept:
    ok = True


@dataclass(frozen=True)
class Reject:
    reason: Reason
    ok = False


Verdict = Accept | Reject


# -- signature schemes ------------------------------------------------------------

@dataclass(frozen=True)
class KeyPair:
    private: bytes
    public: bytes


class SignatureScheme(Protocol):
    def generate(self, seed: bytes | None = None) -> KeyPair: ...
    def sign(self, private: bytes, message: bytes) -> bytes: ...
    def verify(self, public: bytes, message: bytes, signature: bytes) -> bool: ...


class ToyScheme:
    """Hash-based stand-in: the signature is H(public || message). Not secure."""

    def generate(self, seed: bytes | None = None) -> KeyPair:
        secret = hashlib.sha256(b"toy-secret" + (seed if seed is not None else os.urandom(32))).digest()
        return KeyPair(secret, self._public(secret))

    @staticmethod
    def _public(private: bytes) -> bytes:
        return hashlib.sha256(b"toy-public" + private).digest()

    def sign(self, private: bytes, message: bytes) -> bytes:
        return hashlib.sha256(self._public(private) + message).digest()

    def verify(self, public: bytes, message: bytes, signature: bytes) -> bool:
        return hashlib.sha256(public + message).digest() == signature


class Ed25519Scheme:
    def generate(self, seed: bytes | None = None) -> KeyPair:
        from cryptography.hazmat.primitives import serialization
        from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey

        if seed is None:
            key = Ed25519PrivateKey.generate()
        else:
            key = Ed25519PrivateKey.from_private_bytes(hashlib.sha256(seed).digest())
        priv = key.private_bytes(
            serialization.Encoding.Raw, serialization.PrivateFormat.Raw, serialization.NoEncryption()
        )
        pub = key.public_key().public_bytes(serialization.Encoding.Raw, serialization.PublicFormat.Raw)
        return KeyPair(priv, pub)

    def sign(self, private: bytes, message: bytes) -> bytes:
        from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey

        return Ed25519PrivateKey.from_private_bytes(private).sign(message)

    def verify(self, public: bytes, message: bytes, signature: bytes) -> bool:
        from cryptography.exceptions import InvalidSignature
        from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PublicKey

        try:
            Ed25519PublicKey.from_public_bytes(public).verify(signature, message)
        except (InvalidSignature, ValueError):
            return False
        return True


# -- canonical encoding -----------------------------------------------------------

def _ts(value: float) -> bytes:
    return struct.pack(">d", float(value))


def encode_fields(fields: Iterable[bytes]) -> bytes:
    out = bytearray()
    for f in fields:
        out += struct.pack(">I", len(f))
        out += f
    return bytes(out)


def decode_fields(data: bytes, count: int) -> list[bytes]:
    """Inverse of ``encode_fields``; the input must hold exactly ``count`` fields."""
    out, pos = [], 0
    for _ in range(count):
        if pos + 4 > len(data):
            raise Malformed("truncated length prefix")
        (size,) = struct.unpack_from(">I", data, pos)
        pos += 4
        if pos + size > len(data):
            raise Malformed("field overruns buffer")
        out.append(bytes(data[pos:pos + size]))
        pos += size
    if pos != len(data):
        raise Malformed("trailing bytes")
    return out


def _unts(raw: bytes) -> float:
    if len(raw) != 8:
        raise Malformed("timestamp must be 8 bytes")
    return struct.unpack(">d", raw)[0]


@dataclass(frozen=True)
class AccessToken:
    username: str
    public_key: bytes
    expiry: float
    signature: bytes

    def signed_material(self) -> bytes:
        return encode_fields([self.username.encode(), self.public_key, _ts(self.expiry)])

    def encode(self) -> bytes:
        return encode_fields([self.username.encode(), self.public_key, _ts(self.expiry), self.signature])

    @classmethod
    def decode(cls, data: bytes) -> "AccessToken":
        user, pub, exp, sig = decode_fields(data, 4)
        try:
            name = user.decode()
        except UnicodeDecodeError as exc:
            raise Malformed("username is not utf-8") from exc
        return cls(name, pub, _unts(exp), sig)


@dataclass(frozen=True)
class RequestEnvelope:
    token: AccessToken
    recipient: bytes
    timestamp: float
    nonce: bytes
    payload: bytes
    signature: bytes

    def signed_material(self) -> bytes:
        return encode_fields([self.token.encode(), self.recipient, _ts(self.timestamp), self.nonce, self.payload])

    def encode(self) -> bytes:
        return encode_fields(
            [self.token.encode(), self.recipient, _ts(self.timestamp), self.nonce, self.payload, self.signature]
        )

    @classmethod
    def decode(cls, data: bytes) -> "RequestEnvelope":
        tok, rcpt, ts, nonce, payload, sig = decode_fields(data, 6)
        return cls(AccessToken.decode(tok), rcpt, _unts(ts), nonce, payload, sig)


@dataclass(frozen=True)
class ResponseEnvelope:
    token: AccessToken
    nonce: bytes
    payload: bytes
    signature: bytes

    def signed_material(self) -> bytes:
        return encode_fields([self.token.encode(), self.nonce, self.payload])

    def encode(self) -> bytes:
        return encode_fields([self.token.encode(), self.nonce, self.payload, self.signature])

    @classmethod
    def decode(cls, data: bytes) -> "ResponseEnvelope":
        tok, nonce, payload, sig = decode_fields(data, 4)
        return cls(AccessToken.decode(tok), nonce, payload, sig)


def debug_json(envelope) -> str:
    """Readable rendering with bytes as hex; never parsed back."""

    def render(obj):
        if isinstance(obj, bytes):
            return obj.hex()
        if isinstance(obj, (AccessToken, RequestEnvelope, ResponseEnvelope)):
            return {k: render(v) for k, v in obj.__dict__.items()}
        return obj

    return json.dumps(render(envelope), sort_keys=True, indent=2)


# -- issuing and signing --------------------------------------------------------------

@dataclass(frozen=True)
class AccessPass:
    token: AccessToken
    bootstrap: tuple[str, ...]


def issue_pass(
    authority: KeyPair,
    allowlist: Iterable[str],
    username: str,
    peer_public_key: bytes,
    ttl: float,
    now: float,
    confirm_identity: Callable[[str], bool] = lambda _user: True,
    scheme: SignatureScheme | None = None,
    bootstrap: Sequence[str] = (),
) -> AccessPass:
    scheme = scheme or ToyScheme()
    if not confirm_identity(username):
        raise IdentityRejected(username)
    if username not in set(allowlist):
        raise NotAllowlisted(username)
    unsigned = AccessToken(username, peer_public_key, now + ttl, b"")
    sig = scheme.sign(authority.private, unsigned.signed_material())
    return AccessPass(AccessToken(username, peer_public_key, now + ttl, sig), tuple(bootstrap))


def make_request(
    sender: KeyPair,
    token: AccessToken,
    recipient: bytes,
    payload: bytes,
    now: float,
    scheme: SignatureScheme | None = None,
    nonce: bytes | None = None,
) -> RequestEnvelope:
    scheme = scheme or ToyScheme()
    nonce = os.urandom(MIN_NONCE) if nonce is None else nonce
    if len(nonce) < MIN_NONCE:
        raise ValueError(f"nonce must be at least {MIN_NONCE} bytes")
    draft = RequestEnvelope(token, recipient, now, nonce, payload, b"")
    return RequestEnvelope(token, recipient, now, nonce, payload, scheme.sign(sender.private, draft.signed_material()))


def make_response(
    responder: KeyPair, token: AccessToken, request_nonce: bytes, payload: bytes, scheme: SignatureScheme | None = None
) -> ResponseEnvelope:
    scheme = scheme or ToyScheme()
    draft = ResponseEnvelope(token, request_nonce, payload, b"")
    return ResponseEnvelope(token, request_nonce, payload, scheme.sign(responder.private, draft.signed_material()))


# -- validation -------------------------------------------------------------------

class NonceStore:
    """Nonces accepted within the last ``2 * window`` seconds."""

    def __init__(self, window: float = DEFAULT_WINDOW):
        self.window = window
        self.lock = threading.Lock()
        self._seen: dict[bytes, float] = {}

    def prune(self, now: float) -> None:
        horizon = now - 2 * self.window
        for nonce in [k for k, t in self._seen.items() if t < horizon]:
            del self._seen[nonce]

    def __len__(self) -> int:
        return len(self._seen)

    def __contains__(self, nonce: bytes) -> bool:
        return nonce in self._seen


def _token_verdict(token: AccessToken, authority_public: bytes, now: float, scheme: SignatureScheme) -> Reject | None:
    if not scheme.verify(authority_public, token.signed_material(), token.signature):
        return Reject(Reason.TOKEN_INVALID)
    if now > token.expiry:
        return Reject(Reason.TOKEN_EXPIRED)
    return None


def validate_request(
    envelope: RequestEnvelope | bytes,
    me: KeyPair,
    authority_public: bytes,
    store: NonceStore,
    now: float,
    scheme: SignatureScheme | None = None,
) -> Verdict:
    """Check, in order: token, request signature, clock skew, replay, recipient.

    The nonce is recorded only when the request is accepted; the replay check
    and the insert happen under the store's lock.
    """
    scheme = scheme or ToyScheme()
    if isinstance(envelope, (bytes, bytearray)):
        try:
            envelope = RequestEnvelope.decode(bytes(envelope))
        except Malformed:
            return Reject(Reason.MALFORMED)
    bad = _token_verdict(envelope.token, authority_public, now, scheme)
    if bad:
        return bad
    if not scheme.verify(envelope.token.public_key, envelope.signed_material(), envelope.signature):
        return Reject(Reason.BAD_SIGNATURE)
    if not abs(envelope.timestamp - now) <= store.window:
        return Reject(Reason.CLOCK_SKEW)
    if len(envelope.nonce) < MIN_NONCE:
        return Reject(Reason.MALFORMED)
    with store.lock:
        store.prune(now)
        if envelope.nonce in store._seen:
            return Reject(Reason.NONCE_REPLAYED)
        if envelope.recipient != me.public:
            return Reject(Reason.WRONG_RECIPIENT)
        store._seen[envelope.nonce] = now
    return Accept()


def validate_response(
    envelope: ResponseEnvelope | bytes,
    expected_nonce: bytes,
    authority_public: bytes,
    now: float,
    expected_sender: bytes | None = None,
    scheme: SignatureScheme | None = None,
) -> Verdict:
    scheme = scheme or ToyScheme()
    if isinstance(envelope, (bytes, bytearray)):
        try:
            envelope = ResponseEnvelope.decode(bytes(envelope))
        except Malformed:
            return Reject(Reason.MALFORMED)
    bad = _token_verdict(envelope.token, authority_public, now, scheme)
    if bad:
        return bad
    if not scheme.verify(envelope.token.public_key, envelope.signed_material(), envelope.signature):
        return Reject(Reason.BAD_SIGNATURE)
    if envelope.nonce != expected_nonce:
        return Reject(Reason.NONCE_MISMATCH)
    if expected_sender is not None and envelope.token.public_key != expected_sender:
        return Reject(Reason.SENDER_MISMATCH)
    return Accept()
