"""Simulated authentication provider.

Keys are derived from (seed, identity) and never leave the provider. Replicas
and clients only receive a :class:`Signer` bound to their own identity plus the
signing-free :class:`PublicAuth` view, so a Byzantine participant has no call
path that yields evidence for someone else.
"""
from __future__ import annotations

import hashlib
import hmac
import threading
from typing import Iterable

from .core.config import SystemConfig, quorums
from .core.evidence import Share, Signature, ThresholdSig

DIGEST_SIZE = 32


class AuthError(Exception):
    pass


class UnknownIdentity(AuthError):
    def __init__(self, identity: str) -> None:
        super().__init__(f"unknown identity {identity!r}")
        self.identity = identity


class InsufficientShares(AuthError):
    def __init__(self, got: int, need: int) -> None:
        super().__init__(f"insufficient shares: got {got}, need {need}")
        self.got = got
        self.need = need


class InvalidShare(AuthError):
    def __init__(self, signer: str) -> None:
        super().__init__(f"invalid share from {signer!r}")
        self.signer = signer


class DigestCollision(AuthError):
    pass


def prepare_scheme(config: SystemConfig) -> str:
    return f"{config.n}:{config.n - config.f}"


def recovery_scheme(config: SystemConfig) -> str:
    return f"{config.n}:{config.f + 1}"


def _hmac(key: bytes, data: bytes) -> bytes:
    return hmac.new(key, data, hashlib.sha256).digest()


class SimulatedAuth:
    def __init__(self, seed: int, config: SystemConfig, identities: Iterable[str] = ()) -> None:
        self._seed = int(seed).to_bytes(16, "little", signed=True)
        self._keys: dict[str, bytes] = {}
        self._digests: dict[bytes, bytes] = {}
        self._lock = threading.Lock()
        nf, f1 = quorums(config)
        self.replicas = tuple(f"r{i}" for i in range(config.n))
        self.thresholds = {prepare_scheme(config): nf, recovery_scheme(config): f1}
        self._scheme_keys = {
            scheme: hashlib.sha256(b"scheme|" + self._seed + scheme.encode()).digest()
            for scheme in self.thresholds
        }
        for identity in self.replicas:
            self.register(identity)
        for identity in identities:
            self.register(identity)
        self.public = PublicAuth(self)

    def register(self, identity: str) -> None:
        if identity not in self._keys:
            self._keys[identity] = hashlib.sha256(b"key|" + self._seed + identity.encode()).digest()

    def _key(self, identity: str) -> bytes:
        try:
            return self._keys[identity]
        except KeyError:
            raise UnknownIdentity(identity) from None

    def signer(self, identity: str) -> "Signer":
        self._key(identity)
        return Signer(self, identity)

    def sign(self, identity: str, data: bytes) -> Signature:
        return Signature(identity, _hmac(self._key(identity), data))

    def verify(self, evidence: Signature, identity: str, data: bytes) -> bool:
        key = self._keys.get(identity)
        if key is None or not isinstance(evidence, Signature) or evidence.identity != identity:
            return False
        return hmac.compare_digest(evidence.value, _hmac(key, data))

    def threshold_share(self, scheme: str, identity: str, data: bytes) -> Share:
        if scheme not in self.thresholds:
            raise AuthError(f"unknown scheme {scheme!r}")
        if identity not in self.replicas:
            raise UnknownIdentity(identity)
        d = hashlib.sha256(data).digest()
        return Share(scheme, identity, d, _hmac(self._key(identity), scheme.encode() + d))

    def _share_valid(self, share: Share) -> bool:
        key = self._keys.get(share.signer)
        if key is None or share.signer not in self.replicas:
            return False
        return hmac.compare_digest(share.value, _hmac(key, share.scheme.encode() + share.msg_digest))

    def threshold_combine(self, scheme: str, shares: Iterable[Share]) -> ThresholdSig:
        need = self.thresholds.get(scheme)
        if need is None:
            raise AuthError(f"unknown scheme {scheme!r}")
        shares = list(shares)
        target: bytes | None = None
        signers: set[str] = set()
        for share in shares:
            if share.scheme != scheme or not self._share_valid(share):
                raise InvalidShare(share.signer)
            if target is None:
                target = share.msg_digest
            elif share.msg_digest != target:
                raise InvalidShare(share.signer)
            signers.add(share.signer)
        if target is None or len(signers) < need:
            raise InsufficientShares(len(signers), need)
        return ThresholdSig(scheme, _hmac(self._scheme_keys[scheme], target), tuple(sorted(signers)))

    def threshold_verify(self, scheme: str, sig: ThresholdSig, data: bytes) -> bool:
        key = self._scheme_keys.get(scheme)
        if key is None or not isinstance(sig, ThresholdSig) or sig.scheme != scheme:
            return False
        return hmac.compare_digest(sig.value, _hmac(key, hashlib.sha256(data).digest()))

    def share_valid_for(self, share: Share, scheme: str, data: bytes) -> bool:
        return (
            share.scheme == scheme
            and share.msg_digest == hashlib.sha256(data).digest()
            and self._share_valid(share)
        )

    def digest(self, data: bytes) -> bytes:
        value = hashlib.sha256(data).digest()
        with self._lock:
            seen = self._digests.setdefault(value, data)
        if seen != data:
            raise DigestCollision(value.hex())
        return value


class PublicAuth:
    """Verification-only facade handed to protocol participants."""

    __slots__ = ("_provider",)

    def __init__(self, provider: SimulatedAuth) -> None:
        self._provider = provider

    @property
    def thresholds(self) -> dict[str, int]:
        return dict(self._provider.thresholds)

    def verify(self, evidence: Signature, identity: str, data: bytes) -> bool:
        return self._provider.verify(evidence, identity, data)

    def threshold_combine(self, scheme: str, shares: Iterable[Share]) -> ThresholdSig:
        return self._provider.threshold_combine(scheme, shares)

    def threshold_verify(self, scheme: str, sig: ThresholdSig, data: bytes) -> bool:
        return self._provider.threshold_verify(scheme, sig, data)

    def share_valid_for(self, share: Share, scheme: str, data: bytes) -> bool:
        return self._provider.share_valid_for(share, scheme, data)

    def digest(self, data: bytes) -> bytes:
        return self._provider.digest(data)


class Signer:
    """Signing capability for exactly one identity."""

    __slots__ = ("_provider", "_identity")

    def __init__(self, provider: SimulatedAuth, identity: str) -> None:
        self._provider = provider
        self._identity = identity

    @property
    def identity(self) -> str:
        return self._identity

    def sign(self, data: bytes) -> Signature:
        return self._provider.sign(self._identity, data)

    def share(self, scheme: str, data: bytes) -> Share:
        return self._provider.threshold_share(scheme, self._identity, data)
