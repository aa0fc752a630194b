from __future__ import annotations

import pytest

from poe.auth import (
    AuthError,
    InsufficientShares,
    InvalidShare,
    SimulatedAuth,
    UnknownIdentity,
    prepare_scheme,
    recovery_scheme,
)
from poe.core.config import SystemConfig

CFG = SystemConfig(n=4, f=1)


@pytest.fixture
def auth():
    return SimulatedAuth(7, CFG, ["c0"])


def test_sign_and_verify(auth):
    sig = auth.sign("r1", b"hello")
    assert auth.verify(sig, "r1", b"hello")
    assert not auth.verify(sig, "r1", b"hellO")
    assert not auth.verify(sig, "r2", b"hello")


def test_unknown_identity(auth):
    with pytest.raises(UnknownIdentity):
        auth.signer("mallory")
    assert not auth.public.verify(auth.sign("c0", b"x"), "mallory", b"x")


def test_public_facade_cannot_sign(auth):
    assert not hasattr(auth.public, "sign")
    assert not hasattr(auth.public, "threshold_share")


def test_thresholds_follow_quorums(auth):
    assert auth.public.thresholds == {prepare_scheme(CFG): 3, recovery_scheme(CFG): 2}


def test_threshold_combine_and_verify(auth):
    scheme = prepare_scheme(CFG)
    shares = [auth.threshold_share(scheme, f"r{i}", b"stmt") for i in range(3)]
    sig = auth.threshold_combine(scheme, shares)
    assert sig.signers == ("r0", "r1", "r2")
    assert auth.threshold_verify(scheme, sig, b"stmt")
    assert not auth.threshold_verify(scheme, sig, b"other")
    assert not auth.threshold_verify(recovery_scheme(CFG), sig, b"stmt")


def test_combined_signature_independent_of_signer_set(auth):
    scheme = prepare_scheme(CFG)
    a = auth.threshold_combine(scheme, [auth.threshold_share(scheme, f"r{i}", b"s") for i in (0, 1, 2)])
    b = auth.threshold_combine(scheme, [auth.threshold_share(scheme, f"r{i}", b"s") for i in (1, 2, 3)])
    assert a == b


def test_duplicate_shares_do_not_reach_threshold(auth):
    scheme = prepare_scheme(CFG)
    share = auth.threshold_share(scheme, "r0", b"s")
    with pytest.raises(InsufficientShares):
        auth.threshold_combine(scheme, [share, share, share])


def test_mixed_statements_rejected(auth):
    scheme = recovery_scheme(CFG)
    with pytest.raises(InvalidShare):
        auth.threshold_combine(scheme, [auth.threshold_share(scheme, "r0", b"a"),
                                        auth.threshold_share(scheme, "r1", b"b")])


def test_clients_hold_no_threshold_keys(auth):
    with pytest.raises(UnknownIdentity):
        auth.threshold_share(prepare_scheme(CFG), "c0", b"s")
    with pytest.raises(AuthError):
        auth.threshold_share("nope", "r0", b"s")


def test_keys_depend_on_seed():
    a, b = SimulatedAuth(1, CFG), SimulatedAuth(2, CFG)
    assert a.sign("r0", b"x") != b.sign("r0", b"x")
    assert SimulatedAuth(1, CFG).sign("r0", b"x") == a.sign("r0", b"x")
