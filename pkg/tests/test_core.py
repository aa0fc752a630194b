from __future__ import annotations

import pytest

from poe.auth import SimulatedAuth
from poe.core.codec import DecodeError, decode, encode, signable
from poe.core.config import ConfigError, SystemConfig, aggregator_of, primary_of, quorums
from poe.core.evidence import Signature
from poe.core.messages import (
    CheckCommit,
    PreparedCertificate,
    QuorumCC,
    QuorumError,
    Vote,
    window_entries,
)
from poe.core.validation import BAD_ARITY, BAD_QUORUM, BAD_SIGNATURE, Validator


class TestConfig:
    def test_quorums(self):
        assert quorums(SystemConfig(n=4, f=1)) == (3, 2)
        assert quorums(SystemConfig(n=7, f=2)) == (5, 3)
        assert quorums(SystemConfig(n=10, f=2)) == (8, 3)

    @pytest.mark.parametrize("n, f", [(3, 1), (6, 2), (4, 4)])
    def test_rejects_n_at_most_3f(self, n, f):
        with pytest.raises(ConfigError):
            SystemConfig(n=n, f=f)

    def test_roles_rotate(self):
        cfg = SystemConfig(n=4, f=1)
        assert [primary_of(v, cfg) for v in range(6)] == [0, 1, 2, 3, 0, 1]
        assert [aggregator_of(r, cfg) for r in range(1, 6)] == [1, 2, 3, 0, 1]

    def test_delta_table(self):
        cfg = SystemConfig(n=4, f=1, delta_initial=(7, 3, 5, 1))
        assert [cfg.delta_of(r) for r in range(4)] == [7, 3, 5, 1]
        with pytest.raises(ConfigError):
            SystemConfig(n=4, f=1, delta_initial=(1, 2))
        with pytest.raises(ConfigError):
            SystemConfig(n=4, f=1, delta_initial=0)

    def test_modes(self):
        assert SystemConfig(n=4, f=1).carries_requests
        assert not SystemConfig(n=4, f=1, digest_mode=True).carries_requests
        assert not SystemConfig(n=4, f=1, linear_mode=True).carries_requests


class TestCodec:
    def test_round_trip(self, deployment):
        req = deployment.request()
        prop = deployment.propose(req)
        assert decode(encode(prop)) == prop
        assert decode(encode(req)) == req

    def test_signable_excludes_signature(self, deployment):
        req = deployment.request()
        forged = type(req)(req.client_id, req.seq, req.payload, Signature("c0", b"x" * 32))
        assert signable(forged) == signable(req)
        assert encode(forged) != encode(req)

    @pytest.mark.parametrize("data", [b"", b"\xff", b"\x1f\x00\x00\x00\x00", b"\x1f\x05\x00\x00\x00ab"])
    def test_truncated_or_unknown_input(self, data):
        with pytest.raises(DecodeError):
            decode(data)

    def test_trailing_bytes_rejected(self, deployment):
        with pytest.raises(DecodeError):
            decode(encode(deployment.request()) + b"\x00")


class TestCertificates:
    def test_prepared_certificate_needs_distinct_quorum(self, deployment):
        prop = deployment.propose(deployment.request()).proposal
        vote = Vote(1, Signature("r1", b"s"))
        with pytest.raises(QuorumError):
            PreparedCertificate.from_votes(prop, [vote, vote, vote], 3)
        pc = PreparedCertificate.from_votes(prop, [Vote(r, Signature(f"r{r}", b"s")) for r in (2, 0, 1)], 3)
        assert [v.signer for v in pc.votes] == [0, 1, 2]

    def test_quorum_cc_rejects_mixed_proposals(self, deployment):
        a = deployment.propose(deployment.request(b"SET a 1")).proposal
        b = deployment.propose(deployment.request(b"SET b 2", seq=2)).proposal
        ccs = [CheckCommit(r, a, None, Signature(f"r{r}", b"")) for r in range(2)]
        ccs.append(CheckCommit(2, b, None, Signature("r2", b"")))
        with pytest.raises(QuorumError):
            QuorumCC.from_check_commits(a, ccs, 3)

    def test_window_entries_pad_with_zero_digest(self):
        entries = window_entries(2, 4, {1: b"\x01" * 32, 2: b"\x02" * 32})
        assert [r for r, _ in entries] == [-1, 0, 1, 2]
        assert entries[0][1] == bytes(32)


class TestValidation:
    def test_accepts_well_formed(self, deployment):
        msg = deployment.propose(deployment.request())
        assert deployment.validator.validate(msg)

    def test_rejects_forged_signature(self, deployment):
        msg = deployment.propose(deployment.request())
        forged = type(msg)(msg.sender, msg.proposal, msg.request, Signature("r0", b"\x00" * 32))
        verdict = deployment.validator.validate(forged)
        assert not verdict and verdict.reason == BAD_SIGNATURE

    def test_rejects_foreign_identity(self, deployment):
        msg = deployment.propose(deployment.request())
        r1 = deployment.replicas[1]
        relabel = r1._make(type(msg), sender=0, proposal=msg.proposal, request=msg.request)
        assert not deployment.validator.validate(relabel)

    def test_rejects_undersized_certificate(self, deployment):
        prop = deployment.propose(deployment.request()).proposal
        pc = PreparedCertificate(prop, (Vote(0, Signature("r0", b"")),), None)
        verdict = deployment.validator.check_pc(pc)
        assert not verdict and verdict.reason in (BAD_QUORUM, BAD_SIGNATURE)

    def test_undecodable_bytes(self, deployment):
        verdict = deployment.validator.validate(b"\x00garbage")
        assert not verdict and verdict.reason == BAD_ARITY

    def test_other_key_setup_rejects(self, deployment):
        msg = deployment.propose(deployment.request())
        other = SimulatedAuth(1, deployment.cfg, ["c0"])
        verdict = Validator(deployment.cfg, other.public).validate(msg)
        assert not verdict and verdict.reason == BAD_SIGNATURE
