from .codec import DecodeError, decode, encode, signable
from .config import (
    ConfigError,
    SystemConfig,
    aggregator_of,
    primary_of,
    quorums,
    replica_identity,
)
from .evidence import Share, Signature, ThresholdSig
from .messages import *  # noqa: F401,F403
from .validation import Validator, Verdict, validate

__all__ = [
    "ConfigError",
    "DecodeError",
    "Share",
    "Signature",
    "SystemConfig",
    "ThresholdSig",
    "Validator",
    "Verdict",
    "aggregator_of",
    "decode",
    "encode",
    "primary_of",
    "quorums",
    "replica_identity",
    "signable",
    "validate",
]
