"""Canonical byte encoding for wire objects.

Every registered dataclass is written as a one-byte tag, a u32 body length and
its fields in declaration order. Integers are signed 64-bit little-endian,
bytes and strings carry a u32 length prefix, optionals a presence byte and
tuples a u32 element count. Fields declared with ``metadata={"wire": False}``
are local annotations and never reach the wire.
"""
from __future__ import annotations

import dataclasses
import struct
import types
import typing
from typing import Any

_I64 = struct.Struct("<q")
_U32 = struct.Struct("<I")

_TAG_OF: dict[type, int] = {}
_CLASS_OF: dict[int, type] = {}
_SCHEMA: dict[type, tuple[tuple[str, Any], ...]] = {}


class DecodeError(ValueError):
    pass


def wire(tag: int):
    def register(cls: type) -> type:
        if tag in _CLASS_OF:
            raise ValueError(f"duplicate wire tag {tag}")
        _TAG_OF[cls] = tag
        _CLASS_OF[tag] = cls
        return cls

    return register


def tag_of(cls: type) -> int:
    return _TAG_OF[cls]


def _schema(cls: type) -> tuple[tuple[str, Any], ...]:
    schema = _SCHEMA.get(cls)
    if schema is None:
        hints = typing.get_type_hints(cls)
        schema = tuple(
            (f.name, hints[f.name])
            for f in dataclasses.fields(cls)
            if f.metadata.get("wire", True)
        )
        _SCHEMA[cls] = schema
    return schema


def _is_union(hint: Any) -> bool:
    origin = typing.get_origin(hint)
    return origin is typing.Union or origin is types.UnionType


def _encode_value(value: Any, hint: Any, out: bytearray) -> None:
    if _is_union(hint):
        args = typing.get_args(hint)
        if type(None) in args:
            if value is None:
                out.append(0)
                return
            out.append(1)
            rest = [a for a in args if a is not type(None)]
            _encode_value(value, rest[0] if len(rest) == 1 else typing.Union[tuple(rest)], out)
            return
        # union of wire classes: the object's own tag disambiguates
        out += encode(value)
        return
    if hint is bool:
        out.append(1 if value else 0)
    elif hint is int:
        out += _I64.pack(value)
    elif hint is bytes:
        out += _U32.pack(len(value))
        out += value
    elif hint is str:
        raw = value.encode("utf-8")
        out += _U32.pack(len(raw))
        out += raw
    elif typing.get_origin(hint) is tuple:
        (inner, _ellipsis) = typing.get_args(hint)
        out += _U32.pack(len(value))
        for item in value:
            _encode_value(item, inner, out)
    elif dataclasses.is_dataclass(hint):
        out += encode(value)
    else:
        raise TypeError(f"unsupported wire type {hint!r}")


def _encode_object(obj: Any, out: bytearray, skip: frozenset[str] = frozenset()) -> None:
    cls = type(obj)
    body = bytearray()
    for name, hint in _schema(cls):
        if name in skip:
            continue
        _encode_value(getattr(obj, name), hint, body)
    out.append(_TAG_OF[cls])
    out += _U32.pack(len(body))
    out += body


def encode(obj: Any) -> bytes:
    cached = obj.__dict__.get("_wire_bytes")
    if cached is not None:
        return cached
    out = bytearray()
    _encode_object(obj, out)
    data = bytes(out)
    obj.__dict__["_wire_bytes"] = data
    return data


def signable(obj: Any) -> bytes:
    """Encoding of ``obj`` without its ``sig`` field: the bytes its sender signs."""
    cached = obj.__dict__.get("_signable_bytes")
    if cached is not None:
        return cached
    out = bytearray()
    _encode_object(obj, out, frozenset({"sig"}))
    data = bytes(out)
    obj.__dict__["_signable_bytes"] = data
    return data


class _Reader:
    def __init__(self, data: bytes) -> None:
        self.data = data
        self.pos = 0

    def take(self, k: int) -> bytes:
        if k < 0 or self.pos + k > len(self.data):
            raise DecodeError("truncated input")
        chunk = self.data[self.pos : self.pos + k]
        self.pos += k
        return chunk

    def u8(self) -> int:
        return self.take(1)[0]

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]


def _decode_value(reader: _Reader, hint: Any) -> Any:
    if _is_union(hint):
        args = typing.get_args(hint)
        if type(None) in args:
            flag = reader.u8()
            if flag == 0:
                return None
            if flag != 1:
                raise DecodeError("bad optional flag")
            rest = [a for a in args if a is not type(None)]
            return _decode_value(reader, rest[0] if len(rest) == 1 else typing.Union[tuple(rest)])
        obj = _decode_object(reader)
        if not isinstance(obj, args):
            raise DecodeError(f"unexpected {type(obj).__name__}")
        return obj
    if hint is bool:
        flag = reader.u8()
        if flag > 1:
            raise DecodeError("bad bool")
        return flag == 1
    if hint is int:
        return _I64.unpack(reader.take(8))[0]
    if hint is bytes:
        return reader.take(reader.u32())
    if hint is str:
        try:
            return reader.take(reader.u32()).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DecodeError("bad utf-8") from exc
    if typing.get_origin(hint) is tuple:
        (inner, _ellipsis) = typing.get_args(hint)
        count = reader.u32()
        if count > len(reader.data):
            raise DecodeError("implausible element count")
        return tuple(_decode_value(reader, inner) for _ in range(count))
    if dataclasses.is_dataclass(hint):
        obj = _decode_object(reader)
        if not isinstance(obj, hint):
            raise DecodeError(f"expected {hint.__name__}, got {type(obj).__name__}")
        return obj
    raise TypeError(f"unsupported wire type {hint!r}")


def _decode_object(reader: _Reader) -> Any:
    tag = reader.u8()
    cls = _CLASS_OF.get(tag)
    if cls is None:
        raise DecodeError(f"unknown tag {tag}")
    length = reader.u32()
    end = reader.pos + length
    if end > len(reader.data):
        raise DecodeError("truncated object")
    sub = _Reader(reader.data[: end])
    sub.pos = reader.pos
    values = {name: _decode_value(sub, hint) for name, hint in _schema(cls)}
    if sub.pos != end:
        raise DecodeError(f"{cls.__name__}: {end - sub.pos} trailing bytes")
    reader.pos = end
    return cls(**values)


def decode(data: bytes) -> Any:
    reader = _Reader(bytes(data))
    obj = _decode_object(reader)
    if reader.pos != len(reader.data):
        raise DecodeError("trailing bytes after object")
    return obj
