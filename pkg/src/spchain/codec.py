"""Canonical binary encoding.

Every encodable class declares ``CODEC``: an ordered tuple of
``(field_name, kind)`` pairs.  Integers are big-endian fixed width, byte
strings of fixed size are written raw, variable byte strings and lists carry
a length prefix.  Field order is the declaration order, so the encoding is
stable across runs and platforms.

Kinds::

    "u8" "u16" "u32" "u64" "bool"     fixed-width unsigned integers
    "b20" "b32"                        fixed-size raw bytes
    "var"                              u16 length + bytes
    ("list", kind)                     u32 count + items
    ("tuple", (kind, kind, ...))       fixed-arity tuple, no prefix
    SomeClass                          nested encodable value

A class may instead provide ``_encode_into(self, out)`` and
``_decode_from(cls, reader)`` for layouts the table cannot express.
"""
from __future__ import annotations

import struct
from typing import Any

_INT_FORMATS = {"u8": ">B", "u16": ">H", "u32": ">I", "u64": ">Q"}
_STRUCTS = {k: struct.Struct(v) for k, v in _INT_FORMATS.items()}
_FIXED = {"b20": 20, "b32": 32}


class DecodeError(ValueError):
    pass


class Reader:
    __slots__ = ("data", "pos")

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        end = self.pos + n
        if end > len(self.data):
            raise DecodeError("truncated input")
        chunk = self.data[self.pos:end]
        self.pos = end
        return chunk

    def done(self) -> bool:
        return self.pos == len(self.data)


def write_value(out: bytearray, kind: Any, value: Any) -> None:
    if isinstance(kind, str):
        st = _STRUCTS.get(kind)
        if st is not None:
            out += st.pack(int(value))
        elif kind == "bool":
            out.append(1 if value else 0)
        elif kind in _FIXED:
            if len(value) != _FIXED[kind]:
                raise ValueError(f"expected {_FIXED[kind]} bytes, got {len(value)}")
            out += value
        elif kind == "var":
            out += _STRUCTS["u16"].pack(len(value))
            out += value
        else:
            raise TypeError(f"unknown codec kind {kind!r}")
    elif isinstance(kind, tuple):
        tag, inner = kind
        if tag == "list":
            out += _STRUCTS["u32"].pack(len(value))
            for item in value:
                write_value(out, inner, item)
        elif tag == "tuple":
            for k, item in zip(inner, value, strict=True):
                write_value(out, k, item)
        else:
            raise TypeError(f"unknown composite kind {tag!r}")
    else:
        encode_into(out, value)


def read_value(reader: Reader, kind: Any) -> Any:
    if isinstance(kind, str):
        st = _STRUCTS.get(kind)
        if st is not None:
            return st.unpack(reader.take(st.size))[0]
        if kind == "bool":
            b = reader.take(1)[0]
            if b > 1:
                raise DecodeError("bad bool byte")
            return bool(b)
        if kind in _FIXED:
            return reader.take(_FIXED[kind])
        if kind == "var":
            n = _STRUCTS["u16"].unpack(reader.take(2))[0]
            return reader.take(n)
        raise TypeError(f"unknown codec kind {kind!r}")
    if isinstance(kind, tuple):
        tag, inner = kind
        if tag == "list":
            n = _STRUCTS["u32"].unpack(reader.take(4))[0]
            return tuple(read_value(reader, inner) for _ in range(n))
        if tag == "tuple":
            return tuple(read_value(reader, k) for k in inner)
        raise TypeError(f"unknown composite kind {tag!r}")
    return decode_from(reader, kind)


def encode_into(out: bytearray, value: Any) -> None:
    custom = getattr(value, "_encode_into", None)
    if custom is not None:
        custom(out)
        return
    for name, kind in type(value).CODEC:
        write_value(out, kind, getattr(value, name))


def decode_from(reader: Reader, cls: type) -> Any:
    custom = getattr(cls, "_decode_from", None)
    if custom is not None:
        return custom(reader)
    kwargs = {name: read_value(reader, kind) for name, kind in cls.CODEC}
    return cls(**kwargs)


def encode_canonical(value: Any) -> bytes:
    out = bytearray()
    encode_into(out, value)
    return bytes(out)


def decode_canonical(cls: type, data: bytes) -> Any:
    reader = Reader(data)
    value = decode_from(reader, cls)
    if not reader.done():
        raise DecodeError("trailing bytes")
    return value
