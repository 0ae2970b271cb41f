"""Object identifiers and two-part heap objects.

An :class:`ObjectId` is a ``(server_index, serial)`` pair. The owning server
is read straight off the id, so routing a request never needs a lookup.
"""
from __future__ import annotations

from typing import NamedTuple

from .errors import AllocationError, ConfigurationError, UsageError

#: Bytes charged per reference slot when sizing an object.
REF_BYTES = 8

MAX_DATA_BYTES = 64 * 1024
MAX_REFS = 64


class ObjectId(NamedTuple):
    server_index: int
    serial: int

    def __str__(self):
        if self.server_index < 0:
            return "nil"
        return f"s{self.server_index}:{self.serial}"

    @property
    def is_nil(self) -> bool:
        return self.server_index < 0


NIL = ObjectId(-1, -1)


def make_object_id(server_index: int, serial: int, num_servers: int | None = None) -> ObjectId:
    if server_index < 0 or (num_servers is not None and server_index >= num_servers):
        raise ConfigurationError(f"server index {server_index} out of range")
    if serial < 0:
        raise ConfigurationError(f"negative serial {serial}")
    return ObjectId(server_index, serial)


def owner_of(oid: ObjectId) -> int:
    if oid.server_index < 0:
        raise UsageError("owner_of(NIL)")
    return oid.server_index


def parse_object_id(text: str) -> ObjectId:
    """Inverse of ``str(oid)``."""
    if text == "nil":
        return NIL
    if not text.startswith("s") or ":" not in text:
        raise UsageError(f"malformed object id {text!r}")
    server, serial = text[1:].split(":", 1)
    return make_object_id(int(server), int(serial))


class HeapObject:
    """Fixed-size data part plus fixed-size reference part.

    The sizes are frozen at construction; ``data`` may be rewritten in place
    but never resized, and ``refs`` keeps its length.
    """

    __slots__ = ("_data", "_refs")

    def __init__(self, data: bytes | bytearray, refs):
        self._data = bytearray(data)
        self._refs = list(refs)

    @property
    def data(self) -> bytearray:
        return self._data

    @property
    def refs(self) -> list:
        return self._refs

    @property
    def data_size(self) -> int:
        return len(self._data)

    @property
    def ref_count(self) -> int:
        return len(self._refs)

    @property
    def nbytes(self) -> int:
        return len(self._data) + REF_BYTES * len(self._refs)

    def set_data(self, payload: bytes) -> None:
        if len(payload) != len(self._data):
            raise UsageError(f"data is {len(self._data)} bytes, got {len(payload)}")
        self._data[:] = payload

    def set_ref(self, index: int, oid: ObjectId) -> None:
        if not 0 <= index < len(self._refs):
            raise IndexError(f"ref index {index} out of range for {len(self._refs)} refs")
        self._refs[index] = oid

    def copy(self) -> "HeapObject":
        return HeapObject(self._data, self._refs)

    def __eq__(self, other):
        if not isinstance(other, HeapObject):
            return NotImplemented
        return self._data == other._data and self._refs == other._refs

    def __repr__(self):
        refs = ", ".join(str(r) for r in self._refs)
        return f"HeapObject(data={bytes(self._data)!r}, refs=[{refs}])"


def new_object(data_size: int, ref_count: int,
               max_data: int = MAX_DATA_BYTES, max_refs: int = MAX_REFS) -> HeapObject:
    if data_size < 0 or ref_count < 0:
        raise UsageError("object sizes must be non-negative")
    if data_size > max_data or ref_count > max_refs:
        raise AllocationError(
            f"object ({data_size} bytes, {ref_count} refs) exceeds limit ({max_data}, {max_refs})")
    return HeapObject(bytes(data_size), [NIL] * ref_count)


def object_nbytes(data_size: int, ref_count: int) -> int:
    return data_size + REF_BYTES * ref_count
