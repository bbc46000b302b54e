"""Shared types for the container parsers."""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field


class MalformedContainer(ValueError):
    """Raised when a container's declared structure does not fit the file."""


class MissingEntry(MalformedContainer):
    """Raised when an APK holds neither a manifest nor any dex entry."""


class BinaryFormat(enum.Enum):
    PE = "PE"
    ELF = "ELF"
    MACHO = "MachO"
    APK = "APK"
    ASM_TEXT = "AsmText"
    RAW = "Raw"


class SectionKind(enum.Enum):
    HEADER = "header"
    CODE = "code"
    DATA = "data"
    RESOURCE = "resource"
    METADATA = "metadata"
    OTHER = "other"


@dataclass(frozen=True)
class SectionRecord:
    name: str
    file_offset: int
    size: int
    kind: SectionKind
    data: bytes | memoryview = field(repr=False)

    def __post_init__(self):
        if len(self.data) != self.size:
            raise ValueError(f"section {self.name!r}: {len(self.data)} bytes for declared size {self.size}")


@dataclass(frozen=True)
class ParsedBinary:
    format: BinaryFormat
    sections: tuple[SectionRecord, ...]
    source_length: int

    @property
    def total_size(self) -> int:
        return sum(s.size for s in self.sections)

    def dump(self) -> str:
        """Line-oriented debug dump: name, offset, size, kind (tab separated)."""
        lines = [f"{s.name}\t{s.file_offset}\t{s.size}\t{s.kind.value}" for s in self.sections]
        return "\n".join(lines) + ("\n" if lines else "")


def flatten(pb: ParsedBinary) -> bytes:
    """Concatenate the section bytes in record order."""
    return b"".join(s.data for s in pb.sections)


class Reader:
    """Bounds-checked little/big-endian view over a byte string.

    Every read validates ``offset + size <= len(buf)`` before touching the
    buffer. Slices are memoryviews into the input, so section records that
    overlap (or repeat) never copy the file again.
    """

    def __init__(self, buf, endian: str = "<", what: str = "container"):
        self.buf = memoryview(buf)
        self.endian = endian
        self.what = what

    def __len__(self):
        return len(self.buf)

    def check(self, offset: int, size: int, label: str) -> None:
        if offset < 0 or size < 0 or offset + size > len(self.buf):
            raise MalformedContainer(
                f"{self.what}: {label} [{offset}, {offset + size}) outside file of {len(self.buf)} bytes"
            )

    def take(self, offset: int, size: int, label: str) -> memoryview:
        """Zero-copy view of ``size`` bytes at ``offset``."""
        self.check(offset, size, label)
        return self.buf[offset:offset + size]

    def unpack(self, fmt, offset: int, label: str) -> tuple:
        st = struct.Struct(self.endian + fmt)
        self.check(offset, st.size, label)
        return st.unpack_from(self.buf, offset)

    def u16(self, offset, label="u16"):
        return self.unpack("H", offset, label)[0]

    def u32(self, offset, label="u32"):
        return self.unpack("I", offset, label)[0]

    def u64(self, offset, label="u64"):
        return self.unpack("Q", offset, label)[0]


def cstring(raw) -> str:
    """Decode a NUL-terminated / NUL-padded name field."""
    raw = bytes(raw)
    end = raw.find(b"\x00")
    if end >= 0:
        raw = raw[:end]
    return raw.decode("latin-1")
