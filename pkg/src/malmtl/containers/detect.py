from __future__ import annotations

from .model import BinaryFormat

_MACHO_MAGICS = (
    b"\xfe\xed\xfa\xce", b"\xce\xfa\xed\xfe",
    b"\xfe\xed\xfa\xcf", b"\xcf\xfa\xed\xfe",
    b"\xca\xfe\xba\xbe", b"\xbe\xba\xfe\xca",
)

_TEXT_CONTROL = frozenset("\t\n\r\f\v")


def looks_like_text(data: bytes) -> bool:
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError:
        return False
    return all(ch.isprintable() or ch in _TEXT_CONTROL for ch in text)


def detect_format(data: bytes) -> BinaryFormat:
    """Classify a byte stream by its leading magic; falls back to Raw."""
    if not data:
        raise ValueError("cannot detect the format of an empty input")
    if data[:2] == b"MZ":
        return BinaryFormat.PE
    if data[:4] == b"\x7fELF":
        return BinaryFormat.ELF
    if data[:4] in _MACHO_MAGICS:
        return BinaryFormat.MACHO
    if data[:4] == b"PK\x03\x04":
        return BinaryFormat.APK
    if looks_like_text(data):
        return BinaryFormat.ASM_TEXT
    return BinaryFormat.RAW
