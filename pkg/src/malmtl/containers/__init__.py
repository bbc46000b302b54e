"""Container format detection and section extraction (PE, ELF, Mach-O, APK)."""

from .apk import parse_apk
from .detect import detect_format
from .elf import parse_elf
from .macho import parse_macho
from .model import (
    BinaryFormat,
    MalformedContainer,
    MissingEntry,
    ParsedBinary,
    SectionKind,
    SectionRecord,
    flatten,
)
from .pe import parse_pe

_PARSERS = {
    BinaryFormat.PE: parse_pe,
    BinaryFormat.ELF: parse_elf,
    BinaryFormat.MACHO: parse_macho,
    BinaryFormat.APK: parse_apk,
}


def parse(data: bytes, fmt: BinaryFormat | None = None) -> ParsedBinary:
    """Detect (unless ``fmt`` is given) and parse ``data``.

    Assembly listings and unrecognised inputs are not structurally parsed;
    they become a single record spanning the whole input.
    """
    fmt = fmt or detect_format(data)
    if fmt in _PARSERS:
        return _PARSERS[fmt](data)
    kind = SectionKind.CODE if fmt is BinaryFormat.ASM_TEXT else SectionKind.OTHER
    name = "asm_text" if fmt is BinaryFormat.ASM_TEXT else "raw"
    return ParsedBinary(fmt, (SectionRecord(name, 0, len(data), kind, memoryview(data)),), len(data))


__all__ = [
    "BinaryFormat", "MalformedContainer", "MissingEntry", "ParsedBinary", "SectionKind", "SectionRecord",
    "detect_format", "flatten", "parse", "parse_apk", "parse_elf", "parse_macho", "parse_pe",
]
