"""Portable Executable (PE/COFF) section extraction."""

from __future__ import annotations

from .model import BinaryFormat, MalformedContainer, ParsedBinary, Reader, SectionKind, SectionRecord, cstring

DOS_HEADER_SIZE = 64
COFF_HEADER_SIZE = 20
SECTION_ENTRY_SIZE = 40

IMAGE_SCN_CNT_CODE = 0x00000020
IMAGE_SCN_CNT_INITIALIZED_DATA = 0x00000040
IMAGE_SCN_CNT_UNINITIALIZED_DATA = 0x00000080
IMAGE_SCN_MEM_EXECUTE = 0x20000000

_METADATA_NAMES = {".reloc", ".debug", ".pdata", ".xdata"}


def _section_kind(name: str, characteristics: int) -> SectionKind:
    if characteristics & (IMAGE_SCN_CNT_CODE | IMAGE_SCN_MEM_EXECUTE):
        return SectionKind.CODE
    if name == ".rsrc":
        return SectionKind.RESOURCE
    if name in _METADATA_NAMES:
        return SectionKind.METADATA
    if characteristics & (IMAGE_SCN_CNT_INITIALIZED_DATA | IMAGE_SCN_CNT_UNINITIALIZED_DATA):
        return SectionKind.DATA
    return SectionKind.OTHER


def parse_pe(data: bytes) -> ParsedBinary:
    """Split a PE image into its header block and section-table entries.

    The header record spans the DOS header through the end of the section
    table. Sections follow in table order, each carrying its raw file bytes
    (``PointerToRawData`` .. ``+SizeOfRawData``).
    """
    r = Reader(data, "<", "PE")
    if r.take(0, 2, "DOS magic") != b"MZ":
        raise MalformedContainer("PE: missing MZ signature")
    r.check(0, DOS_HEADER_SIZE, "DOS header")
    e_lfanew = r.u32(0x3C, "e_lfanew")
    if r.take(e_lfanew, 4, "PE signature (e_lfanew)") != b"PE\x00\x00":
        raise MalformedContainer(f"PE: no PE signature at e_lfanew={e_lfanew}")
    coff = e_lfanew + 4
    _machine, n_sections, _ts, _symptr, _nsym, opt_size, _chars = r.unpack("HHIIIHH", coff, "COFF header")
    table = coff + COFF_HEADER_SIZE + opt_size
    r.check(table, n_sections * SECTION_ENTRY_SIZE, "section table")
    table_end = table + n_sections * SECTION_ENTRY_SIZE

    records = [SectionRecord("headers", 0, table_end, SectionKind.HEADER, r.take(0, table_end, "headers"))]
    for i in range(n_sections):
        entry = table + i * SECTION_ENTRY_SIZE
        raw_name, _vsize, _vaddr, raw_size, raw_ptr, _rel, _lin, _nrel, _nlin, chars = r.unpack(
            "8sIIIIIIHHI", entry, f"section entry {i}")
        name = cstring(raw_name) or f"section{i}"
        if raw_size:
            body = r.take(raw_ptr, raw_size, f"raw data of {name}")
        else:
            body, raw_ptr = b"", min(raw_ptr, len(data))
        records.append(SectionRecord(name, raw_ptr, raw_size, _section_kind(name, chars), body))
    return ParsedBinary(BinaryFormat.PE, tuple(records), len(data))
