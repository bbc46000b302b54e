"""ELF (32/64-bit, either byte order) section extraction."""

from __future__ import annotations

from .model import BinaryFormat, MalformedContainer, ParsedBinary, Reader, SectionKind, SectionRecord

SHT_NULL = 0
SHT_PROGBITS = 1
SHT_NOBITS = 8
SHF_ALLOC = 0x2
SHF_EXECINSTR = 0x4
_METADATA_TYPES = {2, 3, 4, 5, 6, 7, 9, 11, 14, 15, 16, 17, 18}

# class -> (ehdr fmt after e_ident, ehdr size, phdr size, shdr fmt, shdr size)
_LAYOUT = {
    1: ("HHIIIIIHHHHHH", 52, 32, "IIIIIIIIII", 40),
    2: ("HHIQQQIHHHHHH", 64, 56, "IIQQQQIIQQ", 64),
}


def _section_kind(sh_type: int, sh_flags: int) -> SectionKind:
    if sh_flags & SHF_EXECINSTR:
        return SectionKind.CODE
    if sh_type in _METADATA_TYPES or sh_type >= 0x60000000:
        return SectionKind.METADATA
    if sh_type == SHT_PROGBITS and sh_flags & SHF_ALLOC:
        return SectionKind.DATA
    return SectionKind.OTHER


def parse_elf(data: bytes) -> ParsedBinary:
    """Extract ELF header, program-header table, file-backed sections and the
    section-header table.

    Output order: header, program-header table, sections in section-header
    table order (``SHT_NOBITS`` and empty sections skipped), section-header
    table.
    """
    if data[:4] != b"\x7fELF":
        raise MalformedContainer("ELF: bad magic")
    if len(data) < 16:
        raise MalformedContainer("ELF: truncated e_ident")
    ei_class, ei_data = data[4], data[5]
    if ei_class not in _LAYOUT:
        raise MalformedContainer(f"ELF: invalid EI_CLASS {ei_class}")
    if ei_data not in (1, 2):
        raise MalformedContainer(f"ELF: invalid EI_DATA {ei_data}")
    ehdr_fmt, ehdr_size, phdr_min, shdr_fmt, shdr_min = _LAYOUT[ei_class]
    r = Reader(data, "<" if ei_data == 1 else ">", "ELF")
    r.check(0, ehdr_size, "ELF header")
    (_type, _machine, _version, _entry, phoff, shoff, _flags, _ehsize,
     phentsize, phnum, shentsize, shnum, shstrndx) = r.unpack(ehdr_fmt, 16, "ELF header")

    records = [SectionRecord("elf_header", 0, ehdr_size, SectionKind.HEADER, r.take(0, ehdr_size, "ELF header"))]

    if phnum:
        if phentsize < phdr_min:
            raise MalformedContainer(f"ELF: impossible e_phentsize {phentsize}")
        pht = r.take(phoff, phnum * phentsize, "program header table")
        records.append(SectionRecord("program_header_table", phoff, len(pht), SectionKind.HEADER, pht))

    sht_record = None
    headers = []
    if shnum:
        if shentsize < shdr_min:
            raise MalformedContainer(f"ELF: impossible e_shentsize {shentsize}")
        sht = r.take(shoff, shnum * shentsize, "section header table")
        sht_record = SectionRecord("section_header_table", shoff, len(sht), SectionKind.HEADER, sht)
        headers = [r.unpack(shdr_fmt, shoff + i * shentsize, f"section header {i}") for i in range(shnum)]

    strtab = b""
    if headers and shstrndx < len(headers):
        st = headers[shstrndx]
        if st[1] != SHT_NOBITS:
            strtab = bytes(r.take(st[4], st[5], "section name string table"))

    for i, (sh_name, sh_type, sh_flags, _addr, sh_offset, sh_size, *_rest) in enumerate(headers):
        if sh_type in (SHT_NULL, SHT_NOBITS) or sh_size == 0:
            continue
        name = ""
        if sh_name < len(strtab):
            end = strtab.find(b"\x00", sh_name)
            name = strtab[sh_name:end if end >= 0 else len(strtab)].decode("latin-1")
        name = name or f"section{i}"
        body = r.take(sh_offset, sh_size, f"section {name}")
        records.append(SectionRecord(name, sh_offset, sh_size, _section_kind(sh_type, sh_flags), body))

    if sht_record is not None:
        records.append(sht_record)
    return ParsedBinary(BinaryFormat.ELF, tuple(records), len(data))
