"""Mach-O (thin and fat/universal) extraction."""

from __future__ import annotations

import dataclasses

from .model import BinaryFormat, MalformedContainer, ParsedBinary, Reader, SectionKind, SectionRecord, cstring

MH_MAGIC = 0xFEEDFACE
MH_MAGIC_64 = 0xFEEDFACF
FAT_MAGIC = 0xCAFEBABE

LC_SEGMENT = 0x1
LC_SEGMENT_64 = 0x19

S_ZEROFILL_TYPES = {0x1, 0xC, 0x12}
S_ATTR_PURE_INSTRUCTIONS = 0x80000000
S_ATTR_SOME_INSTRUCTIONS = 0x00000400

FAT_ARCH_SIZE = 20

LOAD_COMMAND_NAMES = {
    0x1: "LC_SEGMENT", 0x2: "LC_SYMTAB", 0x4: "LC_THREAD", 0x5: "LC_UNIXTHREAD",
    0xB: "LC_DYSYMTAB", 0xC: "LC_LOAD_DYLIB", 0xD: "LC_ID_DYLIB", 0xE: "LC_LOAD_DYLINKER",
    0x19: "LC_SEGMENT_64", 0x1B: "LC_UUID", 0x1D: "LC_CODE_SIGNATURE",
    0x21: "LC_ENCRYPTION_INFO", 0x22: "LC_DYLD_INFO", 0x26: "LC_FUNCTION_STARTS",
    0x29: "LC_DATA_IN_CODE", 0x2A: "LC_SOURCE_VERSION", 0x2C: "LC_ENCRYPTION_INFO_64",
    0x32: "LC_BUILD_VERSION", 0x80000022: "LC_DYLD_INFO_ONLY", 0x80000028: "LC_MAIN",
}

# (header size, segment command fmt, segment command size, section fmt, section size)
_THIN_LAYOUT = {
    MH_MAGIC: (28, "16sIIIIiiII", 56, "16s16sIIIIIIIII", 68),
    MH_MAGIC_64: (32, "16sQQQQiiII", 72, "16s16sQQIIIIIIII", 80),
}


def _thin_endian(data: bytes):
    for endian in ("<", ">"):
        magic = int.from_bytes(data[:4], "little" if endian == "<" else "big")
        if magic in _THIN_LAYOUT:
            return endian, magic
    return None, None


def _section_kind(segname: str, flags: int) -> SectionKind:
    if flags & (S_ATTR_PURE_INSTRUCTIONS | S_ATTR_SOME_INSTRUCTIONS):
        return SectionKind.CODE
    if segname.startswith("__DATA"):
        return SectionKind.DATA
    return SectionKind.OTHER


def _parse_thin(data: bytes) -> list[SectionRecord]:
    endian, magic = _thin_endian(data)
    if endian is None:
        raise MalformedContainer("Mach-O: bad magic")
    hdr_size, seg_fmt, seg_size, sect_fmt, sect_size = _THIN_LAYOUT[magic]
    r = Reader(data, endian, "Mach-O")
    r.check(0, hdr_size, "mach header")
    _magic, _cpu, _sub, _ftype, ncmds, sizeofcmds, _flags = r.unpack("IiiIIII", 0, "mach header")
    r.check(hdr_size, sizeofcmds, "load command area")
    if ncmds * 8 > sizeofcmds:
        raise MalformedContainer(f"Mach-O: {ncmds} load commands cannot fit in {sizeofcmds} bytes")
    cmds_end = hdr_size + sizeofcmds
    seg_cmd = LC_SEGMENT_64 if magic == MH_MAGIC_64 else LC_SEGMENT

    header = [SectionRecord("mach_header", 0, hdr_size, SectionKind.HEADER, r.take(0, hdr_size, "mach header"))]
    commands, contents = [], []
    off = hdr_size
    for i in range(ncmds):
        if off + 8 > cmds_end:
            raise MalformedContainer(f"Mach-O: load command {i} overruns sizeofcmds")
        cmd, cmdsize = r.unpack("II", off, f"load command {i}")
        if cmdsize < 8 or off + cmdsize > cmds_end:
            raise MalformedContainer(f"Mach-O: load command {i} has bad cmdsize {cmdsize}")
        name = LOAD_COMMAND_NAMES.get(cmd, f"LC_0x{cmd:x}")
        commands.append(SectionRecord(name, off, cmdsize, SectionKind.METADATA, r.take(off, cmdsize, name)))

        if cmd == seg_cmd:
            if cmdsize < seg_size:
                raise MalformedContainer(f"Mach-O: segment command {i} too small")
            segname, _vmaddr, _vmsize, fileoff, filesize, _maxp, _initp, nsects, _sflags = r.unpack(
                seg_fmt, off + 8, f"segment command {i}")
            segname = cstring(segname)
            if seg_size + nsects * sect_size > cmdsize:
                raise MalformedContainer(f"Mach-O: {nsects} sections overrun segment {segname}")
            if nsects == 0 and filesize:
                body = r.take(fileoff, filesize, f"segment {segname}")
                kind = SectionKind.METADATA if segname == "__LINKEDIT" else SectionKind.OTHER
                contents.append(SectionRecord(segname or f"segment{i}", fileoff, filesize, kind, body))
            for j in range(nsects):
                sect = r.unpack(sect_fmt, off + seg_size + j * sect_size, f"section {j} of {segname}")
                sectname, sect_seg, _addr, size, offset = sect[:5]
                sflags = sect[8]
                if (sflags & 0xFF) in S_ZEROFILL_TYPES or size == 0:
                    continue
                full = f"{cstring(sect_seg)},{cstring(sectname)}"
                body = r.take(offset, size, f"section {full}")
                contents.append(SectionRecord(full, offset, size, _section_kind(cstring(sect_seg), sflags), body))
        off += cmdsize
    return header + commands + contents


def _shift(rec: SectionRecord, base: int) -> SectionRecord:
    return dataclasses.replace(rec, file_offset=rec.file_offset + base)


def _parse_fat(data: bytes) -> list[SectionRecord]:
    endian = ">" if data[:4] == b"\xca\xfe\xba\xbe" else "<"
    r = Reader(data, endian, "fat Mach-O")
    nfat = r.u32(4, "nfat_arch")
    if nfat == 0:
        raise MalformedContainer("fat Mach-O: no architectures")
    r.check(8, nfat * FAT_ARCH_SIZE, "fat_arch table")
    records = []
    for i in range(nfat):
        entry = 8 + i * FAT_ARCH_SIZE
        _cpu, _sub, offset, size, _align = r.unpack("iiIII", entry, f"fat_arch {i}")
        records.append(SectionRecord(f"fat_arch[{i}]", entry, FAT_ARCH_SIZE, SectionKind.METADATA,
                                     r.take(entry, FAT_ARCH_SIZE, "fat_arch")))
        slice_bytes = r.take(offset, size, f"slice {i}")
        if _thin_endian(slice_bytes)[0] is None:
            raise MalformedContainer(f"fat Mach-O: slice {i} is not a thin Mach-O image")
        records.extend(_shift(rec, offset) for rec in _parse_thin(slice_bytes))
    return records


def parse_macho(data: bytes) -> ParsedBinary:
    """Extract a Mach-O image.

    Thin images yield the mach header, every load command as a metadata
    record, then the file contents of each segment's sections in load-command
    order. Fat images yield, per architecture in fat-header order, a
    ``fat_arch[i]`` record followed by that slice's records (offsets made
    absolute within the fat file).
    """
    if data[:4] in (b"\xca\xfe\xba\xbe", b"\xbe\xba\xfe\xca"):
        records = _parse_fat(data)
    else:
        records = _parse_thin(data)
    return ParsedBinary(BinaryFormat.MACHO, tuple(records), len(data))
