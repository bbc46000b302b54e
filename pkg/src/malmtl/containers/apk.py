"""APK extraction via the ZIP central directory.

Only stored (0) and deflated (8) entries are supported; ZIP64 and encrypted
archives are rejected. Entries are returned decompressed, grouped as
manifest, dex files, ``META-INF/`` entries and everything else (resources),
each group sorted by name.
"""

from __future__ import annotations

import re
import zlib

from .model import BinaryFormat, MalformedContainer, MissingEntry, ParsedBinary, Reader, SectionKind, SectionRecord

EOCD_SIG = b"PK\x05\x06"
CENTRAL_SIG = 0x02014B50
LOCAL_SIG = 0x04034B50
EOCD_SIZE = 22
CENTRAL_SIZE = 46
LOCAL_SIZE = 30
MAX_COMMENT = 0xFFFF

# deflate cannot expand by more than ~1032:1
MAX_DEFLATE_RATIO = 1032

MANIFEST = "AndroidManifest.xml"
_DEX = re.compile(r"classes\d*\.dex")


def _category(name: str) -> int:
    if name == MANIFEST:
        return 0
    if _DEX.fullmatch(name):
        return 1
    if name.startswith("META-INF/"):
        return 2
    return 3


_KINDS = (SectionKind.METADATA, SectionKind.CODE, SectionKind.METADATA, SectionKind.RESOURCE)


def _find_eocd(r: Reader) -> int:
    data = r.buf
    lo = max(0, len(data) - EOCD_SIZE - MAX_COMMENT)
    pos = bytes(data[lo:]).rfind(EOCD_SIG)
    if pos < 0 or lo + pos + EOCD_SIZE > len(data):
        raise MalformedContainer("APK: end of central directory record not found")
    return lo + pos


def _inflate(raw, usize: int, name: str) -> bytes:
    if usize > MAX_DEFLATE_RATIO * len(raw) + 64:
        raise MalformedContainer(f"APK: {name} declares an impossible compression ratio")
    d = zlib.decompressobj(-15)
    try:
        out = d.decompress(raw, usize)
    except zlib.error as exc:
        raise MalformedContainer(f"APK: corrupt deflate stream in {name}: {exc}") from None
    if len(out) != usize or not d.eof:
        raise MalformedContainer(f"APK: {name} inflates to a size other than declared {usize}")
    return out


def parse_apk(data: bytes) -> ParsedBinary:
    r = Reader(data, "<", "APK")
    eocd = _find_eocd(r)
    _sig, _disk, _cd_disk, _n_disk, n_entries, cd_size, cd_offset, _clen = r.unpack("IHHHHIIH", eocd, "EOCD")
    if cd_offset + cd_size > eocd:
        raise MalformedContainer("APK: central directory overlaps or follows its end record")
    if n_entries * CENTRAL_SIZE > cd_size:
        raise MalformedContainer(f"APK: {n_entries} entries cannot fit in a {cd_size}-byte central directory")

    entries = []
    off = cd_offset
    cd_end = cd_offset + cd_size
    for i in range(n_entries):
        if off + CENTRAL_SIZE > cd_end:
            raise MalformedContainer(f"APK: central directory entry {i} truncated")
        (sig, _made, _need, flags, method, _time, _date, crc, csize, usize,
         nlen, xlen, clen, _dstart, _iattr, _eattr, lho) = r.unpack("IHHHHHHIIIHHHHHII", off, f"central entry {i}")
        if sig != CENTRAL_SIG:
            raise MalformedContainer(f"APK: bad central directory signature at {off}")
        if off + CENTRAL_SIZE + nlen + xlen + clen > cd_end:
            raise MalformedContainer(f"APK: central directory entry {i} overruns the directory")
        name = bytes(r.take(off + CENTRAL_SIZE, nlen, "entry name")).decode("utf-8", "replace")
        off += CENTRAL_SIZE + nlen + xlen + clen
        if name.endswith("/"):
            continue
        if flags & 0x1:
            raise MalformedContainer(f"APK: encrypted entry {name}")
        if 0xFFFFFFFF in (csize, usize, lho):
            raise MalformedContainer(f"APK: ZIP64 entry {name} is not supported")
        entries.append((name, flags, method, crc, csize, usize, lho))

    records = []
    budget = MAX_DEFLATE_RATIO * len(data)
    for name, _flags, method, crc, csize, usize, lho in entries:
        lsig, *_mid, lnlen, lxlen = r.unpack("IHHHHHIIIHH", lho, f"local header of {name}")
        if lsig != LOCAL_SIG:
            raise MalformedContainer(f"APK: bad local header signature for {name}")
        start = lho + LOCAL_SIZE + lnlen + lxlen
        raw = r.take(start, csize, f"data of {name}")
        if method == 0:
            if csize != usize:
                raise MalformedContainer(f"APK: stored entry {name} has mismatched sizes")
            body = raw
        elif method == 8:
            budget -= usize
            if budget < 0:
                raise MalformedContainer("APK: entries inflate beyond any plausible archive size")
            body = _inflate(raw, usize, name)
        else:
            raise MalformedContainer(f"APK: unsupported compression method {method} for {name}")
        if zlib.crc32(body) != crc:
            raise MalformedContainer(f"APK: CRC mismatch for {name}")
        cat = _category(name)
        records.append((cat, name, SectionRecord(name, start, len(body), _KINDS[cat], body)))

    if not any(cat in (0, 1) for cat, _n, _rec in records):
        raise MissingEntry("APK: neither AndroidManifest.xml nor a classes*.dex entry present")
    records.sort(key=lambda t: (t[0], t[1]))
    return ParsedBinary(BinaryFormat.APK, tuple(rec for _c, _n, rec in records), len(data))
