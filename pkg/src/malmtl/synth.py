"""Minimal well-formed PE, ELF, Mach-O and APK builders, and a labelled synthetic corpus.

Each class of each task draws its section payload bytes from its own bands
of byte values, so image brightness or colour carries the label. Headers stay fixed
per format, which keeps every file of a task the same size (and so every
image the same shape).
"""

from __future__ import annotations

import io
import struct
import zipfile
from dataclasses import dataclass, field

import numpy as np

from .mtl import MALIMG_FAMILIES

BINARY_CLASSES = ("benign", "malware")


def _align(n: int, a: int) -> int:
    return -(-n // a) * a


# -- PE ----------------------------------------------------------------------

IMAGE_SCN_CNT_CODE = 0x20
IMAGE_SCN_CNT_INITIALIZED_DATA = 0x40
IMAGE_SCN_MEM_EXECUTE = 0x20000000
IMAGE_SCN_MEM_READ = 0x40000000
IMAGE_SCN_MEM_WRITE = 0x80000000


def build_pe(sections, machine: int = 0x14C) -> bytes:
    """PE32 image with the given ``(name, data, characteristics)`` sections.

    FileAlignment is 16, so raw pointers are used as written by readers
    that round pointers to 512 only for larger alignments.
    """
    file_align, sect_align = 16, 0x1000
    n = len(sections)
    opt_size = 224
    table_off = 0x40 + 4 + 20 + opt_size
    headers_size = _align(table_off + 40 * n, file_align)

    table = bytearray()
    body = bytearray()
    pos = headers_size
    code_size = data_size = 0
    for i, (name, data, chars) in enumerate(sections):
        raw = _align(len(data), file_align)
        table += struct.pack("<8sIIIIIIHHI", name.encode()[:8], len(data), sect_align * (i + 1), raw, pos,
                             0, 0, 0, 0, chars)
        body += data + b"\x00" * (raw - len(data))
        pos += raw
        if chars & IMAGE_SCN_CNT_CODE:
            code_size += raw
        else:
            data_size += raw

    dos = bytearray(64)
    dos[0:2] = b"MZ"
    struct.pack_into("<I", dos, 0x3C, 0x40)
    coff = struct.pack("<HHIIIHH", machine, n, 0, 0, 0, opt_size, 0x0102)
    opt = struct.pack("<HBB9I6H4I2H6I", 0x10B, 14, 0, code_size, data_size, 0, sect_align, sect_align,
                      sect_align, 0x400000, sect_align, file_align, 6, 0, 0, 0, 6, 0, 0,
                      sect_align * (n + 1), headers_size, 0, 3, 0, 0x100000, 0x1000, 0x100000, 0x1000, 0, 16)
    opt += bytes(128)
    head = bytes(dos) + b"PE\x00\x00" + coff + opt + bytes(table)
    return head + b"\x00" * (headers_size - len(head)) + bytes(body)


# -- ELF ---------------------------------------------------------------------

SHT_PROGBITS = 1
SHT_STRTAB = 3
SHF_WRITE = 0x1
SHF_ALLOC = 0x2
SHF_EXECINSTR = 0x4


def build_elf(sections, bits: int = 64, endian: str = "<", machine: int | None = None) -> bytes:
    """Executable ELF with one PT_LOAD segment and ``(name, data, sh_type, sh_flags)`` sections.

    Layout: ELF header, program header table, section contents, the
    section-name string table, then the section header table.
    """
    is64 = bits == 64
    if machine is None:
        machine = 62 if is64 else 20  # x86-64 / PowerPC
    e = endian
    ehsize, phentsize, shentsize = (64, 56, 64) if is64 else (52, 32, 40)
    names = [s[0] for s in sections] + [".shstrtab"]
    strtab = bytearray(b"\x00")
    name_off = []
    for nm in names:
        name_off.append(len(strtab))
        strtab += nm.encode() + b"\x00"

    pos = ehsize + phentsize
    body = bytearray()
    offsets = []
    for _name, data, _t, _f in sections:
        pad = _align(pos, 8) - pos
        body += b"\x00" * pad
        pos += pad
        offsets.append(pos)
        body += data
        pos += len(data)
    str_off = pos
    body += strtab
    pos += len(strtab)
    shoff = _align(pos, 8)
    body += b"\x00" * (shoff - pos)

    shnum = len(sections) + 2
    ident = b"\x7fELF" + bytes([2 if is64 else 1, 1 if e == "<" else 2, 1, 0]) + bytes(8)
    if is64:
        hdr = ident + struct.pack(e + "HHIQQQIHHHHHH", 2, machine, 1, 0x400000, ehsize, shoff, 0, ehsize,
                                  phentsize, 1, shentsize, shnum, shnum - 1)
        ph = struct.pack(e + "IIQQQQQQ", 1, 5, 0, 0x400000, 0x400000, shoff, shoff, 0x1000)
        shdr_fmt = e + "IIQQQQIIQQ"
    else:
        hdr = ident + struct.pack(e + "HHIIIIIHHHHHH", 2, machine, 1, 0x400000, ehsize, shoff, 0, ehsize,
                                  phentsize, 1, shentsize, shnum, shnum - 1)
        ph = struct.pack(e + "IIIIIIII", 1, 0, 0x400000, 0x400000, shoff, shoff, 5, 0x1000)
        shdr_fmt = e + "IIIIIIIIII"

    shdrs = [struct.pack(shdr_fmt, *([0] * 10))]
    for i, (_name, data, sh_type, flags) in enumerate(sections):
        addr = 0x400000 + offsets[i] if flags & SHF_ALLOC else 0
        shdrs.append(struct.pack(shdr_fmt, name_off[i], sh_type, flags, addr, offsets[i], len(data), 0, 0, 8, 0))
    shdrs.append(struct.pack(shdr_fmt, name_off[-1], SHT_STRTAB, 0, 0, str_off, len(strtab), 0, 0, 1, 0))
    return hdr + ph + bytes(body) + b"".join(shdrs)


# -- Mach-O ------------------------------------------------------------------

MH_MAGIC = 0xFEEDFACE
MH_MAGIC_64 = 0xFEEDFACF
FAT_MAGIC = 0xCAFEBABE
LC_SEGMENT = 0x1
LC_SEGMENT_64 = 0x19
CPU_TYPE_X86_64 = 0x01000007
CPU_TYPE_ARM64 = 0x0100000C
CPU_TYPE_I386 = 7
S_CODE_FLAGS = 0x80000400  # pure + some instructions


def build_macho(sections, bits: int = 64, endian: str = "<", cputype: int | None = None) -> bytes:
    """Thin Mach-O executable; ``sections`` are ``(segname, sectname, data)``.

    Sections are grouped into one segment load command per segment name, in
    first-seen order.
    """
    is64 = bits == 64
    e = endian
    if cputype is None:
        cputype = CPU_TYPE_X86_64 if is64 else CPU_TYPE_I386
    hdr_size = 32 if is64 else 28
    seg_size, sect_size = (72, 80) if is64 else (56, 68)
    segs: dict[str, list] = {}
    for segname, sectname, data in sections:
        segs.setdefault(segname, []).append((sectname, data))
    sizeofcmds = sum(seg_size + sect_size * len(v) for v in segs.values())
    pos = _align(hdr_size + sizeofcmds, 16)
    cmds = bytearray()
    body = bytearray()
    vm = 0x100000000 if is64 else 0x1000
    for segname, sects in segs.items():
        seg_off = pos
        sect_hdrs = bytearray()
        for sectname, data in sects:
            flags = S_CODE_FLAGS if sectname == "__text" else 0
            if is64:
                sect_hdrs += struct.pack(e + "16s16sQQIIIIIIII", sectname.encode(), segname.encode(),
                                         vm + pos - seg_off, len(data), pos, 4, 0, 0, flags, 0, 0, 0)
            else:
                sect_hdrs += struct.pack(e + "16s16sIIIIIIIII", sectname.encode(), segname.encode(),
                                         vm + pos - seg_off, len(data), pos, 4, 0, 0, flags, 0, 0)
            body += data
            pad = _align(len(data), 16) - len(data)
            body += b"\x00" * pad
            pos += len(data) + pad
        filesize = pos - seg_off
        cmdsize = seg_size + len(sect_hdrs)
        if is64:
            cmds += struct.pack(e + "II16sQQQQiiII", LC_SEGMENT_64, cmdsize, segname.encode(), vm,
                                _align(filesize, 0x1000), seg_off, filesize, 7, 5, len(sects), 0)
        else:
            cmds += struct.pack(e + "II16sIIIIiiII", LC_SEGMENT, cmdsize, segname.encode(), vm,
                                _align(filesize, 0x1000), seg_off, filesize, 7, 5, len(sects), 0)
        cmds += sect_hdrs
        vm += _align(max(filesize, 1), 0x1000)
    magic = MH_MAGIC_64 if is64 else MH_MAGIC
    hdr = struct.pack(e + "IiiIIII", magic, cputype, 3, 2, len(segs), sizeofcmds, 0)
    if is64:
        hdr += b"\x00" * 4
    head = hdr + bytes(cmds)
    return head + b"\x00" * (_align(len(head), 16) - len(head)) + bytes(body)


def build_fat(slices, align_log2: int = 4) -> bytes:
    """Universal binary wrapping thin ``(cputype, cpusubtype, data)`` slices."""
    align = 1 << align_log2
    pos = _align(8 + 20 * len(slices), align)
    table = bytearray(struct.pack(">II", FAT_MAGIC, len(slices)))
    body = bytearray()
    for cputype, subtype, data in slices:
        table += struct.pack(">iiIII", cputype, subtype, pos, len(data), align_log2)
        padded = data + b"\x00" * (_align(len(data), align) - len(data))
        body += padded
        pos += len(padded)
    return bytes(table) + b"\x00" * (_align(len(table), align) - len(table)) + bytes(body)


# -- APK ---------------------------------------------------------------------

_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


def build_apk(entries) -> bytes:
    """ZIP archive of ``(name, data)`` entries, deflated, with fixed timestamps."""
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as zf:
        for name, data in entries:
            info = zipfile.ZipInfo(name, date_time=_ZIP_DATE)
            info.compress_type = zipfile.ZIP_DEFLATED
            info.external_attr = 0o644 << 16
            zf.writestr(info, data)
    return buf.getvalue()


# -- labelled corpus ---------------------------------------------------------

# task id -> container flavour; t4 is the 25-family task
TASK_FORMATS = {"t1": "pe", "t2": "macho-fat", "t3": "elf", "t4": "pe", "t5": "apk", "t6": "macho", "t7": "elf32be"}
FORMAT_NAMES = {"pe": "PE", "elf": "ELF", "elf32be": "ELF", "macho": "MachO", "macho-fat": "MachO", "apk": "APK"}
EXTENSIONS = {"pe": ".exe", "elf": ".elf", "elf32be": ".elf", "macho": ".macho", "macho-fat": ".macho", "apk": ".apk"}


@dataclass(frozen=True)
class SynthTask:
    task_id: str
    fmt: str
    class_names: tuple[str, ...] = BINARY_CLASSES

    def __post_init__(self):
        if self.fmt not in TASK_FORMATS.values():
            raise ValueError(f"unknown synthetic format {self.fmt!r}")
        object.__setattr__(self, "class_names", tuple(self.class_names))


def default_synth_tasks() -> tuple[SynthTask, ...]:
    return tuple(SynthTask(tid, fmt, MALIMG_FAMILIES if tid == "t4" else BINARY_CLASSES)
                 for tid, fmt in TASK_FORMATS.items())


@dataclass(frozen=True)
class SynthCorpusSpec:
    """Parameters of the class-conditional byte distributions.

    Two-class tasks draw payload bytes uniformly from integer bands centred
    ``mean_gap`` apart around 127.5 with half-width ``half_width``; the
    defaults give [0, 120] and [135, 255]. Tasks with more classes use a
    per-channel colour code (see ``class_bands``) whose three levels have
    half-width ``family_half_width``. ``purity`` is
    the probability a payload byte comes from the class band rather than
    from uniform [0, 255].
    """

    tasks: tuple[SynthTask, ...] = field(default_factory=default_synth_tasks)
    samples_per_class: int = 10
    samples_per_task: int | None = None
    payload_size: int = 1536
    mean_gap: float = 135.0
    half_width: float = 60.0
    family_half_width: float = 30.0
    purity: float = 1.0
    test_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "tasks", tuple(self.tasks))
        if self.samples_per_class < 1:
            raise ValueError("samples_per_class must be >= 1")
        if not 0.0 < self.purity <= 1.0:
            raise ValueError("purity must lie in (0, 1]")
        if not 0.0 <= self.test_fraction < 1.0:
            raise ValueError("test_fraction must lie in [0, 1)")
        if self.payload_size < 64:
            raise ValueError("payload_size must be >= 64")
        ids = [t.task_id for t in self.tasks]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate task ids in corpus spec")
        for t in self.tasks:
            bands = class_bands(self, len(t.class_names))
            if len(set(bands)) != len(bands):
                raise ValueError(f"task {t.task_id}: class byte bands are not distinct")

    def count_for(self, task: SynthTask) -> list[int]:
        """Samples per class for one task."""
        k = len(task.class_names)
        if self.samples_per_task is None:
            return [self.samples_per_class] * k
        base, extra = divmod(self.samples_per_task, k)
        if base < 1:
            raise ValueError(f"task {task.task_id}: samples_per_task < number of classes")
        return [base + (1 if i < extra else 0) for i in range(k)]


def class_bands(spec: SynthCorpusSpec, n_classes: int) -> list[tuple[tuple[int, int], ...]]:
    """Per-class inclusive byte ranges, one range for each byte position mod 3.

    Two-class tasks use one range for all three positions. Larger tasks
    write the class index in base 3, one digit per position, and map each
    digit to a low, middle or high range, so every class gets its own
    colour. This handles up to 27 classes.
    """
    def band(c, hw):
        lo = int(np.clip(np.floor(c - hw + 0.5), 0, 255))
        hi = int(np.clip(np.floor(c + hw + 0.5), 0, 255))
        return lo, hi

    if n_classes == 2:
        return [(band(c, spec.half_width),) * 3
                for c in (127.5 - spec.mean_gap / 2, 127.5 + spec.mean_gap / 2)]
    if n_classes > 27:
        raise ValueError("the colour code covers at most 27 classes")
    hw = spec.family_half_width
    levels = [band(c, hw) for c in np.linspace(hw, 255 - hw, 3)]
    return [tuple(levels[(k // 3 ** j) % 3] for j in range(3)) for k in range(n_classes)]


def draw_payload(rng: np.random.Generator, bands, size: int, purity: float = 1.0) -> bytes:
    """``size`` bytes; byte i comes from ``bands[i % 3]``, or uniform noise with probability 1 - purity."""
    lo = np.resize(np.array([b[0] for b in bands]), size)
    hi = np.resize(np.array([b[1] for b in bands]), size)
    vals = rng.integers(lo, hi + 1)
    if purity < 1.0:
        noise = rng.random(size) >= purity
        vals[noise] = rng.integers(0, 256, int(noise.sum()))
    return vals.astype(np.uint8).tobytes()


def build_container(fmt: str, payload: bytes) -> bytes:
    """Wrap a payload in a minimal file of the given flavour (code + data sections)."""
    half = len(payload) // 2
    code, data = payload[:half], payload[half:]
    if fmt == "pe":
        return build_pe([(".text", code, IMAGE_SCN_CNT_CODE | IMAGE_SCN_MEM_EXECUTE | IMAGE_SCN_MEM_READ),
                         (".data", data, IMAGE_SCN_CNT_INITIALIZED_DATA | IMAGE_SCN_MEM_READ | IMAGE_SCN_MEM_WRITE)])
    if fmt in ("elf", "elf32be"):
        secs = [(".text", code, SHT_PROGBITS, SHF_ALLOC | SHF_EXECINSTR),
                (".data", data, SHT_PROGBITS, SHF_ALLOC | SHF_WRITE)]
        return build_elf(secs) if fmt == "elf" else build_elf(secs, bits=32, endian=">")
    if fmt == "macho":
        return build_macho([("__TEXT", "__text", code), ("__DATA", "__data", data)])
    if fmt == "macho-fat":
        a = build_macho([("__TEXT", "__text", code)], cputype=CPU_TYPE_X86_64)
        b = build_macho([("__TEXT", "__text", data)], cputype=CPU_TYPE_ARM64)
        return build_fat([(CPU_TYPE_X86_64, 3, a), (CPU_TYPE_ARM64, 0, b)])
    if fmt == "apk":
        manifest = b"<manifest package=\"org.example.synth\"/>\n"
        return build_apk([("AndroidManifest.xml", manifest), ("classes.dex", b"dex\n035\x00" + code),
                          ("resources.arsc", data), ("META-INF/MANIFEST.MF", b"Manifest-Version: 1.0\r\n")])
    raise ValueError(f"unknown synthetic format {fmt!r}")


@dataclass(frozen=True)
class SynthSample:
    task_id: str
    label: str
    split: str
    index: int
    data: bytes
    fmt: str

    @property
    def filename(self) -> str:
        return f"{self.task_id}_{self.label}_{self.index:04d}{EXTENSIONS[self.fmt]}"


def generate_corpus(spec: SynthCorpusSpec) -> list[SynthSample]:
    """Deterministic list of labelled container files.

    Each task draws from its own generator seeded by (seed, task position),
    so adding a task never perturbs the others. Within each class the first
    ``round(test_fraction * n)`` shuffled indices go to the test split.
    """
    out = []
    for ti, task in enumerate(spec.tasks):
        rng = np.random.default_rng([spec.seed, ti])
        bands = class_bands(spec, len(task.class_names))
        for ci, (label, count) in enumerate(zip(task.class_names, spec.count_for(task))):
            n_test = int(round(spec.test_fraction * count))
            test = set(rng.permutation(count)[:n_test].tolist())
            for i in range(count):
                payload = draw_payload(rng, bands[ci], spec.payload_size, spec.purity)
                out.append(SynthSample(task.task_id, label, "test" if i in test else "train", i,
                                       build_container(task.fmt, payload), task.fmt))
    return out
