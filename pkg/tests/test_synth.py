import io
import zipfile

import numpy as np
import pytest

from malmtl import synth
from malmtl.containers import BinaryFormat, SectionKind, flatten, parse

PAYLOAD = bytes(range(256)) * 6


@pytest.mark.parametrize("fmt", sorted(set(synth.TASK_FORMATS.values())))
def test_containers_parse_and_carry_payload(fmt):
    data = synth.build_container(fmt, PAYLOAD)
    pb = parse(data)
    assert pb.format.value == synth.FORMAT_NAMES[fmt]
    flat = flatten(pb)
    half = len(PAYLOAD) // 2
    assert PAYLOAD[:half] in flat and PAYLOAD[half:] in flat
    assert any(s.kind is SectionKind.CODE for s in pb.sections)


def test_pe_against_pefile():
    pefile = pytest.importorskip("pefile")
    data = synth.build_container("pe", PAYLOAD)
    pe = pefile.PE(data=data)
    names = [s.Name.rstrip(b"\0") for s in pe.sections]
    assert names == [b".text", b".data"]
    for s, want in zip(pe.sections, (PAYLOAD[:768], PAYLOAD[768:])):
        assert data[s.PointerToRawData:s.PointerToRawData + len(want)] == want


@pytest.mark.parametrize("fmt", ["elf", "elf32be"])
def test_elf_against_pyelftools(fmt):
    elffile = pytest.importorskip("elftools.elf.elffile")
    data = synth.build_container(fmt, PAYLOAD)
    elf = elffile.ELFFile(io.BytesIO(data))
    assert elf.elfclass == (64 if fmt == "elf" else 32)
    assert elf.little_endian == (fmt == "elf")
    assert elf.get_section_by_name(".text").data() == PAYLOAD[:768]
    assert elf.get_section_by_name(".data").data() == PAYLOAD[768:]


@pytest.mark.parametrize("fmt", ["macho", "macho-fat"])
def test_macho_against_macholib(fmt, tmp_path):
    mo = pytest.importorskip("macholib.MachO")
    path = tmp_path / "bin.macho"
    data = synth.build_container(fmt, PAYLOAD)
    path.write_bytes(data)
    m = mo.MachO(str(path))
    assert len(m.headers) == (2 if fmt == "macho-fat" else 1)
    sections = []
    for h in m.headers:
        for _lc, _cmd, sects in h.commands:
            if isinstance(sects, list):
                for s in sects:
                    sections.append((s.sectname.rstrip(b"\0"), h.offset + s.offset, s.size))
    assert b"__text" in {n for n, _, _ in sections}
    blobs = [data[off:off + size] for _, off, size in sections]
    assert PAYLOAD[:768] in blobs and PAYLOAD[768:] in blobs


def test_apk_against_zipfile():
    data = synth.build_container("apk", PAYLOAD)
    with zipfile.ZipFile(io.BytesIO(data)) as z:
        assert z.testzip() is None
        assert z.read("resources.arsc") == PAYLOAD[768:]
        assert z.read("classes.dex").endswith(PAYLOAD[:768])


def test_builders_are_deterministic():
    for fmt in set(synth.TASK_FORMATS.values()):
        assert synth.build_container(fmt, PAYLOAD) == synth.build_container(fmt, PAYLOAD)


def test_two_class_elf_corpus():
    task = synth.SynthTask("t3", "elf")
    spec = synth.SynthCorpusSpec((task,), samples_per_class=10, seed=4)
    corpus = synth.generate_corpus(spec)
    assert len(corpus) == 20
    assert sum(s.split == "test" for s in corpus) == 4
    means = {}
    for s in corpus:
        pb = parse(s.data)
        assert pb.format is BinaryFormat.ELF
        payload = b"".join(bytes(r.data) for r in pb.sections if r.name in (".text", ".data"))
        assert len(payload) == spec.payload_size
        means.setdefault(s.label, []).append(np.frombuffer(payload, np.uint8).mean())
    gap = np.mean(means["malware"]) - np.mean(means["benign"])
    assert gap == pytest.approx(spec.mean_gap, abs=2.0)


def test_class_bands():
    spec = synth.SynthCorpusSpec()
    b0, b1 = synth.class_bands(spec, 2)
    assert b0 == ((0, 120),) * 3 and b1 == ((135, 255),) * 3
    fam = synth.class_bands(spec, 25)
    assert len(set(fam)) == 25
    with pytest.raises(ValueError):
        synth.class_bands(spec, 28)


def test_payload_respects_bands(rng):
    bands = ((0, 10), (100, 110), (245, 255))
    v = np.frombuffer(synth.draw_payload(rng, bands, 3000), np.uint8).reshape(-1, 3)
    for j, (lo, hi) in enumerate(bands):
        assert v[:, j].min() >= lo and v[:, j].max() <= hi
    noisy = np.frombuffer(synth.draw_payload(rng, bands, 30000, purity=0.5), np.uint8).reshape(-1, 3)
    outside = (noisy[:, 0] > 10).mean()
    assert 0.4 < outside < 0.55


def test_corpus_is_seed_deterministic():
    spec = synth.SynthCorpusSpec(samples_per_class=2, seed=11)
    a, b = synth.generate_corpus(spec), synth.generate_corpus(spec)
    assert a == b
    c = synth.generate_corpus(synth.SynthCorpusSpec(samples_per_class=2, seed=12))
    assert [s.data for s in a] != [s.data for s in c]


def test_adding_a_task_does_not_perturb_earlier_ones():
    tasks = synth.default_synth_tasks()
    small = synth.generate_corpus(synth.SynthCorpusSpec(tasks[:2], samples_per_class=3))
    big = synth.generate_corpus(synth.SynthCorpusSpec(tasks[:3], samples_per_class=3))
    assert big[:len(small)] == small


def test_samples_per_task_split():
    spec = synth.SynthCorpusSpec(samples_per_task=200)
    tasks = {t.task_id: t for t in spec.tasks}
    assert spec.count_for(tasks["t1"]) == [100, 100]
    assert spec.count_for(tasks["t4"]) == [8] * 25
    odd = synth.SynthCorpusSpec(samples_per_task=210).count_for(tasks["t4"])
    assert odd == [9] * 10 + [8] * 15
    with pytest.raises(ValueError):
        synth.SynthCorpusSpec(samples_per_task=10).count_for(tasks["t4"])


def test_filenames():
    s = synth.generate_corpus(synth.SynthCorpusSpec((synth.SynthTask("t5", "apk"),), samples_per_class=1))[0]
    assert s.filename == "t5_benign_0000.apk"


def test_spec_validation():
    with pytest.raises(ValueError):
        synth.SynthCorpusSpec(purity=0.0)
    with pytest.raises(ValueError):
        synth.SynthCorpusSpec(test_fraction=1.0)
    with pytest.raises(ValueError):
        synth.SynthCorpusSpec(mean_gap=0.0, half_width=60)
    with pytest.raises(ValueError):
        synth.SynthTask("t9", "coff")
    t = synth.SynthTask("t1", "pe")
    with pytest.raises(ValueError):
        synth.SynthCorpusSpec((t, t))
