from pathlib import Path

import numpy as np
import pytest

from malmtl import cli, codec, mtl, pipeline, synth
from malmtl.containers import flatten, parse

SMALL_TASKS = ("t1", "t4", "t6")


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    """Synth + convert a small corpus once: t1 (PE), t4 (25 families), t6 (Mach-O)."""
    root = tmp_path_factory.mktemp("corpus")
    tasks = tuple(t for t in synth.default_synth_tasks() if t.task_id in SMALL_TASKS)
    spec = synth.SynthCorpusSpec(tasks, samples_per_class=4, test_fraction=0.25, seed=3)
    raw = pipeline.cmd_synth(spec, root / "raw")
    conv = pipeline.cmd_convert(None, root / "img", manifest=raw)
    assert not conv.partial
    return root, raw, conv.manifest_path


@pytest.fixture(scope="module")
def trained(corpus):
    root, _, images = corpus
    ckpt = root / "train" / "model.ckpt"
    trace = pipeline.cmd_train(images, None, mtl.desk_config(), mtl.Schedule(epochs=2, batch_size=8), 0, ckpt,
                               root / "train" / "trace.tsv")
    return ckpt, trace


# -- manifests -----------------------------------------------------------------

def test_manifest_roundtrip(tmp_path):
    text = pipeline.MANIFEST_HEADER + "a/x.png\tt1\tbenign\ttrain\t0\n# note\n\nb.png\tt4\tVB.AT\ttest\t1\n"
    man = pipeline.parse_manifest(text, tmp_path)
    assert [r.path for r in man.records] == ["a/x.png", "b.png"]
    assert man.records[1].synthetic
    assert man.tasks() == ["t1", "t4"]
    assert man.resolve(man.records[0]) == tmp_path / "a/x.png"
    assert pipeline.parse_manifest(man.dumps(), tmp_path) == man
    assert man.without_synthetic().records == man.records[:1]
    assert man.select(split="test") == man.records[1:]


@pytest.mark.parametrize("line", ["a\tt1\tbenign\ttrain", "a\tt1\tbenign\tvalid\t0", "a\tt1\tbenign\ttrain\tyes"])
def test_manifest_errors(line, tmp_path):
    with pytest.raises(pipeline.ManifestError):
        pipeline.parse_manifest(line + "\n", tmp_path)


def test_missing_manifest(tmp_path):
    with pytest.raises(pipeline.ManifestError):
        pipeline.load_manifest(tmp_path / "nope.tsv")


def test_manifest_rebases_paths(tmp_path):
    man = pipeline.Manifest(tmp_path / "a", [pipeline.ManifestRecord("f.bin", "t1", "benign", "train")])
    written = man.write(tmp_path / "b" / "m.tsv")
    back = pipeline.load_manifest(written)
    assert back.records[0].path == "../a/f.bin"
    assert back.resolve(back.records[0]).resolve() == (tmp_path / "a" / "f.bin").resolve()


# -- synth and convert -----------------------------------------------------------

def test_synth_output(corpus):
    _, raw, _ = corpus
    man = pipeline.load_manifest(raw)
    assert len(man.records) == 2 * 4 + 25 * 4 + 2 * 4
    assert man.tasks() == list(SMALL_TASKS)
    for r in man.records:
        assert parse(man.resolve(r).read_bytes()).format.value in ("PE", "MachO")


def test_convert_carries_labels(corpus):
    _, raw, images = corpus
    src = pipeline.load_manifest(raw)
    out = pipeline.load_manifest(images)
    assert [(r.task, r.label, r.split) for r in out.records] == [(r.task, r.label, r.split) for r in src.records]
    assert all(r.path.endswith(".png") for r in out.records)


def test_elf_to_png_preserves_bytes(tmp_path):
    data = synth.build_container("elf", bytes(range(200)) * 5)
    src = tmp_path / "a.elf"
    src.write_bytes(data)
    res = pipeline.cmd_convert([src], tmp_path / "out")
    grid = codec.read_image(res.written[0].read_bytes())
    flat = flatten(parse(data))
    assert grid.pixels.reshape(-1)[:len(flat)].tobytes() == flat
    assert not grid.pixels.reshape(-1)[len(flat):].any()


def test_convert_is_idempotent(tmp_path):
    src = tmp_path / "a.exe"
    src.write_bytes(synth.build_container("pe", bytes(900)))
    a = pipeline.cmd_convert([src], tmp_path / "one", width=16, image_format="bmp24")
    b = pipeline.cmd_convert([src], tmp_path / "two", width=16, image_format="bmp24")
    assert a.written[0].read_bytes() == b.written[0].read_bytes()
    assert codec.read_image(a.written[0].read_bytes()).width == 16


def test_convert_partial_failure(tmp_path):
    good = tmp_path / "good.elf"
    good.write_bytes(synth.build_container("elf", bytes(300)))
    bad = tmp_path / "bad.exe"
    bad.write_bytes(b"MZ" + b"\xff" * 40)
    res = pipeline.cmd_convert([good, bad, tmp_path / "missing.bin"], tmp_path / "out")
    assert res.partial and len(res.errors) == 2 and len(res.written) == 1
    assert cli.main(["convert", str(good), str(bad), "--out", str(tmp_path / "cli")]) == cli.EXIT_PARTIAL


def test_convert_rejects_bad_options(tmp_path):
    with pytest.raises(ValueError):
        pipeline.cmd_convert([], tmp_path, image_format="gif")
    with pytest.raises(codec.InvalidWidth):
        pipeline.cmd_convert([], tmp_path, width=0)


# -- train and eval ------------------------------------------------------------------

def test_train_outputs(trained):
    ckpt, trace = trained
    assert [(r.epoch, r.task) for r in trace] == [(e, t) for e in (1, 2) for t in SMALL_TASKS]
    lines = (ckpt.parent / "trace.tsv").read_text().splitlines()
    assert lines[0].startswith("# epoch") and len(lines) == 1 + len(trace)
    net = mtl.load_network(ckpt)
    assert set(net.tasks) == set(SMALL_TASKS)
    assert net.tasks["t4"].class_names == mtl.MALIMG_FAMILIES


def test_train_task_subset(corpus, tmp_path):
    _, _, images = corpus
    trace = pipeline.cmd_train(images, ["t6"], mtl.desk_config(), mtl.Schedule(epochs=1), 0, tmp_path / "m.ck")
    assert {r.task for r in trace} == {"t6"}
    assert set(mtl.load_network(tmp_path / "m.ck").tasks) == {"t6"}


def test_activation_choice_reaches_checkpoint(corpus, tmp_path):
    _, _, images = corpus
    for act in ("relu", "prelu"):
        pipeline.cmd_train(images, ["t1"], mtl.desk_config(activation=act), mtl.Schedule(epochs=1), 0,
                           tmp_path / f"{act}.ck")
    relu, prelu = mtl.load_network(tmp_path / "relu.ck"), mtl.load_network(tmp_path / "prelu.ck")
    assert relu.cfg.activation == "relu" and prelu.cfg.activation == "prelu"
    assert len(prelu.params()) > len(relu.params())


def test_eval_outputs(corpus, trained, tmp_path):
    _, _, images = corpus
    ckpt, _ = trained
    res = pipeline.cmd_eval(ckpt, images, None, tmp_path)
    man = pipeline.load_manifest(images)
    for t in SMALL_TASKS:
        assert res.matrices[t].total == len(man.select(task=t, split="test"))
        assert (tmp_path / f"confusion_{t}.csv").read_text() == res.matrices[t].to_csv()
    assert res.matrices["t4"].n_classes == 25
    assert (tmp_path / "report.txt").read_text().startswith("task")
    assert len((tmp_path / "metrics.tsv").read_text().splitlines()) == 3
    assert 0 <= pipeline.mean_accuracy(res) <= 1


def test_eval_task_not_in_checkpoint(corpus, tmp_path):
    _, _, images = corpus
    pipeline.cmd_train(images, ["t1"], mtl.desk_config(), mtl.Schedule(epochs=1), 0, tmp_path / "m.ck")
    with pytest.raises(pipeline.TaskNotInCheckpoint):
        pipeline.cmd_eval(tmp_path / "m.ck", images, ["t1", "t4"], tmp_path)


def test_train_unknown_labels_build_own_classes(tmp_path, rng):
    paths = []
    for i, lab in enumerate(["cat", "dog", "cat", "dog"]):
        p = tmp_path / f"{i}.png"
        p.write_bytes(codec.write_png(codec.PixelGrid(rng.integers(0, 256, (16, 16, 3), dtype=np.uint8))))
        paths.append(pipeline.ManifestRecord(p.name, "x", lab, "train"))
    man = pipeline.Manifest(tmp_path, paths).write(tmp_path / "m.tsv")
    pipeline.cmd_train(man, None, mtl.desk_config(), mtl.Schedule(epochs=1), 0, tmp_path / "m.ck")
    assert mtl.load_network(tmp_path / "m.ck").tasks["x"].class_names == ("cat", "dog")


# -- augment -------------------------------------------------------------------

@pytest.fixture(scope="module")
def augmented(corpus):
    root, _, images = corpus
    out = root / "aug"
    from malmtl import cyclegan
    cfg = cyclegan.CycleGanConfig(epochs=1, batch_size=4, seed=0)
    path = pipeline.cmd_augment(images, "t6", 50, out, cfg, generator_out=out / "g.ckpt",
                                trace_out=out / "trace.tsv")
    return path, images


def test_augment_manifest(augmented):
    path, images = augmented
    man = pipeline.load_manifest(path)
    orig = pipeline.load_manifest(images)
    synth_recs = [r for r in man.records if r.synthetic]
    assert len(synth_recs) == 50
    assert all(r.task == "t6" and r.label == "malware" and r.split == "train" for r in synth_recs)
    assert [man.resolve(r).resolve() for r in man.without_synthetic().records] == \
        [orig.resolve(r).resolve() for r in orig.records]
    assert all(man.resolve(r).exists() for r in synth_recs)
    benign = orig.select(task="t6", split="train", label="benign")
    g = codec.read_image(man.resolve(synth_recs[0]).read_bytes())
    b = codec.read_image(orig.resolve(benign[0]).read_bytes())
    assert (g.height, g.width) == (b.height, b.width)


def test_augment_with_saved_generator(augmented, tmp_path):
    path, images = augmented
    gen = Path(path).parent / "g.ckpt"
    again = pipeline.cmd_augment(images, "t6", 3, tmp_path, generator=gen)
    assert len(pipeline.load_manifest(again).select(include_synthetic=True)) - \
        len(pipeline.load_manifest(images).records) == 3


def test_train_on_augmented_manifest(augmented, tmp_path):
    path, _ = augmented
    with_syn = pipeline.cmd_train(path, ["t6"], mtl.desk_config(), mtl.Schedule(epochs=1), 0, tmp_path / "a.ck")
    without = pipeline.cmd_train(path, ["t6"], mtl.desk_config(), mtl.Schedule(epochs=1), 0, tmp_path / "b.ck",
                                 include_synthetic=False)
    assert with_syn != without


def test_augment_needs_both_classes(corpus, tmp_path):
    _, _, images = corpus
    with pytest.raises(mtl.EmptyDataset):
        pipeline.cmd_augment(images, "t4", 5, tmp_path)


def test_common_shape():
    grids = [codec.PixelGrid(np.zeros((h, w, 3), np.uint8)) for h, w in [(25, 26), (30, 17)]]
    assert pipeline.common_shape(grids) == (24, 16)
    with pytest.raises(ValueError):
        pipeline.common_shape([codec.PixelGrid(np.zeros((7, 40, 3), np.uint8))])
