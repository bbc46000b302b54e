"""Dataset manifests and the convert / synth / train / eval / augment commands.

A manifest is UTF-8 text with one tab-separated record per line::

    path    task    label    split    synthetic

``path`` is relative to the manifest's own directory, ``split`` is
``train`` or ``test`` and ``synthetic`` is ``0`` or ``1``. Lines starting
with ``#`` are comments.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import codec, cyclegan, metrics, mtl, synth
from .containers import BinaryFormat, MalformedContainer, flatten, parse

OUTPUT_ROOT_ENV = "MALMTL_OUTPUT_ROOT"
MANIFEST_HEADER = "# path\ttask\tlabel\tsplit\tsynthetic\n"


class ManifestError(ValueError):
    pass


class TaskNotInCheckpoint(KeyError):
    pass


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "malmtl-out"))


@dataclass(frozen=True)
class ManifestRecord:
    path: str
    task: str
    label: str
    split: str
    synthetic: bool = False

    def line(self) -> str:
        return f"{self.path}\t{self.task}\t{self.label}\t{self.split}\t{int(self.synthetic)}\n"


@dataclass
class Manifest:
    root: Path
    records: list[ManifestRecord] = field(default_factory=list)

    def resolve(self, rec: ManifestRecord) -> Path:
        return self.root / rec.path

    def select(self, task=None, split=None, label=None, include_synthetic=True) -> list[ManifestRecord]:
        return [r for r in self.records
                if (task is None or r.task == task) and (split is None or r.split == split)
                and (label is None or r.label == label) and (include_synthetic or not r.synthetic)]

    def tasks(self) -> list[str]:
        return sorted({r.task for r in self.records})

    def without_synthetic(self) -> Manifest:
        return Manifest(self.root, [r for r in self.records if not r.synthetic])

    def dumps(self) -> str:
        return MANIFEST_HEADER + "".join(r.line() for r in self.records)

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        rebased = [_rebase(r, self.root, path.parent) for r in self.records]
        path.write_text(Manifest(path.parent, rebased).dumps(), encoding="utf-8")
        return path


def _rebase(rec: ManifestRecord, old_root: Path, new_root: Path) -> ManifestRecord:
    if old_root.resolve() == new_root.resolve():
        return rec
    target = (old_root / rec.path).resolve()
    rel = os.path.relpath(target, new_root.resolve())
    return ManifestRecord(Path(rel).as_posix(), rec.task, rec.label, rec.split, rec.synthetic)


def parse_manifest(text: str, root) -> Manifest:
    records = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 5:
            raise ManifestError(f"line {lineno}: expected 5 tab-separated fields, got {len(parts)}")
        path, task, label, split, flag = parts
        if split not in ("train", "test", "-"):
            raise ManifestError(f"line {lineno}: split must be train or test, got {split!r}")
        if flag not in ("0", "1"):
            raise ManifestError(f"line {lineno}: synthetic flag must be 0 or 1, got {flag!r}")
        records.append(ManifestRecord(path, task, label, split, flag == "1"))
    return Manifest(Path(root), records)


def load_manifest(path, include_synthetic: bool = True) -> Manifest:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ManifestError(f"cannot read manifest {path}: {e}") from None
    man = parse_manifest(text, path.parent)
    return man if include_synthetic else man.without_synthetic()


# -- synth -------------------------------------------------------------------

def cmd_synth(spec: synth.SynthCorpusSpec, out_dir) -> Path:
    """Write the synthetic container corpus under ``out_dir`` and return its manifest path."""
    out_dir = Path(out_dir)
    man = Manifest(out_dir)
    for s in synth.generate_corpus(spec):
        rel = Path(s.task_id) / s.filename
        (out_dir / rel).parent.mkdir(parents=True, exist_ok=True)
        (out_dir / rel).write_bytes(s.data)
        man.records.append(ManifestRecord(rel.as_posix(), s.task_id, s.label, s.split))
    return man.write(out_dir / "manifest.tsv")


# -- convert -----------------------------------------------------------------

@dataclass
class ConvertResult:
    manifest_path: Path | None
    written: list[Path] = field(default_factory=list)
    errors: list[str] = field(default_factory=list)

    @property
    def partial(self) -> bool:
        return bool(self.errors)


def convert_bytes(data: bytes, fmt: BinaryFormat | None = None, width: int | None = None,
                  image_format: str = "png") -> bytes:
    """Container bytes -> encoded image bytes (parse, flatten, grid, encode)."""
    pb = parse(data, fmt)
    grid = codec.bytes_to_grid(flatten(pb), width, format=pb.format.value)
    return codec.WRITERS[image_format](grid)


def cmd_convert(inputs, out_dir, fmt: BinaryFormat | None = None, width: int | None = None,
                image_format: str = "png", manifest=None) -> ConvertResult:
    """Convert container files into images.

    ``inputs`` is a list of paths, or ``None`` with ``manifest`` given, in
    which case every manifest record is converted and its task, label and
    split carry over to the output manifest. Malformed inputs are reported
    in ``errors`` and skipped.
    """
    if image_format not in codec.WRITERS:
        raise ValueError(f"unknown image format {image_format!r}; choose from {sorted(codec.WRITERS)}")
    if width is not None and width < 1:
        raise codec.InvalidWidth(f"width must be >= 1, got {width}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ext = codec.EXTENSIONS[image_format]
    if manifest is not None:
        src = load_manifest(manifest)
        jobs = [(src.resolve(r), Path(r.path).with_suffix("").as_posix() + ext, r) for r in src.records]
    else:
        jobs = [(Path(p), Path(p).name + ext, ManifestRecord("", "-", "-", "-")) for p in inputs]
    result = ConvertResult(None)
    out_man = Manifest(out_dir)
    for path, rel, rec in jobs:
        try:
            data = path.read_bytes()
        except OSError as e:
            result.errors.append(f"{path}\tunreadable: {e.strerror}")
            continue
        try:
            image = convert_bytes(data, fmt, width, image_format)
        except (MalformedContainer, ValueError) as e:
            result.errors.append(f"{path}\t{type(e).__name__}: {e}")
            continue
        target = out_dir / rel
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_bytes(image)
        result.written.append(target)
        out_man.records.append(ManifestRecord(rel, rec.task, rec.label, rec.split, rec.synthetic))
    result.manifest_path = out_man.write(out_dir / "manifest.tsv")
    return result


# -- train -------------------------------------------------------------------

def read_grid(path) -> codec.PixelGrid:
    try:
        return codec.read_image(Path(path).read_bytes())
    except OSError as e:
        raise ManifestError(f"manifest image {path} is not readable: {e.strerror}") from None


def task_specs_for(man: Manifest, tasks) -> list[mtl.TaskSpec]:
    """Task specs whose class lists cover the manifest's labels.

    The canonical class lists (benign/malware, the 25 families for t4) are
    used when they cover every label; otherwise the sorted label set is.
    """
    canon = {t.task_id: t for t in mtl.default_tasks()}
    specs = []
    for tid in tasks:
        labels = {r.label for r in man.select(task=tid)}
        if not labels:
            raise mtl.EmptyDataset(f"manifest has no records for task {tid}")
        base = canon.get(tid)
        if base is not None and labels <= set(base.class_names):
            specs.append(base)
        elif len(labels) == 2:
            specs.append(mtl.TaskSpec(tid, "binary", tuple(sorted(labels))))
        else:
            specs.append(mtl.TaskSpec(tid, "family", tuple(sorted(labels))))
    return specs


def load_split(man: Manifest, spec: mtl.TaskSpec, split: str, include_synthetic: bool = True):
    return [(read_grid(man.resolve(r)), spec.label_index(r.label))
            for r in man.select(task=spec.task_id, split=split, include_synthetic=include_synthetic)]


def cmd_train(manifest, tasks, cfg: mtl.TrunkConfig, schedule: mtl.Schedule, seed: int, checkpoint_out,
              trace_out=None, include_synthetic: bool = True, log=None) -> list[mtl.TraceRecord]:
    man = load_manifest(manifest)
    tasks = list(tasks) if tasks else man.tasks()
    if not tasks:
        raise mtl.EmptyDataset(f"manifest {manifest} has no records")
    specs = task_specs_for(man, tasks)
    data = {s.task_id: load_split(man, s, "train", include_synthetic) for s in specs}
    net = mtl.build_network(cfg, specs, seed)
    trace = mtl.train(net, data, [s.task_id for s in specs], schedule, seed, callback=log)
    Path(checkpoint_out).parent.mkdir(parents=True, exist_ok=True)
    mtl.save_network(checkpoint_out, net)
    if trace_out is not None:
        Path(trace_out).write_text("# epoch\ttask\tloss\taccuracy\n" + "".join(r.line() + "\n" for r in trace))
    return trace


# -- eval --------------------------------------------------------------------

@dataclass
class EvalResult:
    reports: dict[str, metrics.MetricsReport]
    matrices: dict[str, metrics.ConfusionMatrix]


def evaluate(net: mtl.MtlNetwork, man: Manifest, tasks) -> EvalResult:
    reports, matrices = {}, {}
    for tid in tasks:
        if tid not in net.tasks:
            raise TaskNotInCheckpoint(tid)
        spec = net.tasks[tid]
        test = load_split(man, spec, "test")
        if not test:
            raise mtl.EmptyDataset(f"no test records for task {tid}")
        pred, _ = mtl.predict_batch(net, [im for im, _ in test], tid)
        cm = metrics.ConfusionMatrix.from_pairs(spec.n_classes, [lab for _, lab in test], pred.tolist(),
                                                spec.class_names)
        matrices[tid] = cm
        reports[tid] = metrics.task_report(cm)
    return EvalResult(reports, matrices)


def cmd_eval(checkpoint, manifest, tasks, out_dir) -> EvalResult:
    """Evaluate the test split; write ``report.txt``, ``metrics.tsv`` and one CSV matrix per task."""
    net = mtl.load_network(checkpoint)
    man = load_manifest(manifest)
    tasks = list(tasks) if tasks else list(net.tasks)
    missing = [t for t in tasks if t not in net.tasks]
    if missing:
        raise TaskNotInCheckpoint(f"tasks not in checkpoint: {', '.join(missing)}")
    res = evaluate(net, man, tasks)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.txt").write_text(metrics.format_table(res.reports) + "\n")
    (out_dir / "metrics.tsv").write_text("".join(r.record(f"task={t}\t") + "\n" for t, r in res.reports.items()))
    for t, cm in res.matrices.items():
        (out_dir / f"confusion_{t}.csv").write_text(cm.to_csv())
    return res


# -- augment -----------------------------------------------------------------

def common_shape(grids) -> tuple[int, int]:
    """Largest multiple-of-8 (h, w) that fits inside every grid."""
    h = min(g.height for g in grids) // 8 * 8
    w = min(g.width for g in grids) // 8 * 8
    if h < 8 or w < 8:
        raise ValueError("images must be at least 8x8 for generator training")
    return h, w


def cmd_augment(manifest, task, n: int, out_dir, gan_cfg: cyclegan.CycleGanConfig = cyclegan.CycleGanConfig(),
                generator=None, benign_label: str = "benign", malware_label: str = "malware",
                generator_out=None, trace_out=None) -> Path:
    """Translate benign training images of ``task`` into ``n`` synthetic malware images.

    Trains a CycleGAN on the task's benign and malware training images
    (cropped to a shared multiple-of-8 size) unless a saved ``generator`` is
    given. Writes the images and an output manifest holding every original
    record plus the new ones flagged synthetic. Returns the manifest path.
    """
    man = load_manifest(manifest)
    benign_recs = man.select(task=task, split="train", label=benign_label, include_synthetic=False)
    malware_recs = man.select(task=task, split="train", label=malware_label, include_synthetic=False)
    if not benign_recs or (generator is None and not malware_recs):
        raise mtl.EmptyDataset(f"task {task} needs benign and malware training images")
    benign = [read_grid(man.resolve(r)) for r in benign_recs]
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if generator is not None:
        G = cyclegan.load_generator(generator)
    else:
        malware = [read_grid(man.resolve(r)) for r in malware_recs]
        shape = common_shape(benign + malware)
        x = cyclegan.to_unit_range([cyclegan.fit_to_shape(g, shape) for g in benign])
        y = cyclegan.to_unit_range([cyclegan.fit_to_shape(g, shape) for g in malware])
        gan = cyclegan.train_cyclegan(x, y, gan_cfg)
        G = gan.G
        if trace_out is not None:
            Path(trace_out).write_text("# step\td_x_loss\td_y_loss\tg_loss\tcycle_loss\n"
                                       + "".join(r.line() + "\n" for r in gan.trace))
        if generator_out is not None:
            cyclegan.save_generator(generator_out, G)
    grids = cyclegan.augment(G, benign, n, [r.path for r in benign_recs])
    img_dir = out_dir / "synthetic" / task
    img_dir.mkdir(parents=True, exist_ok=True)
    out_man = Manifest(man.root, list(man.records))
    for i, g in enumerate(grids):
        target = img_dir / f"{task}_{malware_label}_synthetic_{i:04d}.png"
        target.write_bytes(codec.write_png(g))
        rel = os.path.relpath(target.resolve(), man.root.resolve())
        out_man.records.append(ManifestRecord(Path(rel).as_posix(), task, malware_label, "train", True))
    return out_man.write(out_dir / "manifest.tsv")


def accuracy_by_task(res: EvalResult) -> dict[str, float]:
    return {t: r.accuracy for t, r in res.reports.items()}


def mean_accuracy(res: EvalResult) -> float:
    return float(np.mean(list(accuracy_by_task(res).values())))
