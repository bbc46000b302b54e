"""In-memory experiment helpers: synthetic datasets and joint vs single-task comparisons."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import codec, mtl, synth
from .containers import flatten, parse


def corpus_datasets(spec: synth.SynthCorpusSpec):
    """Generate, parse and image a synthetic corpus without touching disk.

    Returns ``(task_specs, train, test)`` where train/test map task id to a
    list of ``(PixelGrid, label_index)``.
    """
    canon = {t.task_id: t for t in mtl.default_tasks()}
    specs = []
    for t in spec.tasks:
        base = canon.get(t.task_id)
        if base is not None and base.class_names == t.class_names:
            specs.append(base)
        else:
            specs.append(mtl.TaskSpec(t.task_id, "binary" if len(t.class_names) == 2 else "family", t.class_names))
    by_id = {s.task_id: s for s in specs}
    train = {s.task_id: [] for s in specs}
    test = {s.task_id: [] for s in specs}
    for s in synth.generate_corpus(spec):
        grid = codec.bytes_to_grid(flatten(parse(s.data)))
        (train if s.split == "train" else test)[s.task_id].append((grid, by_id[s.task_id].label_index(s.label)))
    return specs, train, test


@dataclass(frozen=True)
class ComparisonResult:
    seed: int
    mtl_acc: dict
    stl_acc: dict

    @property
    def mtl_mean(self) -> float:
        return float(np.mean(list(self.mtl_acc.values())))

    @property
    def stl_mean(self) -> float:
        return float(np.mean(list(self.stl_acc.values())))


def mtl_vs_stl(spec: synth.SynthCorpusSpec, cfg: mtl.TrunkConfig, schedule: mtl.Schedule, seed: int
               ) -> ComparisonResult:
    """Held-out accuracy per task of one joint network and of one network per task.

    Both arms use the same corpus, the same initial seed and the same epoch
    budget.
    """
    specs, train, test = corpus_datasets(spec)
    ids = [s.task_id for s in specs]
    joint = mtl.build_network(cfg, specs, seed)
    mtl.train(joint, train, ids, schedule, seed)
    mtl_acc = {t: mtl.evaluate_accuracy(joint, test[t], t) for t in ids}
    stl_acc = {}
    for s in specs:
        single = mtl.build_network(cfg, [s], seed)
        mtl.train(single, {s.task_id: train[s.task_id]}, [s.task_id], schedule, seed)
        stl_acc[s.task_id] = mtl.evaluate_accuracy(single, test[s.task_id], s.task_id)
    return ComparisonResult(seed, mtl_acc, stl_acc)
