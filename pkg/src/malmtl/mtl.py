"""Hard-parameter-sharing multi-task CNN for malware images.

One shared trunk (five convolutions, max-pooling after the first four,
adaptive average pooling, two fully connected layers) feeds one linear
output head per task. Every task reads and writes the same trunk ``Param``
objects, so a gradient step driven by any task is seen by all of them.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np

from .codec import PixelGrid
from .nn import checkpoint
from .nn.functional import LabelOutOfRange, softmax, softmax_cross_entropy
from .nn.layers import Activation, AdaptiveAvgPool2d, Conv2d, Flatten, Linear, MaxPool2d, Sequential
from .nn.optim import make_optimizer

MALIMG_FAMILIES = (
    "Adialer.C", "Agent.FYI", "Allaple.A", "Allaple.L", "Alueron.gen!J", "Autorun.K", "C2LOP.P",
    "C2LOP.gen!g", "Dialplatform.B", "Dontovo.A", "Fakerean", "Instantaccess", "Lolyda.AA1",
    "Lolyda.AA2", "Lolyda.AA3", "Lolyda.AT", "Malex.gen!J", "Obfuscator.AD", "Rbot!gen", "Skintrim.N",
    "Swizzor.gen!E", "Swizzor.gen!I", "VB.AT", "Wintrim.BX", "Yuner.A",
)


class DuplicateTask(ValueError):
    pass


class UnknownTask(KeyError):
    pass


class InputTooSmall(ValueError):
    pass


class EmptyDataset(ValueError):
    pass


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    kind: str = "binary"
    class_names: tuple[str, ...] = ("benign", "malware")

    def __post_init__(self):
        object.__setattr__(self, "class_names", tuple(self.class_names))
        if self.kind not in ("binary", "family"):
            raise ValueError(f"task kind must be 'binary' or 'family', got {self.kind!r}")
        if self.kind == "binary" and len(self.class_names) != 2:
            raise ValueError(f"binary task {self.task_id} needs exactly 2 classes")
        if len(self.class_names) < 2 or len(set(self.class_names)) != len(self.class_names):
            raise ValueError(f"task {self.task_id} needs >= 2 distinct class names")

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def label_index(self, name: str) -> int:
        try:
            return self.class_names.index(name)
        except ValueError:
            raise ValueError(f"{name!r} is not a class of task {self.task_id}") from None


def default_tasks() -> list[TaskSpec]:
    """The seven tasks: six malware-vs-benign tasks and the 25-family task t4."""
    return [TaskSpec("t4", "family", MALIMG_FAMILIES) if i == 4 else TaskSpec(f"t{i}") for i in range(1, 8)]


@dataclass(frozen=True)
class TrunkConfig:
    kernel_sizes: tuple[int, ...] = (9, 3, 3, 3, 3)
    channels: tuple[int, ...] = (32, 64, 128, 256, 256)
    pool_after: tuple[int, ...] = (0, 1, 2, 3)
    adaptive_pool_out: tuple[int, int] = (6, 6)
    fc_widths: tuple[int, ...] = (1024, 1024)
    activation: str = "prelu"
    elu_alpha: float = 1.0
    input_policy: str = "adaptive"  # or "resize"
    resize_to: tuple[int, int] | None = None
    in_channels: int = 3

    def __post_init__(self):
        for name in ("kernel_sizes", "channels", "pool_after", "adaptive_pool_out", "fc_widths"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.resize_to is not None:
            object.__setattr__(self, "resize_to", tuple(self.resize_to))
        if len(self.kernel_sizes) != 5 or len(self.channels) != 5:
            raise ValueError("the trunk has exactly 5 convolutional layers")
        if self.pool_after != (0, 1, 2, 3):
            raise ValueError("max-pooling follows the first four convolutions only")
        if len(self.fc_widths) != 2:
            raise ValueError("the trunk ends in exactly 2 fully connected layers")
        if self.activation not in Activation.KINDS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.input_policy not in ("adaptive", "resize"):
            raise ValueError("input_policy must be 'adaptive' or 'resize'")
        if self.input_policy == "resize" and self.resize_to is None:
            raise ValueError("input_policy 'resize' needs resize_to=(h, w)")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> TrunkConfig:
        return cls(**d)


def desk_config(**overrides) -> TrunkConfig:
    """Same topology as the full trunk with narrow layers, for CPU-scale runs."""
    base = dict(channels=(8, 16, 16, 32, 32), fc_widths=(64, 64), adaptive_pool_out=(1, 1))
    base.update(overrides)
    return TrunkConfig(**base)


def _spatial_after(cfg: TrunkConfig, n: int) -> int | None:
    for i, k in enumerate(cfg.kernel_sizes):
        pad = k // 2
        if k > n + 2 * pad:
            return None
        n = n + 2 * pad - k + 1
        if i in cfg.pool_after:
            if n < 2:
                return None
            n = (n - 2) // 2 + 1
    return n


def min_input_size(cfg: TrunkConfig) -> tuple[int, int]:
    """Smallest (H, W) the conv/pool stack can reduce to the adaptive-pool target."""
    out = []
    for target in cfg.adaptive_pool_out:
        n = 1
        while True:
            after = _spatial_after(cfg, n)
            if after is not None and after >= target:
                out.append(n)
                break
            n += 1
    return tuple(out)


def count_trunk_stages(cfg: TrunkConfig) -> int:
    """Weight-bearing and pooling stages: convolutions, max-pools and FC layers."""
    return len(cfg.kernel_sizes) + len(cfg.pool_after) + len(cfg.fc_widths)


def build_trunk(cfg: TrunkConfig, rng: np.random.Generator) -> Sequential:
    layers = []
    c_in = cfg.in_channels
    for i, (k, c_out) in enumerate(zip(cfg.kernel_sizes, cfg.channels)):
        layers.append(Conv2d(c_in, c_out, k, rng=rng, name=f"trunk.conv{i + 1}"))
        layers.append(Activation(cfg.activation, c_out, cfg.elu_alpha, name=f"trunk.act_conv{i + 1}"))
        if i in cfg.pool_after:
            layers.append(MaxPool2d(2, 2))
        c_in = c_out
    layers.append(AdaptiveAvgPool2d(cfg.adaptive_pool_out))
    layers.append(Flatten())
    n_in = c_in * cfg.adaptive_pool_out[0] * cfg.adaptive_pool_out[1]
    for j, width in enumerate(cfg.fc_widths):
        layers.append(Linear(n_in, width, rng=rng, name=f"trunk.fc{j + 1}"))
        layers.append(Activation(cfg.activation, width, cfg.elu_alpha, name=f"trunk.act_fc{j + 1}"))
        n_in = width
    return Sequential(*layers)


def image_array(image) -> np.ndarray:
    """PixelGrid or (H, W, 3) uint8 -> (3, H, W) float64 centred on 0 (v / 255 - 0.5).

    Float arrays already laid out as (C, H, W) pass through unchanged.
    """
    if isinstance(image, PixelGrid):
        return image.pixels.transpose(2, 0, 1) / 255.0 - 0.5
    arr = np.asarray(image)
    if arr.ndim == 3 and arr.shape[2] == 3 and arr.dtype == np.uint8:
        return arr.transpose(2, 0, 1) / 255.0 - 0.5
    return np.asarray(arr, dtype=np.float64)


def _resize_nearest(x: np.ndarray, hw) -> np.ndarray:
    h, w = x.shape[-2:]
    rows = ((np.arange(hw[0]) + 0.5) * h / hw[0]).astype(int)
    cols = ((np.arange(hw[1]) + 0.5) * w / hw[1]).astype(int)
    return x[..., rows[:, None], cols[None, :]]


class MtlNetwork:
    def __init__(self, cfg: TrunkConfig, tasks, seed: int = 0):
        tasks = list(tasks)
        if not 1 <= len(tasks) <= 7:
            raise ValueError(f"between 1 and 7 tasks are supported, got {len(tasks)}")
        ids = [t.task_id for t in tasks]
        dup = {i for i in ids if ids.count(i) > 1}
        if dup:
            raise DuplicateTask(f"duplicate task ids: {sorted(dup)}")
        self.cfg = cfg
        self.seed = seed
        self.tasks = {t.task_id: t for t in tasks}
        rng = np.random.default_rng(seed)
        self.trunk = build_trunk(cfg, rng)
        self.heads = {t.task_id: Linear(cfg.fc_widths[-1], t.n_classes, rng=rng, name=f"head.{t.task_id}")
                      for t in tasks}
        self.min_input = min_input_size(cfg)

    # -- parameters ---------------------------------------------------------
    def trunk_params(self):
        return self.trunk.params()

    def head_params(self, task_id):
        return self.heads[task_id].params()

    def params(self):
        return self.trunk_params() + [p for tid in self.tasks for p in self.head_params(tid)]

    def zero_grad(self):
        for p in self.params():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {p.name: p.value for p in self.params()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.params()
        missing = {p.name for p in params} - set(state)
        if missing:
            raise KeyError(f"state is missing parameters: {sorted(missing)[:5]}")
        for p in params:
            if state[p.name].shape != p.value.shape:
                raise ValueError(f"shape mismatch for {p.name}")
            p.value[...] = state[p.name]

    # -- forward -------------------------------------------------------------
    def task(self, task_id) -> TaskSpec:
        try:
            return self.tasks[task_id]
        except KeyError:
            raise UnknownTask(task_id) from None

    def prepare(self, images) -> np.ndarray:
        """Stack same-shaped images into an (N, 3, H, W) batch, applying the input policy."""
        arrs = [image_array(im) for im in images]
        x = np.stack(arrs)
        if self.cfg.input_policy == "resize":
            return _resize_nearest(x, self.cfg.resize_to)
        h, w = x.shape[-2:]
        if h < self.min_input[0] or w < self.min_input[1]:
            raise InputTooSmall(f"image {h}x{w} is smaller than the trunk minimum {self.min_input[0]}x{self.min_input[1]}")
        return x

    def features(self, x):
        return self.trunk.forward(x)

    def logits(self, images, task_id) -> np.ndarray:
        """Logits for a list of images of one shape."""
        self.task(task_id)
        feats, _ = self.trunk.forward(self.prepare(images))
        return self.heads[task_id](feats)


def build_network(cfg: TrunkConfig, tasks, seed: int = 0) -> MtlNetwork:
    return MtlNetwork(cfg, tasks, seed)


def _shape_of(image):
    if isinstance(image, PixelGrid):
        return image.pixels.shape[:2]
    arr = np.asarray(image)
    return arr.shape[:2] if (arr.ndim == 3 and arr.shape[2] == 3 and arr.dtype == np.uint8) else arr.shape[-2:]


def _group_by_shape(images) -> list[list[int]]:
    groups: dict = {}
    for i, im in enumerate(images):
        groups.setdefault(tuple(_shape_of(im)), []).append(i)
    return list(groups.values())


def forward(net: MtlNetwork, image, task_id) -> np.ndarray:
    """Logit vector of one image for one task."""
    return net.logits([image], task_id)[0]


def predict(net: MtlNetwork, image, task_id) -> tuple[int, np.ndarray]:
    """Arg-max class (ties go to the lowest index) and the softmax probabilities."""
    probs = softmax(forward(net, image, task_id))
    return int(np.argmax(probs)), probs


def predict_batch(net: MtlNetwork, images, task_id) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised ``predict`` over a list of images (any mix of shapes)."""
    net.task(task_id)
    probs = np.zeros((len(images), net.tasks[task_id].n_classes))
    for idx in _group_by_shape(images):
        probs[idx] = softmax(net.logits([images[i] for i in idx], task_id))
    return probs.argmax(axis=1), probs


@dataclass
class JointLossResult:
    loss: float
    task_loss: dict[str, float] = field(default_factory=dict)
    task_correct: dict[str, int] = field(default_factory=dict)
    task_count: dict[str, int] = field(default_factory=dict)


def joint_loss(net: MtlNetwork, batch, weights: dict | None = None, accumulate: bool = False) -> JointLossResult:
    """Weighted sum over tasks of the mean cross-entropy of that task's samples.

    ``batch`` is a list of ``(image, task_id, label)``. Gradients are written
    into the trunk and into the heads of the tasks present (zeroed first
    unless ``accumulate``). Samples are processed in groups of equal image
    shape, in order of first appearance, so the reduction order is fixed.
    """
    if not batch:
        raise EmptyDataset("empty batch")
    if not accumulate:
        net.zero_grad()
    weights = weights or {}
    counts: dict[str, int] = {}
    for _im, tid, label in batch:
        spec = net.task(tid)
        if not 0 <= int(label) < spec.n_classes:
            raise LabelOutOfRange(f"label {label} invalid for task {tid} with {spec.n_classes} classes")
        counts[tid] = counts.get(tid, 0) + 1

    result = JointLossResult(0.0, {t: 0.0 for t in counts}, {t: 0 for t in counts}, dict(counts))
    images = [b[0] for b in batch]
    for idx in _group_by_shape(images):
        x = net.prepare([images[i] for i in idx])
        feats, trunk_cache = net.trunk.forward(x)
        dfeats = np.zeros_like(feats)
        by_task: dict[str, list[int]] = {}
        for row, i in enumerate(idx):
            by_task.setdefault(batch[i][1], []).append(row)
        for tid, rows in by_task.items():
            head = net.heads[tid]
            labels = np.array([int(batch[idx[r]][2]) for r in rows])
            logits, head_cache = head.forward(feats[rows])
            mean_ce, dlogits = softmax_cross_entropy(logits, labels)
            scale = weights.get(tid, 1.0) * len(rows) / counts[tid]
            result.loss += scale * mean_ce
            result.task_loss[tid] += mean_ce * len(rows) / counts[tid]
            result.task_correct[tid] += int((logits.argmax(axis=1) == labels).sum())
            dfeats[rows] += head.backward(head_cache, scale * dlogits)
        net.trunk.backward(trunk_cache, dfeats)
    return result


@dataclass(frozen=True)
class Schedule:
    epochs: int = 10
    batch_size: int = 32
    optimizer: str = "adam"
    optimizer_kwargs: dict = field(default_factory=dict)


@dataclass(frozen=True)
class TraceRecord:
    epoch: int
    task: str
    loss: float
    accuracy: float

    def line(self) -> str:
        return f"{self.epoch}\t{self.task}\t{self.loss!r}\t{self.accuracy!r}"


def train(net: MtlNetwork, datasets: dict, tasks_subset, schedule: Schedule = Schedule(), seed: int = 0,
          weights: dict | None = None, callback=None) -> list[TraceRecord]:
    """Jointly train ``net`` on the tasks in ``tasks_subset``.

    ``datasets`` maps task id -> list of ``(image, label_index)``. Each epoch
    shuffles every task's samples, cuts them into single-task batches and
    interleaves the batches round-robin across tasks. The optimizer only
    steps the trunk and the head of the batch's task. Returns one trace
    record per (epoch, task) with the running training loss and accuracy.
    """
    subset = [t for t in net.tasks if t in set(tasks_subset)]
    unknown = set(tasks_subset) - set(net.tasks)
    if unknown:
        raise UnknownTask(sorted(unknown)[0])
    if not subset:
        raise EmptyDataset("empty task subset")
    for tid in subset:
        if not datasets.get(tid):
            raise EmptyDataset(f"no training samples for task {tid}")

    rng = np.random.default_rng(seed)
    opt = make_optimizer(schedule.optimizer, **schedule.optimizer_kwargs)
    trunk_params = net.trunk_params()
    trace = []
    for epoch in range(1, schedule.epochs + 1):
        queues = []
        for tid in subset:
            data = datasets[tid]
            order = rng.permutation(len(data))
            bs = schedule.batch_size
            queues.append([[(data[i][0], tid, data[i][1]) for i in order[s:s + bs]] for s in range(0, len(order), bs)])
        totals = {tid: [0.0, 0, 0] for tid in subset}
        for step in range(max(len(q) for q in queues)):
            for q in queues:
                if step >= len(q):
                    continue
                batch = q[step]
                tid = batch[0][1]
                res = joint_loss(net, batch, weights)
                opt.step(trunk_params + net.head_params(tid))
                tot = totals[tid]
                tot[0] += res.task_loss[tid] * len(batch)
                tot[1] += res.task_correct[tid]
                tot[2] += len(batch)
        for tid in subset:
            loss_sum, correct, n = totals[tid]
            rec = TraceRecord(epoch, tid, loss_sum / n, correct / n)
            trace.append(rec)
            if callback is not None:
                callback(rec)
    return trace


def evaluate_accuracy(net: MtlNetwork, data, task_id) -> float:
    if not data:
        raise EmptyDataset(f"no samples for task {task_id}")
    pred, _ = predict_batch(net, [im for im, _ in data], task_id)
    return float(np.mean(pred == np.array([lab for _, lab in data])))


def save_network(path, net: MtlNetwork) -> None:
    meta = {
        "kind": "mtl",
        "config": net.cfg.to_dict(),
        "seed": net.seed,
        "tasks": [{"task_id": t.task_id, "kind": t.kind, "class_names": list(t.class_names)}
                  for t in net.tasks.values()],
    }
    checkpoint.save(path, net.state_dict(), meta)


def load_network(path) -> MtlNetwork:
    meta, params = checkpoint.load(path)
    if meta.get("kind") != "mtl":
        raise checkpoint.CheckpointError(f"{path} does not hold a multi-task network")
    cfg = TrunkConfig.from_dict(meta["config"])
    tasks = [TaskSpec(t["task_id"], t["kind"], tuple(t["class_names"])) for t in meta["tasks"]]
    net = MtlNetwork(cfg, tasks, meta.get("seed", 0))
    net.load_state_dict(params)
    return net


def config_summary(net: MtlNetwork) -> str:
    return json.dumps({"config": net.cfg.to_dict(), "tasks": list(net.tasks)}, sort_keys=True)
