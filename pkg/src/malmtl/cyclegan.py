"""Small CycleGAN for translating benign-image and malware-image domains.

G maps X (benign) to Y (malware), F maps Y back to X; DX and DY score how
real an image looks in their domain. Images are handled as (N, 3, H, W)
float arrays in [-1, 1]; H and W must be multiples of 8 so the three
stride-2 encoder convolutions and three 2x upsamplings restore the input size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .codec import PixelGrid
from .mtl import EmptyDataset
from .nn import checkpoint
from .nn.layers import Activation, Conv2d, GlobalAvgPool, Linear, Sequential, Sigmoid, Tanh, Upsample2x
from .nn.optim import Adam

EPS = 1e-12


class EmptyBatch(ValueError):
    pass


class UntrainedGenerator(RuntimeError):
    pass


def exact_mean(a) -> float:
    """Mean that returns v exactly when every element equals v.

    Summing the offsets from the first element keeps constant inputs at a
    zero residual, where a plain pairwise sum can drift by an ulp.
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    if a.size == 0:
        raise EmptyBatch("mean of an empty batch")
    return float(a[0] + np.mean(a - a[0]))


class GeneratorNet:
    def __init__(self, direction: str = "G", widths=(8, 16, 32), seed: int = 0):
        if direction not in ("G", "F"):
            raise ValueError("direction must be 'G' (X->Y) or 'F' (Y->X)")
        self.direction = direction
        self.widths = tuple(widths)
        self.trained = False
        rng = np.random.default_rng(seed)
        layers = []
        c_in = 3
        for i, w in enumerate(self.widths):
            layers += [Conv2d(c_in, w, 3, stride=2, pad=1, rng=rng, name=f"{direction}.down{i + 1}"),
                       Activation("leaky_relu")]
            c_in = w
        ups = list(reversed(self.widths[:-1])) + [3]
        for i, w in enumerate(ups):
            layers += [Upsample2x(), Conv2d(c_in, w, 3, rng=rng, name=f"{direction}.up{i + 1}")]
            layers.append(Activation("leaky_relu") if i < len(ups) - 1 else Tanh())
            c_in = w
        self.net = Sequential(*layers)

    def params(self):
        return self.net.params()

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        h, w = x.shape[-2:]
        if h % 8 or w % 8:
            raise ValueError(f"generator input {h}x{w} must have sides divisible by 8")
        return self.net.forward(x)

    def backward(self, cache, dout):
        return self.net.backward(cache, dout)

    def __call__(self, x):
        return self.forward(x)[0]


class IdentityGenerator:
    """Maps every batch to itself; the degenerate case for loss checks."""

    def __init__(self, direction="G"):
        self.direction = direction
        self.trained = True

    def params(self):
        return []

    def forward(self, x):
        return np.asarray(x, dtype=np.float64), None

    def backward(self, cache, dout):
        return dout

    def __call__(self, x):
        return np.asarray(x, dtype=np.float64)


class DiscriminatorNet:
    def __init__(self, domain: str = "DY", widths=(8, 16), seed: int = 0):
        if domain not in ("DX", "DY"):
            raise ValueError("domain must be 'DX' or 'DY'")
        self.domain = domain
        rng = np.random.default_rng(seed)
        layers = []
        c_in = 3
        for i, w in enumerate(widths):
            layers += [Conv2d(c_in, w, 3, stride=2, pad=1, rng=rng, name=f"{domain}.conv{i + 1}"),
                       Activation("leaky_relu")]
            c_in = w
        layers += [GlobalAvgPool(), Linear(c_in, 1, rng=rng, name=f"{domain}.fc"), Sigmoid()]
        self.net = Sequential(*layers)

    def params(self):
        return self.net.params()

    def forward(self, x):
        out, cache = self.net.forward(np.asarray(x, dtype=np.float64))
        return out[:, 0], cache

    def backward(self, cache, dscore):
        return self.net.backward(cache, dscore[:, None])

    def __call__(self, x):
        return self.forward(x)[0]


class ConstantDiscriminator:
    """Scores every image with the same probability."""

    def __init__(self, p: float = 0.5):
        self.p = p

    def params(self):
        return []

    def forward(self, x):
        n = np.asarray(x).shape[0]
        return np.full(n, self.p), n

    def backward(self, cache, dscore):
        return None

    def __call__(self, x):
        return self.forward(x)[0]


def _check(batch):
    if batch is None or len(batch) == 0:
        raise EmptyBatch("batch is empty")
    return np.asarray(batch, dtype=np.float64)


def _log(p):
    return np.log(np.maximum(p, EPS))


def d_loss_from_scores(p_real, p_fake) -> float:
    return -exact_mean(_log(p_real)) - exact_mean(_log(1.0 - np.asarray(p_fake)))


def g_loss_from_scores(p_fake) -> float:
    return -exact_mean(_log(p_fake))


def d_loss_score_grads(p_real, p_fake):
    """d(d_loss)/d(score) for the real and fake scores; zero where the clamp is active."""
    p_real, p_fake = np.asarray(p_real), np.asarray(p_fake)
    g_real = np.where(p_real > EPS, -1.0 / (p_real.size * np.maximum(p_real, EPS)), 0.0)
    q = 1.0 - p_fake
    g_fake = np.where(q > EPS, 1.0 / (p_fake.size * np.maximum(q, EPS)), 0.0)
    return g_real, g_fake


def g_loss_score_grad(p_fake):
    p_fake = np.asarray(p_fake)
    return np.where(p_fake > EPS, -1.0 / (p_fake.size * np.maximum(p_fake, EPS)), 0.0)


def adversarial_loss(D, real_batch, fake_batch) -> tuple[float, float]:
    """``(d_loss, g_loss)``: the discriminator's log loss and the non-saturating generator loss."""
    p_real = D(_check(real_batch))
    p_fake = D(_check(fake_batch))
    return d_loss_from_scores(p_real, p_fake), g_loss_from_scores(p_fake)


def l1_mean(a, b) -> float:
    return exact_mean(np.abs(np.asarray(a) - np.asarray(b)))


def cycle_loss(G, F, x_batch, y_batch) -> float:
    """mean |F(G(x)) - x| + mean |G(F(y)) - y| over every pixel and channel."""
    x, y = _check(x_batch), _check(y_batch)
    return l1_mean(F(G(x)), x) + l1_mean(G(F(y)), y)


@dataclass(frozen=True)
class CycleGanConfig:
    lambda_cyc: float = 10.0
    lr_g: float = 2e-4
    lr_d: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    epochs: int = 5
    batch_size: int = 4
    seed: int = 0
    g_widths: tuple[int, ...] = (8, 16, 32)
    d_widths: tuple[int, ...] = (8, 16)

    def __post_init__(self):
        if not (math.isfinite(self.lambda_cyc) and self.lambda_cyc > 0):
            raise ValueError("lambda_cyc must be finite and positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


@dataclass(frozen=True)
class ObjectiveComponents:
    adversarial_g: float
    adversarial_f: float
    cycle: float
    total: float


def gan_value(D, real, fake) -> float:
    """The two-player value E[log D(real)] + E[log(1 - D(fake))], maximised by D."""
    p_real, p_fake = D(real), D(fake)
    return exact_mean(_log(p_real)) + exact_mean(_log(1.0 - p_fake))


def combined_objective(G, F, DX, DY, x_batch, y_batch, cfg: CycleGanConfig | None = None,
                       lambda_cyc: float | None = None) -> ObjectiveComponents:
    """Full objective split into its adversarial terms and the weighted cycle term."""
    lam = lambda_cyc if lambda_cyc is not None else (cfg.lambda_cyc if cfg else 10.0)
    x, y = _check(x_batch), _check(y_batch)
    adv_g = gan_value(DY, y, G(x))
    adv_f = gan_value(DX, x, F(y))
    cyc = lam * cycle_loss(G, F, x, y)
    return ObjectiveComponents(adv_g, adv_f, cyc, adv_g + adv_f + cyc)


def discriminator_grads(D, real, fake) -> float:
    """Accumulate d_loss gradients into D's parameters; return d_loss."""
    p_real, c_real = D.forward(real)
    p_fake, c_fake = D.forward(fake)
    g_real, g_fake = d_loss_score_grads(p_real, p_fake)
    D.backward(c_real, g_real)
    D.backward(c_fake, g_fake)
    return d_loss_from_scores(p_real, p_fake)


def generator_grads(G, F, DX, DY, x, y, lambda_cyc: float) -> tuple[float, float]:
    """Accumulate generator-side gradients into G and F; return ``(g_loss, cycle_loss)``.

    The generator objective is g_loss(DY on G(x)) + g_loss(DX on F(y)) plus
    lambda times the cycle loss. Discriminator parameter gradients picked up
    on the way are left for the caller to discard.
    """
    fake_y, c_g = G.forward(x)
    rec_x, c_fg = F.forward(fake_y)
    fake_x, c_f = F.forward(y)
    rec_y, c_gf = G.forward(fake_x)

    p_y, c_dy = DY.forward(fake_y)
    p_x, c_dx = DX.forward(fake_x)
    g_loss = g_loss_from_scores(p_y) + g_loss_from_scores(p_x)
    cyc = l1_mean(rec_x, x) + l1_mean(rec_y, y)

    d_fake_y = DY.backward(c_dy, g_loss_score_grad(p_y))
    d_fake_x = DX.backward(c_dx, g_loss_score_grad(p_x))
    d_fake_y = d_fake_y + F.backward(c_fg, lambda_cyc * np.sign(rec_x - x) / rec_x.size)
    d_fake_x = d_fake_x + G.backward(c_gf, lambda_cyc * np.sign(rec_y - y) / rec_y.size)
    G.backward(c_g, d_fake_y)
    F.backward(c_f, d_fake_x)
    return g_loss, cyc


@dataclass(frozen=True)
class GanTraceRecord:
    step: int
    d_x_loss: float
    d_y_loss: float
    g_loss: float
    cycle_loss: float

    def line(self) -> str:
        return f"{self.step}\t{self.d_x_loss!r}\t{self.d_y_loss!r}\t{self.g_loss!r}\t{self.cycle_loss!r}"


@dataclass
class CycleGan:
    G: GeneratorNet
    F: GeneratorNet
    DX: DiscriminatorNet
    DY: DiscriminatorNet
    trace: list = field(default_factory=list)


def build_cyclegan(cfg: CycleGanConfig) -> CycleGan:
    s = cfg.seed
    return CycleGan(GeneratorNet("G", cfg.g_widths, s * 4 + 1), GeneratorNet("F", cfg.g_widths, s * 4 + 2),
                    DiscriminatorNet("DX", cfg.d_widths, s * 4 + 3), DiscriminatorNet("DY", cfg.d_widths, s * 4 + 4))


def to_unit_range(images) -> np.ndarray:
    """PixelGrids or uint8 (H, W, 3) arrays -> (N, 3, H, W) floats in [-1, 1]."""
    out = []
    for im in images:
        px = im.pixels if isinstance(im, PixelGrid) else np.asarray(im)
        out.append(px.transpose(2, 0, 1).astype(np.float64) / 127.5 - 1.0)
    return np.stack(out)


def from_unit_range(x: np.ndarray) -> np.ndarray:
    """(N, 3, H, W) in [-1, 1] -> (N, H, W, 3) uint8, clamped."""
    v = np.rint((np.clip(x, -1.0, 1.0) + 1.0) * 127.5)
    return np.clip(v, 0, 255).astype(np.uint8).transpose(0, 2, 3, 1)


def fit_to_shape(grid: PixelGrid, shape) -> np.ndarray:
    """Crop or zero-pad a grid's pixels to (h, w, 3) anchored at the top-left."""
    h, w = shape
    out = np.zeros((h, w, 3), dtype=np.uint8)
    px = grid.pixels[:h, :w]
    out[:px.shape[0], :px.shape[1]] = px
    return out


def train_cyclegan(x_corpus, y_corpus, cfg: CycleGanConfig = CycleGanConfig(), callback=None) -> CycleGan:
    """Alternate one discriminator step and one generator step per batch.

    Corpora are (N, 3, H, W) arrays in [-1, 1] (see ``to_unit_range``) with a
    shared resolution. Each epoch draws ``ceil(max(Nx, Ny) / batch)`` paired
    batches from independent seeded permutations.
    """
    x_corpus = np.asarray(x_corpus, dtype=np.float64)
    y_corpus = np.asarray(y_corpus, dtype=np.float64)
    if len(x_corpus) == 0 or len(y_corpus) == 0:
        raise EmptyDataset("both domains need at least one image")
    if x_corpus.shape[1:] != y_corpus.shape[1:]:
        raise ValueError("both domains must share one training resolution")
    gan = build_cyclegan(cfg)
    rng = np.random.default_rng(cfg.seed)
    opt_g = Adam(cfg.lr_g, cfg.beta1, cfg.beta2)
    opt_d = Adam(cfg.lr_d, cfg.beta1, cfg.beta2)
    g_params = gan.G.params() + gan.F.params()
    d_params = gan.DX.params() + gan.DY.params()
    bs = cfg.batch_size
    n_steps = -(-max(len(x_corpus), len(y_corpus)) // bs)
    step = 0
    for _epoch in range(cfg.epochs):
        px = np.concatenate([rng.permutation(len(x_corpus)) for _ in range(-(-n_steps * bs // len(x_corpus)))])
        py = np.concatenate([rng.permutation(len(y_corpus)) for _ in range(-(-n_steps * bs // len(y_corpus)))])
        for b in range(n_steps):
            x = x_corpus[px[b * bs:(b + 1) * bs]]
            y = y_corpus[py[b * bs:(b + 1) * bs]]

            for p in d_params:
                p.zero_grad()
            fake_y = gan.G(x)
            fake_x = gan.F(y)
            d_y = discriminator_grads(gan.DY, y, fake_y)
            d_x = discriminator_grads(gan.DX, x, fake_x)
            opt_d.step(d_params)

            for p in g_params + d_params:
                p.zero_grad()
            g_loss, cyc = generator_grads(gan.G, gan.F, gan.DX, gan.DY, x, y, cfg.lambda_cyc)
            opt_g.step(g_params)

            step += 1
            rec = GanTraceRecord(step, d_x, d_y, g_loss, cyc)
            gan.trace.append(rec)
            if callback is not None:
                callback(rec)
    for p in d_params:
        p.zero_grad()
    gan.G.trained = gan.F.trained = True
    return gan


def augment(G, benign_images, n: int, source_names=None) -> list[PixelGrid]:
    """Translate benign images into ``n`` synthetic malware-domain grids.

    Inputs are cycled if ``n`` exceeds their count. Sides that are not a
    multiple of 8 are zero-padded for the generator and cropped back after.
    """
    if not getattr(G, "trained", False):
        raise UntrainedGenerator("generator has no completed training run")
    if n < 1:
        raise ValueError("n must be >= 1")
    if not benign_images:
        raise EmptyDataset("no benign images to translate")
    out = []
    for i in range(n):
        k = i % len(benign_images)
        src = benign_images[k]
        px = src.pixels if isinstance(src, PixelGrid) else np.asarray(src, dtype=np.uint8)
        h, w = px.shape[:2]
        padded = np.zeros((-(-h // 8) * 8, -(-w // 8) * 8, 3), dtype=np.uint8)
        padded[:h, :w] = px
        gen = from_unit_range(G(to_unit_range([padded])))[0, :h, :w]
        meta = {"synthetic": True, "generator": G.direction}
        if source_names is not None:
            meta["source"] = source_names[k]
        out.append(PixelGrid(np.ascontiguousarray(gen), original_length=h * w * 3, tail_pad=0, metadata=meta))
    return out


def save_generator(path, G: GeneratorNet) -> None:
    meta = {"kind": "cyclegan-generator", "direction": G.direction, "widths": list(G.widths), "trained": G.trained}
    checkpoint.save(path, {p.name: p.value for p in G.params()}, meta)


def load_generator(path) -> GeneratorNet:
    meta, params = checkpoint.load(path)
    if meta.get("kind") != "cyclegan-generator":
        raise checkpoint.CheckpointError(f"{path} does not hold a generator")
    G = GeneratorNet(meta["direction"], tuple(meta["widths"]))
    for p in G.params():
        p.value[...] = params[p.name]
    G.trained = bool(meta["trained"])
    return G
