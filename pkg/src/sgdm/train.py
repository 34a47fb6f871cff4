"""Training, evaluation and noise-robustness runs for the toy classifier.

Randomness: every draw comes from numpy's PCG64 generator, seeded through
``SeedSequence([seed, stream])`` with a fixed stream per purpose (see ``STREAMS``).
"""

from __future__ import annotations

import dataclasses
import io
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from sgdm.checkpoint import load_into, save_checkpoint
from sgdm.data import SyntheticDataset, make_dataset
from sgdm.guided import SgdmConfig
from sgdm.nn import SGD, VARIANTS, Classifier, softmax_cross_entropy
from sgdm.rdconv import RdconvConfig

STREAMS = {"train_data": 0, "test_data": 1, "init": 2, "shuffle": 3, "noise": 4}
CONFIG_FILE = "config.txt"


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    variant: str = "baseline"
    lr: float = 1e-2
    momentum: float = 0.937
    weight_decay: float = 5e-4
    lr_final_ratio: float = 0.01
    epochs: int = 20
    batch_size: int = 32
    seed: int = 42
    n_train: int = 480
    n_test: int = 240
    n_classes: int = 3
    width: int = 8
    r_split: float = 0.25
    r_razor: float = 0.5
    n_kernels: int = 4
    spatial_k: int = 15

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.lr <= 0 or not 0 <= self.momentum < 1:
            raise ValueError("need lr > 0 and momentum in [0, 1)")
        if self.seed < 0 or self.epochs < 0 or self.batch_size < 1:
            raise ValueError("seed and epochs must be non-negative, batch_size positive")

    def sgdm_config(self) -> SgdmConfig:
        rd = RdconvConfig(r_razor=self.r_razor, n_kernels=self.n_kernels, spatial_k=self.spatial_k)
        return SgdmConfig(r_split=self.r_split, rdconv=rd)

    def rng(self, stream: str) -> np.random.Generator:
        return np.random.default_rng([self.seed, STREAMS[stream]])

    def to_text(self) -> str:
        return "".join(f"{f.name}={getattr(self, f.name)}\n" for f in fields(self))


def parse_config_text(text: str) -> dict[str, str]:
    """``key=value`` per line; blank lines and ``#`` comments ignored."""
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {n}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def make_config(values: dict[str, object] | None = None, **overrides) -> TrainConfig:
    types = {f.name: f.type for f in fields(TrainConfig)}
    merged = {**(values or {}), **{k: v for k, v in overrides.items() if v is not None}}
    kwargs = {}
    for key, value in merged.items():
        if key not in types:
            raise ValueError(f"unknown config key {key!r}")
        cast = {"int": int, "float": float, "str": str}[types[key]]
        kwargs[key] = cast(value)
    return TrainConfig(**kwargs)


def load_config(path: str | Path, **overrides) -> TrainConfig:
    return make_config(parse_config_text(Path(path).read_text()), **overrides)


def datasets(cfg: TrainConfig) -> tuple[SyntheticDataset, SyntheticDataset]:
    train = make_dataset(cfg.n_train, int(cfg.rng("train_data").integers(2**32)), cfg.n_classes)
    test = make_dataset(cfg.n_test, int(cfg.rng("test_data").integers(2**32)), cfg.n_classes)
    return train, test


def build_model(cfg: TrainConfig) -> Classifier:
    return Classifier(cfg.variant, in_channels=1, n_classes=cfg.n_classes, width=cfg.width,
                      rng=cfg.rng("init"), sgdm_cfg=cfg.sgdm_config())


def predict(model: Classifier, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
    preds = [model.forward(images[i : i + batch_size]).argmax(axis=1) for i in range(0, len(images), batch_size)]
    return np.concatenate(preds)


def accuracy(model: Classifier, data: SyntheticDataset, batch_size: int = 64) -> float:
    return float((predict(model, data.images, batch_size) == data.labels).mean())


@dataclass
class EpochMetrics:
    epoch: int
    loss: float
    train_acc: float
    test_acc: float


METRICS_HEADER = "variant,seed,epoch,loss,train_acc,test_acc"


def metrics_csv(cfg: TrainConfig, history: list[EpochMetrics]) -> str:
    buf = io.StringIO()
    buf.write(METRICS_HEADER + "\n")
    for m in history:
        buf.write(f"{cfg.variant},{cfg.seed},{m.epoch},{m.loss:.12g},{m.train_acc:.6f},{m.test_acc:.6f}\n")
    return buf.getvalue()


def train(cfg: TrainConfig, log=None) -> tuple[Classifier, list[EpochMetrics]]:
    """Train from scratch; epoch 0 in the history is the untrained model."""
    train_set, test_set = datasets(cfg)
    model = build_model(cfg)
    params = model.parameters()
    opt = SGD(params, cfg.lr, cfg.momentum, cfg.weight_decay)
    shuffle = cfg.rng("shuffle")

    def loss_on(data):
        logits = np.concatenate([model.forward(data.images[i : i + 64]) for i in range(0, len(data), 64)])
        return softmax_cross_entropy(logits, data.labels)[0]

    history = [EpochMetrics(0, loss_on(train_set), accuracy(model, train_set), accuracy(model, test_set))]
    for epoch in range(1, cfg.epochs + 1):
        # linear decay from lr to lr * lr_final_ratio across the run
        opt.lr = cfg.lr * ((1 - (epoch - 1) / cfg.epochs) * (1 - cfg.lr_final_ratio) + cfg.lr_final_ratio)
        total, seen = 0.0, 0
        for step, (xb, yb) in enumerate(train_set.batches(cfg.batch_size, shuffle)):
            model.zero_grad()
            loss, dlogits = softmax_cross_entropy(model.forward(xb), yb)
            if not np.isfinite(loss):
                raise TrainingDiverged(f"{cfg.variant} seed {cfg.seed}: loss {loss} at epoch {epoch}, step {step}")
            model.backward(dlogits)
            opt.step()
            total += loss * len(yb)
            seen += len(yb)
        m = EpochMetrics(epoch, total / seen, accuracy(model, train_set), accuracy(model, test_set))
        history.append(m)
        if log is not None:
            log(f"[{cfg.variant} seed={cfg.seed}] epoch {epoch:3d} loss {m.loss:.4f} "
                f"train {m.train_acc:.3f} test {m.test_acc:.3f}")
    return model, history


def model_arrays(model: Classifier) -> dict[str, np.ndarray]:
    return {k: p.value for k, p in model.parameters().items()}


def save_run(directory: str | Path, cfg: TrainConfig, model: Classifier, history: list[EpochMetrics]) -> None:
    directory = Path(directory)
    save_checkpoint(directory, model_arrays(model))
    (directory / CONFIG_FILE).write_text(cfg.to_text())
    (directory / "metrics.csv").write_text(metrics_csv(cfg, history))


def load_run(directory: str | Path) -> tuple[TrainConfig, Classifier]:
    directory = Path(directory)
    cfg_path = directory / CONFIG_FILE
    if not cfg_path.exists():
        raise FileNotFoundError(f"no checkpoint config at {cfg_path}")
    cfg = load_config(cfg_path)
    model = build_model(cfg)
    load_into(directory, model_arrays(model))
    return cfg, model


def noise_eval(model: Classifier, cfg: TrainConfig, sigmas, test_set: SyntheticDataset | None = None) -> list[tuple[float, float]]:
    """Accuracy on the held-out split with additive N(0, sigma^2) noise, one row per sigma."""
    if test_set is None:
        test_set = datasets(cfg)[1]
    rows = []
    for i, sigma in enumerate(sigmas):
        images = test_set.images
        if sigma != 0:
            rng = np.random.default_rng([cfg.seed, STREAMS["noise"], i])
            images = images + sigma * rng.standard_normal(images.shape)
        acc = float((predict(model, images) == test_set.labels).mean())
        rows.append((float(sigma), acc))
    return rows


def with_variant(cfg: TrainConfig, variant: str, seed: int | None = None) -> TrainConfig:
    return dataclasses.replace(cfg, variant=variant, seed=cfg.seed if seed is None else seed)
