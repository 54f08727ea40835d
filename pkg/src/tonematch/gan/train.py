"""Alternating discriminator / generator training with resumable checkpoints."""

from __future__ import annotations

import csv
import dataclasses
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..dataset import AugmentSpec, TrainingPair, augment
from ..nn import autograd as T
from ..nn import checkpoint
from ..nn.autograd import Tensor, no_grad
from ..nn.optim import Adam, linear_decay_lr
from .losses import LossWeights, adversarial_loss, multiscale_fm_loss, perceptual_loss
from .models import (DiscriminatorConfig, GeneratorConfig, MultiScaleGenerator, PerceptualNet, build_discriminator,
                     build_generator)

log = logging.getLogger(__name__)

LOSS_HEADER = ["epoch", "step", "d_loss", "g_adv", "g_fm", "g_prp", "lr"]


class TrainingDivergedError(ArithmeticError):
    def __init__(self, message: str, last_checkpoint=None):
        super().__init__(message if last_checkpoint is None else f"{message}; last good checkpoint: {last_checkpoint}")
        self.last_checkpoint = last_checkpoint


@dataclass
class TrainConfig:
    scale: str = "single"
    base_width: int = 8
    n_resblocks: int = 9
    n_down: int = 4
    norm: str = "instance"
    d_base_width: int = 8
    d_layers: int = 4
    batch_size: int = 0            # 0: 4 for single-scale, 1 for multi-scale
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    epochs: int = 200
    warm_epochs: int = 100
    coarse_epochs: int = 0         # multi-scale: epochs training the coarse generator alone
    freeze_coarse_epochs: int = 20
    fm_weight: float = 10.0
    perceptual_weight: float = 10.0
    seed: int = 0
    perceptual_seed: int = 0
    checkpoint_every: int = 1      # epochs
    augment: bool = True
    scale_div: int = 1
    flip_prob: float = 0.5

    def __post_init__(self):
        self.generator_config()
        self.discriminator_config()
        LossWeights(self.fm_weight, self.perceptual_weight)
        if self.epochs < 0 or self.coarse_epochs < 0 or self.batch_size < 0:
            raise ValueError("epoch counts and batch size must be non-negative")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")

    def generator_config(self) -> GeneratorConfig:
        return GeneratorConfig(self.scale, self.base_width, self.n_resblocks, self.n_down, self.norm)

    def discriminator_config(self) -> DiscriminatorConfig:
        return DiscriminatorConfig(self.scale, self.d_base_width, self.d_layers)

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.fm_weight, self.perceptual_weight)

    @property
    def effective_batch(self) -> int:
        return self.batch_size or (4 if self.scale == "single" else 1)

    @property
    def total_epochs(self) -> int:
        return self.coarse_epochs + self.epochs if self.scale == "multi" else self.epochs


def parse_config(text: str, **overrides) -> TrainConfig:
    """Parse flat ``key = value`` lines (``#`` comments) into a TrainConfig."""
    types = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ValueError(f"line {lineno}: unknown key {key!r}; valid keys: {', '.join(types)}")
        values[key] = _coerce(types[key], value, lineno)
    values.update(overrides)
    return TrainConfig(**values)


def _coerce(kind, value: str, lineno: int):
    try:
        if kind in ("bool", bool):
            if value.lower() in ("1", "true", "yes", "on"):
                return True
            if value.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if kind in ("int", int):
            return int(value)
        if kind in ("float", float):
            return float(value)
        return value
    except ValueError:
        raise ValueError(f"line {lineno}: cannot read {value!r} as {kind}") from None


def format_config(cfg: TrainConfig) -> str:
    return "".join(f"{f.name}={getattr(cfg, f.name)}\n" for f in dataclasses.fields(cfg))


@dataclass
class StepReport:
    epoch: int
    step: int
    d_loss: float
    g_adv: float
    g_fm: float
    g_prp: float
    g_total: float
    lr: float
    phase: str = "full"

    def csv_row(self) -> list:
        return [self.epoch, self.step, f"{self.d_loss:.8g}", f"{self.g_adv:.8g}", f"{self.g_fm:.8g}",
                f"{self.g_prp:.8g}", f"{self.lr:.8g}"]


def _as_batch(arrays) -> Tensor:
    return Tensor(np.stack([np.asarray(a, dtype=np.float32) for a in arrays])[:, None])


def _finite(*values) -> bool:
    return all(np.isfinite(v) for v in values)


class Trainer:
    """Owns the generator, discriminator(s), optimizers and step counters of one run."""

    def __init__(self, cfg: TrainConfig, ckpt_dir=None):
        self.cfg = cfg
        self.G = build_generator(cfg.generator_config(), seed=cfg.seed)
        self.D = build_discriminator(cfg.discriminator_config(), seed=cfg.seed + 1)
        self.perceptual = PerceptualNet(cfg.perceptual_seed)
        self.opt_g = Adam(self.G.parameters(), cfg.lr, (cfg.beta1, cfg.beta2))
        self.opt_d = Adam(self.D.parameters(), cfg.lr, (cfg.beta1, cfg.beta2))
        self.epoch = 1          # epoch currently in progress (1-based)
        self.step = 0           # optimizer steps completed in total
        self.batch_in_epoch = 0
        self.ckpt_dir = Path(ckpt_dir) if ckpt_dir is not None else None
        self.last_checkpoint = None

    # -- schedule ---------------------------------------------------------------
    def phase(self, epoch: int | None = None) -> str:
        e = self.epoch if epoch is None else epoch
        if self.cfg.scale != "multi":
            return "full"
        if e <= self.cfg.coarse_epochs:
            return "coarse"
        if e <= self.cfg.coarse_epochs + self.cfg.freeze_coarse_epochs:
            return "frozen"
        return "full"

    def lr_for(self, epoch: int) -> float:
        cfg = self.cfg
        if self.phase(epoch) == "coarse":
            return linear_decay_lr(epoch, cfg.lr, cfg.warm_epochs, cfg.coarse_epochs)
        local = epoch - (cfg.coarse_epochs if cfg.scale == "multi" else 0)
        return linear_decay_lr(local, cfg.lr, cfg.warm_epochs, cfg.epochs)

    def step_rng(self, epoch: int, batch: int) -> np.random.Generator:
        return np.random.default_rng([self.cfg.seed, epoch, batch])

    def _set_trainable(self, phase: str):
        G = self.G
        if isinstance(G, MultiScaleGenerator):
            G.coarse.requires_grad_(phase in ("coarse", "full"))
            G.fine.requires_grad_(phase in ("frozen", "full"))
        else:
            G.requires_grad_(True)

    # -- one step ---------------------------------------------------------------
    def generate(self, x: Tensor, phase: str = "full") -> Tensor:
        if phase == "coarse":
            return self.G.coarse_output(x)
        return self.G(x)

    def train_step(self, xs, ys) -> StepReport:
        """One discriminator update followed by one generator update on a batch of 2-D arrays."""
        cfg = self.cfg
        phase = self.phase()
        lr = self.lr_for(self.epoch)
        self.opt_g.lr = self.opt_d.lr = lr
        self._set_trainable(phase)
        x, y = _as_batch(xs), _as_batch(ys)
        if phase == "coarse":
            x_in = x
            x, y = T.avg_pool2(x).detach(), T.avg_pool2(y).detach()
            fake = self.generate(x_in, phase)
        else:
            fake = self.generate(x, phase)

        # discriminator: real pair -> 1, detached fake pair -> 0
        self.opt_d.zero_grad()
        d_loss = adversarial_loss(self.D(x, y), True) + adversarial_loss(self.D(x, fake.detach()), False)
        d_value = float(d_loss.data)
        if not _finite(d_value):
            raise TrainingDivergedError(f"non-finite discriminator loss at step {self.step + 1}", self.last_checkpoint)
        d_loss.backward()
        self.opt_d.step()

        # generator: fool the updated discriminator, match its features and the perceptual features
        self.opt_g.zero_grad()
        with no_grad():
            real_out = self.D(x, y)
        fake_out = self.D(x, fake)
        g_adv = adversarial_loss(fake_out, True)
        g_fm = multiscale_fm_loss(real_out, fake_out)
        g_prp = perceptual_loss(y, fake, self.perceptual)
        # combine in float64 so the reported total is the exact weighted sum
        total = (T.cast(g_adv, np.float64) + cfg.fm_weight * T.cast(g_fm, np.float64)
                 + cfg.perceptual_weight * T.cast(g_prp, np.float64))
        values = float(g_adv.data), float(g_fm.data), float(g_prp.data), float(total.data)
        if not _finite(*values):
            raise TrainingDivergedError(f"non-finite generator loss at step {self.step + 1}", self.last_checkpoint)
        total.backward()
        for p in self.D.parameters():
            p.grad = None
        self.opt_g.step()
        self.step += 1
        return StepReport(self.epoch, self.step, d_value, *values, lr, phase)

    # -- epochs -----------------------------------------------------------------
    def batches(self, pairs, epoch: int):
        """Deterministic shuffled batches for one epoch: yields (index, xs, ys)."""
        order = np.random.default_rng([self.cfg.seed, epoch, 2 ** 31 - 1]).permutation(len(pairs))
        bs = self.cfg.effective_batch
        for b, start in enumerate(range(0, len(order), bs)):
            yield b, [pairs[i] for i in order[start:start + bs]]

    def prepare(self, chunk, spec: AugmentSpec | None, epoch: int, batch: int):
        rng = self.step_rng(epoch, batch)
        if spec is not None:
            chunk = [augment(p, spec, rng) for p in chunk]
        return [p.x for p in chunk], [p.y for p in chunk]

    def fit(self, pairs, spec: AugmentSpec | None = None, log_path=None, max_steps: int | None = None) -> list:
        """Run (or resume) the epoch loop; returns the step reports of this call."""
        if not pairs:
            raise ValueError("no training pairs")
        reports = []
        prev = T.set_tripwire(True)
        try:
            while self.epoch <= self.cfg.total_epochs:
                for b, chunk in self.batches(pairs, self.epoch):
                    if b < self.batch_in_epoch:
                        continue
                    if max_steps is not None and len(reports) >= max_steps:
                        return reports
                    xs, ys = self.prepare(chunk, spec, self.epoch, b)
                    try:
                        report = self.train_step(xs, ys)
                    except T.NonFiniteError as exc:
                        raise TrainingDivergedError(str(exc), self.last_checkpoint) from exc
                    self.batch_in_epoch = b + 1
                    reports.append(report)
                    if log_path is not None:
                        append_loss_log(log_path, report, self.cfg.seed)
                self.epoch += 1
                self.batch_in_epoch = 0
                if self.ckpt_dir is not None and (self.epoch - 1) % max(1, self.cfg.checkpoint_every) == 0:
                    self.save(self.ckpt_dir / f"epoch{self.epoch - 1:04d}.dtmo")
        finally:
            T.set_tripwire(prev)
        return reports

    # -- persistence ------------------------------------------------------------
    def state(self) -> dict:
        out = {}
        out.update(generator_state(self.G, self.cfg.generator_config()))
        out.update((f"D.{k}", v) for k, v in self.D.state_dict().items())
        out.update(self.opt_g.state("optG"))
        out.update(self.opt_d.state("optD"))
        out["meta.epoch"] = np.array([self.epoch], dtype=np.float32)
        out["meta.step"] = np.array([self.step], dtype=np.float32)
        out["meta.batch_in_epoch"] = np.array([self.batch_in_epoch], dtype=np.float32)
        return out

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        checkpoint.save(path, self.state())
        self.last_checkpoint = path
        latest = path.parent / "latest.txt"
        latest.write_text(path.name + "\n")
        return path

    def load(self, path):
        state = checkpoint.load(path)
        self.G.load_state_dict(_strip(state, "G."))
        self.D.load_state_dict(_strip(state, "D."))
        self.opt_g.load_state(state, "optG")
        self.opt_d.load_state(state, "optD")
        self.epoch = int(state["meta.epoch"][0])
        self.step = int(state["meta.step"][0])
        self.batch_in_epoch = int(state["meta.batch_in_epoch"][0])
        self.last_checkpoint = Path(path)
        return self

    @classmethod
    def resume(cls, cfg: TrainConfig, ckpt_dir) -> "Trainer":
        """A trainer restored from ``latest.txt`` in ``ckpt_dir`` if present, else fresh."""
        trainer = cls(cfg, ckpt_dir)
        latest = Path(ckpt_dir) / "latest.txt"
        if latest.exists():
            trainer.load(Path(ckpt_dir) / latest.read_text().strip())
        return trainer


def _strip(state: dict, prefix: str) -> dict:
    return {k[len(prefix):]: v for k, v in state.items() if k.startswith(prefix)}


_GCFG_FIELDS = ("base_width", "n_resblocks", "n_down")


def generator_state(G, gcfg: GeneratorConfig) -> dict:
    """Generator weights plus the config needed to rebuild it, as named float32 arrays."""
    out = {f"G.{k}": v for k, v in G.state_dict().items()}
    for name in _GCFG_FIELDS:
        out[f"gcfg.{name}"] = np.array([getattr(gcfg, name)], dtype=np.float32)
    out["gcfg.multi"] = np.array([gcfg.scale == "multi"], dtype=np.float32)
    out["gcfg.batch_norm"] = np.array([gcfg.norm == "batch"], dtype=np.float32)
    return out


def generator_from_state(state: dict):
    try:
        kw = {name: int(state[f"gcfg.{name}"][0]) for name in _GCFG_FIELDS}
        multi = bool(state["gcfg.multi"][0])
        batch = bool(state["gcfg.batch_norm"][0])
    except KeyError as exc:
        raise checkpoint.CheckpointError(f"checkpoint lacks generator config entry {exc}") from None
    gcfg = GeneratorConfig("multi" if multi else "single", norm="batch" if batch else "instance", **kw)
    G = build_generator(gcfg)
    G.load_state_dict(_strip(state, "G."))
    return G


def append_loss_log(path, report: StepReport, seed=None):
    path = Path(path)
    new = not path.exists()
    with open(path, "a", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        if new:
            if seed is not None:
                f.write(f"# seed={seed}\n")
            w.writerow(LOSS_HEADER)
        w.writerow(report.csv_row())


def l1_to_target(G, x: np.ndarray, y: np.ndarray) -> float:
    with no_grad():
        out = G(_as_batch([x]))
    return float(np.abs(out.data[0, 0] - y).mean())


def overfit(pair: TrainingPair, steps: int, seed: int = 0, **overrides) -> tuple[float, float, list]:
    """Train on one pair for ``steps`` steps; returns (L1 before, L1 after, reports)."""
    cfg = TrainConfig(seed=seed, batch_size=1, augment=False, epochs=steps, warm_epochs=steps, **overrides)
    trainer = Trainer(cfg)
    before = l1_to_target(trainer.G, pair.x, pair.y)
    reports = trainer.fit([pair], None, max_steps=steps)
    after = l1_to_target(trainer.G, pair.x, pair.y)
    return before, after, reports
