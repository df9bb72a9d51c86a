"""Two-stage training, Adam, checkpoints, evaluation, and diagnostics.

Stage one regresses the rate estimator onto the synthesizer's ground-truth
parameters; stage two freezes it and trains the separation network (encoder,
decoders, hierarchy ladder, prompt MLP) on the image losses. The learning
rate is constant throughout; there is no schedule state anywhere.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .container import decode_text, encode_text, read_container, write_container
from .errors import ConfigError, MissingGradError, UnreflectError
from .losses import FeatureExtractor, LossWeights, stage1_weights, stage2_weights
from .mcre import McreConfig
from .metrics import psnr, ssim, write_metrics_csv
from .model import SeparationNet, compute_loss
from .rng import SplitMix64
from .synth import SynthSample, load_dataset, sample_name
from .tapg import apply_rate_correction
from .tensor import Parameter, Tensor, backward, mean_all, no_grad, square, sub


@dataclass
class TrainConfig:
    stage: int = 1
    learning_rate: float = 1e-4
    batch_size: int = 2
    epochs: int = 20
    seed: int = 0
    num_columns: int = 4
    num_levels: int = 4
    base_channels: int = 64
    adjust_input: bool = False
    use_prompt: bool = True
    c0: float = -1.0  # negative = use the stage preset
    c1: float = -1.0
    c2: float = -1.0
    w: float = -1.0
    dataset: str = ""
    val_dataset: str = ""
    checkpoint: str = "checkpoint.rdn"
    init_from: str = ""
    log_csv: str = ""

    def weights(self) -> LossWeights:
        preset = stage1_weights() if self.stage == 1 else stage2_weights()
        return LossWeights(
            c0=self.c0 if self.c0 >= 0 else preset.c0,
            c1=self.c1 if self.c1 >= 0 else preset.c1,
            c2=self.c2 if self.c2 >= 0 else preset.c2,
            w=self.w if self.w >= 0 else preset.w,
        )

    def validate(self) -> None:
        if self.stage not in (1, 2):
            raise ConfigError(f"stage must be 1 or 2, got {self.stage}")
        if self.stage == 2 and not self.init_from:
            raise ConfigError("stage-2 training requires init_from (a stage-1 checkpoint)")
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("learning_rate must be > 0, batch_size >= 1, epochs >= 0")

    def loss_log_path(self) -> Path:
        return Path(self.log_csv) if self.log_csv else Path(str(self.checkpoint) + ".loss.csv")

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "TrainConfig":
        cfg = cls()
        cfg.apply_text(text)
        return cfg

    def apply_text(self, text: str) -> None:
        """Apply key=value lines; unknown keys are errors."""
        fields = {f.name: f for f in dataclasses.fields(self)}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if key not in fields:
                raise ConfigError(f"line {lineno}: unknown config key {key!r}")
            ftype = fields[key].type
            try:
                if ftype == "bool":
                    if value not in ("true", "false"):
                        raise ValueError("expected true/false")
                    setattr(self, key, value == "true")
                elif ftype == "int":
                    setattr(self, key, int(value))
                elif ftype == "float":
                    setattr(self, key, float(value))
                else:
                    setattr(self, key, value)
            except ValueError as exc:
                raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from exc


def mcre_config(cfg: TrainConfig) -> McreConfig:
    return McreConfig(
        num_columns=cfg.num_columns,
        num_levels=cfg.num_levels,
        base_channels=cfg.base_channels,
    )


def build_model(cfg: TrainConfig, dtype=np.float32) -> SeparationNet:
    return SeparationNet(mcre_config(cfg), seed=cfg.seed, dtype=dtype)


class Adam:
    """Adam with bias correction; moments live in the parameter dtype."""

    def __init__(self, params, lr: float, betas=(0.9, 0.999), eps: float = 1e-8,
                 projections=()):
        self.params = [p for p in params if p.requires_grad]
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {p.name: np.zeros_like(p.data) for p in self.params}
        self.v = {p.name: np.zeros_like(p.data) for p in self.params}
        self.projections = tuple(projections)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        self.t += 1
        for p in self.params:
            if p.grad is None:
                raise MissingGradError(f"parameter {p.name!r} has no gradient")
            g = p.grad
            m = self.m[p.name]
            v = self.v[p.name]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            m_hat = m / (1.0 - self.b1**self.t)
            v_hat = v / (1.0 - self.b2**self.t)
            p.data[...] -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.data.dtype)
        for proj in self.projections:
            proj()


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path, model: SeparationNet, cfg: TrainConfig, optimizer: Adam | None = None) -> None:
    entries: dict[str, np.ndarray] = {}
    for p in model.parameters():
        entries[p.name] = p.data
    if optimizer is not None:
        for name, arr in optimizer.m.items():
            entries[f"adam/m/{name}"] = arr
        for name, arr in optimizer.v.items():
            entries[f"adam/v/{name}"] = arr
        entries["adam/step"] = np.array([optimizer.t], dtype=np.float32)
    entries["meta/config"] = encode_text(cfg.to_text())
    write_container(path, dict(sorted(entries.items())))


def load_checkpoint(path) -> tuple[SeparationNet, TrainConfig, dict]:
    """Rebuild the model a checkpoint describes and fill in its parameters."""
    raw = read_container(path)
    if "meta/config" not in raw:
        raise UnreflectError(f"{path}: checkpoint has no meta/config entry")
    cfg = TrainConfig.from_text(decode_text(raw["meta/config"]))
    model = build_model(cfg)
    for p in model.parameters():
        if p.name not in raw:
            raise UnreflectError(f"{path}: checkpoint missing parameter {p.name!r}")
        arr = raw[p.name]
        if tuple(arr.shape) != tuple(p.shape):
            raise UnreflectError(f"{path}: {p.name!r} has shape {arr.shape}, expected {p.shape}")
        p.data[...] = arr
    extra = {k: v for k, v in raw.items() if k.startswith("adam/")}
    return model, cfg, extra


# ---------------------------------------------------------------------------
# training stages
# ---------------------------------------------------------------------------

def _batches(n: int, batch_size: int, rng: SplitMix64):
    order = list(range(n))
    rng.shuffle(order)
    for at in range(0, n, batch_size):
        yield order[at:at + batch_size]


def _stack(samples: list[SynthSample], field: str) -> np.ndarray:
    return np.stack([getattr(s, field) for s in samples]).astype(np.float32)


def _write_loss_csv(path, rows: list[tuple[int, float]]) -> None:
    lines = ["step,loss"] + [f"{step},{value:.8e}" for step, value in rows]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def train_stage1(cfg: TrainConfig) -> Path:
    """Fit the rate estimator by parameter regression on synthetic tuples."""
    cfg = dataclasses.replace(cfg, stage=1)
    cfg.validate()
    samples = load_dataset(cfg.dataset)
    if not samples:
        raise UnreflectError(f"dataset {cfg.dataset} is empty")
    model = build_model(cfg)
    opt = Adam(model.estimator_parameters(), cfg.learning_rate)
    data_rng = SplitMix64(cfg.seed + 0xDA7A)

    rows: list[tuple[int, float]] = []
    step = 0
    for _ in range(cfg.epochs):
        for idx in _batches(len(samples), cfg.batch_size, data_rng):
            batch = [samples[i] for i in idx]
            x = Tensor(_stack(batch, "mix"))
            target = Tensor(np.stack([s.rate.as_vector() for s in batch]).astype(np.float32))
            pred = model.estimator(x)
            loss = mean_all(square(sub(pred, target)))
            opt.zero_grad()
            backward(loss)
            opt.step()
            step += 1
            rows.append((step, loss.item()))
    _write_loss_csv(cfg.loss_log_path(), rows)
    save_checkpoint(cfg.checkpoint, model, cfg, opt)
    return Path(cfg.checkpoint)


def train_stage2(cfg: TrainConfig) -> Path:
    """Train the separation network with the estimator frozen.

    The model geometry follows this config; only the estimator weights are
    imported from the stage-1 checkpoint, so column-count sweeps can reuse
    one stage-1 run.
    """
    cfg = dataclasses.replace(cfg, stage=2)
    cfg.validate()
    samples = load_dataset(cfg.dataset)
    if not samples:
        raise UnreflectError(f"dataset {cfg.dataset} is empty")

    stage1 = read_container(cfg.init_from)
    model = build_model(cfg)
    for p in model.estimator_parameters():
        if p.name not in stage1:
            raise UnreflectError(f"{cfg.init_from}: missing estimator parameter {p.name!r}")
        p.data[...] = stage1[p.name]
    model.estimator.set_trainable(False)

    extractor = FeatureExtractor()
    weights = cfg.weights()
    opt = Adam(model.main_parameters(), cfg.learning_rate,
               projections=(model.project_scales,))
    data_rng = SplitMix64(cfg.seed + 0xDA7A)

    rows: list[tuple[int, float]] = []
    step = 0
    for _ in range(cfg.epochs):
        for idx in _batches(len(samples), cfg.batch_size, data_rng):
            batch = [samples[i] for i in idx]
            x = Tensor(_stack(batch, "mix"))
            t = Tensor(_stack(batch, "trans"))
            r = Tensor(_stack(batch, "refl"))
            loss, _ = compute_loss(model, extractor, x, t, r, weights,
                                   use_prompt=cfg.use_prompt, adjust_input=cfg.adjust_input)
            opt.zero_grad()
            backward(loss)
            opt.step()
            step += 1
            rows.append((step, loss.item()))
    _write_loss_csv(cfg.loss_log_path(), rows)
    save_checkpoint(cfg.checkpoint, model, cfg, opt)
    return Path(cfg.checkpoint)


# ---------------------------------------------------------------------------
# evaluation and diagnostics
# ---------------------------------------------------------------------------

def rate_regression_report(model: SeparationNet, samples: list[SynthSample]) -> dict:
    """Held-out estimator quality: parameter MAE and the PSNR gain from
    undoing the estimated mix."""
    if not samples:
        raise UnreflectError("no samples to evaluate")
    abs_err = np.zeros(6)
    psnr_raw = []
    psnr_fixed = []
    with no_grad():
        for s in samples:
            pred = model.estimator(Tensor(s.mix[None].astype(np.float32))).data[0]
            abs_err += np.abs(pred.astype(np.float64) - s.rate.as_vector())
            corrected = apply_rate_correction(s.mix, pred)
            psnr_raw.append(psnr(s.mix, s.trans))
            psnr_fixed.append(psnr(np.clip(corrected, 0.0, 1.0), s.trans))
    n = len(samples)
    return {
        "mae_per_param": abs_err / n,
        "mae": float(abs_err.mean() / n),
        "psnr_uncorrected": float(np.mean(psnr_raw)),
        "psnr_corrected": float(np.mean(psnr_fixed)),
    }


def evaluate(checkpoint_path, dataset_path, out_csv) -> list[tuple[str, float, float]]:
    """Run the model over a dataset container; emit per-sample PSNR/SSIM."""
    model, cfg, _ = load_checkpoint(checkpoint_path)
    samples = load_dataset(dataset_path)
    rows = []
    with no_grad():
        for k, s in enumerate(samples):
            out = model.forward(Tensor(s.mix[None]), use_prompt=cfg.use_prompt,
                                adjust_input=cfg.adjust_input)
            t_hat = np.clip(out.pairs[-1].t_hat.data[0], 0.0, 1.0)
            rows.append((sample_name(k), psnr(t_hat, s.trans), ssim(t_hat, s.trans)))
    write_metrics_csv(out_csv, rows)
    return rows


def _pad_to_divisor(img: np.ndarray, divisor: int) -> tuple[np.ndarray, int, int]:
    _, h, w = img.shape
    ph = (-h) % divisor
    pw = (-w) % divisor
    if ph or pw:
        img = np.pad(img, ((0, 0), (0, ph), (0, pw)), mode="reflect")
    return img, h, w


def infer(checkpoint_path, image_path, out_dir) -> dict[str, Path]:
    """Separate one image file; write clamped layers and the estimated rate."""
    from .imageio import read_image, write_image

    model, cfg, _ = load_checkpoint(checkpoint_path)
    img = read_image(image_path)
    padded, h, w = _pad_to_divisor(img, model.cfg.divisor())
    with no_grad():
        out = model.forward(Tensor(padded[None]), use_prompt=cfg.use_prompt,
                            adjust_input=cfg.adjust_input)
    t_hat = np.clip(out.pairs[-1].t_hat.data[0, :, :h, :w], 0.0, 1.0)
    r_hat = np.clip(out.pairs[-1].r_hat.data[0, :, :h, :w], 0.0, 1.0)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = Path(image_path).stem
    paths = {
        "t_hat": out_dir / f"{stem}_T.png",
        "r_hat": out_dir / f"{stem}_R.png",
        "rate": out_dir / f"{stem}_rate.txt",
    }
    write_image(paths["t_hat"], t_hat)
    write_image(paths["r_hat"], r_hat)
    if out.rate is not None:
        vals = " ".join(repr(float(v)) for v in out.rate.data[0])
    else:
        vals = "unavailable (prompt and adjustment disabled)"
    paths["rate"].write_text(vals + "\n", encoding="utf-8")
    return paths


def roundtrip_report(model: SeparationNet, image: Tensor, use_prompt: bool = True) -> list[tuple[int, float]]:
    """Per-column max relative reconstruction error, columns N..1."""
    with no_grad():
        rate, net_input, prompt = model._prepare(image, use_prompt, False)
        emb = model.mcre.modulated_embedding(net_input, prompt)
        stored = [model.mcre.phe(net_input).features]
        for i in range(1, model.cfg.num_columns + 1):
            stored.append(model.mcre.column_forward(i, emb, stored[-1]))
        report = []
        for i in range(model.cfg.num_columns, 0, -1):
            rec = model.mcre.reconstruct_previous(i, stored[i], emb)
            err = 0.0
            for got, ref in zip(rec.features, stored[i - 1]):
                denom = max(float(np.abs(ref.data).max()), 1e-12)
                err = max(err, float(np.abs(got.data - ref.data).max()) / denom)
            report.append((i, err))
    return report
