"""Run configuration, the training loop, inference and checkpointing.

One sample is one event cloud (all of its windows); a batch accumulates
gradients over batch_size samples before an optimizer step. Sample order per
epoch is drawn from a generator seeded by (seed, epoch), so a run is fully
reproducible and resuming from an epoch checkpoint continues bit-exactly.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, fields

import numpy as np

from . import autodiff as ad
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import CheckpointMismatchError, ConfigError
from .events import build_cloud, load_events
from .loss_metrics import LossConfig, ce_loss, evaluate, fft_loss_windowed, merge_reports
from .model import NetworkConfig, init_params, network_forward, param_spec
from .optim import AdamW, cosine_lr
from .autodiff import Tensor


@dataclass(slots=True)
class OptimConfig:
    lr: float = 4.8e-4
    weight_decay: float = 5e-3
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    epochs: int = 50
    batch_size: int = 6
    lr_min: float = 1e-5
    max_steps: int | None = None

    def __post_init__(self):
        self.betas = tuple(self.betas)
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")


@dataclass(slots=True)
class RunConfig:
    seed: int = 0
    window_duration_s: float = 0.1
    sensor: tuple | None = None        # (width, height); None = infer per file
    data_format: str = "csv"
    train_files: list = field(default_factory=list)
    val_files: list = field(default_factory=list)
    test_files: list = field(default_factory=list)
    model: NetworkConfig = field(default_factory=NetworkConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)

    def to_dict(self):
        return {
            "seed": self.seed,
            "window_duration_s": self.window_duration_s,
            "sensor": list(self.sensor) if self.sensor else None,
            "data_format": self.data_format,
            "train_files": list(self.train_files),
            "val_files": list(self.val_files),
            "test_files": list(self.test_files),
            "model": self.model.to_dict(),
            "loss": {"fft_weight": self.loss.fft_weight, "eps": self.loss.eps,
                     "eps_prime": self.loss.eps_prime},
            "optim": {"lr": self.optim.lr, "weight_decay": self.optim.weight_decay,
                      "betas": list(self.optim.betas), "eps": self.optim.eps,
                      "epochs": self.optim.epochs, "batch_size": self.optim.batch_size,
                      "lr_min": self.optim.lr_min, "max_steps": self.optim.max_steps},
        }

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        if "model" in d and isinstance(d["model"], dict):
            d["model"] = NetworkConfig.from_dict(d["model"])
        if "loss" in d and isinstance(d["loss"], dict):
            d["loss"] = LossConfig(**d["loss"])
        if "optim" in d and isinstance(d["optim"], dict):
            d["optim"] = OptimConfig(**d["optim"])
        if d.get("sensor"):
            d["sensor"] = tuple(d["sensor"])
        return cls(**d)


@dataclass(slots=True)
class Sample:
    cloud: object
    labels: np.ndarray
    path: str


def load_sample(path, run_cfg: RunConfig):
    events = load_events(path, run_cfg.data_format)
    sensor = run_cfg.sensor or (None, None)
    cloud = build_cloud(
        events, run_cfg.window_duration_s, run_cfg.model.num_windows,
        sensor_width=sensor[0], sensor_height=sensor[1],
    )
    labels = []
    for w in cloud.windows:
        for e in w.events:
            labels.append(-1 if e.label is None else e.label)
    return Sample(cloud=cloud, labels=np.array(labels, dtype=np.int64), path=path)


def sample_losses(sample, run_cfg, params, scale=1.0):
    """Forward pass plus loss; returns (total, ce, fft) Tensors (fft None when off)."""
    if (sample.labels < 0).any():
        raise ConfigError(f"{sample.path}: training requires labels on every event")
    probs, aux = network_forward(sample.cloud, run_cfg.model, params, return_aux=True)
    order = aux["serial_input_indices"]
    probs_serial = ad.gather_rows(probs, order)
    labels_serial = sample.labels[order]
    ce = ce_loss(probs_serial, labels_serial)
    use_fft = run_cfg.model.use_fft_loss and run_cfg.loss.fft_weight > 0
    if use_fft:
        rain_flat = ad.reshape(ad.tensor_slice(probs_serial, 1, 2, axis=1), (-1,))
        reg = fft_loss_windowed(
            rain_flat, labels_serial.astype(np.float64),
            aux["window_ids_serial"], run_cfg.loss,
        )
        total = ad.add(ce, ad.scale(reg, run_cfg.loss.fft_weight))
    else:
        reg = None
        total = ce
    if scale != 1.0:
        total = ad.scale(total, scale)
    return total, ce, reg


def predict(cloud, model_cfg, params):
    """Hard per-event predictions (input order), inference mode."""
    with ad.no_grad():
        probs = network_forward(cloud, model_cfg, params)
    return (probs.data[:, 1] >= 0.5).astype(np.int64)


def evaluate_samples(samples, model_cfg, params):
    reports = []
    for s in samples:
        preds = predict(s.cloud, model_cfg, params)
        reports.append(evaluate(preds, s.labels))
    return merge_reports(reports)


def _clamp_transition_terms(params):
    # keep the scan transition diagonal strictly decaying
    for name, t in params.items():
        if name.endswith("ssm/A"):
            np.minimum(t.data, -1e-6, out=t.data)


def save_train_checkpoint(path, params, optimizer, run_cfg, step, epoch):
    tensors = {name: t.data for name, t in params.items()}
    tensors.update(optimizer.state_tensors())
    meta = {
        "step": step,
        "epoch": epoch,
        "run_config": run_cfg.to_dict(),
    }
    save_checkpoint(path, tensors, meta)


def load_params_from_checkpoint(path, model_cfg=None):
    """Load model parameters (and meta) from a checkpoint file.

    With model_cfg given, tensor names and shapes are validated against it;
    otherwise the config stored in the checkpoint meta is used.
    """
    tensors, meta = load_checkpoint(path)
    if model_cfg is None:
        try:
            model_cfg = NetworkConfig.from_dict(meta["run_config"]["model"])
        except (KeyError, TypeError) as exc:
            raise CheckpointMismatchError(f"{path}: no model config in checkpoint") from exc
    spec = param_spec(model_cfg)
    params = {}
    for name, shape in spec.items():
        if name not in tensors:
            raise CheckpointMismatchError(f"{path}: missing tensor {name!r}")
        if tuple(tensors[name].shape) != tuple(shape):
            raise CheckpointMismatchError(
                f"{path}: tensor {name!r} has shape {tuple(tensors[name].shape)}, "
                f"config expects {tuple(shape)}"
            )
        trainable = not (name.endswith("bn_mean") or name.endswith("bn_var"))
        params[name] = Tensor(tensors[name].copy(), requires_grad=trainable)
    return params, model_cfg, meta


def restore_optimizer(optimizer, path):
    tensors, meta = load_checkpoint(path)
    optimizer.load_state_tensors(tensors, meta["step"])
    return meta


def train(run_cfg: RunConfig, out_dir, resume=None, log_path=None, quiet=True):
    """Train per run_cfg; writes epoch checkpoints and a JSONL train log.

    Returns (params, final checkpoint path, last validation report or None).
    """
    import os

    os.makedirs(out_dir, exist_ok=True)
    log_path = log_path or os.path.join(out_dir, "train_log.jsonl")
    samples = [load_sample(p, run_cfg) for p in run_cfg.train_files]
    if not samples:
        raise ConfigError("no training files configured")
    val_samples = [load_sample(p, run_cfg) for p in run_cfg.val_files]

    if resume:
        params, _, meta = load_params_from_checkpoint(resume, run_cfg.model)
        optimizer = AdamW(params, lr=run_cfg.optim.lr,
                          weight_decay=run_cfg.optim.weight_decay,
                          betas=run_cfg.optim.betas, eps=run_cfg.optim.eps)
        restore_optimizer(optimizer, resume)
        start_epoch = meta["epoch"] + 1
        step = meta["step"]
    else:
        params = init_params(run_cfg.model, seed=run_cfg.seed)
        optimizer = AdamW(params, lr=run_cfg.optim.lr,
                          weight_decay=run_cfg.optim.weight_decay,
                          betas=run_cfg.optim.betas, eps=run_cfg.optim.eps)
        start_epoch = 0
        step = 0

    batches_per_epoch = max(
        1, (len(samples) + run_cfg.optim.batch_size - 1) // run_cfg.optim.batch_size
    )
    total_steps = run_cfg.optim.epochs * batches_per_epoch
    if run_cfg.optim.max_steps is not None:
        total_steps = min(total_steps, run_cfg.optim.max_steps)

    last_val = None
    last_epoch = start_epoch - 1
    log = open(log_path, "a")
    try:
        for epoch in range(start_epoch, run_cfg.optim.epochs):
            last_epoch = epoch
            order = np.random.default_rng((run_cfg.seed, epoch)).permutation(len(samples))
            for start in range(0, len(samples), run_cfg.optim.batch_size):
                if step >= total_steps:
                    break
                batch = [samples[i] for i in order[start:start + run_cfg.optim.batch_size]]
                t0 = time.perf_counter()
                optimizer.zero_grad()
                ce_sum = 0.0
                fft_sum = 0.0
                tot_sum = 0.0
                for s in batch:
                    with ad.training_mode(True):
                        with ad.Tape() as tape:
                            total, ce, reg = sample_losses(
                                s, run_cfg, params, scale=1.0 / len(batch)
                            )
                            tape.backward(total)
                    ce_sum += ce.item()
                    fft_sum += reg.item() if reg is not None else 0.0
                    tot_sum += total.item() * len(batch)
                lr_t = cosine_lr(step, total_steps, run_cfg.optim.lr, run_cfg.optim.lr_min)
                optimizer.step(lr_t)
                _clamp_transition_terms(params)
                step += 1
                rec = {
                    "step": step,
                    "ce": ce_sum / len(batch),
                    "fft": fft_sum / len(batch),
                    "total": tot_sum / len(batch),
                    "lr": lr_t,
                    "wall_s": time.perf_counter() - t0,
                }
                log.write(json.dumps(rec, sort_keys=True) + "\n")
            if val_samples:
                last_val = evaluate_samples(val_samples, run_cfg.model, params)
                log.write(json.dumps(
                    {"epoch": epoch, "val": last_val.to_dict()}, sort_keys=True
                ) + "\n")
            ckpt = os.path.join(out_dir, f"epoch{epoch:04d}.ckpt")
            save_train_checkpoint(ckpt, params, optimizer, run_cfg, step, epoch)
            if step >= total_steps:
                break
        final = os.path.join(out_dir, "final.ckpt")
        save_train_checkpoint(final, params, optimizer, run_cfg, step, last_epoch)
    finally:
        log.close()
    return params, final, last_val
