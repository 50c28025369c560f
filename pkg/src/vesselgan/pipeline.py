"""Alternating adversarial training, tiled inference and directory evaluation."""
import json
import logging
import os
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import RunConfig
from .data import (
    PatchSampler,
    load_dataset,
    load_record,
    normalize,
    pad_array,
    tile_origins,
)
from .errors import CheckpointError, ConfigError, DataError, DomainError, NumericAbort
from .metrics import ReportWriter, emit_outputs, evaluate_image, pooled_report
from .models import NoiseSpec, build_discriminator, build_generator, discriminator_forward, generator_forward
from .netpbm import read_netpbm
from .objective import aggregate_patch_scores, discriminator_loss, generator_loss, make_report
from .optim import AdamState, adam_step, apply_lr_decay

log = logging.getLogger(__name__)


def discriminator_update(D, opt, cfg, x, y, fake):
    """One D step on the real pair and the detached fake pair."""
    D.zero_grad()
    real_scores = discriminator_forward(D, x, y)
    fake_scores = discriminator_forward(D, x, fake.detach())
    loss, real, fake_loss = discriminator_loss(real_scores, fake_scores, cfg.objective.bce_clamp)
    return loss, real, fake_loss, real_scores, fake_scores


def generator_gradients(G, D, cfg, x, y, fake):
    """Populate G's grads from the generator loss; D's parameters stay frozen."""
    G.zero_grad()
    with D.frozen():
        scores = discriminator_forward(D, x, fake)
        loss, adv, l1 = generator_loss(scores, y, fake, cfg.objective)
        if np.isfinite(loss.item()):
            T.backward(loss)
    return loss, adv, l1


@dataclass
class TrainStepReport:
    step: int
    epoch: int
    d_loss_real: float
    d_loss_fake: float
    d_loss_total: float
    g_adv_loss: float
    g_l1_loss: float
    g_total: float
    lr_g: float
    lr_d: float
    mean_real_score: float
    mean_fake_score: float
    wall_time: float

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)


class Trainer:
    """Owns both networks, their optimizers and the seeded sample/noise streams."""

    def __init__(self, cfg, records):
        self.cfg = cfg.validate()
        seed = cfg.train.seed
        self.G = build_generator(cfg.generator, seed=seed)
        self.D = build_discriminator(cfg.discriminator, seed=seed + 1)
        self.opt_g = AdamState.init(self.G, cfg.optimizer_g)
        self.opt_d = AdamState.init(self.D, cfg.optimizer_d)
        self.data_rng = np.random.default_rng([seed, 2])
        self.noise_rng = np.random.default_rng([seed, 3])
        self.noise = NoiseSpec(cfg.generator.noise_channels)
        self.sampler = PatchSampler(records, cfg.patch, cfg.augment, self.data_rng, cfg.generator.multiple)
        self.steps_per_epoch = self.sampler.steps_per_epoch(cfg.train.batch_size)
        self.step = 0
        self._batch_ids = []
        if cfg.patch.size:
            cfg.discriminator.patch_grid(cfg.patch.size, cfg.patch.size)

    @property
    def epoch(self):
        return self.step // self.steps_per_epoch

    def total_steps(self):
        if self.cfg.train.max_steps > 0:
            return self.cfg.train.max_steps
        return self.cfg.train.epochs * self.steps_per_epoch

    def train_step(self):
        try:
            return self._train_step()
        except DomainError as exc:
            # a NaN/inf reaching a log is the same failure as a non-finite loss
            raise NumericAbort(f"non-finite values at step {self.step + 1}; batch {self._batch_ids}: {exc}") from None

    def _train_step(self):
        cfg = self.cfg
        t0 = time.perf_counter()
        apply_lr_decay(self.opt_g, cfg.optimizer_g, self.epoch)
        apply_lr_decay(self.opt_d, cfg.optimizer_d, self.epoch)
        xb, yb, batch_ids = self.sampler.next_batch(cfg.train.batch_size)
        self._batch_ids = batch_ids
        x, y = T.Tensor(xb), T.Tensor(yb)
        n, _, h, w = xb.shape
        z = self.noise.sample(self.noise_rng, n, h, w)
        fake = generator_forward(self.G, x, z)

        for _ in range(cfg.train.d_steps):
            d_loss, d_real, d_fake, real_scores, fake_scores = discriminator_update(self.D, self.opt_d, cfg, x, y, fake)
            self._check_finite(d_loss, "discriminator", batch_ids)
            T.backward(d_loss)
            adam_step(self.D, self.opt_d, cfg.optimizer_d)

        g_loss, g_adv, g_l1 = generator_gradients(self.G, self.D, cfg, x, y, fake)
        self._check_finite(g_loss, "generator", batch_ids)
        adam_step(self.G, self.opt_g, cfg.optimizer_g)

        self.step += 1
        losses = make_report(self.step, d_real.item(), d_fake.item(), g_adv.item(), g_l1.item(), cfg.objective.lam)
        fields = asdict(losses)
        fields.pop("step")
        return TrainStepReport(
            step=self.step,
            epoch=(self.step - 1) // self.steps_per_epoch,
            lr_g=self.opt_g.lr,
            lr_d=self.opt_d.lr,
            mean_real_score=aggregate_patch_scores(real_scores),
            mean_fake_score=aggregate_patch_scores(fake_scores),
            wall_time=time.perf_counter() - t0,
            **fields,
        )

    def _check_finite(self, loss, which, batch_ids):
        if not np.isfinite(loss.item()):
            raise NumericAbort(
                f"non-finite {which} loss ({loss.item()}) at step {self.step + 1}; batch {batch_ids}"
            )

    # checkpoints --------------------------------------------------------
    def checkpoint(self):
        def buffers(store):
            out = {}
            for name, st in store.buffers.items():
                out[f"{name}/running_mean"] = st.running_mean
                out[f"{name}/running_var"] = st.running_var
            return out

        state = {
            "step": self.step,
            "epoch": self.epoch,
            "adam_g": {"t": self.opt_g.t, "lr": self.opt_g.lr},
            "adam_d": {"t": self.opt_d.t, "lr": self.opt_d.lr},
            "rng": {"data": self.data_rng.bit_generator.state, "noise": self.noise_rng.bit_generator.state},
            "identity_sha256": self.cfg.identity_hash(),
        }
        return Checkpoint(
            config_text=self.cfg.to_text(),
            generator=self.G.snapshot(),
            discriminator=self.D.snapshot(),
            gen_buffers=buffers(self.G),
            disc_buffers=buffers(self.D),
            adam_g={"m": self.opt_g.m, "v": self.opt_g.v},
            adam_d={"m": self.opt_d.m, "v": self.opt_d.v},
            state=state,
        )

    def restore(self, ckpt):
        if ckpt.state.get("identity_sha256") != self.cfg.identity_hash():
            raise CheckpointError("checkpoint was written by a different configuration (hash mismatch)")
        _load_store(self.G, ckpt.generator, ckpt.gen_buffers)
        _load_store(self.D, ckpt.discriminator, ckpt.disc_buffers)
        for opt, moments, meta in ((self.opt_g, ckpt.adam_g, ckpt.state["adam_g"]), (self.opt_d, ckpt.adam_d, ckpt.state["adam_d"])):
            for kind in ("m", "v"):
                target = getattr(opt, kind)
                for name in target:
                    if name not in moments[kind]:
                        raise CheckpointError(f"checkpoint lacks Adam moment {kind} for {name!r}")
                    target[name] = np.array(moments[kind][name], dtype=target[name].dtype)
            opt.t, opt.lr = int(meta["t"]), float(meta["lr"])
        self.step = int(ckpt.state["step"])
        self.data_rng.bit_generator.state = ckpt.state["rng"]["data"]
        self.noise_rng.bit_generator.state = ckpt.state["rng"]["noise"]


def _load_store(store, arrays, buffers):
    try:
        store.load_arrays(arrays)
    except (ConfigError, ValueError) as exc:
        raise CheckpointError(f"checkpoint does not fit the configured model: {exc}") from None
    for name, st in store.buffers.items():
        for kind in ("running_mean", "running_var"):
            key = f"{name}/{kind}"
            if key not in buffers:
                raise CheckpointError(f"checkpoint lacks buffer {key!r}")
            getattr(st, kind)[...] = buffers[key]


def load_training_records(cfg, data_root, out_dir=None):
    d = cfg.data
    manifest = load_dataset(
        data_root,
        d.kind,
        loo_index=d.loo_index if d.loo_index >= 0 else None,
        train_count=d.train_count if d.train_count >= 0 else None,
    )
    if out_dir is not None:
        manifest.write(os.path.join(out_dir, "manifest.json"))
    if not manifest.train:
        raise DataError(f"dataset at {data_root} has no training images")
    return [load_record(e, need_label=True) for e in manifest.train]


def train_loop(cfg, data_root=None, out_dir="run", resume=None, records=None, max_steps=None):
    """Train until the configured number of steps; returns (trainer, reports).

    Writes ``config.txt`` before the first step, one JSON line per step to
    ``train_log.jsonl``, periodic ``ckpt_<step>.vgn`` files and ``final.vgn``.
    """
    os.makedirs(out_dir, exist_ok=True)
    cfg.validate()
    cfg.write(os.path.join(out_dir, "config.txt"))
    if records is None:
        records = load_training_records(cfg, data_root, out_dir)
    trainer = Trainer(cfg, records)
    if resume is not None:
        trainer.restore(resume if isinstance(resume, Checkpoint) else load_checkpoint(resume))
    total = max_steps if max_steps is not None else trainer.total_steps()
    every = cfg.train.checkpoint_every
    last_good = None
    reports = []
    with open(os.path.join(out_dir, "train_log.jsonl"), "a") as logfile:
        while trainer.step < total:
            try:
                report = trainer.train_step()
            except NumericAbort as exc:
                diag = os.path.join(out_dir, "abort_diagnostic.json")
                with open(diag, "w") as fh:
                    json.dump({"step": trainer.step + 1, "error": str(exc), "last_good_checkpoint": last_good}, fh, indent=2)
                exc.diagnostic_path, exc.last_good = diag, last_good
                raise
            reports.append(report)
            logfile.write(report.to_json() + "\n")
            logfile.flush()
            if every and trainer.step % every == 0:
                last_good = os.path.join(out_dir, f"ckpt_{trainer.step:07d}.vgn")
                save_checkpoint(last_good, trainer.checkpoint())
    save_checkpoint(os.path.join(out_dir, "final.vgn"), trainer.checkpoint())
    return trainer, reports


# inference ------------------------------------------------------------------

@dataclass
class InferenceResult:
    id: str
    prob: np.ndarray
    coverage: np.ndarray
    path: str = None


def generator_from_checkpoint(ckpt):
    cfg = RunConfig.from_text(ckpt.config_text)
    G = build_generator(cfg.generator, seed=0)
    _load_store(G, ckpt.generator, ckpt.gen_buffers)
    return cfg, G


def predict(G, image, tile=128, stride=64, z_seed=0, z_zero=False, batch_size=4):
    """Overlap-averaged probability map for a uint8 RGB image.

    The image is reflect-padded to the generator's multiple, covered by
    tiles, each tile is run in eval mode, and per-pixel predictions are
    averaged over the tiles that contain the pixel.  Returns (prob, coverage)
    where coverage is the sum of averaging weights (1 everywhere).
    """
    cfg = G.config
    h, w = image.shape[:2]
    x = pad_array(normalize(image), cfg.multiple)
    ph, pw = x.shape[-2:]
    th = tw = tile
    if not tile or tile > min(ph, pw):
        th, tw = ph, pw
    if th % cfg.multiple or tw % cfg.multiple:
        raise ConfigError(f"tile size {tile} must be divisible by {cfg.multiple}")
    origins = [(i, j) for i in tile_origins(ph, th, stride) for j in tile_origins(pw, tw, stride)]
    rng = np.random.default_rng(z_seed)
    noise = NoiseSpec(cfg.noise_channels)
    total = np.zeros((ph, pw), dtype=np.float64)
    count = np.zeros((ph, pw), dtype=np.float64)
    with T.no_grad():
        for start in range(0, len(origins), batch_size):
            group = origins[start:start + batch_size]
            xb = np.stack([x[0, :, i:i + th, j:j + tw] for i, j in group])
            z = noise.zeros(len(group), th, tw) if z_zero else noise.sample(rng, len(group), th, tw)
            out = generator_forward(G, T.Tensor(xb), z, mode="eval").data
            for (i, j), tile_out in zip(group, out):
                total[i:i + th, j:j + tw] += tile_out[0]
                count[i:i + th, j:j + tw] += 1
    prob = total / count
    coverage = np.zeros_like(count)
    for i, j in origins:
        coverage[i:i + th, j:j + tw] += 1.0 / count[i:i + th, j:j + tw]
    return prob[:h, :w], coverage[:h, :w]


def infer(ckpt_path, image_path, out_dir, tile=None, stride=None, z_seed=None, z_zero=False):
    """Write ``<out_dir>/<stem>.pgm`` holding the predicted probability map."""
    ckpt = load_checkpoint(ckpt_path)
    cfg, G = generator_from_checkpoint(ckpt)
    image = read_netpbm(image_path)
    if image.ndim != 3:
        raise DataError(f"{image_path}: expected an RGB (P6) image")
    tile = cfg.patch.size if tile is None else tile
    stride = cfg.patch.stride if stride is None else stride
    z_seed = cfg.train.seed if z_seed is None else z_seed
    prob, coverage = predict(G, image, tile, stride, z_seed=z_seed, z_zero=z_zero, batch_size=cfg.train.batch_size)
    stem = os.path.splitext(os.path.basename(image_path))[0]
    paths = emit_outputs(out_dir, stem, prob)
    return InferenceResult(stem, prob, coverage, paths["prob"])


# evaluation -----------------------------------------------------------------

def _pgm_stems(directory):
    if directory is None or not os.path.isdir(directory):
        return {}
    return {os.path.splitext(n)[0]: os.path.join(directory, n) for n in sorted(os.listdir(directory)) if n.lower().endswith(".pgm")}


def evaluate_command(pred_dir, gt_dir, report_path, mask_dir=None, fixed_threshold=None, binary_dir=None):
    """Score every prediction against its ground truth; writes a JSON-lines report.

    One object per image, then one ``__aggregate__`` object with pooled counts.
    """
    preds, gts = _pgm_stems(pred_dir), _pgm_stems(gt_dir)
    if not gts:
        raise DataError(f"no ground-truth .pgm files in {gt_dir}")
    if not preds:
        raise DataError(f"no predictions in {pred_dir}; expected: {', '.join(sorted(gts))}")
    masks = _pgm_stems(mask_dir) if mask_dir else {}
    problems = []
    missing = sorted(set(gts) - set(preds))
    extra = sorted(set(preds) - set(gts))
    if missing:
        problems.append(f"missing predictions for: {', '.join(missing)}")
    if extra:
        problems.append(f"predictions without ground truth: {', '.join(extra)}")
    if mask_dir:
        no_mask = sorted(set(gts) - set(masks))
        if no_mask:
            problems.append(f"missing masks for: {', '.join(no_mask)}")
    if problems:
        raise DataError("unmatched stems; " + "; ".join(problems))

    if os.path.exists(report_path):
        os.remove(report_path)
    reports, scores, labels, mask_arrays = [], [], [], []
    with ReportWriter(report_path) as writer:
        for stem in sorted(gts):
            prob = read_netpbm(preds[stem])
            gt = (read_netpbm(gts[stem]) > 0).astype(np.uint8)
            mask = (read_netpbm(masks[stem]) > 0).astype(np.uint8) if mask_dir else None
            if prob.ndim != 2 or prob.shape != gt.shape or (mask is not None and mask.shape != gt.shape):
                raise DataError(f"{stem}: prediction, ground truth and mask shapes disagree")
            score = prob.astype(np.float64) / 255.0
            report, binary = evaluate_image(stem, score, gt, mask, fixed_threshold)
            writer.append(report)
            if binary_dir:
                emit_outputs(binary_dir, stem, score, binary)
            reports.append(report)
            scores.append(score)
            labels.append(gt)
            mask_arrays.append(mask)
        aggregate = pooled_report(reports, scores, labels, mask_arrays)
        writer.append(aggregate)
    return reports, aggregate


def count_tensors(ckpt):
    """Number of tensors a checkpoint file holds, including the meta entries."""
    moments = sum(len(ckpt.adam_g.get(k, {})) + len(ckpt.adam_d.get(k, {})) for k in ("m", "v"))
    params = len(ckpt.generator) + len(ckpt.discriminator)
    buffers = len(ckpt.gen_buffers) + len(ckpt.disc_buffers)
    return params + buffers + moments + 3


__all__ = [
    "Trainer",
    "TrainStepReport",
    "train_loop",
    "predict",
    "infer",
    "evaluate_command",
    "discriminator_update",
    "generator_gradients",
]
