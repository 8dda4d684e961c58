"""Two-pathway gaze model, losses, and the staged training procedure.

The direction pathway maps a head crop plus the normalized head position
to a unit gaze direction: three stride-2 conv blocks with global average
pooling for the crop, three fully connected layers for the position, and
a two-layer fusion head whose output is L2-normalized.

The heatmap pathway consumes the scene image concatenated with the
multi-scale direction fields: three stride-2 encoder blocks, one
nearest-upsample decoder stage with a skip connection, then a 1x1 conv
and a sigmoid. The output grid is the scene resolution divided by 4,
which is also the ratio the full-scale design uses (224 -> 56).

Training runs in three stages: the direction pathway alone on the cosine
loss, then the heatmap pathway with the direction pathway frozen, then a
joint finetune on the combined objective. With mid-layer supervision
disabled there is a single end-to-end stage on the heatmap loss only,
with gradients reaching the direction pathway through the fields.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .checkpoint import save_params
from .data import GazeSample
from .errors import ConfigError, NumericError
from .field import NormalizedPoint, build_field_stack
from .heatmap import encode_gt
from .optim import AdamState, adam_step


@dataclass
class DirectionPathwayConfig:
    crop_channels: tuple[int, ...] = (12, 24, 32)
    position_widths: tuple[int, ...] = (16, 16, 16)  # three FC layers
    fusion_width: int = 32

    def __post_init__(self):
        if len(self.position_widths) != 3:
            raise ConfigError("position encoder must have exactly 3 fully connected layers")
        if len(self.crop_channels) != 3:
            raise ConfigError("crop encoder expects 3 conv blocks")


@dataclass
class HeatmapPathwayConfig:
    encoder_channels: tuple[int, ...] = (12, 24, 32)
    decoder_channels: tuple[int, ...] = (24, 16)

    def __post_init__(self):
        if len(self.encoder_channels) != 3 or len(self.decoder_channels) != 2:
            raise ConfigError("heatmap pathway expects 3 encoder and 2 decoder blocks")


@dataclass
class TrainConfig:
    batch_size: int = 32          # paper-scale default is 128; desk scale uses 32
    lr: float = 1e-4
    weight_decay: float = 0.0005
    loss_balance: float = 0.5     # weight on the heatmap loss in the joint objective
    sigma: float = 3.0            # ground-truth Gaussian width, in heatmap cells
    gammas: tuple[float, ...] = (5.0, 2.0, 1.0)
    stage1_epochs: int = 20
    stage2_epochs: int = 10
    finetune_epochs: int = 5
    seed: int = 0
    scene_resolution: int = 64
    heatmap_resolution: int = 16
    crop_resolution: int = 32
    mid_layer_supervision: bool = True
    direction: DirectionPathwayConfig = dc_field(default_factory=DirectionPathwayConfig)
    heatmap: HeatmapPathwayConfig = dc_field(default_factory=HeatmapPathwayConfig)

    def __post_init__(self):
        if self.loss_balance < 0:
            raise ConfigError("loss_balance must be >= 0")
        if self.scene_resolution < 8 or self.heatmap_resolution < 2:
            raise ConfigError("resolutions too small")
        if self.scene_resolution != 4 * self.heatmap_resolution:
            raise ConfigError(
                f"scene_resolution must be 4x heatmap_resolution "
                f"(got {self.scene_resolution} vs {self.heatmap_resolution})")
        if self.crop_resolution < 8:
            raise ConfigError("crop_resolution must be >= 8")
        if not self.gammas or any(g < 1 for g in self.gammas):
            raise ConfigError("gammas must be a non-empty list of values >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")


def _he_normal(rng, shape, fan_in):
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


class GazeModel:
    """Both pathways plus their parameters, keyed by dotted names."""

    def __init__(self, cfg: TrainConfig, rng: np.random.Generator | None = None):
        self.cfg = cfg
        rng = rng or np.random.default_rng(cfg.seed)
        self.params: dict[str, Tensor] = {}
        self._init_direction(rng)
        self._init_heatmap(rng)

    # -- parameter setup ----------------------------------------------------

    def _add(self, name: str, values: np.ndarray) -> None:
        self.params[name] = ad.parameter(values, name=name)

    def _init_direction(self, rng) -> None:
        d = self.cfg.direction
        c_in = 3
        for i, c_out in enumerate(d.crop_channels, start=1):
            self._add(f"dir.conv{i}.w", _he_normal(rng, (c_out, c_in, 3, 3), c_in * 9))
            self._add(f"dir.conv{i}.b", np.zeros(c_out))
            c_in = c_out
        p_in = 2
        for i, width in enumerate(d.position_widths, start=1):
            self._add(f"dir.pos{i}.w", _he_normal(rng, (p_in, width), p_in))
            self._add(f"dir.pos{i}.b", np.zeros(width))
            p_in = width
        fused = d.crop_channels[-1] + d.position_widths[-1]
        self._add("dir.fuse1.w", _he_normal(rng, (fused, d.fusion_width), fused))
        self._add("dir.fuse1.b", np.zeros(d.fusion_width))
        self._add("dir.fuse2.w", _he_normal(rng, (d.fusion_width, 2), d.fusion_width))
        self._add("dir.fuse2.b", np.zeros(2))

    def _init_heatmap(self, rng) -> None:
        h = self.cfg.heatmap
        c_in = 3 + len(self.cfg.gammas)
        for i, c_out in enumerate(h.encoder_channels, start=1):
            self._add(f"heat.enc{i}.w", _he_normal(rng, (c_out, c_in, 3, 3), c_in * 9))
            self._add(f"heat.enc{i}.b", np.zeros(c_out))
            c_in = c_out
        skip = h.encoder_channels[1]
        d1, d2 = h.decoder_channels
        self._add("heat.dec1.w", _he_normal(rng, (d1, h.encoder_channels[2] + skip, 3, 3),
                                            (h.encoder_channels[2] + skip) * 9))
        self._add("heat.dec1.b", np.zeros(d1))
        self._add("heat.dec2.w", _he_normal(rng, (d2, d1, 3, 3), d1 * 9))
        self._add("heat.dec2.b", np.zeros(d2))
        self._add("heat.out.w", _he_normal(rng, (1, d2, 1, 1), d2))
        self._add("heat.out.b", np.zeros(1))

    def direction_parameters(self) -> list[Tensor]:
        return [p for n, p in self.params.items() if n.startswith("dir.")]

    def heatmap_parameters(self) -> list[Tensor]:
        return [p for n, p in self.params.items() if n.startswith("heat.")]

    def all_parameters(self) -> list[Tensor]:
        return list(self.params.values())

    # -- forward ------------------------------------------------------------

    def direction_forward(self, crops, positions) -> Tensor:
        """(B, 3, c, c) crops + (B, 2) positions -> (B, 2) unit directions."""
        x = crops if isinstance(crops, Tensor) else ad.constant(crops)
        pos = positions if isinstance(positions, Tensor) else ad.constant(positions)
        if x.values.ndim != 4 or x.shape[1] != 3:
            raise ConfigError(f"head crops must be (B, 3, c, c), got {x.shape}")
        p = self.params
        for i in range(1, 4):
            x = ad.relu(ad.conv2d(x, p[f"dir.conv{i}.w"], p[f"dir.conv{i}.b"],
                                  stride=2, padding=1))
        feat = ad.mean(x, axes=(2, 3))
        for i in range(1, 4):
            pos = ad.relu(ad.add(ad.matmul(pos, p[f"dir.pos{i}.w"]), p[f"dir.pos{i}.b"]))
        fused = ad.concat([feat, pos], axis=1)
        fused = ad.relu(ad.add(ad.matmul(fused, p["dir.fuse1.w"]), p["dir.fuse1.b"]))
        raw = ad.add(ad.matmul(fused, p["dir.fuse2.w"]), p["dir.fuse2.b"])
        return ad.l2_normalize(raw)

    def build_fields(self, heads: np.ndarray, directions: Tensor) -> Tensor:
        """(B, 2) heads + (B, 2) direction tensor -> (B, G, S, S) field stack."""
        s = self.cfg.scene_resolution
        stacks = []
        for b in range(heads.shape[0]):
            d_b = ad.row(directions, b)
            stack = build_field_stack(heads[b], d_b, s, s, self.cfg.gammas)
            stacks.append(ad.reshape(stack, (1, len(self.cfg.gammas), s, s)))
        return ad.concat(stacks, axis=0)

    def heatmap_forward(self, scenes, fields: Tensor) -> Tensor:
        """(B, 3, S, S) scenes + (B, G, S, S) fields -> (B, 1, S/4, S/4) heatmaps."""
        x = scenes if isinstance(scenes, Tensor) else ad.constant(scenes)
        g = len(self.cfg.gammas)
        if fields.shape[1] != g:
            raise ConfigError(f"field stack has {fields.shape[1]} channels, expected {g}")
        if x.shape[2:] != fields.shape[2:] or x.shape[0] != fields.shape[0]:
            raise ConfigError(f"scene {x.shape} and fields {fields.shape} extents differ")
        p = self.params
        h = ad.concat([x, fields], axis=1)
        e1 = ad.relu(ad.conv2d(h, p["heat.enc1.w"], p["heat.enc1.b"], stride=2, padding=1))
        e2 = ad.relu(ad.conv2d(e1, p["heat.enc2.w"], p["heat.enc2.b"], stride=2, padding=1))
        e3 = ad.relu(ad.conv2d(e2, p["heat.enc3.w"], p["heat.enc3.b"], stride=2, padding=1))
        up = ad.concat([ad.upsample_nearest(e3, 2), e2], axis=1)
        d1 = ad.relu(ad.conv2d(up, p["heat.dec1.w"], p["heat.dec1.b"], stride=1, padding=1))
        d2 = ad.relu(ad.conv2d(d1, p["heat.dec2.w"], p["heat.dec2.b"], stride=1, padding=1))
        out = ad.conv2d(d2, p["heat.out.w"], p["heat.out.b"], stride=1, padding=0)
        return ad.sigmoid(out)

    def forward(self, crops, positions, scenes, heads) -> tuple[Tensor, Tensor]:
        d_hat = self.direction_forward(crops, positions)
        fields = self.build_fields(heads, d_hat)
        return d_hat, self.heatmap_forward(scenes, fields)

    def predict_heatmaps(self, samples: list[GazeSample], batch_size: int = 64) -> list[np.ndarray]:
        """Evaluation-mode heatmaps, one (h, w) array per sample."""
        out = []
        with ad.no_grad():
            for lo in range(0, len(samples), batch_size):
                batch = samples[lo:lo + batch_size]
                arrays = batch_arrays(batch, self.cfg)
                _, pred = self.forward(arrays["crops"], arrays["positions"],
                                       arrays["scenes"], arrays["heads"])
                out.extend(pred.values[i, 0] for i in range(len(batch)))
        return out


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def direction_loss(d_true: np.ndarray, d_hat: Tensor) -> Tensor:
    """Mean cosine loss 1 - <d, d_hat> / (|d| |d_hat|) over the batch."""
    d_true = np.atleast_2d(np.asarray(d_true, dtype=np.float64))
    norms = np.linalg.norm(d_true, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise ValueError("zero ground-truth direction")
    target = ad.constant(d_true / norms)
    if d_hat.values.ndim == 1:
        d_hat = ad.reshape(d_hat, (1, 2))
    cos = ad.tensor_sum(ad.mul(ad.l2_normalize(d_hat), target), axes=(1,))
    return ad.affine(ad.mean(cos), scale=-1.0, shift=1.0)


def heatmap_loss(gt: np.ndarray, pred: Tensor) -> Tensor:
    """Binary cross entropy averaged over every cell (and the batch)."""
    gt = np.asarray(gt, dtype=np.float64)
    if gt.shape != pred.shape:
        raise ValueError(f"heatmap extents differ: gt {gt.shape} vs pred {pred.shape}")
    target = ad.constant(gt)
    complement = ad.constant(1.0 - gt)
    term = ad.add(ad.mul(target, ad.log(pred)),
                  ad.mul(complement, ad.log(ad.affine(pred, scale=-1.0, shift=1.0))))
    return ad.affine(ad.mean(term), scale=-1.0)


def total_loss(loss_dir: Tensor, loss_heat: Tensor, balance: float,
               mid_layer_supervision: bool = True) -> Tensor:
    """Joint objective; without mid-layer supervision only the heatmap term."""
    if balance < 0:
        raise ValueError("balance must be >= 0")
    if not mid_layer_supervision:
        return loss_heat
    return ad.add(loss_dir, ad.affine(loss_heat, scale=balance))


def _direction_loss_value(d_true: np.ndarray, d_hat_values: np.ndarray) -> float:
    t = d_true / np.linalg.norm(d_true, axis=1, keepdims=True)
    h = d_hat_values / np.maximum(np.linalg.norm(d_hat_values, axis=1, keepdims=True), 1e-12)
    return float(np.mean(1.0 - np.sum(t * h, axis=1)))


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def batch_arrays(samples: list[GazeSample], cfg: TrainConfig) -> dict:
    """Stack a sample batch into the arrays the forward passes consume."""
    hm = cfg.heatmap_resolution
    gt_heat = np.stack([
        encode_gt(NormalizedPoint(*s.gaze_points[0]), hm, hm, sigma=cfg.sigma)[None]
        for s in samples])
    return {
        "crops": np.stack([s.head_crop for s in samples]),
        "positions": np.stack([s.head for s in samples]),
        "scenes": np.stack([s.scene for s in samples]),
        "heads": np.stack([s.head for s in samples]),
        "directions": np.stack([s.direction for s in samples]),
        "gt_heatmaps": gt_heat,
    }


@dataclass
class TrainResult:
    model: GazeModel
    log: list[dict]


def _epoch_batches(n: int, batch_size: int, rng) -> list[np.ndarray]:
    perm = rng.permutation(n)
    return [perm[lo:lo + batch_size] for lo in range(0, n, batch_size)]


def train_staged(samples: list[GazeSample], cfg: TrainConfig,
                 out_dir: str | None = None, model: GazeModel | None = None,
                 log_fn=None) -> TrainResult:
    """Run the staged schedule; returns the model and per-epoch loss log."""
    if not samples:
        raise ValueError("training set is empty")
    root = np.random.SeedSequence(cfg.seed)
    init_seq, shuffle_seq = root.spawn(2)
    if model is None:
        model = GazeModel(cfg, rng=np.random.default_rng(init_seq))
    shuffle_rng = np.random.default_rng(shuffle_seq)
    log: list[dict] = []

    def emit(msg):
        if log_fn:
            log_fn(msg)

    emit(f"training on {len(samples)} samples, batch_size={cfg.batch_size} "
         f"(paper-scale default 128), gammas={list(cfg.gammas)}, "
         f"mid_layer_supervision={cfg.mid_layer_supervision}")

    def run_stage(stage: str, epochs: int, trainable: list[Tensor], step_fn) -> None:
        if epochs <= 0:
            return
        state = AdamState(trainable, lr=cfg.lr, weight_decay=cfg.weight_decay)
        for epoch in range(1, epochs + 1):
            t0 = time.perf_counter()
            sums = {"dir": 0.0, "heat": 0.0, "total": 0.0}
            counts = {"dir": 0, "heat": 0, "total": 0}
            for idx in _epoch_batches(len(samples), cfg.batch_size, shuffle_rng):
                batch = [samples[i] for i in idx]
                arrays = batch_arrays(batch, cfg)
                ad.zero_grads(trainable)
                try:
                    losses = step_fn(arrays)
                    ad.backward(losses.pop("_loss"))
                    adam_step(state)
                except NumericError as exc:
                    raise NumericError(f"stage {stage} epoch {epoch}: {exc}") from exc
                for key, value in losses.items():
                    sums[key] += value
                    counts[key] += 1
            ad.zero_grads(trainable)
            row = {
                "stage": stage,
                "epoch": epoch,
                "loss_dir": sums["dir"] / counts["dir"] if counts["dir"] else None,
                "loss_heat": sums["heat"] / counts["heat"] if counts["heat"] else None,
                "loss_total": sums["total"] / counts["total"] if counts["total"] else None,
                "seconds": time.perf_counter() - t0,
            }
            log.append(row)
            emit(f"[{stage}] epoch {epoch}/{epochs} "
                 f"dir={_fmt(row['loss_dir'])} heat={_fmt(row['loss_heat'])} "
                 f"total={_fmt(row['loss_total'])} ({row['seconds']:.1f}s)")
        if out_dir:
            save_params(model.params, f"{out_dir}/checkpoint_{stage}.json")

    if cfg.mid_layer_supervision:
        def stage1(arrays):
            d_hat = model.direction_forward(arrays["crops"], arrays["positions"])
            ld = direction_loss(arrays["directions"], d_hat)
            v = ld.item()
            return {"dir": v, "total": v, "_loss": ld}

        def stage2(arrays):
            with ad.no_grad():
                d_hat = model.direction_forward(arrays["crops"], arrays["positions"])
                fields = model.build_fields(arrays["heads"], d_hat)
            pred = model.heatmap_forward(arrays["scenes"], fields)
            lh = heatmap_loss(arrays["gt_heatmaps"], pred)
            ld_value = _direction_loss_value(arrays["directions"], d_hat.values)
            v = lh.item()
            return {"dir": ld_value, "heat": v, "total": v, "_loss": lh}

        def stage3(arrays):
            d_hat, pred = model.forward(arrays["crops"], arrays["positions"],
                                        arrays["scenes"], arrays["heads"])
            ld = direction_loss(arrays["directions"], d_hat)
            lh = heatmap_loss(arrays["gt_heatmaps"], pred)
            joint = total_loss(ld, lh, cfg.loss_balance, mid_layer_supervision=True)
            return {"dir": ld.item(), "heat": lh.item(), "total": joint.item(), "_loss": joint}

        run_stage("direction", cfg.stage1_epochs, model.direction_parameters(), stage1)
        run_stage("heatmap", cfg.stage2_epochs, model.heatmap_parameters(), stage2)
        run_stage("finetune", cfg.finetune_epochs, model.all_parameters(), stage3)
    else:
        # no auxiliary supervision: a single end-to-end stage on the
        # heatmap loss, with gradients reaching the direction pathway
        # through the field stack; total budget matches the staged run
        epochs = cfg.stage1_epochs + cfg.stage2_epochs + cfg.finetune_epochs

        def end_to_end(arrays):
            d_hat, pred = model.forward(arrays["crops"], arrays["positions"],
                                        arrays["scenes"], arrays["heads"])
            lh = heatmap_loss(arrays["gt_heatmaps"], pred)
            ld_value = _direction_loss_value(arrays["directions"], d_hat.values)
            v = lh.item()
            return {"dir": ld_value, "heat": v, "total": v, "_loss": lh}

        run_stage("end_to_end", epochs, model.all_parameters(), end_to_end)

    if out_dir:
        save_params(model.params, f"{out_dir}/checkpoint_final.json")
    return TrainResult(model=model, log=log)


def _fmt(v) -> str:
    return "-" if v is None else f"{v:.5f}"


def write_training_log(log: list[dict], path: str) -> None:
    with open(path, "w") as fh:
        fh.write("stage,epoch,loss_dir,loss_heat,loss_total,seconds\n")
        for row in log:
            cells = [row["stage"], str(row["epoch"])]
            for key in ("loss_dir", "loss_heat", "loss_total"):
                cells.append("" if row[key] is None else repr(row[key]))
            cells.append(f"{row['seconds']:.3f}")
            fh.write(",".join(cells) + "\n")
