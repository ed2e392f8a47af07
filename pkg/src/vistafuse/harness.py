"""VisTaNet assembly plus the training/evaluation/ablation machinery."""

from __future__ import annotations

import json
import os
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .dataset_io import N_CLASSES, load_image, load_sweep_csv, split_train_test, window_sweep
from .errors import ContractError, ShapeError
from .fusion import AttentionBlock, fuse, fused_width
from .layers import Adam, DenseModule, cross_entropy, lr_schedule
from .streams import TactileStream, VisualStream, augment_image


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch, batch):
        super().__init__(f"loss became non-finite at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


def substream(seed, name, *idx):
    """Named RNG stream: independent of the consumption of other streams."""
    tag = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence((int(seed), tag) + tuple(int(i) for i in idx)))


# ---------------------------------------------------------------------------
# model


class VisTaNet:
    """Two-stream network with a configurable fusion stage and a linear
    classifier stack ending in an 18-class softmax."""

    def __init__(self, visual, tactile, strategy, attention, classifier, stream_mode="fused"):
        self.visual = visual
        self.tactile = tactile
        self.strategy = strategy
        self.attention = attention
        self.classifier = classifier
        self.stream_mode = stream_mode

    @classmethod
    def build(cls, cfg, rng):
        visual = VisualStream.create(
            rng,
            crop_size=cfg.crop_size,
            conv_channels=cfg.conv_channels,
            head_widths=tuple(cfg.visual_widths) + (cfg.feature_dim,),
            dropout=cfg.dropout,
        )
        tactile = TactileStream.create(
            rng,
            window=cfg.window,
            widths=tuple(cfg.tactile_widths) + (cfg.feature_dim,),
            dropout=cfg.dropout,
        )
        attention = None
        if cfg.stream == "fused" and cfg.fusion == "attention":
            attention = AttentionBlock.create(
                rng, cfg.feature_dim, d_k=cfg.d_k, heads=cfg.heads, learned_values=cfg.learned_values
            )
        d_in = cfg.feature_dim if cfg.stream != "fused" else fused_width(cfg.fusion, cfg.feature_dim)
        cw = cfg.classifier_width
        classifier = [
            DenseModule.create(rng, d_in, cw, activation="linear"),
            DenseModule.create(rng, cw, N_CLASSES, activation="linear"),
        ]
        return cls(visual, tactile, cfg.fusion, attention, classifier, stream_mode=cfg.stream)

    def forward(self, images, windows, training=False, rng=None):
        """Returns (probs b×18, logits b×18, attention weights b×2 or None)."""
        weights = None
        if self.stream_mode == "visual":
            x = self.visual.forward(images, training=training, rng=rng)
        elif self.stream_mode == "tactile":
            x = self.tactile.forward(windows, training=training, rng=rng)
        else:
            fv = self.visual.forward(images, training=training, rng=rng)
            ft = self.tactile.forward(windows, training=training, rng=rng)
            result = fuse(self.strategy, fv, ft, block=self.attention)
            x = result.fused
            weights = result.weights
        for dense in self.classifier:
            x = dense.forward(x, training=training, rng=rng)
        logits = x
        probs = ad.softmax(logits, axis=-1)
        return probs, logits, weights

    def params(self):
        out = {}
        if self.stream_mode in ("fused", "visual"):
            out.update(self.visual.params())
        if self.stream_mode in ("fused", "tactile"):
            out.update(self.tactile.params())
        if self.attention is not None:
            out.update(self.attention.params())
        for i, dense in enumerate(self.classifier):
            for k, p in dense.params().items():
                out[f"classifier.dense{i}.{k}"] = p
        return out


def apply_checkpoint(net, state):
    """Copy a checkpoint dict into the model, verifying names and shapes."""
    params = net.params()
    for name in sorted(set(params) | set(state)):
        if name not in state:
            raise ShapeError(f"checkpoint is missing parameter {name}")
        if name not in params:
            raise ShapeError(f"checkpoint has unexpected parameter {name}")
        if tuple(state[name].shape) != tuple(params[name].shape):
            raise ShapeError(
                f"parameter {name}: checkpoint shape {tuple(state[name].shape)} "
                f"!= model shape {tuple(params[name].shape)}"
            )
    for name, p in params.items():
        p.data[...] = state[name]


# ---------------------------------------------------------------------------
# in-memory dataset


@dataclass
class Item:
    item_id: str
    class_id: int
    class_name: str
    images: list  # uint8 arrays
    windows: list  # per sweep: list of (W, D) arrays


def load_items(base_dir, records, cfg):
    items = {}
    for rec in records:
        images = [load_image(os.path.join(base_dir, p)).pixels for p in rec.images]
        windows = []
        for p in rec.sweeps:
            sweep = load_sweep_csv(os.path.join(base_dir, p), class_id=rec.class_id)
            windows.append([w.values for w in window_sweep(sweep, cfg.window, cfg.stride)])
        items[rec.item_id] = Item(
            item_id=rec.item_id,
            class_id=rec.class_id,
            class_name=rec.class_name,
            images=images,
            windows=windows,
        )
    return items


def class_names_from_records(records):
    names = [f"class{i}" for i in range(N_CLASSES)]
    for rec in records:
        names[rec.class_id] = rec.class_name
    return names


# ---------------------------------------------------------------------------
# metrics


@dataclass
class MetricsReport:
    accuracy: float
    confusion: np.ndarray  # (18, 18) int, rows = ground truth
    per_class_attention: np.ndarray | None  # (18, 2) mean (p, q), nan where unseen
    loss_curve: list
    class_names: list

    @property
    def per_class_accuracy(self):
        totals = self.confusion.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(totals > 0, np.diag(self.confusion) / np.maximum(totals, 1), np.nan)

    def to_json_dict(self):
        acc = self.per_class_accuracy
        return {
            "accuracy": self.accuracy,
            "n_events": int(self.confusion.sum()),
            "loss_curve": list(self.loss_curve),
            "per_class_accuracy": [None if np.isnan(a) else float(a) for a in acc],
            "class_names": list(self.class_names),
        }

    def save_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def save_confusion_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("true\\pred," + ",".join(self.class_names) + "\n")
            for i, name in enumerate(self.class_names):
                fh.write(name + "," + ",".join(str(int(v)) for v in self.confusion[i]) + "\n")


def attention_map(report, out_csv=None, out_pgm=None):
    """Per-class mean (p_visual, q_tactile), written as CSV and as a 3×6 grid
    of 1×2 cells in a PGM image (rows H, V, T; columns by granularity)."""
    if report.per_class_attention is None:
        raise ContractError("attention map requested from a non-attention run")
    att = report.per_class_attention
    if out_csv:
        with open(out_csv, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("class_name,p_visual,q_tactile\n")
            for i, name in enumerate(report.class_names):
                fh.write(f"{name},{float(att[i, 0])!r},{float(att[i, 1])!r}\n")
    grid = np.zeros((3, 12))
    for class_id in range(N_CLASSES):
        row, col = divmod(class_id, 6)
        grid[row, 2 * col : 2 * col + 2] = att[class_id]
    if out_pgm:
        from .dataset_io import save_pgm

        save_pgm(out_pgm, np.clip(np.rint(np.nan_to_num(grid) * 255.0), 0, 255).astype(np.uint8))
    return grid


# ---------------------------------------------------------------------------
# training


def train(net, items, split, cfg):
    """Adam training over random (crop, window) pairs per train item per epoch.

    Returns (loss_curve, batch_log); batch_log records the data-sampling
    choices per epoch so ablation fairness can be asserted.
    """
    train_ids = split.items("train")
    test_ids = set(split.items("test"))
    if set(train_ids) & test_ids:
        raise ContractError("train/test item sets overlap")
    if not train_ids:
        from .errors import DataError

        raise DataError("empty training split")
    optimizer = Adam(net.params())
    loss_curve = []
    batch_log = []
    for epoch in range(cfg.epochs):
        data_rng = substream(cfg.seed, "train-data", epoch)
        augment_rng = substream(cfg.seed, "augment", epoch)
        model_rng = substream(cfg.seed, "dropout", epoch)
        order = data_rng.permutation(len(train_ids))
        choices = []
        for idx in order:
            item = items[train_ids[idx]]
            img_idx = int(data_rng.integers(len(item.images)))
            swp_idx = int(data_rng.integers(len(item.windows)))
            win_idx = int(data_rng.integers(len(item.windows[swp_idx])))
            choices.append((item.item_id, img_idx, swp_idx, win_idx))
        batch_log.append(tuple(choices))
        lr = lr_schedule(epoch, cfg.base_lr, cfg.lr_decay, cfg.lr_period)
        epoch_losses = []
        for start in range(0, len(choices), cfg.batch_size):
            chunk = choices[start : start + cfg.batch_size]
            crops = np.stack(
                [
                    augment_image(items[i].images[im], net.visual.augment, True, augment_rng)
                    for i, im, _, _ in chunk
                ]
            )
            windows = np.stack([items[i].windows[sw][wi] for i, _, sw, wi in chunk])
            labels = np.array([items[i].class_id for i, _, _, _ in chunk])
            with ad.Tape() as tape:
                _, logits, _ = net.forward(crops, windows, training=True, rng=model_rng)
                loss = cross_entropy(logits, labels)
            if not np.isfinite(loss.data):
                raise TrainingDiverged(epoch, start // cfg.batch_size)
            ad.backward(loss, tape)
            optimizer.step(lr)
            optimizer.zero_grad()
            epoch_losses.append(float(loss.data))
        loss_curve.append(float(np.mean(epoch_losses)))
    return loss_curve, batch_log


# ---------------------------------------------------------------------------
# evaluation


def _eval_chunk(net, items, events, batch_size):
    confusion = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    att_sum = np.zeros((N_CLASSES, 2))
    att_count = np.zeros(N_CLASSES, dtype=np.int64)
    for start in range(0, len(events), batch_size):
        chunk = events[start : start + batch_size]
        crops = np.stack(
            [augment_image(items[i].images[im], net.visual.augment, False, None) for i, im, _, _ in chunk]
        )
        windows = np.stack([items[i].windows[sw][wi] for i, _, sw, wi in chunk])
        labels = np.array([items[i].class_id for i, _, _, _ in chunk])
        probs, _, weights = net.forward(crops, windows, training=False, rng=None)
        preds = probs.data.argmax(axis=1)
        for label, pred in zip(labels, preds):
            confusion[label, pred] += 1
        if weights is not None:
            for k, label in enumerate(labels):
                att_sum[label] += weights.data[k]
                att_count[label] += 1
    return confusion, att_sum, att_count


def evaluate(net, items, split, cfg, loss_curve=()):
    """Score every window of every test item once, with deterministic pairing
    (window k pairs with the center crop of image k mod n_images)."""
    test_ids = split.items("test")
    events = []
    for item_id in test_ids:
        item = items[item_id]
        k = 0
        for swp_idx, wins in enumerate(item.windows):
            for win_idx in range(len(wins)):
                events.append((item_id, k % len(item.images), swp_idx, win_idx))
                k += 1
    n_threads = max(1, int(os.environ.get("VISTAFUSE_THREADS", "1")))
    if n_threads == 1 or len(events) < 2 * n_threads:
        parts = [_eval_chunk(net, items, events, 64)]
    else:
        shards = [events[i::n_threads] for i in range(n_threads)]
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            parts = list(pool.map(lambda ev: _eval_chunk(net, items, ev, 64), shards))
    confusion = sum(p[0] for p in parts)
    att_sum = sum(p[1] for p in parts)
    att_count = sum(p[2] for p in parts)
    total = confusion.sum()
    accuracy = float(np.trace(confusion) / total) if total else 0.0
    per_class_attention = None
    if net.stream_mode == "fused" and net.strategy == "attention":
        with np.errstate(invalid="ignore"):
            per_class_attention = att_sum / np.maximum(att_count, 1)[:, None]
        per_class_attention[att_count == 0] = np.nan
    return MetricsReport(
        accuracy=accuracy,
        confusion=confusion,
        per_class_attention=per_class_attention,
        loss_curve=list(loss_curve),
        class_names=class_names_from_records([]) if not items else _names_from_items(items),
    )


def _names_from_items(items):
    names = [f"class{i}" for i in range(N_CLASSES)]
    for item in items.values():
        names[item.class_id] = item.class_name
    return names


# ---------------------------------------------------------------------------
# baselines and ablation


def run_once(items, records, cfg):
    """Split, build, train, evaluate.  Returns (net, report, batch_log)."""
    split = split_train_test(records, cfg.split_ratio, cfg.seed)
    net = VisTaNet.build(cfg, substream(cfg.seed, "init"))
    loss_curve, batch_log = train(net, items, split, cfg)
    report = evaluate(net, items, split, cfg, loss_curve=loss_curve)
    return net, report, batch_log


def unimodal_baseline(stream, items, records, cfg):
    """Train/evaluate a single stream feeding the classifier directly."""
    cfg = replace(cfg, stream=stream)
    _, report, _ = run_once(items, records, cfg)
    return report


def ablate_fusion(items, records, cfg, strategies=("sum", "max", "concat", "attention"), seeds=(0, 1, 2), baselines=False):
    """Identical splits and data sampling across strategies, one row per run.

    Returns (rows, reports): rows are (label, seed, accuracy) plus mean rows.
    """
    rows = []
    reports = {}
    for seed in seeds:
        cfg_seed = replace(cfg, seed=seed)
        reference_log = None
        for strategy in strategies:
            cfg_run = replace(cfg_seed, fusion=strategy, stream="fused")
            _, report, batch_log = run_once(items, records, cfg_run)
            if reference_log is None:
                reference_log = batch_log
            elif batch_log != reference_log:
                raise ContractError(f"data sampling diverged across strategies at seed {seed}")
            rows.append((strategy, seed, report.accuracy))
            reports[(strategy, seed)] = report
        if baselines:
            for stream in ("visual", "tactile"):
                cfg_run = replace(cfg_seed, stream=stream)
                _, report, _ = run_once(items, records, cfg_run)
                rows.append((f"{stream}-only", seed, report.accuracy))
                reports[(f"{stream}-only", seed)] = report
    labels = list(dict.fromkeys(label for label, _, _ in rows))
    for label in labels:
        accs = [a for l, _, a in rows if l == label]
        rows.append((label, "mean", float(np.mean(accs))))
    return rows, reports


def save_ablation_csv(path, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("strategy,seed,accuracy\n")
        for label, seed, acc in rows:
            fh.write(f"{label},{seed},{acc!r}\n")
