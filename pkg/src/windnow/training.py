"""Epoch orchestration: batching, AdamW, momentum and queue upkeep, the
dynamic contrastive weight, early stopping and plateau LR scheduling,
plus checkpoint/baseline evaluation into the shared report schema."""

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from . import metrics as metrics_mod
from . import objectives as obj
from .autodiff import Tape, Tensor
from .baselines import LinearBaseline, SpatialInterpolator, nearest_station_indices
from .datakit import DD, FF, GFF
from .errors import ConfigError, NumericalError
from .features import CONST_WIDTH, decode_targets
from .metrics import SampleBlock, angular_error
from .model import MomentumEncoder

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 0.001
    weight_decay: float = 1e-4
    batch_size: int = 32
    max_epochs: int = 200
    early_stop_patience: int = 15
    plateau_patience: int = 5
    plateau_factor: float = 0.5
    seed: int = 0
    val_fraction: float = 0.1

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if self.early_stop_patience < 1 or self.plateau_patience < 1:
            raise ConfigError("patience values must be at least 1")
        if not (0.0 < self.plateau_factor < 1.0):
            raise ConfigError("plateau_factor must be in (0, 1)")
        if not (0.0 <= self.val_fraction < 1.0):
            raise ConfigError("val_fraction must be in [0, 1)")


class AdamW:
    """Decoupled weight decay, then Adam moments with bias correction."""

    def __init__(self, params, weight_decay=0.0, beta1=0.9, beta2=0.999, eps=1e-8):
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {p.name: np.zeros_like(p.data) for p in params}
        self.v = {p.name: np.zeros_like(p.data) for p in params}

    def step(self, params, lr):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for p in params:
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                log.warning("non-finite gradient for %s; step skipped", p.name)
                continue
            if self.weight_decay:
                p.data *= 1.0 - lr * self.weight_decay
            m = self.m[p.name] = b1 * self.m[p.name] + (1 - b1) * g
            v = self.v[p.name] = b2 * self.v[p.name] + (1 - b2) * g * g
            m_hat = m / (1 - b1 ** self.t)
            v_hat = v / (1 - b2 ** self.t)
            p.data -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


def adamw_step(params, optimizer, lr):
    optimizer.step(params, lr)


@dataclass
class EpochDiagnostics:
    epoch: int
    train_sup_loss: float
    train_contrast_loss: float
    lam: float
    train_mae_dd: float
    train_mae_ff: float
    train_mae_gff: float
    lr: float
    pos_dist: float
    neg_dist: float
    val_loss: float
    skipped_multistep: int


DIAG_COLUMNS = ["epoch", "train_sup_loss", "train_contrast_loss", "lambda",
                "train_mae_dd", "train_mae_ff", "train_mae_gff", "lr",
                "pos_dist", "neg_dist", "val_loss", "skipped_multistep"]


def write_diagnostics(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(DIAG_COLUMNS)
        for r in rows:
            w.writerow([r.epoch, repr(r.train_sup_loss), repr(r.train_contrast_loss),
                        repr(r.lam), repr(r.train_mae_dd), repr(r.train_mae_ff),
                        repr(r.train_mae_gff), repr(r.lr), repr(r.pos_dist),
                        repr(r.neg_dist), repr(r.val_loss), r.skipped_multistep])


# ---------------------------------------------------------------------------
# batch assembly

def stack_windows(windows):
    return np.concatenate([w.X.reshape(-1, CONST_WIDTH) for w in windows], axis=0)


def stack_future(windows):
    return np.concatenate([w.future_X.reshape(-1, CONST_WIDTH) for w in windows],
                          axis=0)


def stack_labels(windows):
    blocks = []
    for w in windows:
        y = w.Y  # [t_out, n_real, 4]
        blocks.append(np.transpose(y, (1, 0, 2)).reshape(y.shape[1], -1))
    return np.concatenate(blocks, axis=0)


def _augmentation_mask(rng, n_windows, t_in, n_nodes, width, ratio):
    keep = (rng.random((n_windows, 1, n_nodes, width)) >= ratio).astype(np.float64)
    full = np.broadcast_to(keep, (n_windows, t_in, n_nodes, width))
    return full.reshape(n_windows * t_in * n_nodes, width)


def _train_mae_sums(y_pred, y_true, stats, t_out):
    """Per-variable absolute-error sums in physical units."""
    pd_, pf, pg, _ = decode_targets(y_pred.reshape(-1, t_out, 4), stats)
    td, tf, tg, _ = decode_targets(y_true.reshape(-1, t_out, 4), stats)
    return (angular_error(pd_, td).sum(), np.abs(pf - tf).sum(),
            np.abs(pg - tg).sum(), pd_.size)


@dataclass
class TrainResult:
    diagnostics: list
    best_epoch: int
    stopped_epoch: int
    final_lr: float
    queue_size: int
    monitored: str = "val"
    aborted: bool = False


def train(model, fs, windows, s_mix, train_cfg, contrastive_cfg,
          schedule=None, diagnostics_path=None, progress=None):
    """Run the full training loop; the model ends at the best monitored epoch."""
    if not windows:
        raise ConfigError("no training windows")
    schedule = schedule or obj.LambdaSchedule()
    ccfg = contrastive_cfg
    strategy = ccfg.strategy
    stats = fs.stats
    n_nodes = model.n_nodes
    t_in, t_out = model.t_in, model.t_out

    ordered = sorted(range(len(windows)), key=lambda i: windows[i].anchor)
    n_val = int(round(len(windows) * train_cfg.val_fraction))
    val_idx = ordered[len(windows) - n_val:] if n_val else []
    train_idx = ordered[: len(windows) - n_val]
    if not train_idx:
        raise ConfigError("validation slice leaves no training windows")
    monitored = "val" if val_idx else "train"

    key_enc = MomentumEncoder(model, ccfg.momentum) if strategy != "none" else None
    queue = (obj.MoCoQueue(ccfg.queue_capacity)
             if strategy != "none" and ccfg.use_moco else None)
    optimizer = AdamW(model.parameters(), weight_decay=train_cfg.weight_decay)
    virtual_local = np.asarray(fs.node_set.virtual_indices)
    nearest_real = np.asarray(fs.virtual_nearest_real)

    lr = train_cfg.lr
    prev_mae = 0.0
    best_metric = np.inf
    best_epoch = -1
    best_params = None
    es_patience = 0
    plateau_best = np.inf
    plateau_count = 0
    nonfinite_epochs = 0
    diagnostics = []
    aborted = False

    for epoch in range(train_cfg.max_epochs):
        lam = (obj.lambda_value(epoch, prev_mae, schedule)
               if strategy != "none" else 0.0)
        rng_shuffle = np.random.default_rng([train_cfg.seed, epoch, 1])
        rng_mask = np.random.default_rng([train_cfg.seed, epoch, 2])
        order = np.array(train_idx)
        rng_shuffle.shuffle(order)

        sup_sum = contrast_sum = contrast_weight = 0.0
        err_sums = np.zeros(3)
        err_count = 0
        pos_sum = pos_n = neg_sum = neg_n = 0.0
        skipped_multistep = 0
        total_windows = 0

        for lo in range(0, len(order), train_cfg.batch_size):
            batch = [windows[i] for i in order[lo: lo + train_cfg.batch_size]]
            b = len(batch)
            x = stack_windows(batch)
            emb, y = model.forward(x, s_mix, b)
            y_real = model.predict_real(y, b)
            labels = stack_labels(batch)
            sup = obj.supervised_mse(y_real, labels)

            closs = None
            enqueue = None
            if strategy != "none":
                key_enc.update(model)
                kt = key_enc.tensors()
                if strategy == "augmented":
                    mask = _augmentation_mask(rng_mask, b, t_in, n_nodes,
                                              model.layout.total_width,
                                              ccfg.mask_ratio)
                    kemb, _ = model.forward(x, s_mix, b, pset=kt, mask=mask)
                    enqueue = kemb.h.data
                    closs, pos, neg = obj.augmented_loss(emb, enqueue, queue, ccfg)
                else:
                    valid = np.array([w.has_future for w in batch])
                    skipped_multistep += int((~valid).sum())
                    if valid.any():
                        fut = stack_future([w for w in batch if w.has_future])
                        kemb, _ = model.forward(fut, s_mix, int(valid.sum()),
                                                pset=kt)
                        enqueue = kemb.h.data
                        future_full = np.zeros((b * n_nodes, model.embed_dim))
                        vi = 0
                        for wb in range(b):
                            if valid[wb]:
                                future_full[wb * n_nodes:(wb + 1) * n_nodes] = \
                                    enqueue[vi * n_nodes:(vi + 1) * n_nodes]
                                vi += 1
                        closs, pos, neg, _ = obj.multistep_loss(
                            emb, future_full, valid, virtual_local,
                            nearest_real, queue, ccfg)
                if closs is not None:
                    contrast_sum += float(closs.data[0, 0]) * b
                    contrast_weight += b
                    pos_sum += (1.0 - pos).sum()
                    pos_n += pos.size
                    if neg is not None and neg.size:
                        neg_sum += (1.0 - neg).sum()
                        neg_n += neg.size

            loss = obj.total_loss(sup, closs, lam)
            model.zero_grad()
            Tape(loss).backward()
            optimizer.step(model.parameters(), lr)
            if queue is not None and enqueue is not None:
                queue.push(enqueue)

            sup_sum += float(sup.data[0, 0]) * b
            total_windows += b
            s_dd, s_ff, s_gff, cnt = _train_mae_sums(y_real.data, labels, stats, t_out)
            err_sums += (s_dd, s_ff, s_gff)
            err_count += cnt

        sup_mean = sup_sum / total_windows
        contrast_mean = contrast_sum / contrast_weight if contrast_weight else 0.0
        mae_vars = err_sums / max(err_count, 1)
        prev_mae = float(mae_vars.mean())
        total_mean = sup_mean + lam * contrast_mean

        val_loss = (_supervised_loss_only(model, [windows[i] for i in val_idx],
                                          s_mix) if val_idx else sup_mean)
        diag = EpochDiagnostics(
            epoch, sup_mean, contrast_mean, lam, float(mae_vars[0]),
            float(mae_vars[1]), float(mae_vars[2]), lr,
            pos_sum / pos_n if pos_n else float("nan"),
            neg_sum / neg_n if neg_n else float("nan"),
            val_loss, skipped_multistep)
        diagnostics.append(diag)
        if progress:
            progress(f"epoch {epoch:3d}  sup {sup_mean:.5f}  "
                     f"contrast {contrast_mean:.5f}  lambda {lam:.4f}  "
                     f"lr {lr:.2e}  val {val_loss:.5f}")

        if not np.isfinite(total_mean):
            nonfinite_epochs += 1
            if nonfinite_epochs >= 3:
                aborted = True
                break
        else:
            nonfinite_epochs = 0

        monitored_value = val_loss
        if np.isfinite(monitored_value) and monitored_value < best_metric:
            best_metric = monitored_value
            best_epoch = epoch
            best_params = {k: p.data.copy() for k, p in model.params.items()}
            es_patience = 0
        else:
            es_patience += 1
            if es_patience >= train_cfg.early_stop_patience:
                break

        if np.isfinite(total_mean) and total_mean < plateau_best - 1e-12:
            plateau_best = total_mean
            plateau_count = 0
        else:
            plateau_count += 1
            if plateau_count >= train_cfg.plateau_patience:
                lr *= train_cfg.plateau_factor
                plateau_count = 0

    if best_params is not None:
        for k, p in model.params.items():
            p.data = best_params[k]

    if diagnostics_path:
        write_diagnostics(diagnostics_path, diagnostics)
    if aborted:
        raise NumericalError("training diverged: non-finite loss for 3 epochs")
    return TrainResult(diagnostics, best_epoch, len(diagnostics) - 1, lr,
                       len(queue) if queue else 0, monitored)


def _supervised_loss_only(model, windows, s_mix, chunk=64):
    pset = {k: Tensor(p.data) for k, p in model.params.items()}
    total = 0.0
    count = 0
    for lo in range(0, len(windows), chunk):
        batch = windows[lo: lo + chunk]
        x = stack_windows(batch)
        _, y = model.forward(x, s_mix, len(batch), pset=pset)
        y_real = y.data[model.real_rows(len(batch))]
        labels = stack_labels(batch)
        per_node = ((y_real - labels) ** 2).sum(axis=1)
        total += per_node.sum()
        count += per_node.size
    return float(total / count) if count else float("nan")


# ---------------------------------------------------------------------------
# evaluation

def predict_windows(model, windows, s_mix, chunk=64):
    """Decoded-ready head outputs for every node: [n_windows, N, t_out, 4]."""
    pset = {k: Tensor(p.data) for k, p in model.params.items()}
    outs = []
    for lo in range(0, len(windows), chunk):
        batch = windows[lo: lo + chunk]
        x = stack_windows(batch)
        _, y = model.forward(x, s_mix, len(batch), pset=pset)
        outs.append(y.data.reshape(len(batch), model.n_nodes, model.t_out, 4))
    return np.concatenate(outs, axis=0)


def _blocks_from_leads(method, station, anchors, timestamps, truth_wind,
                       dd, ff, gff, t_out):
    """Assemble per-lead sample blocks given [A, t_out] predictions."""
    blocks = []
    for lead in range(1, t_out + 1):
        tt = anchors + lead
        preds = {"dd": dd[:, lead - 1], "ff": ff[:, lead - 1], "gff": gff[:, lead - 1]}
        for c, var in enumerate(("dd", "ff", "gff")):
            truth = truth_wind[tt, c]
            ok = np.isfinite(truth)
            if not ok.any():
                continue
            blocks.append(SampleBlock(method, var, lead, station,
                                      timestamps[tt][ok], preds[var][ok],
                                      truth[ok]))
    return blocks


def evaluate_model(model, fs, windows, s_mix, truth_by_station, method):
    """Decode predictions at test-replacement nodes against withheld truth."""
    if not windows:
        raise ConfigError("no evaluation windows")
    preds = predict_windows(model, windows, s_mix)
    anchors = np.array([w.anchor for w in windows], dtype=np.int64)
    blocks = []
    for node in fs.node_set.test_replacement_nodes():
        truth = truth_by_station.get(node.station_id)
        if truth is None:
            raise ConfigError(f"no truth series for station {node.station_id}")
        dd, ff, gff, _ = decode_targets(preds[:, node.id], fs.stats)
        blocks.extend(_blocks_from_leads(method, node.station_id, anchors,
                                         fs.timestamps, truth[:, :3],
                                         dd, ff, gff, model.t_out))
    return metrics_mod.aggregate(blocks), blocks


def training_station_arrays(dataset, node_set):
    """Wind observations of training stations: ([T, S, 3], lats, lons, ids)."""
    sids, lats, lons, values = [], [], [], []
    for node in node_set.nodes:
        if node.kind == "real":
            s = dataset.series[node.station_id]
            sids.append(node.station_id)
            lats.append(s.lat)
            lons.append(s.lon)
            values.append(s.values[:, :3])
    return np.stack(values, axis=1), np.array(lats), np.array(lons), sids


def evaluate_baseline(kind, dataset, fs, windows, truth_by_station,
                      t_in=36, t_out=6, fit_stride=1):
    """Evaluate one of ar/lr/knn/idw on the same anchors and truth as the
    model; returns (report, blocks, fitted-or-None)."""
    if not windows:
        raise ConfigError("no evaluation windows")
    values, lats, lons, _ = training_station_arrays(dataset, fs.node_set)
    anchors = np.array([w.anchor for w in windows], dtype=np.int64)
    test_nodes = fs.node_set.test_replacement_nodes()
    blocks = []
    fitted = None

    if kind in ("idw", "knn"):
        interp = SpatialInterpolator(kind, lats, lons, values)
        for node in test_nodes:
            dd, ff, gff = interp.predict(node.lat, node.lon, anchors)
            tile = lambda a: np.repeat(a[:, None], t_out, axis=1)
            blocks.extend(_blocks_from_leads(kind, node.station_id, anchors,
                                             fs.timestamps,
                                             truth_by_station[node.station_id][:, :3],
                                             tile(dd), tile(ff), tile(gff), t_out))
    elif kind in ("ar", "lr"):
        fitted = LinearBaseline(kind, t_in=t_in, t_out=t_out)
        fitted.fit(values, lats, lons, fit_stride=fit_stride)
        for node in test_nodes:
            nbr = nearest_station_indices(node.lat, node.lon, lats, lons, k=3)
            dd, ff, gff = fitted.predict(values[:, nbr, :], anchors)
            blocks.extend(_blocks_from_leads(kind, node.station_id, anchors,
                                             fs.timestamps,
                                             truth_by_station[node.station_id][:, :3],
                                             dd, ff, gff, t_out))
    else:
        raise ConfigError(f"unknown baseline {kind}")
    return metrics_mod.aggregate(blocks), blocks, fitted
