"""Training loop: bucketing, minibatching, LR schedule, checkpointing.

Molecules are grouped into same-size buckets and drawn in minibatches of
`batch_size` within a bucket.  After each epoch, the learning rate is
divided by `lr_decay_factor` whenever the epoch loss failed to improve on
the previous epoch by at least `improvement_threshold` (relative), and
training stops once the rate falls below `stop_lr`.  Every run is
bit-reproducible from (config, seed): per-epoch RNG streams are derived
from (seed, epoch), so resuming from a checkpoint replays the remaining
epochs exactly.
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

import molgen.tensor as T
from molgen.chem.mol import Molecule
from molgen.errors import EmptyCorpus, NonFiniteLoss, NonFiniteValue
from molgen.model import MoleculeVAE
from molgen.params import adam_step, atomic_write_text
from molgen.properties import PropertyFn

METRICS_COLUMNS = ("epoch", "lr", "edge_ce", "boa_ce", "kl", "prop_l2", "total", "wall_seconds")


@dataclass
class TrainConfig:
    batch_size: int = 50
    initial_lr: float = 3e-4
    lr_decay_factor: float = 1.25
    improvement_threshold: float = 0.01
    stop_lr: float = 1e-6
    max_epochs: int = 100000
    seed: int = 0
    grad_clip: float = 5.0
    property_name: str | None = None   # enables property supervision when set
    kl_warmup_epochs: int = 0          # 0 = no warm-up
    checkpoint_name: str = "checkpoint.bin"
    best_name: str = "best.bin"
    metrics_name: str = "metrics.csv"

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr_decay_factor <= 1.0:
            raise ValueError("lr_decay_factor must be > 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Bucket:
    size: int
    indices: list[int] = field(default_factory=list)


@dataclass
class TrainResult:
    epochs: int
    final_loss: float
    best_loss: float
    lr: float
    stopped_by_schedule: bool
    history: list[dict]
    checkpoint_path: Path | None
    best_path: Path | None


def bucket_corpus(mols: Sequence[Molecule]) -> list[Bucket]:
    """Partition molecule indices by atom count, ascending size."""
    if not mols:
        raise EmptyCorpus("no molecules to train on")
    by_size: dict[int, Bucket] = {}
    for idx, mol in enumerate(mols):
        by_size.setdefault(mol.size, Bucket(mol.size)).indices.append(idx)
    return [by_size[s] for s in sorted(by_size)]


def lr_schedule_step(
    prev_epoch_loss: float | None,
    this_epoch_loss: float,
    lr: float,
    decay_factor: float = 1.25,
    improvement_threshold: float = 0.01,
    stop_lr: float = 1e-6,
) -> tuple[float, bool]:
    """Divide the rate when loss fails to improve by the threshold; stop below stop_lr."""
    new_lr = lr
    if prev_epoch_loss is not None and this_epoch_loss > prev_epoch_loss * (1.0 - improvement_threshold):
        new_lr = lr / decay_factor
    return new_lr, new_lr < stop_lr


def _epoch_batches(
    buckets: list[Bucket], batch_size: int, rng: np.random.Generator
) -> list[list[int]]:
    batches = []
    for bucket in buckets:
        order = [bucket.indices[i] for i in rng.permutation(len(bucket.indices))]
        for start in range(0, len(order), batch_size):
            batches.append(order[start : start + batch_size])
    return batches


def _write_metrics(path: Path, rows: list[dict]) -> None:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=METRICS_COLUMNS)
    writer.writeheader()
    writer.writerows(rows)
    atomic_write_text(path, buf.getvalue())


def train(
    config: TrainConfig,
    mols: Sequence[Molecule],
    model: MoleculeVAE,
    out_dir: str | Path | None = None,
    property_fn: PropertyFn | None = None,
    start_epoch: int = 1,
    start_lr: float | None = None,
    prev_epoch_loss: float | None = None,
    log: Callable[[str], None] | None = None,
) -> TrainResult:
    """Run the training loop until the stop rule (or max_epochs) fires.

    Teacher forcing throughout: the bond decoder sees the ground-truth
    formula and canonical node order, so targets are read straight off the
    bond matrix with no graph matching.
    """
    if not mols:
        raise EmptyCorpus("no molecules to train on")
    buckets = bucket_corpus(mols)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    prop_targets = None
    prop_stats = None
    if config.property_name is not None:
        if property_fn is None:
            raise ValueError("property supervision enabled but no property function given")
        raw = np.array([property_fn(m) for m in mols], dtype=np.float64)
        mean, std = float(raw.mean()), float(raw.std())
        if std == 0.0:
            std = 1.0
        prop_targets = (raw - mean) / std
        prop_stats = {"name": config.property_name, "mean": mean, "std": std}

    base_w_kl = model.hp.w_kl
    lr = config.initial_lr if start_lr is None else start_lr
    prev_loss = prev_epoch_loss
    best_loss = np.inf
    history: list[dict] = []
    stopped = False
    ckpt_path = out / config.checkpoint_name if out else None
    best_path = out / config.best_name if out else None
    epoch = start_epoch - 1

    for epoch in range(start_epoch, config.max_epochs + 1):
        t0 = time.perf_counter()
        if config.kl_warmup_epochs > 0:
            model.hp.w_kl = base_w_kl * min(1.0, epoch / config.kl_warmup_epochs)
        rng = np.random.default_rng([config.seed, epoch])
        sums = {"edge_ce": 0.0, "boa_ce": 0.0, "kl": 0.0, "prop_l2": 0.0, "total": 0.0}
        count = 0
        for batch_no, batch in enumerate(_epoch_batches(buckets, config.batch_size, rng)):
            batch_mols = [mols[i] for i in batch]
            eps = rng.standard_normal((len(batch), model.hp.latent))
            targets = prop_targets[batch] if prop_targets is not None else None
            model.store.zero_grad()
            batch_id = f"epoch{epoch}.size{batch_mols[0].size}.batch{batch_no}"
            try:
                with T.Tape() as tape:
                    total, breakdown, _ = model.loss_batch(
                        batch_mols, eps=eps, prop_targets=targets
                    )
                if not np.isfinite(breakdown.total):
                    raise NonFiniteValue("loss is not finite")
                T.backward(tape, total, model.store)
            except NonFiniteValue as exc:
                raise NonFiniteLoss(
                    f"non-finite loss in batch {batch_id}: {exc}", batch_id=batch_id
                ) from exc
            model.store.clip_gradients(config.grad_clip)
            adam_step(model.store, lr)
            w = len(batch)
            for key in sums:
                sums[key] += getattr(breakdown, key) * w
            count += w
        epoch_loss = sums["total"] / count

        row = {
            "epoch": epoch,
            "lr": lr,
            "edge_ce": sums["edge_ce"] / count,
            "boa_ce": sums["boa_ce"] / count,
            "kl": sums["kl"] / count,
            "prop_l2": sums["prop_l2"] / count,
            "total": epoch_loss,
            "wall_seconds": time.perf_counter() - t0,
        }
        history.append(row)
        if log is not None:
            log(
                f"epoch {epoch}: loss {epoch_loss:.6f} lr {lr:.3e} "
                f"(edge {row['edge_ce']:.4f} boa {row['boa_ce']:.4f} kl {row['kl']:.4f})"
            )

        new_lr, stop = lr_schedule_step(
            prev_loss,
            epoch_loss,
            lr,
            decay_factor=config.lr_decay_factor,
            improvement_threshold=config.improvement_threshold,
            stop_lr=config.stop_lr,
        )

        header = {
            "train_config": config.to_dict(),
            "epoch": epoch,
            "lr": new_lr,
            "prev_epoch_loss": epoch_loss,
            "property_stats": prop_stats,
        }
        if out is not None:
            model.save(ckpt_path, header)
            _write_metrics(out / config.metrics_name, history)
        if epoch_loss < best_loss:
            best_loss = epoch_loss
            if out is not None:
                model.save(best_path, header)

        prev_loss = epoch_loss
        lr = new_lr
        if stop:
            stopped = True
            break

    model.hp.w_kl = base_w_kl
    return TrainResult(
        epochs=epoch,
        final_loss=history[-1]["total"] if history else np.inf,
        best_loss=best_loss,
        lr=lr,
        stopped_by_schedule=stopped,
        history=history,
        checkpoint_path=ckpt_path,
        best_path=best_path,
    )


def resume(
    config: TrainConfig,
    mols: Sequence[Molecule],
    checkpoint_path: str | Path,
    out_dir: str | Path | None = None,
    property_fn: PropertyFn | None = None,
    log: Callable[[str], None] | None = None,
) -> tuple[MoleculeVAE, TrainResult]:
    """Continue a run from a checkpoint, replaying the loss sequence exactly."""
    model, header = MoleculeVAE.load(checkpoint_path)
    result = train(
        config,
        mols,
        model,
        out_dir=out_dir,
        property_fn=property_fn,
        start_epoch=int(header["epoch"]) + 1,
        start_lr=float(header["lr"]),
        prev_epoch_loss=header.get("prev_epoch_loss"),
        log=log,
    )
    return model, result
