"""Shared contract for the competing-risk models.

Every model fits on a cohort and afterwards answers F_r(t|x), the
probability of event r occurring by time t. Training is mini-batch Adam
with early stopping on a validation likelihood; time inputs are rescaled
by the training-set maximum so exponentials stay tame (queries rescale
consistently, leaving CIF values unchanged).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ..cohort import Cohort, holdout_split
from ..errors import DataError, NumericError
from ..gradcore import AdamState, ParamGraph, adam_step, load_checkpoint, save_checkpoint
from ..pipeline_audit import record_fit

PROB_FLOOR = 1e-12


@dataclass
class BaseConfig:
    lr: float = 1e-3
    batch_size: int = 256
    dropout: float = 0.0
    layers: int = 2
    nodes: int = 32
    weight_decay: float = 0.0
    patience: float = 10
    max_epochs: int = 1000


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    valid_loss: float


@dataclass
class TrainHistory:
    epochs: list[EpochRecord]
    best_epoch: int
    best_valid: float
    clamped_terms: int = 0

    def to_json(self) -> dict:
        return {"epochs": [asdict(e) for e in self.epochs],
                "best_epoch": self.best_epoch, "best_valid": self.best_valid,
                "clamped_terms": self.clamped_terms}


def _rng_stream(seed: int, label: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=(int(seed), label)))


class CifModel:
    """Base class: fit(cohort, seed) then cif(x, t, r)."""

    kind = "abstract"

    def __init__(self, config: BaseConfig):
        self.config = config
        self.graph: ParamGraph | None = None
        self.n_risks = 0
        self.d = 0
        self.t_scale = 1.0
        self.clamp_count = 0
        self._fitted = False

    # subclass hooks -----------------------------------------------------

    def _prepare(self, train: Cohort) -> None:
        """Record training-derived constants (time scale, bins, ...)."""
        self.t_scale = max(float(train.times.max()), 1e-12)

    def _build(self, rng: np.random.Generator) -> None:
        raise NotImplementedError

    def _loss(self, x: np.ndarray, t: np.ndarray, e: np.ndarray,
              rng: np.random.Generator | None, training: bool):
        raise NotImplementedError

    def _cif(self, x: np.ndarray, t: float, r: int) -> np.ndarray:
        raise NotImplementedError

    def _pre_fit(self, train: Cohort, rng: np.random.Generator) -> None:
        """Optional warm-up phase before the main loop."""

    def _extra_state(self) -> dict:
        return {}

    def _load_extra_state(self, doc: dict) -> None:
        pass

    # public surface ------------------------------------------------------

    def cif(self, x: np.ndarray, t: float, r: int) -> np.ndarray | float:
        if not self._fitted:
            raise RuntimeError(f"{self.kind}: predict before fit")
        if t < 0:
            raise ValueError(f"time must be non-negative, got {t}")
        if not 1 <= r <= self.n_risks:
            raise ValueError(f"risk {r} outside 1..{self.n_risks}")
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        out = self._cif(x, float(t), r)
        return float(out[0]) if single else out

    def fit(self, train: Cohort, seed: int, valid: Cohort | None = None,
            max_epochs: int | None = None) -> TrainHistory:
        """Mini-batch Adam with early stopping; restores the best epoch.

        When no validation cohort is supplied, a stratified 10% of `train`
        is carved out for the early-stopping criterion.
        """
        for r in range(1, train.n_risks + 1):
            if train.event_count(r) == 0:
                raise DataError(f"{self.kind}: no events for risk {r} in training data")
        record_fit(f"{self.kind}.fit", train.ids + (valid.ids if valid else []))
        if valid is None:
            train, valid = holdout_split(train, 0.10, seed=int(seed) ^ 0x5F5E5F)
        self.n_risks = train.n_risks
        self.d = train.d
        self._prepare(train)
        self._build(_rng_stream(seed, 0))
        self._pre_fit(train, _rng_stream(seed, 1))
        history = self._fit_loop(train, valid, seed,
                                 max_epochs or self.config.max_epochs)
        self._fitted = True
        return history

    def _fit_loop(self, train: Cohort, valid: Cohort, seed: int,
                  max_epochs: int) -> TrainHistory:
        xt, tt, et = train.features, train.times, train.events
        xv, tv, ev = valid.features, valid.times, valid.events
        n = train.n
        batch = max(1, min(self.config.batch_size, n))
        adam = AdamState(lr=self.config.lr, weight_decay=self.config.weight_decay)
        shuffle_rng = _rng_stream(seed, 2)
        drop_rng = _rng_stream(seed, 3)
        best_valid = math.inf
        best_epoch = -1
        best_arrays = self.graph.named_arrays()
        since_best = 0
        records: list[EpochRecord] = []
        for epoch in range(max_epochs):
            order = shuffle_rng.permutation(n)
            losses = []
            for lo in range(0, n, batch):
                idx = order[lo : lo + batch]
                loss = self._loss(xt[idx], tt[idx], et[idx], drop_rng, training=True)
                value = loss.item()
                if not np.isfinite(value):
                    raise NumericError(
                        f"{self.kind}: non-finite training loss at epoch {epoch}",
                        {"epoch": epoch, "batch_start": lo, "loss": value})
                loss.backward()
                adam_step(adam, self.graph)
                losses.append(value)
            valid_loss = self._loss(xv, tv, ev, None, training=False).item()
            if not np.isfinite(valid_loss):
                raise NumericError(f"{self.kind}: non-finite validation loss",
                                   {"epoch": epoch})
            records.append(EpochRecord(epoch, float(np.mean(losses)), valid_loss))
            if valid_loss < best_valid:
                best_valid = valid_loss
                best_epoch = epoch
                best_arrays = self.graph.named_arrays()
                since_best = 0
            else:
                since_best += 1
                if since_best >= self.config.patience:
                    break
        self.graph.load_arrays(best_arrays)
        return TrainHistory(records, best_epoch, best_valid, self.clamp_count)

    # checkpointing --------------------------------------------------------

    def save(self, path: str | Path) -> None:
        path = Path(path)
        save_checkpoint(path, self.graph.named_arrays())
        sidecar = {
            "kind": self.kind,
            "n_risks": self.n_risks,
            "d": self.d,
            "t_scale": self.t_scale,
            "config": asdict(self.config),
            **self._extra_state(),
        }
        path.with_suffix(path.suffix + ".json").write_text(
            json.dumps(sidecar, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "CifModel":
        path = Path(path)
        sidecar = json.loads(path.with_suffix(path.suffix + ".json").read_text())
        if sidecar["kind"] != cls.kind:
            raise DataError(f"checkpoint is a {sidecar['kind']!r} model, not {cls.kind!r}")
        config = cls.config_class(**sidecar["config"])  # type: ignore[attr-defined]
        model = cls(config)
        model.n_risks = sidecar["n_risks"]
        model.d = sidecar["d"]
        model.t_scale = sidecar["t_scale"]
        model._load_extra_state(sidecar)
        model._build(_rng_stream(0, 0))
        model.graph.load_arrays(load_checkpoint(path))
        model._fitted = True
        return model
