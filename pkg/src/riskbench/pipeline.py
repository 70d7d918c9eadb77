"""Evaluation protocol: nested stratified k-fold CV with random search.

Outer folds estimate generalization; per fold, a stratified 10% holdout
of the training data drives a random hyperparameter search, the winner is
refit on the whole training fold, and per-risk time-dependent concordance
is scored on the untouched test fold. Aggregates carry t-score 95%
confidence intervals. Fold jobs derive child seeds from (seed, fold,
iteration), so results do not depend on worker scheduling.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from .cohort import Cohort, holdout_split, stratified_kfold
from .errors import DataError, NumericError
from .features import FeatureMatrix, pca_apply, pca_fit, standardize_fit_apply
from .metrics import ctd_index
from .models import MODEL_KINDS, build_model
from .pipeline_audit import LeakageAudit, record_fit


def child_seed(*parts: int) -> int:
    """Deterministic 63-bit seed from a tuple of indices."""
    ss = np.random.SeedSequence(entropy=tuple(int(p) for p in parts))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> 1)


# ---------------------------------------------------------------------------
# hyperparameter grid
# ---------------------------------------------------------------------------


@dataclass
class HParamGrid:
    lr_range: tuple = (1e-4, 1e-2)  # log-uniform
    batch_range: tuple = (100, 1000)  # integer uniform, inclusive
    dropout_choices: tuple = (0.0, 0.25, 0.5, 0.75)
    layers_range: tuple = (1, 4)  # integer uniform, inclusive
    nodes_choices: tuple = (32, 64, 128, 256, 512)
    dsm_distribution_choices: tuple = ("weibull", "lognormal")
    dsm_k_choices: tuple = (2, 3, 4, 6)
    deephit_alpha_choices: tuple = (0.0, 0.1, 0.5, 1.0)

    def sample(self, rng: np.random.Generator, model_kind: str) -> dict:
        out = {
            "lr": float(np.exp(rng.uniform(np.log(self.lr_range[0]),
                                           np.log(self.lr_range[1])))),
            "batch_size": int(rng.integers(self.batch_range[0], self.batch_range[1] + 1)),
            "dropout": float(rng.choice(self.dropout_choices)),
            "layers": int(rng.integers(self.layers_range[0], self.layers_range[1] + 1)),
            "nodes": int(rng.choice(self.nodes_choices)),
        }
        if model_kind == "dsm":
            out["distribution"] = str(rng.choice(self.dsm_distribution_choices))
            out["k"] = int(rng.choice(self.dsm_k_choices))
        elif model_kind == "deephit":
            out["alpha"] = float(rng.choice(self.deephit_alpha_choices))
        return out

    @staticmethod
    def from_dict(doc: dict) -> "HParamGrid":
        grid = HParamGrid()
        for key, value in doc.items():
            if not hasattr(grid, key):
                raise DataError(f"unknown grid field {key!r}")
            setattr(grid, key, tuple(value))
        return grid


# ---------------------------------------------------------------------------
# training wrappers
# ---------------------------------------------------------------------------


def train_with_early_stopping(model_kind: str, config_fields: dict, train: Cohort,
                              valid: Cohort, max_epochs: int = 1000, seed: int = 0):
    """Fit one model with the shared early-stopping loop.

    Returns (model, history); the model carries the best-epoch weights and
    its validation loss equals min(history valid losses).
    """
    if valid.n == 0:
        raise DataError("early stopping needs a non-empty validation split")
    model = build_model(model_kind, **config_fields)
    history = model.fit(train, seed=seed, valid=valid, max_epochs=max_epochs)
    return model, history


def _mean_valid_ctd(model, valid: Cohort) -> float:
    """Mean per-risk concordance on the validation split.

    Risks with no comparable pairs are skipped; raises if none is
    scoreable.
    """
    values = []
    for r in range(1, valid.n_risks + 1):
        try:
            values.append(ctd_index(valid, model, r=r).value)
        except ValueError:
            continue
    if not values:
        raise ValueError("no risk had comparable validation pairs")
    return float(np.mean(values))


def random_search(grid: HParamGrid, n_iter: int, train: Cohort, valid: Cohort,
                  model_kind: str, seed: int, max_epochs: int = 1000,
                  patience: float = 10, extra_fields: dict | None = None):
    """Sample n_iter configurations and pick the best by validation C^td.

    The sampled sequence is a pure function of the seed. Failed
    configurations (non-finite losses, unscoreable validation) are logged
    and skipped; if every configuration fails, the failure log is raised.
    Ties keep the earliest iteration.
    """
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(int(seed), 0xC0FFEE)))
    best_score, best_config, best_iter = -np.inf, None, -1
    log = []
    for it in range(n_iter):
        fields = grid.sample(rng, model_kind)
        fields.update({"patience": patience, "max_epochs": max_epochs})
        if extra_fields:
            fields.update(extra_fields)
        try:
            model, _hist = train_with_early_stopping(
                model_kind, fields, train, valid, max_epochs=max_epochs,
                seed=child_seed(seed, it))
            score = _mean_valid_ctd(model, valid)
        except (NumericError, DataError, ValueError, FloatingPointError) as exc:
            log.append({"iteration": it, "config": fields, "error": str(exc)})
            continue
        log.append({"iteration": it, "config": fields, "score": score})
        if score > best_score:
            best_score, best_config, best_iter = score, fields, it
    if best_config is None:
        raise NumericError("random search: every configuration failed",
                           {"log": log})
    return best_config, {"best_iteration": best_iter, "best_score": best_score,
                         "trials": log}


# ---------------------------------------------------------------------------
# nested cross-validation
# ---------------------------------------------------------------------------


@dataclass
class FoldResult:
    fold: int
    chosen: dict
    ctd: dict[str, float]
    pairs: dict[str, int]
    best_epoch: int


@dataclass
class CVReport:
    model_kind: str
    modality: str
    risk_names: list[str]
    k: int
    seed: int
    folds: list[FoldResult]
    aggregate: dict[str, dict]
    audit: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"model_kind": self.model_kind, "modality": self.modality,
                "risk_names": self.risk_names, "k": self.k, "seed": self.seed,
                "folds": [asdict(f) for f in self.folds],
                "aggregate": self.aggregate, "audit": self.audit}

    @staticmethod
    def from_json(doc: dict) -> "CVReport":
        return CVReport(doc["model_kind"], doc["modality"], doc["risk_names"],
                        doc["k"], doc["seed"],
                        [FoldResult(**f) for f in doc["folds"]],
                        doc["aggregate"], doc.get("audit", {}))


def t_confidence_interval(values: list[float], level: float = 0.95) -> dict:
    """mean +- t_{(1+level)/2, k-1} * sd / sqrt(k)."""
    arr = np.asarray(values, dtype=np.float64)
    k = len(arr)
    mean = float(arr.mean())
    if k < 2:
        return {"mean": mean, "lo": mean, "hi": mean, "sd": 0.0}
    sd = float(arr.std(ddof=1))
    mult = float(stats.t.ppf(0.5 + level / 2.0, k - 1))
    half = mult * sd / np.sqrt(k)
    return {"mean": mean, "lo": float(mean - half), "hi": float(mean + half),
            "sd": sd}


@dataclass
class CvSettings:
    k: int = 5
    n_iter: int = 100
    max_epochs: int = 1000
    patience: float = 10
    standardize: bool = True
    pca_components: int = 0  # 0 disables per-fold PCA
    categories: list[str] | None = None
    extra_fields: dict | None = None
    modality: str = "features"
    checkpoint_dir: str | None = None

    @staticmethod
    def desk() -> "CvSettings":
        return CvSettings(k=3, n_iter=10, max_epochs=100)


def _fold_features(train: Cohort, test: Cohort, settings: CvSettings):
    """Per-fold feature fits (standardize, optional PCA), train rows only."""
    tr = FeatureMatrix(train.features, list(train.feature_names),
                       settings.categories and list(settings.categories))
    te = FeatureMatrix(test.features, list(test.feature_names),
                       settings.categories and list(settings.categories))
    if settings.standardize:
        record_fit("standardize.fit", train.ids)
        tr, [te], _ = standardize_fit_apply(tr, [te])
    if settings.pca_components > 0:
        record_fit("pca.fit", train.ids)
        model = pca_fit(tr, settings.pca_components)
        tr, te = pca_apply(model, tr), pca_apply(model, te)
    return (train.with_features(tr.data, tr.names),
            test.with_features(te.data, te.names))


def run_fold(payload: tuple) -> dict:
    """One outer fold: inner search, refit, test scoring. Pickle-friendly."""
    cohort, fold_ids, model_kind, grid, settings, seed, fold_idx = payload
    audit = LeakageAudit()
    fold_id_set = set(fold_ids)
    test_idx = [i for i, sid in enumerate(cohort.ids) if sid in fold_id_set]
    train_idx = [i for i in range(cohort.n) if cohort.ids[i] not in fold_id_set]
    test, train_full = cohort.subset(test_idx), cohort.subset(train_idx)
    with audit.active(tag=f"fold{fold_idx}"):
        train_t, test_t = _fold_features(train_full, test, settings)
        inner_train, inner_valid = holdout_split(
            train_t, 0.10, seed=child_seed(seed, fold_idx, 1))
        best, search_log = random_search(
            grid, settings.n_iter, inner_train, inner_valid, model_kind,
            seed=child_seed(seed, fold_idx, 2), max_epochs=settings.max_epochs,
            patience=settings.patience, extra_fields=settings.extra_fields)
        model, history = train_with_early_stopping(
            model_kind, best, train_t, _refit_holdout(train_t, seed, fold_idx),
            max_epochs=settings.max_epochs, seed=child_seed(seed, fold_idx, 3))
    if settings.checkpoint_dir is not None:
        from pathlib import Path

        model.save(Path(settings.checkpoint_dir) / f"fold{fold_idx}.rbck")
    ctd, pairs = {}, {}
    for r, name in enumerate(cohort.risk_names, start=1):
        res = ctd_index(test_t, model, r=r)
        ctd[name] = res.value
        pairs[name] = res.pairs
    leaks = audit.leaks(test.ids)
    return {"fold": fold_idx, "chosen": best, "ctd": ctd, "pairs": pairs,
            "best_epoch": history.best_epoch, "search": search_log,
            "audit_fits": len(audit.events), "leaks": leaks}


def _refit_holdout(train_t: Cohort, seed: int, fold_idx: int) -> Cohort:
    """Validation split for the final refit's early stopping."""
    _, valid = holdout_split(train_t, 0.10, seed=child_seed(seed, fold_idx, 4))
    return valid


def nested_cv(cohort: Cohort, model_kind: str, grid: HParamGrid | None = None,
              k: int = 5, seed: int = 0, settings: CvSettings | None = None,
              workers: int = 1) -> CVReport:
    """Disease-stratified nested k-fold cross-validation."""
    if model_kind not in MODEL_KINDS:
        raise DataError(f"unknown model kind {model_kind!r}")
    if len(set(cohort.ids)) != cohort.n:
        raise DataError("nested_cv requires unique subject ids")
    grid = grid or HParamGrid()
    settings = settings or CvSettings()
    settings.k = k
    for r in range(1, cohort.n_risks + 1):
        if cohort.event_count(r) == 0:
            raise DataError(f"cohort has no events for risk {r}")
    folds = stratified_kfold(cohort, k, seed=child_seed(seed, 0xF01D))
    payloads = [(cohort, folds[f].ids, model_kind, grid, settings, seed, f)
                for f in range(k)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_fold, payloads))
    else:
        results = [run_fold(p) for p in payloads]
    results.sort(key=lambda r: r["fold"])
    leaks = [leak for r in results for leak in r["leaks"]]
    if leaks:
        raise RuntimeError(f"leakage audit failed: test ids reached fits {leaks}")
    fold_results = [FoldResult(r["fold"], r["chosen"], r["ctd"], r["pairs"],
                               r["best_epoch"]) for r in results]
    aggregate = {
        name: t_confidence_interval([f.ctd[name] for f in fold_results])
        for name in cohort.risk_names
    }
    audit = {"fits": int(sum(r["audit_fits"] for r in results)), "leaks": 0}
    return CVReport(model_kind, settings.modality, list(cohort.risk_names),
                    k, seed, fold_results, aggregate, audit)


# ---------------------------------------------------------------------------
# report emission
# ---------------------------------------------------------------------------


def emit_report(reports: list[CVReport]) -> tuple[str, dict]:
    """Markdown + JSON tables: rows modality x model, columns risks,
    cells "mean (lo, hi)", best value per column flagged."""
    if not reports:
        raise DataError("emit_report needs at least one CVReport")
    risk_names = reports[0].risk_names
    for rep in reports:
        if rep.risk_names != risk_names:
            raise DataError("reports disagree on risk names")
    rows = []
    for rep in sorted(reports, key=lambda r: (r.modality, r.model_kind)):
        cells = {}
        for name in risk_names:
            agg = rep.aggregate[name]
            cells[name] = {
                "mean": agg["mean"], "lo": agg["lo"], "hi": agg["hi"],
                "text": f"{agg['mean']:.3f} ({agg['lo']:.3f}, {agg['hi']:.3f})",
            }
        rows.append({"modality": rep.modality, "model": rep.model_kind,
                     "cells": cells})
    for name in risk_names:
        best = max(range(len(rows)), key=lambda i: rows[i]["cells"][name]["mean"])
        rows[best]["cells"][name]["best"] = True
    header = "| Modality | Model | " + " | ".join(risk_names) + " |"
    sep = "|" + "---|" * (2 + len(risk_names))
    lines = [header, sep]
    for row in rows:
        cells = []
        for name in risk_names:
            cell = row["cells"][name]
            text = cell["text"]
            cells.append(f"**{text}**" if cell.get("best") else text)
        lines.append(f"| {row['modality']} | {row['model']} | " + " | ".join(cells) + " |")
    markdown = "\n".join(lines) + "\n"
    doc = {"columns": risk_names, "rows": rows}
    return markdown, doc


def report_to_json_str(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"
