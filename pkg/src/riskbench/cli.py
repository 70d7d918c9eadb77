"""Command-line entry point.

Subcommands: synth, label, features, train, cv, mae-train, embed, report.
Runs are driven by a JSON config (schema-checked, unknown keys rejected)
with `--set section.key=value` overrides. Every command prints the
resolved config hash; outputs carry it for provenance (JSON outputs
embed it, CSV and checkpoint outputs get a .meta.json sidecar). All
randomness derives from the single `seed` key. Exit codes: 0 success,
2 config error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import datetime as dt
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from .cohort import (
    SynthSpec,
    build_labels,
    cohort_from_csv,
    cohort_to_csv,
    code_sets_from_json,
    generate_synthetic,
    imaging_dates_from_csv,
    records_from_csv,
)
from .errors import ConfigError, DataError, NumericError
from .features import (
    FeatureMatrix,
    category_map_from_json,
    fuse_concat,
    pca_apply,
    pca_fit,
    standardize_fit_apply,
)
from .mae import (
    MaeConfig,
    MaeModel,
    extract_embedding,
    load_volume,
    make_phantoms,
    save_volume,
    train_mae,
)
from .models import MODEL_KINDS, build_model
from .pipeline import CVReport, CvSettings, HParamGrid, emit_report, nested_cv, report_to_json_str

# ---------------------------------------------------------------------------
# config handling
# ---------------------------------------------------------------------------

_SCHEMA: dict = {
    "seed": int,
    "workers": int,
    "data": {
        "cohort_csv": str,
        "synthetic": {
            "n": int, "d": int, "shapes": list, "scales": list,
            "betas": list, "horizon": float, "seed": int,
        },
        "features_csv": str,
        "category_map": str,
    },
    "features": {"standardize": bool, "pca_components": int},
    "model": {"kind": str, "extras": dict},
    "grid": {
        "lr_range": list, "batch_range": list, "dropout_choices": list,
        "layers_range": list, "nodes_choices": list,
        "dsm_distribution_choices": list, "dsm_k_choices": list,
        "deephit_alpha_choices": list,
    },
    "cv": {
        "k": int, "preset": str, "n_iter": int, "max_epochs": int,
        "patience": float, "modality": str, "save_fold_checkpoints": bool,
    },
    "mae": {
        "n_phantoms": int, "dims": list, "volumes_dir": str,
        "patch_size": list, "mask_ratio": float, "embed_dim": int,
        "enc_layers": int, "dec_layers": int, "heads": int, "mlp_ratio": int,
        "epochs": int, "lr": float, "weight_decay": float, "dropout": float,
        "threshold": float, "min_fraction": float, "checkpoint": str,
    },
    "output": {"dir": str},
}

_DEFAULTS = {"seed": 0, "workers": 1}


def _check_keys(doc: dict, schema: dict, path: str = "") -> None:
    for key, value in doc.items():
        where = f"{path}.{key}" if path else key
        if key not in schema:
            raise ConfigError(f"unknown config key {where!r}")
        expected = schema[key]
        if isinstance(expected, dict) and not isinstance(expected, type):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where!r} must be an object")
            _check_keys(value, expected, where)
        elif expected is float:
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise ConfigError(f"config key {where!r} must be a number")
        elif expected is int:
            if not isinstance(value, int) or isinstance(value, bool):
                raise ConfigError(f"config key {where!r} must be an integer")
        elif not isinstance(value, expected):
            raise ConfigError(f"config key {where!r} must be {expected.__name__}")


def _parse_set(override: str) -> tuple[list[str], object]:
    if "=" not in override:
        raise ConfigError(f"--set expects section.key=value, got {override!r}")
    dotted, raw = override.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return dotted.split("."), value


def load_config(path: str | None, overrides: list[str]) -> dict:
    doc: dict = dict(_DEFAULTS)
    if path is not None:
        try:
            loaded = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        doc.update(loaded)
    for override in overrides or []:
        keys, value = _parse_set(override)
        node = doc
        for key in keys[:-1]:
            node = node.setdefault(key, {})
            if not isinstance(node, dict):
                raise ConfigError(f"cannot override through non-object {key!r}")
        node[keys[-1]] = value
    _check_keys(doc, _SCHEMA)
    return doc


def config_hash(doc: dict) -> str:
    canon = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


def _write_meta(out_path: Path, command: str, digest: str) -> None:
    meta = {"command": command, "config_hash": digest}
    Path(str(out_path) + ".meta.json").write_text(
        json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _out_dir(doc: dict) -> Path:
    out = Path(doc.get("output", {}).get("dir", "out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# data loading shared by train/cv
# ---------------------------------------------------------------------------


def _load_cohort(doc: dict):
    data = doc.get("data", {})
    if "cohort_csv" in data:
        cohort = cohort_from_csv(data["cohort_csv"])
    elif "synthetic" in data:
        synth = dict(data["synthetic"])
        n = synth.pop("n")
        cohort = generate_synthetic(SynthSpec(**synth), n)
    else:
        raise ConfigError("data section needs cohort_csv or synthetic")
    if "features_csv" in data:
        cohort = _join_features(cohort, data["features_csv"])
    return cohort


def _join_features(cohort, features_csv: str):
    """Fuse an external id-keyed feature CSV onto the cohort by subject id."""
    rows: dict[str, list[float]] = {}
    with open(features_csv, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split(",")
        if header[0] != "id":
            raise DataError(f"{features_csv}: first column must be 'id'")
        names = header[1:]
        for lineno, line in enumerate(fh, start=2):
            parts = line.rstrip("\n").split(",")
            if len(parts) != len(header):
                raise DataError(f"{features_csv}:{lineno}: bad field count")
            rows[parts[0]] = [float(v) for v in parts[1:]]
    missing = [sid for sid in cohort.ids if sid not in rows]
    if missing:
        raise DataError(f"{features_csv}: missing features for ids {missing[:5]}")
    extra = np.array([rows[sid] for sid in cohort.ids])
    base = FeatureMatrix(cohort.features, list(cohort.feature_names))
    fused = fuse_concat(base, FeatureMatrix(extra, names))
    return cohort.with_features(fused.data, fused.names)


def _cv_settings(doc: dict) -> tuple[CvSettings, int, dict]:
    cv = doc.get("cv", {})
    preset = cv.get("preset", "full")
    if preset == "desk":
        settings = CvSettings.desk()
    elif preset == "full":
        settings = CvSettings()
    else:
        raise ConfigError(f"unknown cv preset {preset!r}")
    k = cv.get("k", settings.k)
    for field_name in ("n_iter", "max_epochs", "patience", "modality"):
        if field_name in cv:
            setattr(settings, field_name, cv[field_name])
    feats = doc.get("features", {})
    settings.standardize = feats.get("standardize", True)
    settings.pca_components = feats.get("pca_components", 0)
    model = doc.get("model", {})
    settings.extra_fields = model.get("extras") or None
    grid = HParamGrid.from_dict(doc.get("grid", {}))
    return settings, k, {"grid": grid, "kind": model.get("kind", "dsm")}


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    doc = load_config(args.config, args.set)
    digest = config_hash(doc)
    print(f"config_hash={digest}")
    if "synthetic" not in doc.get("data", {}):
        raise ConfigError("synth needs a data.synthetic section")
    synth = dict(doc["data"]["synthetic"])
    n = synth.pop("n")
    spec = SynthSpec(**synth)
    cohort = generate_synthetic(spec, n)
    out = _out_dir(doc) / (args.out or "cohort.csv")
    cohort_to_csv(cohort, out)
    sidecar = {"config_hash": digest, "n": n, "spec": spec.to_json()}
    Path(str(out) + ".spec.json").write_text(
        json.dumps(sidecar, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _write_meta(out, "synth", digest)
    print(f"wrote {out} ({cohort.n} subjects, {cohort.n_risks} risks)")
    return 0


def cmd_label(args) -> int:
    digest = config_hash({"records": args.records, "imaging": args.imaging,
                          "codes": args.codes, "censor_date": args.censor_date})
    print(f"config_hash={digest}")
    records = records_from_csv(args.records)
    imaging = imaging_dates_from_csv(args.imaging)
    codes = code_sets_from_json(args.codes)
    try:
        censor = dt.date.fromisoformat(args.censor_date)
    except ValueError as exc:
        raise ConfigError(f"bad censor date {args.censor_date!r}") from exc
    cohort, stats = build_labels(records, imaging, codes, censor)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    cohort_to_csv(cohort, out)
    _write_meta(out, "label", digest)
    print(f"excluded (event before or within window): {stats.excluded_prior_or_window}")
    print(f"skipped (missing imaging date): {stats.missing_imaging_date}")
    for name, count in stats.labeled_per_risk.items():
        print(f"labeled {name}: {count}")
    print(f"censored: {stats.censored}")
    print(f"wrote {out} ({cohort.n} subjects)")
    return 0


def cmd_features(args) -> int:
    digest = config_hash({"cohort": args.cohort, "category_map": args.category_map,
                          "standardize": args.standardize, "pca": args.pca,
                          "fuse": args.fuse, "out": args.out})
    print(f"config_hash={digest}")
    cohort = cohort_from_csv(args.cohort)
    matrix = FeatureMatrix(cohort.features, list(cohort.feature_names))
    if args.category_map:
        matrix.categories = category_map_from_json(args.category_map, matrix.names)
    if args.standardize:
        matrix, _, _ = standardize_fit_apply(matrix)
    if args.pca:
        model = pca_fit(matrix, args.pca)
        matrix = pca_apply(model, matrix)
    if args.fuse:
        other = cohort_from_csv(args.fuse)
        if other.ids != cohort.ids:
            raise DataError("fuse: subject ids or order differ between files")
        matrix = fuse_concat(matrix, FeatureMatrix(other.features, list(other.feature_names)))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    cohort_to_csv(cohort.with_features(matrix.data, matrix.names), out)
    _write_meta(out, "features", digest)
    print(f"wrote {out} ({matrix.width} feature columns)")
    return 0


def cmd_train(args) -> int:
    doc = load_config(args.config, args.set)
    digest = config_hash(doc)
    print(f"config_hash={digest}")
    cohort = _load_cohort(doc)
    model_doc = doc.get("model", {})
    kind = model_doc.get("kind", "dsm")
    if kind not in MODEL_KINDS:
        raise ConfigError(f"unknown model kind {kind!r}")
    model = build_model(kind, **(model_doc.get("extras") or {}))
    history = model.fit(cohort, seed=doc["seed"])
    out = _out_dir(doc) / f"{kind}.rbck"
    model.save(out)
    hist_path = _out_dir(doc) / f"{kind}.history.json"
    hist_path.write_text(json.dumps(
        {"config_hash": digest, **history.to_json()}, indent=2, sort_keys=True
    ) + "\n", encoding="utf-8")
    _write_meta(out, "train", digest)
    print(f"wrote {out} (best epoch {history.best_epoch})")
    return 0


def cmd_cv(args) -> int:
    overrides = list(args.set)
    if args.workers is not None:
        overrides.append(f"workers={args.workers}")
    doc = load_config(args.config, overrides)
    digest = config_hash(doc)
    print(f"config_hash={digest}")
    cohort = _load_cohort(doc)
    settings, k, extras = _cv_settings(doc)
    if doc.get("cv", {}).get("save_fold_checkpoints", False):
        settings.checkpoint_dir = str(_out_dir(doc))
    report = nested_cv(cohort, extras["kind"], grid=extras["grid"], k=k,
                       seed=doc["seed"], settings=settings,
                       workers=doc.get("workers", 1))
    out = _out_dir(doc)
    report_doc = {"config_hash": digest, "report": report.to_json()}
    (out / "report.json").write_text(report_to_json_str(report_doc), encoding="utf-8")
    markdown, _table = emit_report([report])
    (out / "report.md").write_text(
        f"config_hash={digest}\n\n" + markdown, encoding="utf-8")
    for name in report.risk_names:
        agg = report.aggregate[name]
        print(f"{name}: {agg['mean']:.3f} ({agg['lo']:.3f}, {agg['hi']:.3f})")
    print(f"wrote {out / 'report.json'} and {out / 'report.md'}")
    return 0


def _mae_config(doc: dict) -> MaeConfig:
    mae = {k: v for k, v in doc.get("mae", {}).items()
           if k not in ("n_phantoms", "dims", "volumes_dir", "checkpoint")}
    if "patch_size" in mae:
        mae["patch_size"] = tuple(mae["patch_size"])
    return MaeConfig(**mae)


def _mae_volumes(doc: dict) -> tuple[list[str], list]:
    mae = doc.get("mae", {})
    if "volumes_dir" in mae:
        paths = sorted(Path(mae["volumes_dir"]).glob("*.rbvl"))
        if not paths:
            raise DataError(f"no .rbvl volumes in {mae['volumes_dir']}")
        return [p.stem for p in paths], [load_volume(p) for p in paths]
    n = mae.get("n_phantoms", 20)
    dims = tuple(mae.get("dims", (60, 40, 40, 2)))
    vols = make_phantoms(n, dims=dims, seed=doc["seed"])
    return [f"phantom{i:04d}" for i in range(n)], vols


def cmd_mae_train(args) -> int:
    doc = load_config(args.config, args.set)
    digest = config_hash(doc)
    print(f"config_hash={digest}")
    _names, volumes = _mae_volumes(doc)
    config = _mae_config(doc)
    model, history = train_mae(volumes, config, seed=doc["seed"])
    out = _out_dir(doc) / "mae.rbck"
    model.save(out)
    (_out_dir(doc) / "mae.history.json").write_text(json.dumps(
        {"config_hash": digest, **history.to_json()}, indent=2, sort_keys=True
    ) + "\n", encoding="utf-8")
    _write_meta(out, "mae-train", digest)
    print(f"wrote {out} (final epoch loss {history.epoch_losses[-1]:.6f})")
    return 0


def cmd_embed(args) -> int:
    doc = load_config(args.config, args.set)
    digest = config_hash(doc)
    print(f"config_hash={digest}")
    checkpoint = doc.get("mae", {}).get("checkpoint")
    if checkpoint is None:
        raise ConfigError("embed needs mae.checkpoint")
    if not Path(checkpoint).exists():
        raise DataError(f"checkpoint not found: {checkpoint}")
    model = MaeModel.load(checkpoint)
    names, volumes = _mae_volumes(doc)
    out = _out_dir(doc) / (args.out or "embeddings.csv")
    dim = model.config.embed_dim
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("id," + ",".join(f"e{j + 1}" for j in range(dim)) + "\n")
        for name, vol in zip(names, volumes):
            emb = extract_embedding(model, vol)
            fh.write(name + "," + ",".join(repr(float(v)) for v in emb) + "\n")
    _write_meta(out, "embed", digest)
    print(f"wrote {out} ({len(names)} rows x {dim + 1} columns)")
    return 0


def cmd_report(args) -> int:
    digest = config_hash({"inputs": list(args.inputs)})
    print(f"config_hash={digest}")
    reports = []
    for path in args.inputs:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        reports.append(CVReport.from_json(doc.get("report", doc)))
    markdown, table = emit_report(reports)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.md").write_text(markdown, encoding="utf-8")
    (out / "report.json").write_text(
        report_to_json_str({"config_hash": digest, "table": table}), encoding="utf-8")
    print(markdown)
    return 0


def cmd_make_volumes(args) -> int:
    """Helper: write phantom volumes as .rbvl files for embed/mae-train."""
    doc = load_config(args.config, args.set)
    digest = config_hash(doc)
    print(f"config_hash={digest}")
    names, volumes = _mae_volumes(doc)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, vol in zip(names, volumes):
        save_volume(vol, out / f"{name}.rbvl")
    print(f"wrote {len(names)} volumes to {out}")
    return 0


# ---------------------------------------------------------------------------
# argument wiring
# ---------------------------------------------------------------------------


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run config")
    p.add_argument("--set", action="append", default=[],
                   help="override a config key: section.key=value")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="riskbench",
        description="Competing-risks models, nested-CV evaluation, and a "
                    "masked-autoencoder representation learner")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic cohort CSV")
    _add_config_args(p)
    p.add_argument("--out", help="output file name inside output.dir")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("label", help="build labels from diagnosis records")
    p.add_argument("--records", required=True, help="CSV id,code,date")
    p.add_argument("--imaging", required=True, help="CSV id,date")
    p.add_argument("--codes", required=True, help="JSON risk -> code list")
    p.add_argument("--censor-date", required=True, help="ISO date")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("features", help="standardize / PCA / fuse features")
    p.add_argument("--cohort", required=True)
    p.add_argument("--category-map")
    p.add_argument("--standardize", action="store_true")
    p.add_argument("--pca", type=int, default=0)
    p.add_argument("--fuse", help="second cohort CSV to concatenate")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("train", help="fit one model on the full cohort")
    _add_config_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("cv", help="nested cross-validation")
    _add_config_args(p)
    p.add_argument("--workers", type=int, help="fold job pool size (1 = serial)")
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("mae-train", help="train the masked autoencoder")
    _add_config_args(p)
    p.set_defaults(func=cmd_mae_train)

    p = sub.add_parser("embed", help="extract volume embeddings to CSV")
    _add_config_args(p)
    p.add_argument("--out", help="output file name inside output.dir")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("report", help="merge CV reports into result tables")
    p.add_argument("--inputs", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("make-volumes", help="write phantom .rbvl files")
    _add_config_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_make_volumes)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
