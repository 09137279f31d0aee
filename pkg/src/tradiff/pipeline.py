"""End-to-end orchestration: ingest, extract, fit, evaluate, report.

Each stage reads only the serialized outputs of the previous one under a
single run directory, so stages can be re-run independently. All outputs
are plain text with canonical ordering and no wall-clock content, which
makes whole run directories byte-identical across repeated runs and
thread counts.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from . import __version__
from .dumps import DumpStore
from .errors import ConfigError, FormatError, TradiffError
from .evaluation import (
    ModelSpec,
    correlations,
    cross_validate,
    delta_llh,
    paired_permutation_test,
    pos_group_summary,
    vif,
)
from .features import (
    CONTROL_COLUMNS,
    SOURCE_ATTENTION_FEATURES,
    SURPRISAL_FEATURES,
    TARGET_ATTENTION_FEATURES,
    FeatureExtractor,
    FrequencyTable,
)
from .ingest import (
    FoldAssignment,
    TableSchema,
    assign_folds,
    drop_cross_sentence_alignments,
    filter_and_scale,
    load_observations,
    parse_tables,
    save_observations,
)
from .regression import design_from_frame
from .util import sha256_of, substream_seed

STAGES = ("ingest", "extract", "fit", "evaluate", "report")
MEASURES = ("trts", "trtt", "dur")
MEASURE_SIDE = {"trts": "source", "trtt": "target", "dur": "target"}
DEFAULT_FEATURES = {
    "trts": ["s_lm", *SOURCE_ATTENTION_FEATURES],
    "trtt": ["s_lm", "s_mt", *TARGET_ATTENTION_FEATURES],
    "dur": ["s_lm", "s_mt", *TARGET_ATTENTION_FEATURES],
}
_STRING_COLUMNS = {
    "study": str, "participant": str, "language_pair": str, "pair_id": str,
    "source_sentence_id": str, "level": str, "side": str, "unit": str,
    "pos_tag": str, "aligned_pos": str,
}


class StageFailure(TradiffError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class RunConfig:
    """Validated run configuration; paths are resolved to absolutes."""

    tables_dir: str
    dumps_dir: str
    frequency_file: str
    output_dir: str | None = None
    schema: TableSchema = field(default_factory=TableSchema)
    folds: int = 10
    seed: int = 0
    n_perm: int = 1000
    alternative: str = "greater"
    features: dict = field(default_factory=lambda: {k: list(v) for k, v in DEFAULT_FEATURES.items()})
    scopes: list = field(default_factory=lambda: ["all"])
    jobs: int = 1
    min_cell_rows: int = 40
    surprisal_baseline: bool = False

    @classmethod
    def load(cls, path: str | os.PathLike) -> "RunConfig":
        path = os.fspath(path)
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        base = os.path.dirname(os.path.abspath(path))

        def resolve(p):
            if p is None:
                return None
            return p if os.path.isabs(p) else os.path.normpath(os.path.join(base, p))

        paths = raw.get("paths", {})
        if "seed" not in raw:
            raise ConfigError("config must set an explicit seed")
        schema_raw = raw.get("schema", {})
        schema = TableSchema(
            sentence_file=schema_raw.get("sentence_file", "sentences.tsv"),
            word_glob=schema_raw.get("word_glob", "*.words.tsv"),
            segment_glob=schema_raw.get("segment_glob", "*.segments.tsv"),
            columns=schema_raw.get("columns", {}),
        )
        features = {k: list(v) for k, v in DEFAULT_FEATURES.items()}
        features.update({k: list(v) for k, v in raw.get("features", {}).items()})
        return cls(
            tables_dir=resolve(paths.get("tables", ".")),
            dumps_dir=resolve(paths.get("dumps", "dumps")),
            frequency_file=resolve(paths.get("frequency", "wordfreq.tsv")),
            output_dir=resolve(paths.get("output")),
            schema=schema,
            folds=int(raw.get("folds", 10)),
            seed=int(raw["seed"]),
            n_perm=int(raw.get("n_perm", 1000)),
            alternative=raw.get("alternative", "greater"),
            features=features,
            scopes=list(raw.get("scopes", ["all"])),
            jobs=int(raw.get("jobs", 1)),
            min_cell_rows=int(raw.get("min_cell_rows", 40)),
            surprisal_baseline=bool(raw.get("surprisal_baseline", False)),
        )

    def validate(self) -> None:
        for label, p in (
            ("tables directory", self.tables_dir),
            ("dumps directory", self.dumps_dir),
            ("frequency file", self.frequency_file),
        ):
            if p is None or not os.path.exists(p):
                raise ConfigError(f"{label} missing: {p}")
        if self.alternative not in ("greater", "two-sided"):
            raise ConfigError(f"bad test sidedness {self.alternative!r}")
        if self.folds < 2:
            raise ConfigError("need at least 2 folds")
        unknown = set(self.features) - set(MEASURES)
        if unknown:
            raise ConfigError(f"feature lists for unknown measures: {sorted(unknown)}")

    def hashable(self) -> dict:
        """Config identity: everything except filesystem locations."""
        return {
            "folds": self.folds,
            "seed": self.seed,
            "n_perm": self.n_perm,
            "alternative": self.alternative,
            "features": {k: list(v) for k, v in sorted(self.features.items())},
            "scopes": list(self.scopes),
            "min_cell_rows": self.min_cell_rows,
            "surprisal_baseline": self.surprisal_baseline,
            "schema": {
                "sentence_file": self.schema.sentence_file,
                "word_glob": self.schema.word_glob,
                "segment_glob": self.schema.segment_glob,
                "columns": dict(self.schema.columns),
            },
        }

    @property
    def config_hash(self) -> str:
        return sha256_of(self.hashable())


def _write_json(payload, path) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, ensure_ascii=False, indent=1)
        fh.write("\n")
    os.replace(tmp, path)


def _read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _write_tsv(frame: pd.DataFrame, path) -> None:
    tmp = f"{path}.tmp"
    frame.to_csv(tmp, sep="\t", index=False)
    os.replace(tmp, path)


def _stage_dir(run_dir, stage: str) -> str:
    path = os.path.join(run_dir, stage)
    os.makedirs(path, exist_ok=True)
    return path


# ---------------------------------------------------------------------------
# Stages


def stage_ingest(cfg: RunConfig, run_dir: str, jobs: int = 1) -> None:
    out = _stage_dir(run_dir, "ingest")
    result = parse_tables(cfg.tables_dir, cfg.schema)
    kept, n_cross = drop_cross_sentence_alignments(result.observations)
    kept, filter_stats = filter_and_scale(kept)
    result.observations = kept
    save_observations(result, out)
    folds = assign_folds(
        sorted({o.pair.source_sentence_id for o in kept}), k=cfg.folds, seed=cfg.seed
    )
    _write_json(folds.to_json(), os.path.join(out, "folds.json"))
    _write_json(
        {
            "observations": len(kept),
            "rejected_rows": len(result.rejects),
            "cross_sentence_dropped": n_cross,
            **filter_stats,
        },
        os.path.join(out, "stats.json"),
    )


def stage_extract(cfg: RunConfig, run_dir: str, jobs: int = 1) -> None:
    out = _stage_dir(run_dir, "extract")
    result = load_observations(os.path.join(run_dir, "ingest"))
    folds = FoldAssignment.from_json(_read_json(os.path.join(run_dir, "ingest", "folds.json")))
    extractor = FeatureExtractor(
        dumps=DumpStore(cfg.dumps_dir),
        frequency=FrequencyTable.from_file(cfg.frequency_file),
        n_jobs=jobs,
    )
    table = extractor.transform(result.observations)
    table["fold"] = [
        folds.fold_of(o.pair.source_sentence_id) for o in result.observations
    ]
    _write_tsv(table, os.path.join(out, "features.tsv"))
    _write_json(
        {"rows": len(table), "oov_words": list(extractor.oov_words_)},
        os.path.join(out, "diagnostics.json"),
    )


def _load_features(run_dir: str) -> pd.DataFrame:
    path = os.path.join(run_dir, "extract", "features.tsv")
    return pd.read_csv(path, sep="\t", dtype=_STRING_COLUMNS)


def _cell_name(measure: str, level: str, scope: str) -> str:
    return f"{measure}__{level}__{scope}"


def _cell_tasks(cfg: RunConfig, table: pd.DataFrame):
    for measure in MEASURES:
        side = MEASURE_SIDE[measure]
        for level in ("word", "segment"):
            for scope in cfg.scopes:
                mask = (
                    (table["side"] == side)
                    & (table["level"] == level)
                    & table[measure].notna()
                )
                if scope != "all":
                    mask &= table["language_pair"] == scope
                yield measure, level, scope, table[mask]


def stage_fit(cfg: RunConfig, run_dir: str, jobs: int = 1) -> None:
    out = _stage_dir(run_dir, "fit")
    os.makedirs(os.path.join(out, "cells"), exist_ok=True)
    table = _load_features(run_dir)
    controls = list(CONTROL_COLUMNS)
    tasks = []
    skipped = []
    for measure, level, scope, sub in _cell_tasks(cfg, table):
        name = _cell_name(measure, level, scope)
        if len(sub) < cfg.min_cell_rows:
            skipped.append({"cell": name, "rows": int(len(sub)), "reason": "too few rows"})
            continue
        tasks.append((name, measure, level, scope, sub))

    def run_cell(task):
        name, measure, level, scope, sub = task
        sub = sub.reset_index(names="row")
        kind = "mixed" if scope == "all" else "ols"
        folds = sub["fold"].to_numpy()
        # a predictor that never varies in this cell (e.g. subword length
        # when every unit is one subword) cannot be standardized or fitted
        surp = "s_lm" if MEASURE_SIDE[measure] == "source" else "s_mt"
        candidates = set(controls + cfg.features[measure])
        if cfg.surprisal_baseline:
            candidates.add(surp)
        constant = [c for c in candidates if float(sub[c].std(ddof=0)) < 1e-12]
        cell_controls = [c for c in controls if c not in constant]
        models = {"baseline": cell_controls}
        for feat in cfg.features[measure]:
            if feat not in constant:
                models[feat] = cell_controls + [feat]
        if cfg.surprisal_baseline and surp not in constant:
            # second comparison family: does the feature add anything on
            # top of surprisal (not just on top of the controls)?
            models.setdefault(surp, cell_controls + [surp])
            for feat in cfg.features[measure]:
                if feat not in constant and feat not in SURPRISAL_FEATURES:
                    models[f"s+{feat}"] = cell_controls + [surp, feat]
        payload = {
            "measure": measure, "level": level, "scope": scope, "kind": kind,
            "dropped_constant": sorted(constant),
            "rows": sub["row"].tolist(), "folds": folds.tolist(), "models": {},
        }
        for model_name, predictors in models.items():
            spec = ModelSpec(response=measure, predictors=tuple(predictors), kind=kind)
            cv = cross_validate(sub, spec, folds)
            payload["models"][model_name] = {
                "predictors": predictors,
                "llh": [float(v) for v in cv.llh],
                "fits": [f.to_record() for f in cv.fits],
            }
        return name, payload

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run_cell, tasks))
    else:
        results = [run_cell(t) for t in tasks]
    for name, payload in results:
        _write_json(payload, os.path.join(out, "cells", f"{name}.json"))
    _write_json(
        {"cells": [name for name, _ in results], "skipped": skipped},
        os.path.join(out, "cells.json"),
    )


def stage_evaluate(cfg: RunConfig, run_dir: str, jobs: int = 1) -> None:
    out = _stage_dir(run_dir, "evaluate")
    table = _load_features(run_dir)
    index = _read_json(os.path.join(run_dir, "fit", "cells.json"))

    dllh_rows, coef_rows, vif_rows = [], [], []
    for name in index["cells"]:
        cell = _read_json(os.path.join(run_dir, "fit", "cells", f"{name}.json"))
        folds = np.asarray(cell["folds"])
        rows = table.loc[cell["rows"]]
        surp = "s_lm" if MEASURE_SIDE[cell["measure"]] == "source" else "s_mt"
        for model_name, model in sorted(cell["models"].items()):
            predictors = model["predictors"]
            # coefficient summary over folds
            fits = model["fits"]
            columns = fits[0]["columns"]
            coefs = np.array([f["coef"] for f in fits])
            for j, col in enumerate(columns):
                values = coefs[:, j]
                coef_rows.append(
                    {
                        "cell": name, "measure": cell["measure"], "level": cell["level"],
                        "scope": cell["scope"], "model": model_name, "term": col,
                        "coef_mean": float(values.mean()),
                        "coef_sd": float(values.std(ddof=1)) if len(values) > 1 else 0.0,
                        "ci_lo": float(values.mean() - 1.96 * values.std(ddof=1) / np.sqrt(len(values))),
                        "ci_hi": float(values.mean() + 1.96 * values.std(ddof=1) / np.sqrt(len(values))),
                    }
                )
            # collinearity of this model's predictor set
            design = design_from_frame(rows, cell["measure"], predictors)
            if len(predictors) >= 2:
                for term, value in vif(design).items():
                    vif_rows.append(
                        {
                            "cell": name, "model": model_name, "term": term,
                            "vif": value, "flag": bool(value > 2.5),
                        }
                    )
            if model_name == "baseline":
                continue
            # features-on-top-of-surprisal models compare against the
            # surprisal model; everything else against the controls
            ref_name = surp if model_name.startswith("s+") else "baseline"
            base = np.asarray(cell["models"][ref_name]["llh"], dtype=float)
            llh = np.asarray(model["llh"], dtype=float)
            d = delta_llh(
                llh, base, folds=folds, feature=model_name,
                measure=cell["measure"], level=cell["level"], scope=cell["scope"],
            )
            d.p_value = paired_permutation_test(
                d.deltas,
                n_perm=cfg.n_perm,
                seed=substream_seed(cfg.seed, "perm", name, model_name),
                alternative=cfg.alternative,
            )
            rec = d.to_record()
            fm = np.array(list(d.fold_means.values()))
            half = 1.96 * fm.std(ddof=1) / np.sqrt(len(fm)) if len(fm) > 1 else 0.0
            rec["ci_lo"] = float(rec["mean_delta"] - half)
            rec["ci_hi"] = float(rec["mean_delta"] + half)
            rec["significant"] = bool(rec["p_value"] < 0.05)
            rec.pop("fold_means")
            rec["cell"] = name
            rec["baseline"] = ref_name
            dllh_rows.append(rec)

    _write_tsv(
        pd.DataFrame(
            dllh_rows,
            columns=["cell", "feature", "baseline", "measure", "level", "scope",
                     "n", "mean_delta", "total_delta", "ci_lo", "ci_hi",
                     "p_value", "significant"],
        ),
        os.path.join(out, "dllh.tsv"),
    )
    _write_tsv(
        pd.DataFrame(
            coef_rows,
            columns=["cell", "measure", "level", "scope", "model", "term",
                     "coef_mean", "coef_sd", "ci_lo", "ci_hi"],
        ),
        os.path.join(out, "coefficients.tsv"),
    )
    _write_tsv(
        pd.DataFrame(vif_rows, columns=["cell", "model", "term", "vif", "flag"]),
        os.path.join(out, "vif.tsv"),
    )

    # fidelity/fluency trade-off: s_lm vs s_mt on target-side rows
    corr_rows = []
    for level in ("word", "segment"):
        sub = table[(table["side"] == "target") & (table["level"] == level)]
        pairs = sub[["s_lm", "s_mt"]].dropna()
        if len(pairs) >= 3 and pairs["s_lm"].std() > 0 and pairs["s_mt"].std() > 0:
            for method in ("pearson", "spearman"):
                r, p = correlations(pairs["s_lm"], pairs["s_mt"], method=method)
                corr_rows.append(
                    {"level": level, "x": "s_lm", "y": "s_mt", "method": method,
                     "n": len(pairs), "r": r, "p": p}
                )
    _write_tsv(
        pd.DataFrame(corr_rows, columns=["level", "x", "y", "method", "n", "r", "p"]),
        os.path.join(out, "correlations.tsv"),
    )

    # POS breakdowns (word level): source reading time, target production
    notes = {}
    src = table[(table["side"] == "source") & (table["level"] == "word")]
    try:
        summary = pos_group_summary(
            src, ["trts", "s_lm", *SOURCE_ATTENTION_FEATURES],
            tag_col="pos_tag", seed=substream_seed(cfg.seed, "pos", "source"),
        )
        _write_tsv(summary, os.path.join(out, "pos_source.tsv"))
    except TradiffError as exc:
        notes["pos_source"] = str(exc)
    tgt = table[
        (table["side"] == "target") & (table["level"] == "word") & table["dur_avg"].notna()
    ]
    try:
        summary = pos_group_summary(
            tgt, ["dur_avg", "s_lm", "s_mt", *TARGET_ATTENTION_FEATURES],
            tag_col="aligned_pos", seed=substream_seed(cfg.seed, "pos", "target"),
        )
        _write_tsv(summary, os.path.join(out, "pos_target.tsv"))
    except TradiffError as exc:
        notes["pos_target"] = str(exc)
    _write_json({"notes": notes, "cells": index["cells"], "skipped": index["skipped"]},
                os.path.join(out, "stats.json"))


def render_report(run_dir: str) -> None:
    """Format evaluate-stage tables into a summary and plot-data files.

    Pure formatting: every number is copied from a result table (or the
    manifest); missing tables are marked, not recomputed.
    """
    out = _stage_dir(run_dir, "report")
    manifest_path = os.path.join(run_dir, "manifest.json")
    try:
        manifest = _read_json(manifest_path)
        config_hash = manifest["config_hash"]
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise FormatError(f"unreadable run manifest {manifest_path}: {exc}") from exc

    def load_tsv(stage, name):
        path = os.path.join(run_dir, stage, name)
        if not os.path.exists(path):
            return None
        try:
            return pd.read_csv(path, sep="\t")
        except pd.errors.EmptyDataError:
            return None

    lines = ["# Translation difficulty run report", ""]
    lines.append(f"- config hash: `{config_hash}`")
    lines.append(f"- seed: {manifest.get('seed')}")
    lines.append(f"- package version: {manifest.get('version')}")
    for stage, status in manifest.get("stages", {}).items():
        if stage == "report":  # own status is unknown while rendering
            continue
        lines.append(f"- stage {stage}: {status if isinstance(status, str) else status.get('status')}")
    lines.append("")

    ingest_stats_path = os.path.join(run_dir, "ingest", "stats.json")
    if os.path.exists(ingest_stats_path):
        stats = _read_json(ingest_stats_path)
        lines.append("## Data")
        lines.append("")
        for key in sorted(stats):
            lines.append(f"- {key}: {stats[key]}")
        lines.append("")

    dllh = load_tsv("evaluate", "dllh.tsv")
    lines.append("## Held-out log-likelihood deltas")
    lines.append("")
    if dllh is None:
        lines.append("MISSING: evaluate/dllh.tsv not present (partial run)")
    else:
        lines.append("| cell | feature | vs | mean dllh | 95% CI | p | |")
        lines.append("|---|---|---|---|---|---|---|")
        for _, row in dllh.iterrows():
            star = "*" if row["significant"] else ""
            lines.append(
                f"| {row['cell']} | {row['feature']} | {row['baseline']} "
                f"| {row['mean_delta']:.5f} "
                f"| [{row['ci_lo']:.5f}, {row['ci_hi']:.5f}] | {row['p_value']:.4g} | {star} |"
            )
        fig = dllh[
            ["cell", "measure", "level", "scope", "feature", "baseline",
             "mean_delta", "ci_lo", "ci_hi", "p_value", "significant"]
        ]
        _write_tsv(fig, os.path.join(out, "fig_dllh.csv"))
    lines.append("")

    coef = load_tsv("evaluate", "coefficients.tsv")
    lines.append("## Coefficients (fold means)")
    lines.append("")
    if coef is None:
        lines.append("MISSING: evaluate/coefficients.tsv not present (partial run)")
    else:
        own = coef[(coef["model"] == coef["term"])]
        lines.append("| cell | feature | coefficient | 95% CI |")
        lines.append("|---|---|---|---|")
        for _, row in own.iterrows():
            lines.append(
                f"| {row['cell']} | {row['term']} | {row['coef_mean']:.5f} "
                f"| [{row['ci_lo']:.5f}, {row['ci_hi']:.5f}] |"
            )
        _write_tsv(coef, os.path.join(out, "fig_coef.csv"))
    lines.append("")

    vif_table = load_tsv("evaluate", "vif.tsv")
    lines.append("## Collinearity")
    lines.append("")
    if vif_table is None:
        lines.append("MISSING: evaluate/vif.tsv not present (partial run)")
    elif vif_table.empty:
        lines.append("- no multi-predictor models evaluated")
    else:
        worst = vif_table["vif"].max()
        lines.append(f"- max VIF over all model feature sets: {worst:.3f}")
        flagged = vif_table[vif_table["flag"]]
        if len(flagged):
            lines.append(f"- predictors above 2.5: {sorted(set(flagged['term']))}")
        else:
            lines.append("- no predictor above the 2.5 warning threshold")
    lines.append("")

    corr = load_tsv("evaluate", "correlations.tsv")
    lines.append("## Surprisal correlations (s_lm vs s_mt, target side)")
    lines.append("")
    if corr is None:
        lines.append("MISSING: evaluate/correlations.tsv not present (partial run)")
    else:
        for _, row in corr.iterrows():
            lines.append(
                f"- {row['level']} level, {row['method']}: r = {row['r']:.4f} "
                f"(n = {row['n']}, p = {row['p']:.4g})"
            )
    lines.append("")

    for view, fname in (("source", "pos_source.tsv"), ("target", "pos_target.tsv")):
        pos = load_tsv("evaluate", fname)
        lines.append(f"## POS view ({view} side)")
        lines.append("")
        if pos is None:
            lines.append(f"MISSING: evaluate/{fname} not present")
        else:
            difficulty = pos.columns[3].rsplit("_mean", 1)[0]
            lines.append(f"tags by mean {difficulty} (descending):")
            for _, row in pos.iterrows():
                lines.append(
                    f"- {row['pos']} (n={row['n']}): {difficulty} = "
                    f"{row[f'{difficulty}_mean']:.4f}"
                )
            _write_tsv(pos, os.path.join(out, f"fig_pos_{view}.csv"))
        lines.append("")

    path = os.path.join(out, "summary.md")
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines))
        fh.write("\n")
    os.replace(tmp, path)


def stage_report(cfg: RunConfig, run_dir: str, jobs: int = 1) -> None:
    render_report(run_dir)


_STAGE_FUNCS = {
    "ingest": stage_ingest,
    "extract": stage_extract,
    "fit": stage_fit,
    "evaluate": stage_evaluate,
    "report": stage_report,
}


# ---------------------------------------------------------------------------
# Orchestration


def _manifest_path(run_dir: str) -> str:
    return os.path.join(run_dir, "manifest.json")


def run_pipeline(cfg: RunConfig, run_dir: str | os.PathLike,
                 stages=STAGES, jobs: int | None = None, force: bool = False) -> dict:
    """Run the requested stages into ``run_dir`` and maintain its manifest.

    Re-running a completed stage with the same config hash is refused
    unless forced. A stage failure still writes the manifest (naming the
    failed stage) so partial results stay inspectable.
    """
    cfg.validate()
    run_dir = os.fspath(run_dir)
    os.makedirs(run_dir, exist_ok=True)
    jobs = cfg.jobs if jobs is None else jobs
    unknown = [s for s in stages if s not in _STAGE_FUNCS]
    if unknown:
        raise ConfigError(f"unknown stages: {unknown}")

    manifest = {}
    if os.path.exists(_manifest_path(run_dir)):
        manifest = _read_json(_manifest_path(run_dir))
        if not force:
            if manifest.get("config_hash") != cfg.config_hash:
                raise ConfigError(
                    f"{run_dir} holds results for config {manifest.get('config_hash')}; "
                    "use --force to overwrite"
                )
            done = [
                s for s in stages
                if manifest.get("stages", {}).get(s) == "ok"
            ]
            if done:
                raise ConfigError(
                    f"stages {done} already complete in {run_dir} for this config; "
                    "use --force to re-run"
                )

    manifest = {
        "config_hash": cfg.config_hash,
        "seed": cfg.seed,
        "version": __version__,
        "config": cfg.hashable(),
        "stages": manifest.get("stages", {}),
    }
    for stage in STAGES:
        if stage not in stages:
            continue
        try:
            _STAGE_FUNCS[stage](cfg, run_dir, jobs)
        except Exception as exc:
            manifest["stages"][stage] = {
                "status": "failed",
                "error": f"{type(exc).__name__}: {exc}",
            }
            _write_json(manifest, _manifest_path(run_dir))
            raise StageFailure(stage, exc) from exc
        manifest["stages"][stage] = "ok"
        _write_json(manifest, _manifest_path(run_dir))
    return manifest
