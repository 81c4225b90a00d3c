"""Command-line driver: generate -> extract -> tss -> train/ensemble -> evaluate -> compare/report.

All settings live in one INI-style config file; ``--set section.key=value``
overrides individual keys.  Every artifact is written through a temporary
file in the destination directory and renamed into place, so an interrupted
run never leaves a half-written file behind.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import configparser
import contextlib
import csv
import glob
import json
import logging
import os
import sys
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import neural
from .core import DataError, read_recordings, read_subjects, validate_recording, write_recordings, write_subjects
from .dataset import extract_all, read_features, write_features
from .ensembles import STRATEGIES, ensemble_results, run_ensemble_cv
from .evaluation import (METRICS, RESULTS_SCHEMA, aggregate_folds, dump_results, load_results,
                         report_from_results, results_dict, stratified_subject_folds)
from .kinematics import DegenerateStroke, StrokeTooShort
from .synth import ClassEffect, GeneratorConfig, generate_cohort
from .training import LOG_HEADER, NumericalFailure, TrainConfig, cv_results, evaluate_fold, run_cv
from .tss import tss_grid_scan, write_surface

log = logging.getLogger("strokenet")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

DEFAULT_CONFIG = """\
[experiment]
seed_base = 42
output_dir = run
jobs = 1

[generator]
seed = 7
n_ad = 30
n_hc = 30
tasks = 1-34
samples_per_stroke = 12,40
strokes_per_task = 8,30
velocity_scale = 0.7
jerk_scale = 1.5
pause_scale = 1.4
drift = 0.0

[grid]
ws = 60,70,80
stride = 1,2,5

[model]
cells = rnn,lstm,gru
hidden = 128
bidirectional = true
dropout = 0.3
embed_dim = 32
layer_norm = true

[training]
epochs = 30
batch_size = 64
lr = 1e-4
weight_decay = 5e-5
clip = 1.0
early_stop_patience = 10
plateau_patience = 5
standardize_windows = true
folds = 5
ws = 60
stride = 1
"""


class ConfigError(ValueError):
    pass


class UsageError(ValueError):
    pass


# -- config ------------------------------------------------------------------

def _ints(text: str) -> tuple[int, ...]:
    """Parse '1,2,5' or ranges like '1-34' (mixable: '1-3,7')."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            lo, hi = (int(p) for p in part.split("-", 1))
            out.extend(range(lo, hi + 1))
        else:
            out.append(int(part))
    return tuple(out)


def _pair(text: str) -> tuple[int, int]:
    vals = _ints(text)
    if len(vals) != 2:
        raise ValueError(f"expected 'lo,hi', got {text!r}")
    return vals


@dataclass(frozen=True)
class ExperimentConfig:
    seed_base: int
    output_dir: Path
    jobs: int
    generator: GeneratorConfig
    ws_grid: tuple[int, ...]
    stride_grid: tuple[int, ...]
    cells: tuple[str, ...]
    encoder: neural.EncoderConfig
    training: TrainConfig
    ws: int
    stride: int
    raw: dict = field(default_factory=dict, compare=False)

    def encoder_for(self, cell: str) -> neural.EncoderConfig:
        return neural.EncoderConfig(**{**asdict(self.encoder), "cell": cell})

    # artifact paths
    @property
    def subjects_csv(self) -> Path:
        return self.output_dir / "subjects.csv"

    @property
    def recordings_csv(self) -> Path:
        return self.output_dir / "recordings.csv"

    @property
    def features_csv(self) -> Path:
        return self.output_dir / "features.csv"

    @property
    def surface_csv(self) -> Path:
        return self.output_dir / "tss_surface.csv"

    @property
    def results_dir(self) -> Path:
        return self.output_dir / "results"


def apply_overrides(cp: configparser.ConfigParser, overrides) -> None:
    for item in overrides or ():
        key, sep, value = item.partition("=")
        section, dot, option = key.strip().partition(".")
        if not sep or not dot or not option:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        if not cp.has_section(section):
            raise ConfigError(f"unknown config section {section!r}")
        if not cp.has_option(section, option):
            raise ConfigError(f"unknown config key {section}.{option}")
        cp.set(section, option, value.strip())


def load_config(path=None, overrides=()) -> ExperimentConfig:
    """Defaults, then the config file (if any), then ``section.key=value`` overrides."""
    cp = configparser.ConfigParser()
    cp.read_string(DEFAULT_CONFIG)
    known = {s: set(cp[s]) for s in cp.sections()}
    if path is not None:
        user = configparser.ConfigParser()
        try:
            with open(path) as fh:
                user.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        for section in user.sections():
            if section not in known:
                raise ConfigError(f"{path}: unknown section [{section}]")
            for key, value in user[section].items():
                if key not in known[section]:
                    raise ConfigError(f"{path}: unknown key {section}.{key}")
                cp.set(section, key, value)
    apply_overrides(cp, overrides)

    try:
        g, t, m = cp["generator"], cp["training"], cp["model"]
        gen = GeneratorConfig(
            seed=g.getint("seed"), n_ad=g.getint("n_ad"), n_hc=g.getint("n_hc"),
            tasks=_ints(g["tasks"]),
            samples_per_stroke=_pair(g["samples_per_stroke"]),
            strokes_per_task=_pair(g["strokes_per_task"]),
            effect=ClassEffect(g.getfloat("velocity_scale"), g.getfloat("jerk_scale"),
                               g.getfloat("pause_scale"), g.getfloat("drift")),
        )
        cells = tuple(c.strip() for c in m["cells"].split(",") if c.strip())
        enc = neural.EncoderConfig(
            cell=cells[0] if cells else "gru", hidden=m.getint("hidden"),
            bidirectional=m.getboolean("bidirectional"), dropout=m.getfloat("dropout"),
            embed_dim=m.getint("embed_dim"), layer_norm=m.getboolean("layer_norm"),
        )
        for c in cells:
            if c not in neural.GATES:
                raise ValueError(f"unknown cell {c!r}")
        tc = TrainConfig(
            epochs=t.getint("epochs"), batch_size=t.getint("batch_size"), lr=t.getfloat("lr"),
            weight_decay=t.getfloat("weight_decay"), clip=t.getfloat("clip"),
            early_stop_patience=t.getint("early_stop_patience"),
            plateau_patience=t.getint("plateau_patience"),
            standardize_windows=t.getboolean("standardize_windows"), k=t.getint("folds"),
        )
        cfg = ExperimentConfig(
            seed_base=cp["experiment"].getint("seed_base"),
            output_dir=Path(cp["experiment"]["output_dir"]),
            jobs=cp["experiment"].getint("jobs"),
            generator=gen,
            ws_grid=_ints(cp["grid"]["ws"]), stride_grid=_ints(cp["grid"]["stride"]),
            cells=cells, encoder=enc, training=tc,
            ws=t.getint("ws"), stride=t.getint("stride"),
            raw={s: dict(cp[s]) for s in cp.sections()},
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if not cfg.ws_grid or not cfg.stride_grid:
        raise ConfigError("grid.ws and grid.stride must be non-empty")
    if not cells:
        raise ConfigError("model.cells must name at least one cell")
    if min(cfg.ws_grid + cfg.stride_grid + (cfg.ws, cfg.stride)) < 1:
        raise ConfigError("window sizes and strides must be >= 1")
    if cfg.jobs < 1 or tc.epochs < 1 or tc.batch_size < 1 or tc.k < 2:
        raise ConfigError("jobs, epochs and batch_size must be >= 1 and folds >= 2")
    return cfg


# -- atomic output -------------------------------------------------------------

@contextlib.contextmanager
def atomic_path(dest: Path):
    """Yield a temporary path next to ``dest``; rename it over ``dest`` on success."""
    dest = Path(dest)
    try:
        dest.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=f".{dest.name}.", suffix=".tmp", dir=dest.parent)
    except OSError as exc:
        raise ConfigError(f"cannot write {dest}: {exc.strerror}") from None
    os.close(fd)
    try:
        yield Path(tmp)
        os.replace(tmp, dest)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def write_text(dest: Path, text: str) -> None:
    with atomic_path(dest) as tmp:
        tmp.write_text(text)


def _require(path: Path, hint: str) -> Path:
    if not path.exists():
        raise DataError(f"missing input {path} (run '{hint}' first)")
    return path


def _load_cohort(cfg: ExperimentConfig):
    subjects = read_subjects(_require(cfg.subjects_csv, "generate"))
    table = read_features(_require(cfg.features_csv, "extract"))
    known = {s.subject_id for s in subjects}
    missing = sorted({tf.subject_id for tf in table} - known)
    if missing:
        raise DataError(f"{cfg.features_csv}: subject {missing[0]} not in {cfg.subjects_csv}")
    return subjects, table


# -- verbs -----------------------------------------------------------------------

def cmd_generate(cfg: ExperimentConfig, args) -> int:
    subjects, recs = generate_cohort(cfg.generator, jobs=cfg.jobs)
    with atomic_path(cfg.subjects_csv) as tmp:
        write_subjects(subjects, tmp)
    with atomic_path(cfg.recordings_csv) as tmp:
        write_recordings(recs, tmp)
    n_strokes = sum(len(r.strokes) for r in recs)
    print(f"generated {len(subjects)} subjects ({cfg.generator.n_ad} AD, {cfg.generator.n_hc} HC), "
          f"{len(recs)} recordings, {n_strokes} strokes -> {cfg.output_dir}")
    return EXIT_OK


def cmd_extract(cfg: ExperimentConfig, args) -> int:
    path = _require(cfg.recordings_csv, "generate")
    try:
        recs = read_recordings(path)
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from None
    for rec in recs:
        bad = validate_recording(rec)
        if bad:
            raise DataError(f"{path}: subject {rec.subject_id} task {rec.task_id}: {bad[0]}")
    try:
        table = extract_all(recs, jobs=cfg.jobs)
    except (StrokeTooShort, DegenerateStroke) as exc:
        raise DataError(f"{path}: feature extraction failed: {exc}") from None
    with atomic_path(cfg.features_csv) as tmp:
        write_features(table, tmp)
    print(f"extracted {sum(len(tf.features) for tf in table)} strokes from {len(table)} recordings "
          f"-> {cfg.features_csv}")
    return EXIT_OK


def cmd_tss(cfg: ExperimentConfig, args) -> int:
    table = read_features(_require(cfg.features_csv, "extract"))
    cells, best = tss_grid_scan([tf.features for tf in table], cfg.ws_grid, cfg.stride_grid)
    with atomic_path(cfg.surface_csv) as tmp:
        write_surface(cells, tmp)
    for c in cells:
        print(f"stride={c.stride:<3d} window={c.window:<4d} D={c.d_s:.4f} A={c.a:.4f} "
              f"R={c.r:.4f} E={c.e:.4f} TSS={c.tss:.4f}")
    print(f"argmax: window={best.window} stride={best.stride} tss={best.tss:.4f}")
    return EXIT_OK


def run_name(cell: str, ws: int, stride: int) -> str:
    return f"{cell}_ws{ws}_s{stride}"


def _write_log(path: Path, rows) -> None:
    with atomic_path(path) as tmp:
        with open(tmp, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(LOG_HEADER)
            for step, split, loss, f1, lr, gnorm in rows:
                w.writerow([step, split, repr(float(loss)), repr(float(f1)), repr(float(lr)), repr(float(gnorm))])


def _extra(cfg: ExperimentConfig, enc: neural.EncoderConfig) -> dict:
    return {"family": "recurrent", "seed_base": cfg.seed_base,
            "encoder": asdict(enc), "training": asdict(cfg.training)}


def cmd_train(cfg: ExperimentConfig, args) -> int:
    subjects, table = _load_cohort(cfg)
    ws = args.ws or cfg.ws
    stride = args.stride or cfg.stride
    cells = cfg.cells if args.model in (None, "all") else (args.model,)
    for cell in cells:
        enc = cfg.encoder_for(cell)
        name = run_name(cell, ws, stride)
        results = run_cv(table, subjects, enc, cfg.training, ws, stride, cfg.seed_base, jobs=cfg.jobs)
        for r in results:
            _write_log(cfg.output_dir / "logs" / f"{name}_fold{r.fold}.csv", r.log_rows)
            with atomic_path(cfg.output_dir / "checkpoints" / f"{name}_fold{r.fold}.snck") as tmp:
                neural.save_checkpoint(tmp, enc, r.params)
        res = cv_results(cell, results, ws, stride)
        res.update(_extra(cfg, enc))
        out = cfg.results_dir / f"{name}.json"
        write_text(out, dump_results(res))
        print(format_table([res]))
        print(f"-> {out}")
    return EXIT_OK


def cmd_evaluate(cfg: ExperimentConfig, args) -> int:
    """Re-score saved fold checkpoints on their test folds; output must equal the training results."""
    subjects, table = _load_cohort(cfg)
    ws = args.ws or cfg.ws
    stride = args.stride or cfg.stride
    cells = cfg.cells if args.model in (None, "all") else (args.model,)
    by_id = {s.subject_id: s for s in subjects}
    folds = stratified_subject_folds(subjects, cfg.training.k, cfg.seed_base)
    for cell in cells:
        name = run_name(cell, ws, stride)
        per_fold = []
        enc = None
        for f in folds:
            ck = _require(cfg.output_dir / "checkpoints" / f"{name}_fold{f.fold}.snck", "train")
            try:
                enc, params = neural.load_checkpoint(ck)
            except (ValueError, KeyError) as exc:
                raise DataError(f"{ck}: {exc}") from None
            per_fold.append(evaluate_fold(f, params, table, by_id, enc, ws, stride,
                                          cfg.training.standardize_windows))
        res = results_dict(cell, ws, stride, aggregate_folds([r.subject_metrics for r in per_fold]),
                           aggregate_folds([r.window_metrics for r in per_fold]), _extra(cfg, enc))
        out = cfg.output_dir / "evaluation" / f"{name}.json"
        write_text(out, dump_results(res))
        print(format_table([res]))
        print(f"-> {out}")
    return EXIT_OK


def cmd_ensemble(cfg: ExperimentConfig, args) -> int:
    subjects, table = _load_cohort(cfg)
    strategies = STRATEGIES if args.strategy in (None, "all") else (args.strategy,)
    results = run_ensemble_cv(table, subjects, cfg.seed_base, cfg.training.k)
    rows = []
    for s in strategies:
        res = ensemble_results(results, s)
        res.update({"family": "ensemble", "seed_base": cfg.seed_base})
        write_text(cfg.results_dir / f"ensemble_{s}.json", dump_results(res))
        rows.append(res)
    print(format_table(rows))
    return EXIT_OK


def _fmt_cell(res: dict, metric: str) -> str:
    mean, std = res["mean"][metric], res["std"][metric]
    if mean is None:
        return "n/a"
    return f"{mean:.2f} ({std:.2f})"


def format_table(rows) -> str:
    head = ["model", "ws", "stride"] + list(METRICS)
    body = [[str(r["model"]), "-" if r.get("ws") is None else str(r["ws"]),
             "-" if r.get("stride") is None else str(r["stride"])] + [_fmt_cell(r, m) for m in METRICS]
            for r in rows]
    widths = [max(len(x) for x in col) for col in zip(head, *body)]
    line = lambda cells: "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()
    return "\n".join([line(head)] + [line(b) for b in body])


def _family(res: dict) -> str:
    if "family" in res:
        return res["family"]
    return "ensemble" if res["model"] in STRATEGIES else "recurrent"


def sort_by_accuracy(rows):
    """Descending mean accuracy; ties keep input order (sorted() is stable)."""
    def key(r):
        acc = r["mean"]["accuracy"]
        return -(acc if acc is not None else -np.inf)
    return sorted(rows, key=key)


def ensemble_advantage(rows) -> float | None:
    """Best ensemble mean accuracy minus best recurrent mean accuracy (None if a family is missing)."""
    best = {}
    for r in rows:
        acc = r["mean"]["accuracy"]
        if acc is not None:
            fam = _family(r)
            best[fam] = max(best.get(fam, -np.inf), acc)
    if "ensemble" not in best or "recurrent" not in best:
        return None
    return best["ensemble"] - best["recurrent"]


def cmd_compare(cfg: ExperimentConfig, args) -> int:
    paths = args.results or sorted(glob.glob(str(cfg.results_dir / "*.json")))
    if len(paths) < 2:
        raise UsageError(f"compare needs >= 2 results files, found {len(paths)}")
    rows = []
    for p in paths:
        try:
            rows.append(load_results(p))
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"{p}: {exc}") from None
        except ValueError as exc:
            raise DataError(str(exc)) from None
    rows = sort_by_accuracy(rows)
    table = format_table(rows)
    adv = ensemble_advantage(rows)
    summary = {"schema": RESULTS_SCHEMA,
               "rows": [{"model": r["model"], "family": _family(r), "ws": r.get("ws"), "stride": r.get("stride"),
                         "mean": r["mean"], "std": r["std"]} for r in rows],
               "ensemble_advantage": adv}
    write_text(cfg.output_dir / "comparison.txt", table + "\n")
    write_text(cfg.output_dir / "comparison.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(table)
    if adv is not None:
        print(f"ensemble advantage over recurrent models: {adv:+.2f} accuracy points")
    return EXIT_OK


def cmd_report(cfg: ExperimentConfig, args) -> int:
    try:
        res = load_results(args.result)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"{args.result}: {exc}") from None
    except ValueError as exc:
        raise DataError(str(exc)) from None
    report = report_from_results(res)
    print(format_table([res]))
    for i, f in enumerate(report.per_fold):
        print(f"  fold {i}: " + "  ".join(f"{m}={f[m]:.2f}" for m in METRICS))
    if args.output:
        extra = {k: v for k, v in res.items() if k not in ("schema", "model", "ws", "stride", "per_fold", "mean",
                                                            "std", "window_level")}
        wl = report_from_results(res["window_level"]) if "window_level" in res else None
        write_text(Path(args.output), dump_results(results_dict(res["model"], res["ws"], res["stride"],
                                                                report, wl, extra)))
    return EXIT_OK


# -- entry point -------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", help="INI config file (defaults are used for missing keys)")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config key; repeatable")
    common.add_argument("--jobs", type=int, help="worker processes (overrides experiment.jobs)")
    common.add_argument("-o", "--output-dir", help="artifact directory (overrides experiment.output_dir)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="strokenet", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="verb", required=True, parser_class=_Parser)
    sub.add_parser("generate", parents=[common], help="write a synthetic cohort")
    sub.add_parser("extract", parents=[common], help="per-stroke kinematic features")
    sub.add_parser("tss", parents=[common], help="window/stride stability surface")
    for verb, helptext in (("train", "5-fold training of recurrent models"),
                           ("evaluate", "re-score saved checkpoints")):
        sp = sub.add_parser(verb, parents=[common], help=helptext)
        sp.add_argument("--model", choices=sorted(neural.GATES) + ["all"], help="cell type (default: model.cells)")
        sp.add_argument("--ws", type=int, help="window size (default: training.ws)")
        sp.add_argument("--stride", type=int, help="stride (default: training.stride)")
    sp = sub.add_parser("ensemble", parents=[common], help="stroke-level ensembles")
    sp.add_argument("--strategy", choices=list(STRATEGIES) + ["all"])
    sp = sub.add_parser("compare", parents=[common], help="merge results files into one table")
    sp.add_argument("results", nargs="*", help="results JSON files (default: every file in <output>/results)")
    sp = sub.add_parser("report", parents=[common], help="print one results file")
    sp.add_argument("result")
    sp.add_argument("--output", help="re-emit the parsed results JSON here")
    return p


COMMANDS = {"generate": cmd_generate, "extract": cmd_extract, "tss": cmd_tss, "train": cmd_train,
            "evaluate": cmd_evaluate, "ensemble": cmd_ensemble, "compare": cmd_compare, "report": cmd_report}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = list(args.overrides)
    if args.jobs is not None:
        overrides.append(f"experiment.jobs={args.jobs}")
    if args.output_dir is not None:
        overrides.append(f"experiment.output_dir={args.output_dir}")
    try:
        cfg = load_config(args.config, overrides)
        return COMMANDS[args.verb](cfg, args)
    except (ConfigError, UsageError) as exc:
        print(f"strokenet: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"strokenet: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalFailure, FloatingPointError) as exc:
        print(f"strokenet: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:  # e.g. too few subjects per class for the fold count
        print(f"strokenet: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"strokenet: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
