"""Command-line entry point.

Datasets are directories of NRRD files named by volume id:
``<id>_image.nrrd`` (intensities), ``<id>_label.nrrd`` (reference mask),
``<id>_rater<k>.nrrd`` (rater masks for STAPLE) and ``<id>_pred.nrrd``
(network predictions). Every run writes ``<command>_manifest.json`` next
to its outputs with the effective config, seed, tool version and SHA-256
digests of every input and output file.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import re
import shutil
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from . import config as C
from .augment import augment_pair
from .metrics import MetricRecord, evaluate
from .nets import (TrainingDiverged, build, freeze_prefix, grid_search, load_checkpoint, predict,
                   save_checkpoint, train)
from .nrrd import NrrdError, read_nrrd, write_nrrd
from .preprocess import preprocess_label, preprocess_volume
from .report import emit_table, read_records
from .staple import RaterPerformance, consensus, simulate_raters, staple_em
from .synth import (make_airway_phantom, make_lunglike_phantom, random_airway_spec,
                    random_lung_spec)
from .volume import LabelMap, RaterStack, Volume, VolumeError

OUT_ENV = "VTSEG_OUT"
DEFAULT_OUT = "vtseg-out"

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_MISSING_INPUT = 4
EXIT_BAD_INPUT = 5
EXIT_DIVERGED = 6

COMMANDS = ("synth", "preprocess", "augment", "staple", "train", "predict", "eval",
            "gridsearch", "report")

EPILOG = f"""\
exit codes:
  {EXIT_OK}  success
  {EXIT_ERROR}  unexpected internal error
  {EXIT_USAGE}  usage error (unknown subcommand or flag)
  {EXIT_CONFIG}  invalid config (unknown key, bad value)
  {EXIT_MISSING_INPUT}  missing input file or directory
  {EXIT_BAD_INPUT}  unreadable or inconsistent input data
  {EXIT_DIVERGED}  training produced a non-finite loss

The default output directory is ${OUT_ENV}, or ./{DEFAULT_OUT} when unset.
"""


class MissingInput(Exception):
    pass


class BadInput(Exception):
    pass


# -- files -----------------------------------------------------------------

def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _natural(s: str):
    return [(0, int(t), "") if t.isdigit() else (1, 0, t) for t in re.split(r"(\d+)", s) if t]


def _need_dir(path) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise MissingInput(f"input directory not found: {p}")
    return p


def _need_file(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise MissingInput(f"input file not found: {p}")
    return p


def scan(directory, suffix: str) -> list[str]:
    """Volume ids with a ``<id><suffix>`` file, in natural order."""
    d = _need_dir(directory)
    ids = [p.name[: -len(suffix)] for p in d.iterdir() if p.name.endswith(suffix)]
    return sorted(ids, key=_natural)


def _read(path):
    try:
        return read_nrrd(path)
    except FileNotFoundError:
        raise MissingInput(f"input file not found: {path}") from None
    except (NrrdError, VolumeError) as exc:
        raise BadInput(f"{path}: {exc}") from None


def _read_label(path) -> LabelMap:
    g = _read(path)
    if not isinstance(g, LabelMap):
        raise BadInput(f"{path}: not a binary label map")
    return g


def _read_image(path) -> Volume:
    g = _read(path)
    if isinstance(g, LabelMap):
        g = Volume(g.meta, g.data.astype(np.float64))
    return g


def load_pairs(directory, need_labels: bool = True):
    d = _need_dir(directory)
    ids = scan(d, "_image.nrrd")
    if not ids:
        raise MissingInput(f"no *_image.nrrd files in {d}")
    pairs = []
    for vid in ids:
        label_path = d / f"{vid}_label.nrrd"
        if need_labels and not label_path.is_file():
            raise MissingInput(f"missing label for {vid}: {label_path}")
        lab = _read_label(label_path) if label_path.is_file() else None
        pairs.append((vid, _read_image(d / f"{vid}_image.nrrd"), lab))
    return pairs


def pmap(fn, items, jobs: int):
    """Order-preserving map, optionally over worker processes."""
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


# -- manifest --------------------------------------------------------------

class Run:
    def __init__(self, command: str, cfg: dict, out: Path):
        self.command = command
        self.cfg = cfg
        self.out = out
        self.inputs: list[Path] = []
        self.outputs: list[Path] = []

    @property
    def seed(self) -> int:
        return int(self.cfg["run"]["seed"])

    @property
    def jobs(self) -> int:
        return max(1, int(self.cfg["run"]["jobs"]))

    def add_inputs(self, directory, names):
        self.inputs.extend(Path(directory) / n for n in names)

    def add_outputs(self, names):
        self.outputs.extend(self.out / n for n in names)

    def write_manifest(self) -> Path:
        snapshot = json.loads(json.dumps(self.cfg))
        snapshot["run"].pop("jobs", None)  # parallelism does not affect outputs
        doc = {
            "tool": "vtseg",
            "version": __version__,
            "command": self.command,
            "seed": self.seed,
            "config": snapshot,
            "hash": "sha256",
            "inputs": [{"path": str(p), "sha256": sha256(p)} for p in sorted(set(self.inputs))],
            "outputs": [{"path": p.name, "sha256": sha256(p)}
                        for p in sorted(set(self.outputs))],
        }
        path = self.out / f"{self.command}_manifest.json"
        path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
        return path


def _derived_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1, np.uint64)[0])


# -- subcommands -----------------------------------------------------------

def _synth_one(args):
    i, vid, sc, seed, out = args
    s = _derived_seed(seed, i)
    if sc["kind"] == "airway":
        spec = random_airway_spec(sc["dims"], s, sc["noise_sigma"])
        vol, lab = make_airway_phantom(spec)
    else:
        spec = random_lung_spec(sc["dims"], s, sc["noise_sigma"])
        vol, lab = make_lunglike_phantom(spec)
    names = [f"{vid}_image.nrrd", f"{vid}_label.nrrd"]
    write_nrrd(vol, Path(out) / names[0])
    write_nrrd(lab, Path(out) / names[1])
    if sc["raters"]:
        stack = simulate_raters(lab, [tuple(r) for r in sc["raters"]], _derived_seed(s, 1), vid)
        for k, r in enumerate(stack.raters, start=1):
            names.append(f"{vid}_rater{k}.nrrd")
            write_nrrd(r, Path(out) / names[-1])
    return names, {"volume_id": vid, "spec": asdict(spec)}


def cmd_synth(run: Run, args) -> None:
    sc = run.cfg["synth"]
    if sc["kind"] not in ("airway", "lung"):
        raise C.ConfigError("synth.kind must be 'airway' or 'lung'")
    if sc["count"] < 1:
        raise C.ConfigError("synth.count must be >= 1")
    if len(sc["dims"]) != 3:
        raise C.ConfigError("synth.dims must have 3 entries")
    if sc["raters"] and (len(sc["raters"]) < 2 or any(len(r) != 2 for r in sc["raters"])):
        raise C.ConfigError("synth.raters must list at least two [sensitivity, specificity] pairs")
    width = max(2, len(str(sc["count"])))
    prefix = "phantom" if sc["kind"] == "airway" else "lung"
    jobs = [(i, f"{prefix}{i + 1:0{width}d}", sc, run.seed, str(run.out))
            for i in range(sc["count"])]
    specs = []
    for names, spec in pmap(_synth_one, jobs, run.jobs):
        run.add_outputs(names)
        specs.append(spec)
    (run.out / "synth_specs.json").write_text(json.dumps(specs, indent=1, sort_keys=True) + "\n")
    run.add_outputs(["synth_specs.json"])


def _preprocess_one(args):
    vid, src, pcfg, out = args
    names = [f"{vid}_image.nrrd"]
    write_nrrd(preprocess_volume(_read_image(Path(src) / names[0]), pcfg), Path(out) / names[0])
    lab_path = Path(src) / f"{vid}_label.nrrd"
    if lab_path.is_file():
        names.append(lab_path.name)
        write_nrrd(preprocess_label(_read(lab_path), pcfg), Path(out) / lab_path.name)
    return names


def cmd_preprocess(run: Run, args) -> None:
    pcfg = C.preprocess_config(run.cfg)
    ids = scan(args.input, "_image.nrrd")
    if not ids:
        raise MissingInput(f"no *_image.nrrd files in {args.input}")
    for names in pmap(_preprocess_one, [(v, args.input, pcfg, str(run.out)) for v in ids],
                      run.jobs):
        run.add_inputs(args.input, names)
        run.add_outputs(names)


def _augment_one(args):
    index, vid, src, spec, out = args
    pair = (_read_image(Path(src) / f"{vid}_image.nrrd"), _read_label(Path(src) / f"{vid}_label.nrrd"))
    names, params = [], []
    for a in augment_pair(pair, index, spec):
        aid = f"{vid}-{a.kind}"
        write_nrrd(a.volume, Path(out) / f"{aid}_image.nrrd")
        write_nrrd(a.label, Path(out) / f"{aid}_label.nrrd")
        names += [f"{aid}_image.nrrd", f"{aid}_label.nrrd"]
        params.append({"volume_id": aid, "source": vid, "kind": a.kind, "params": a.params})
    return names, params


def cmd_augment(run: Run, args) -> None:
    spec = C.augment_spec(run.cfg)
    ids = scan(args.input, "_image.nrrd")
    if not ids:
        raise MissingInput(f"no *_image.nrrd files in {args.input}")
    for vid in ids:
        _need_file(Path(args.input) / f"{vid}_label.nrrd")
    log = []
    work = [(i, v, args.input, spec, str(run.out)) for i, v in enumerate(ids)]
    for vid, (names, params) in zip(ids, pmap(_augment_one, work, run.jobs)):
        run.add_inputs(args.input, [f"{vid}_image.nrrd", f"{vid}_label.nrrd"])
        run.add_outputs(names)
        log.extend(params)
    (run.out / "augment_params.json").write_text(json.dumps(log, indent=1, sort_keys=True) + "\n")
    run.add_outputs(["augment_params.json"])


def _rater_files(directory, vid):
    pat = re.compile(re.escape(vid) + r"_rater(\d+)\.nrrd$")
    found = [(int(m.group(1)), p.name) for p in Path(directory).iterdir()
             if (m := pat.match(p.name))]
    return [name for _, name in sorted(found)]


def _staple_one(args):
    vid, src, sc, out = args
    names = _rater_files(src, vid)
    stack = RaterStack(vid, tuple(_read_label(Path(src) / n) for n in names))
    res = staple_em(stack, RaterPerformance(sc["init_sensitivity"], sc["init_specificity"]),
                    tol=sc["tol"], max_iter=sc["max_iter"])
    write_nrrd(consensus(res, sc["threshold"]), Path(out) / f"{vid}_label.nrrd")
    write_nrrd(Volume(res.meta, res.weights.astype(np.float32)), Path(out) / f"{vid}_weights.nrrd")
    outputs = [f"{vid}_label.nrrd", f"{vid}_weights.nrrd"]
    image = Path(src) / f"{vid}_image.nrrd"
    if image.is_file():
        shutil.copyfile(image, Path(out) / image.name)
        outputs.append(image.name)
    summary = {"volume_id": vid, "raters": names, "iterations": res.iterations,
               "converged": res.converged, "prior": res.prior,
               "sensitivity": [p.sensitivity for p in res.performances],
               "specificity": [p.specificity for p in res.performances]}
    return names + ([image.name] if image.is_file() else []), outputs, summary


def cmd_staple(run: Run, args) -> None:
    sc = run.cfg["staple"]
    if not 0 < sc["threshold"] < 1:
        raise C.ConfigError("staple.threshold must be in (0, 1)")
    ids = sorted({n.split("_rater")[0] for n in scan(args.input, ".nrrd") if "_rater" in n},
                 key=_natural)
    if not ids:
        raise MissingInput(f"no *_rater<k>.nrrd files in {args.input}")
    summaries = []
    for ins, outs, summary in pmap(_staple_one, [(v, args.input, sc, str(run.out)) for v in ids],
                                   run.jobs):
        run.add_inputs(args.input, ins)
        run.add_outputs(outs)
        summaries.append(summary)
    (run.out / "staple.json").write_text(json.dumps(summaries, indent=1, sort_keys=True) + "\n")
    run.add_outputs(["staple.json"])


def _input_names(vid, has_label=True):
    return [f"{vid}_image.nrrd"] + ([f"{vid}_label.nrrd"] if has_label else [])


def _initial_state(run: Run, path_key: str, freeze: int):
    path = run.cfg["train"][path_key] if path_key else ""
    if path:
        state, _ = load_checkpoint(_need_file(path))
        run.inputs.append(Path(path))
        state.adam_m, state.adam_v, state.step = {}, {}, 0
    else:
        state = build(C.net_config(run.cfg))
    if freeze:
        if not 0 <= freeze <= state.layer_count:
            raise C.ConfigError(f"train.freeze_layers must be in [0, {state.layer_count}]")
        state = freeze_prefix(state, freeze)
    return state


def cmd_train(run: Run, args) -> None:
    tc = C.train_config(run.cfg)
    pairs = load_pairs(args.input)
    for vid, _, _ in pairs:
        run.add_inputs(args.input, _input_names(vid))
    state = _initial_state(run, "init_checkpoint", int(run.cfg["train"]["freeze_layers"]))
    try:
        state, history = train(state, [(v, lab) for _, v, lab in pairs], tc)
    except ValueError as exc:
        raise BadInput(str(exc)) from None
    provenance = {"seed": run.seed, "train": asdict(tc),
                  "inputs": {str(p): sha256(p) for p in sorted(set(run.inputs))}}
    save_checkpoint(state, run.out / "checkpoint.zip", provenance)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", "loss"])
    w.writerows([i + 1, repr(loss)] for i, loss in enumerate(history))
    (run.out / "history.csv").write_text(buf.getvalue())
    run.add_outputs(["checkpoint.zip", "history.csv"])
    print(f"trained {len(history)} steps, final loss {history[-1]:.6f}")


def _predict_one(args):
    vid, src, ckpt, threshold, out = args
    state, _ = load_checkpoint(ckpt)
    try:
        pred = predict(state, _read_image(Path(src) / f"{vid}_image.nrrd"), threshold)
    except ValueError as exc:
        raise BadInput(f"{vid}: {exc}") from None
    write_nrrd(pred, Path(out) / f"{vid}_pred.nrrd")
    return f"{vid}_pred.nrrd"


def cmd_predict(run: Run, args) -> None:
    if not args.checkpoint:
        raise MissingInput("predict needs --checkpoint")
    ckpt = _need_file(args.checkpoint)
    run.inputs.append(ckpt)
    ids = scan(args.input, "_image.nrrd")
    if not ids:
        raise MissingInput(f"no *_image.nrrd files in {args.input}")
    th = run.cfg["predict"]["threshold"]
    names = pmap(_predict_one, [(v, args.input, str(ckpt), th, str(run.out)) for v in ids],
                 run.jobs)
    run.add_inputs(args.input, [f"{v}_image.nrrd" for v in ids])
    run.add_outputs(names)


def _eval_one(args):
    vid, pred_dir, ref_dir, ec = args
    pred = _read_label(Path(pred_dir) / f"{vid}_pred.nrrd")
    ref = _read_label(Path(ref_dir) / f"{vid}_label.nrrd")
    try:
        return evaluate(pred, ref, vid, ec["task_label"], ec["model"],
                        window_sigma=ec["ssim_sigma"], window_radius=ec["ssim_radius"])
    except VolumeError as exc:
        raise BadInput(f"{vid}: {exc}") from None


def cmd_eval(run: Run, args) -> None:
    if not args.pred:
        raise MissingInput("eval needs --pred DIR")
    ec = run.cfg["eval"]
    ids = scan(args.pred, "_pred.nrrd")
    if not ids:
        raise MissingInput(f"no *_pred.nrrd files in {args.pred}")
    for vid in ids:
        _need_file(Path(args.input) / f"{vid}_label.nrrd")
    records = pmap(_eval_one, [(v, args.pred, args.input, ec) for v in ids], run.jobs)
    run.add_inputs(args.pred, [f"{v}_pred.nrrd" for v in ids])
    run.add_inputs(args.input, [f"{v}_label.nrrd" for v in ids])
    (run.out / "metrics.csv").write_text(emit_table(None, records, "csv"))
    run.add_outputs(["metrics.csv"])


REPORT_EXT = {"markdown": "md", "csv": "csv", "json": "json"}


def cmd_report(run: Run, args) -> None:
    fmt = run.cfg["run"]["format"]
    if fmt not in REPORT_EXT:
        raise C.ConfigError(f"run.format must be one of {tuple(REPORT_EXT)}")
    paths = args.results or []
    if not paths:
        raise MissingInput("report needs at least one --results FILE")
    records: list[MetricRecord] = []
    for p in paths:
        try:
            records.extend(read_records(_need_file(p)))
        except (ValueError, KeyError) as exc:
            raise BadInput(f"{p}: {exc}") from None
        run.inputs.append(Path(p))
    text = emit_table(None, records, fmt)
    name = f"report.{REPORT_EXT[fmt]}"
    (run.out / name).write_text(text)
    run.add_outputs([name])
    sys.stdout.write(text)


def cmd_gridsearch(run: Run, args) -> None:
    if not args.val:
        raise MissingInput("gridsearch needs --val DIR")
    gs = run.cfg["gridsearch"]
    keys = ("epochs", "steps_per_epoch", "learning_rate", "dropout_rate", "frozen_layers")
    grids = {k: gs[k] for k in keys}
    pretrained = None
    if gs["pretrained"]:
        pretrained, _ = load_checkpoint(_need_file(gs["pretrained"]))
        pretrained.adam_m, pretrained.adam_v, pretrained.step = {}, {}, 0
        run.inputs.append(Path(gs["pretrained"]))
    else:
        grids.pop("frozen_layers")
    if any(not v for v in grids.values()):
        raise C.ConfigError("gridsearch lists must be non-empty")
    if any(not 0 <= d < 1 for d in grids["dropout_rate"]):
        raise C.ConfigError("gridsearch.dropout_rate values must be in [0, 1)")
    if any(lr < 0 for lr in grids["learning_rate"]):
        raise C.ConfigError("gridsearch.learning_rate values must be >= 0")
    train_pairs = load_pairs(args.input)
    val_pairs = load_pairs(args.val)
    for vid, _, _ in train_pairs:
        run.add_inputs(args.input, _input_names(vid))
    for vid, _, _ in val_pairs:
        run.add_inputs(args.val, _input_names(vid))
    cfg = pretrained.config if pretrained is not None else C.net_config(run.cfg)
    results = grid_search(grids, [(v, lab) for _, v, lab in train_pairs],
                          [(v, lab) for _, v, lab in val_pairs], int(gs["budget"]), cfg,
                          pretrained=pretrained, max_steps=int(gs["max_steps"]), seed=run.seed)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = list(grids)
    w.writerow(["rank", "cell"] + cols + ["train_steps", "val_dice", "final_loss"])
    for r in results:
        w.writerow([r.rank, r.cell] + [repr(r.params[k]) for k in cols]
                   + [r.train_steps, repr(r.val_dice), repr(r.final_loss)])
    (run.out / "gridsearch.csv").write_text(buf.getvalue())
    run.add_outputs(["gridsearch.csv"])
    print(f"evaluated {len(results)} cells; best val Dice {results[0].val_dice:.4f} "
          f"with {results[0].params}")


HANDLERS = {"synth": cmd_synth, "preprocess": cmd_preprocess, "augment": cmd_augment,
            "staple": cmd_staple, "train": cmd_train, "predict": cmd_predict, "eval": cmd_eval,
            "gridsearch": cmd_gridsearch, "report": cmd_report}

HELP = {
    "synth": "generate airway or lung-like phantoms (optionally with simulated raters)",
    "preprocess": "clamp, diffuse, crop and resample image/label pairs",
    "augment": "write original, noised, flipped and rotated copies of each pair",
    "staple": "fuse <id>_rater<k>.nrrd masks into a consensus label",
    "train": "train a network on image/label pairs and write checkpoint.zip",
    "predict": "segment every <id>_image.nrrd with a checkpoint",
    "eval": "score <id>_pred.nrrd against <id>_label.nrrd (Dice, HD, SSIM)",
    "gridsearch": "hyperparameter grid search ranked by validation Dice",
    "report": "aggregate metrics files into a mean ± std report per model and metric",
}

NEEDS_INPUT = {"preprocess", "augment", "staple", "train", "predict", "eval", "gridsearch"}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="TOML run config")
    common.add_argument("--set", metavar="TABLE.KEY=VALUE", action="append", default=[],
                        help="override one config value (repeatable)")
    common.add_argument("--seed", type=int, help="global seed (overrides run.seed)")
    common.add_argument("--jobs", type=int, help="worker processes; outputs do not depend on it")
    common.add_argument("--out", metavar="DIR", help=f"output directory (default ${OUT_ENV})")
    common.add_argument("--format", choices=("csv", "json", "markdown"),
                        help="report format (overrides run.format)")
    common.add_argument("--print-config", action="store_true",
                        help="print the effective config with all defaults and exit")

    parser = argparse.ArgumentParser(
        prog="vtseg", description="Vocal-tract segmentation toolkit.", epilog=EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=f"vtseg {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(COMMANDS) + "}")
    sub.required = True
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common], help=HELP[name], description=HELP[name],
                           epilog=EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
        if name in NEEDS_INPUT:
            p.add_argument("--input", "-i", metavar="DIR",
                           help="input dataset directory" + (" (references)" if name == "eval"
                                                             else ""))
        if name == "predict":
            p.add_argument("--checkpoint", metavar="PATH", help="checkpoint.zip from train")
        if name == "eval":
            p.add_argument("--pred", metavar="DIR", help="directory of <id>_pred.nrrd files")
        if name == "gridsearch":
            p.add_argument("--val", metavar="DIR", help="validation dataset directory")
        if name == "report":
            p.add_argument("--results", metavar="FILE", action="append",
                           help="metrics CSV/JSON file (repeatable)")
    return parser


def effective_config(args) -> dict:
    cfg = C.load(_need_file(args.config)) if args.config else C.defaults()
    for item in args.set:
        cfg = C.merge(cfg, C.parse_override(item), origin="--set")
    if args.seed is not None:
        cfg["run"]["seed"] = args.seed
    if args.jobs is not None:
        if args.jobs < 1:
            raise C.ConfigError("--jobs must be >= 1")
        cfg["run"]["jobs"] = args.jobs
    if args.format is not None:
        cfg["run"]["format"] = args.format
    if cfg["run"]["seed"] < 0:
        raise C.ConfigError("run.seed must be >= 0")
    return cfg


def _check_not_input(out: Path, args):
    for attr in ("input", "pred", "val"):
        d = getattr(args, attr, None)
        if d and Path(d).resolve() == out.resolve():
            raise C.ConfigError(f"--out must differ from --{attr} (inputs are never modified)")


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        cfg = effective_config(args)
        if args.print_config:
            sys.stdout.write(C.dumps(cfg))
            return EXIT_OK
        if args.command in NEEDS_INPUT and not args.input:
            raise MissingInput(f"{args.command} needs --input DIR")
        out = Path(args.out or os.environ.get(OUT_ENV) or DEFAULT_OUT)
        _check_not_input(out, args)
        out.mkdir(parents=True, exist_ok=True)
        run = Run(args.command, cfg, out)
        HANDLERS[args.command](run, args)
        manifest = run.write_manifest()
        print(f"wrote {len(run.outputs)} file(s) to {out} (manifest {manifest.name})")
        return EXIT_OK
    except C.ConfigError as exc:
        print(f"vtseg: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingInput as exc:
        print(f"vtseg: missing input: {exc}", file=sys.stderr)
        return EXIT_MISSING_INPUT
    except BadInput as exc:
        print(f"vtseg: bad input: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except TrainingDiverged as exc:
        print(f"vtseg: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
