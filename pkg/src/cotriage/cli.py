"""Command-line pipeline: synth, harvest, extract-features, train, calibrate,
route, evaluate, bootstrap, report.

Stages talk to each other only through files with versioned schema headers, so
any stage can be re-run in isolation. Every run that produces files also
writes a single <subcommand>.manifest.json beside them recording the resolved
options, the input and output paths, the schema versions and a wall-clock
stamp; reruns with the same seed produce byte-identical outputs, the manifest
timestamp aside.

Option resolution order: built-in defaults, then the --config file (a flat
``key = value`` document; booleans, numbers and quoted strings are coerced),
then explicit command-line flags.
"""

from __future__ import annotations

import argparse
import datetime
import json
import subprocess
import sys
from pathlib import Path

from . import __version__
from .calibration import profile_to_csv, select_threshold, sweep, write_selection_summary
from .errors import AlignmentError, CapabilityError, CotriageError, EmptyDataset, HarvestError
from .evaluation import (
    OUTCOMES_SCHEMA,
    build_calibration_items,
    paired_bootstrap,
    read_outcomes,
    route_outcomes,
    summarize,
    write_outcomes,
    write_report,
)
from .features import (
    FEATURES_SCHEMA,
    LABELS_SCHEMA,
    LAYOUTS_SCHEMA,
    FeatureConfig,
    assemble,
    read_features,
    read_labels,
    write_features,
    write_labels,
    write_layout_registry,
)
from .harvest import EndpointClient, EndpointConfig, harvest_dataset
from .model import ModelConfig, load_checkpoint, save_checkpoint
from .synth import SynthConfig, generate
from .trajectory import (
    QUESTIONS_SCHEMA,
    TRAJ_SCHEMA,
    load_questions,
    read_trajectories,
    write_questions,
    write_trajectories,
)
from .training import TrainConfig, score_features, train, write_training_log
from .voting import PATHS_SCHEMA, read_paths, write_paths

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_ENDPOINT = 3

SPLITS = ("train", "val", "test")


class UsageError(Exception):
    """Bad invocation: missing required option, unknown config key, and so on."""


# --- config files -----------------------------------------------------------


def _coerce(raw: str):
    if len(raw) >= 2 and raw[0] == '"' and raw[-1] == '"':
        return raw[1:-1]
    low = raw.lower()
    if low == "true":
        return True
    if low == "false":
        return False
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        pass
    return raw


def parse_config_text(text: str) -> dict:
    """Flat key = value document; # starts a comment, quotes protect strings."""
    out: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("["):
            raise UsageError(f"config line {lineno}: sections are not supported, use flat keys")
        if "=" not in line:
            raise UsageError(f"config line {lineno}: expected key = value")
        key, _, value = line.partition("=")
        value = value.strip()
        if not value.startswith('"') and "#" in value:
            value = value.split("#", 1)[0].strip()
        out[key.strip().replace("-", "_")] = _coerce(value)
    return out


def load_config(path: str) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from exc
    return parse_config_text(text)


# --- option tables ----------------------------------------------------------

_COMMON = {"seed": 0, "config": None}

DEFAULTS: dict[str, dict] = {
    "synth": {
        **_COMMON,
        "out": None,
        "n_train": 500,
        "n_val": 200,
        "n_test": 500,
        "beta": 1.0,
        "choices": 4,
        "base_rate": 0.8,
        "samples": 10,
        "t_min": 3,
        "t_max": 12,
    },
    "harvest": {
        **_COMMON,
        "questions": None,
        "out": None,
        "split": "train",
        "base_url": None,
        "model": None,
        "template": "mc-cot/1",
        "n_samples": 10,
        "temperature": 1.0,
        "max_new_tokens": 1024,
        "cache_dir": None,
        "api_key_env": "COTRIAGE_API_KEY",
        "timeout": 120.0,
        "max_in_flight": 4,
        "max_retries": 3,
        "backoff": 0.5,
        "no_paths": False,
    },
    "extract-features": {**_COMMON, "in_dir": None, "out": None, "subset": "full"},
    "train": {
        **_COMMON,
        "in_dir": None,
        "out": None,
        "hidden": 64,
        "heads": 4,
        "head_hidden": 32,
        "no_feature_gate": False,
        "no_mhsa": False,
        "lr": 1e-3,
        "batch_size": 64,
        "max_epochs": 100,
        "patience": 10,
        "loss_variant": "final",
        "aux_weight": 0.5,
        "no_class_weights": False,
    },
    "calibrate": {
        **_COMMON,
        "data": None,
        "features": None,
        "model": None,
        "out": None,
        "split": "val",
        "method": "sc",
        "budget": 10,
        "votes_needed": None,
        "include_greedy_vote": False,
        "max_rel_drop": 0.005,
        "no_sunk_greedy": False,
    },
    "route": {
        **_COMMON,
        "data": None,
        "features": None,
        "model": None,
        "out": None,
        "split": "test",
        "method": "sc",
        "budget": 10,
        "votes_needed": None,
        "include_greedy_vote": False,
        "no_sunk_greedy": False,
        "tau": None,
        "selection": None,
    },
    "evaluate": {**_COMMON, "outcomes": None, "out": None},
    "bootstrap": {
        **_COMMON,
        "a": None,
        "b": None,
        "resamples": 2000,
        "method": "sign-flip",
        "out": None,
    },
    "report": {**_COMMON, "in_dir": None, "out": None, "resamples": 2000},
}

REQUIRED: dict[str, tuple[str, ...]] = {
    "synth": ("out",),
    "harvest": ("questions", "out", "base_url", "model"),
    "extract-features": ("in_dir", "out"),
    "train": ("in_dir", "out"),
    "calibrate": ("data", "features", "model", "out"),
    "route": ("data", "features", "model", "out"),
    "evaluate": ("outcomes",),
    "bootstrap": ("a", "b"),
    "report": ("in_dir", "out"),
}


def resolve_options(subcommand: str, explicit: dict) -> argparse.Namespace:
    merged = dict(DEFAULTS[subcommand])
    config_path = explicit.get("config")
    if config_path is not None:
        file_opts = load_config(config_path)
        unknown = sorted(set(file_opts) - set(merged))
        if unknown:
            raise UsageError(f"unknown config keys for {subcommand}: {', '.join(unknown)}")
        merged.update(file_opts)
    merged.update(explicit)
    for key in REQUIRED[subcommand]:
        if merged.get(key) is None:
            flag = "--" + key.replace("_", "-")
            raise UsageError(f"{subcommand}: {flag} is required (flag or config file)")
    for key, default in DEFAULTS[subcommand].items():
        if isinstance(default, float) and isinstance(merged[key], int):
            merged[key] = float(merged[key])
    return argparse.Namespace(**merged)


# --- manifests ---------------------------------------------------------------


def _git_revision() -> str:
    try:
        out = subprocess.run(
            ["git", "rev-parse", "HEAD"], capture_output=True, text=True, timeout=10
        )
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return out.stdout.strip() if out.returncode == 0 else "unknown"


def write_manifest(
    subcommand: str,
    opts: argparse.Namespace,
    inputs: list[str],
    outputs: list[str],
    schemas: dict[str, str],
    out_dir: str | Path,
) -> Path:
    doc = {
        "subcommand": subcommand,
        "version": __version__,
        "seed": getattr(opts, "seed", 0),
        "config": {k: v for k, v in sorted(vars(opts).items()) if k != "config"},
        "inputs": sorted(inputs),
        "outputs": sorted(outputs),
        "schemas": schemas,
        "created_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "git_revision": _git_revision(),
    }
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{subcommand}.manifest.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return path


# --- shared loading helpers ---------------------------------------------------


def _split_paths(data_dir: str | Path, split: str) -> dict[str, Path]:
    d = Path(data_dir)
    return {
        "questions": d / f"{split}.questions.jsonl",
        "traj": d / f"{split}.traj.jsonl",
        "paths": d / f"{split}.paths.jsonl",
    }


def _load_split_features(features_dir: str | Path, split: str):
    fdir = Path(features_dir)
    seqs = read_features(fdir / f"{split}.features.jsonl")
    labels = read_labels(fdir / f"{split}.labels.jsonl")
    ordered = []
    for seq in seqs:
        if seq.question_id not in labels:
            raise AlignmentError(f"no label for {seq.question_id!r}")
        ordered.append(labels[seq.question_id])
    return seqs, ordered


def _scores_in_traj_order(params, mcfg, seqs, trajectories):
    by_qid = {s.question_id: s for s in seqs}
    missing = [t.question_id for t in trajectories if t.question_id not in by_qid]
    if missing:
        raise AlignmentError(f"no features for {missing[0]!r}")
    ordered = [by_qid[t.question_id] for t in trajectories]
    return score_features(params, mcfg, ordered)


def _load_routing_inputs(opts) -> tuple:
    paths = _split_paths(opts.data, opts.split)
    trajectories = read_trajectories(paths["traj"])
    questions = {q.question_id: q for q in load_questions(paths["questions"])}
    paths_by_qid = read_paths(paths["paths"])
    seqs = read_features(Path(opts.features) / f"{opts.split}.features.jsonl")
    params, mcfg = load_checkpoint(opts.model)
    scores = _scores_in_traj_order(params, mcfg, seqs, trajectories)
    items = build_calibration_items(
        trajectories,
        scores,
        paths_by_qid,
        questions,
        method=opts.method,
        budget=opts.budget,
        votes_needed=opts.votes_needed,
        include_greedy_vote=opts.include_greedy_vote,
    )
    inputs = [str(p) for p in paths.values()]
    inputs.append(str(Path(opts.features) / f"{opts.split}.features.jsonl"))
    inputs.append(str(opts.model))
    return items, inputs


# --- subcommands --------------------------------------------------------------


def cmd_synth(opts) -> int:
    out_dir = Path(opts.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    sizes = {"train": opts.n_train, "val": opts.n_val, "test": opts.n_test}
    outputs = []
    for offset, split in enumerate(SPLITS):
        if sizes[split] < 1:
            continue
        cfg = SynthConfig(
            n_questions=sizes[split],
            seed=opts.seed + offset,
            beta=opts.beta,
            num_choices=opts.choices,
            base_rate=opts.base_rate,
            t_min=opts.t_min,
            t_max=opts.t_max,
            samples_per_question=opts.samples,
            id_prefix=f"{split}-",
        )
        questions, trajectories, paths_by_qid = generate(cfg)
        files = _split_paths(out_dir, split)
        write_questions(files["questions"], questions)
        write_trajectories(files["traj"], trajectories)
        write_paths(files["paths"], [p for qid in paths_by_qid for p in paths_by_qid[qid]])
        outputs.extend(str(p) for p in files.values())
    schemas = {"questions": QUESTIONS_SCHEMA, "traj": TRAJ_SCHEMA, "paths": PATHS_SCHEMA}
    write_manifest("synth", opts, [], outputs, schemas, out_dir)
    return EXIT_OK


def cmd_harvest(opts) -> int:
    questions = load_questions(opts.questions)
    endpoint = EndpointConfig(
        base_url=opts.base_url,
        model=opts.model,
        api_key_env=opts.api_key_env,
        timeout=opts.timeout,
        max_retries=opts.max_retries,
        backoff=opts.backoff,
        max_in_flight=opts.max_in_flight,
        cache_dir=opts.cache_dir,
    )
    client = EndpointClient(endpoint, template_id=opts.template)
    out_dir = Path(opts.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = _split_paths(out_dir, opts.split)
    write_questions(files["questions"], questions)
    harvested, failed = harvest_dataset(
        questions,
        client,
        files["traj"],
        None if opts.no_paths else files["paths"],
        n_samples=opts.n_samples,
        temperature=opts.temperature,
        max_new_tokens=opts.max_new_tokens,
    )
    outputs = [str(files["questions"]), str(files["traj"])]
    schemas = {"questions": QUESTIONS_SCHEMA, "traj": TRAJ_SCHEMA}
    if not opts.no_paths:
        outputs.append(str(files["paths"]))
        schemas["paths"] = PATHS_SCHEMA
    write_manifest("harvest", opts, [str(opts.questions)], outputs, schemas, out_dir)
    print(json.dumps({"harvested": harvested, "failed": failed, "skipped_existing": len(questions) - harvested - failed}))
    return EXIT_OK


def cmd_extract_features(opts) -> int:
    in_dir = Path(opts.in_dir)
    out_dir = Path(opts.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = FeatureConfig(subset=opts.subset)
    inputs: list[str] = []
    outputs: list[str] = []
    found = False
    for split in SPLITS:
        files = _split_paths(in_dir, split)
        if not files["traj"].exists():
            continue
        found = True
        trajectories = read_trajectories(files["traj"])
        questions = {q.question_id: q for q in load_questions(files["questions"])}
        seqs = []
        labels = {}
        for traj in trajectories:
            if traj.question_id not in questions:
                raise AlignmentError(f"no question for trajectory {traj.question_id!r}")
            seqs.append(assemble(traj, cfg, questions[traj.question_id]))
            if traj.label is not None:
                labels[traj.question_id] = bool(traj.label)
        f_out = out_dir / f"{split}.features.jsonl"
        write_features(f_out, seqs)
        inputs.extend([str(files["traj"]), str(files["questions"])])
        outputs.append(str(f_out))
        if labels:
            l_out = out_dir / f"{split}.labels.jsonl"
            write_labels(l_out, labels)
            outputs.append(str(l_out))
    if not found:
        raise EmptyDataset(f"no <split>.traj.jsonl files under {in_dir}")
    layout_path = out_dir / "layouts.jsonl"
    write_layout_registry(layout_path)
    outputs.append(str(layout_path))
    schemas = {"features": FEATURES_SCHEMA, "labels": LABELS_SCHEMA, "layouts": LAYOUTS_SCHEMA}
    write_manifest("extract-features", opts, inputs, outputs, schemas, out_dir)
    return EXIT_OK


def cmd_train(opts) -> int:
    train_seqs, train_labels = _load_split_features(opts.in_dir, "train")
    val_seqs, val_labels = _load_split_features(opts.in_dir, "val")
    if not train_seqs:
        raise EmptyDataset("training split is empty")
    mcfg = ModelConfig(
        input_dim=train_seqs[0].x.shape[1],
        hidden=opts.hidden,
        heads=opts.heads,
        head_hidden=opts.head_hidden,
        use_feature_gate=not opts.no_feature_gate,
        use_mhsa=not opts.no_mhsa,
    )
    tcfg = TrainConfig(
        lr=opts.lr,
        batch_size=opts.batch_size,
        max_epochs=opts.max_epochs,
        patience=opts.patience,
        seed=opts.seed,
        loss_variant=opts.loss_variant,
        aux_weight=opts.aux_weight,
        class_weights=not opts.no_class_weights,
    )
    result = train(train_seqs, train_labels, val_seqs, val_labels, mcfg, tcfg)
    out_dir = Path(opts.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt = out_dir / "model.ckpt"
    save_checkpoint(ckpt, result.params, mcfg)
    log_path = out_dir / "training_log.csv"
    write_training_log(log_path, result)
    inputs = [
        str(Path(opts.in_dir) / f"{s}.{kind}.jsonl")
        for s in ("train", "val")
        for kind in ("features", "labels")
    ]
    outputs = [str(ckpt), str(log_path), str(log_path.with_suffix(".best.json"))]
    write_manifest("train", opts, inputs, outputs, {"checkpoint": "ckpt/1"}, out_dir)
    print(
        json.dumps(
            {"best_epoch": result.best_epoch, "best_val_auc": round(result.best_val_auc, 6)}
        )
    )
    return EXIT_OK


def cmd_calibrate(opts) -> int:
    items, inputs = _load_routing_inputs(opts)
    profile = sweep(
        items,
        sunk_greedy=not opts.no_sunk_greedy,
        baseline_method=opts.method,
        greedy_source="greedy",
    )
    tau = select_threshold(profile, max_rel_drop=opts.max_rel_drop)
    out_dir = Path(opts.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    profile_path = out_dir / "profile.csv"
    profile_to_csv(profile, profile_path)
    selection_path = out_dir / "selection.json"
    write_selection_summary(profile, selection_path, max_rel_drop=opts.max_rel_drop)
    outputs = [str(profile_path), str(selection_path)]
    write_manifest("calibrate", opts, inputs, outputs, {"profile": "report/1"}, out_dir)
    print(json.dumps({"selected_tau": tau}))
    return EXIT_OK


def cmd_route(opts) -> int:
    if opts.tau is None and opts.selection is None:
        raise UsageError("route: pass --tau or --selection selection.json")
    tau = opts.tau
    if tau is None:
        with open(opts.selection, encoding="utf-8") as fh:
            tau = float(json.load(fh)["selected_tau"])
    items, inputs = _load_routing_inputs(opts)
    if opts.selection is not None:
        inputs.append(str(opts.selection))
    outcomes = route_outcomes(items, tau, sunk_greedy=not opts.no_sunk_greedy)
    out_dir = Path(opts.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = []
    for name, vector in outcomes.items():
        path = out_dir / f"outcomes.{name}.jsonl"
        write_outcomes(path, vector)
        outputs.append(str(path))
    write_manifest("route", opts, inputs, outputs, {"outcomes": OUTCOMES_SCHEMA}, out_dir)
    policy = summarize(outcomes["policy"])
    print(
        json.dumps(
            {
                "tau": tau,
                "n": len(outcomes["policy"]),
                "accuracy": policy.accuracy,
                "mean_tokens": policy.mean_tokens,
            }
        )
    )
    return EXIT_OK


def cmd_evaluate(opts) -> int:
    vector = read_outcomes(opts.outcomes)
    s = summarize(vector)
    doc = {
        "n": len(vector),
        "accuracy": s.accuracy,
        "mean_tokens": s.mean_tokens,
        "tokens_q1": s.tokens_q1,
        "tokens_median": s.tokens_median,
        "tokens_q3": s.tokens_q3,
    }
    print(json.dumps(doc, sort_keys=True))
    if opts.out is not None:
        out_dir = Path(opts.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / "evaluation.json"
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, sort_keys=True, indent=1)
            fh.write("\n")
        write_manifest(
            "evaluate", opts, [str(opts.outcomes)], [str(path)], {"outcomes": OUTCOMES_SCHEMA}, out_dir
        )
    return EXIT_OK


def cmd_bootstrap(opts) -> int:
    result = paired_bootstrap(
        read_outcomes(opts.a),
        read_outcomes(opts.b),
        resamples=opts.resamples,
        seed=opts.seed,
        method=opts.method,
    )
    doc = {
        "delta_accuracy": result.delta_accuracy,
        "delta_tokens": result.delta_tokens,
        "p_accuracy": result.p_accuracy,
        "p_tokens": result.p_tokens,
        "resamples": result.resamples,
    }
    print(json.dumps(doc, sort_keys=True))
    if opts.out is not None:
        out_dir = Path(opts.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / "bootstrap.json"
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, sort_keys=True, indent=1)
            fh.write("\n")
        write_manifest(
            "bootstrap",
            opts,
            [str(opts.a), str(opts.b)],
            [str(path)],
            {"outcomes": OUTCOMES_SCHEMA},
            out_dir,
        )
    return EXIT_OK


def cmd_report(opts) -> int:
    in_dir = Path(opts.in_dir)
    methods = {}
    for path in sorted(in_dir.glob("outcomes.*.jsonl")):
        name = path.name.split(".")[1]
        methods[name] = read_outcomes(path)
    if not methods:
        raise EmptyDataset(f"no outcomes.*.jsonl files under {in_dir}")
    written = write_report(methods, opts.out, seed=opts.seed, resamples=opts.resamples)
    write_manifest(
        "report",
        opts,
        sorted(str(p) for p in in_dir.glob("outcomes.*.jsonl")),
        [str(p) for p in written],
        {"report": "report/1"},
        opts.out,
    )
    return EXIT_OK


HANDLERS = {
    "synth": cmd_synth,
    "harvest": cmd_harvest,
    "extract-features": cmd_extract_features,
    "train": cmd_train,
    "calibrate": cmd_calibrate,
    "route": cmd_route,
    "evaluate": cmd_evaluate,
    "bootstrap": cmd_bootstrap,
    "report": cmd_report,
}


# --- parser -------------------------------------------------------------------


def _add(sub, name: str, help_text: str) -> argparse.ArgumentParser:
    p = sub.add_parser(name, help=help_text, argument_default=argparse.SUPPRESS)
    p.add_argument("--config", help="flat key = value option file")
    p.add_argument("--seed", type=int, help="master seed for all randomness")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cotriage",
        description="Decide per question whether a greedy chain of thought is "
        "trustworthy or must escalate to multi-path voting.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = _add(sub, "synth", "generate a planted-signal synthetic dataset in three splits")
    p.add_argument("--out", help="output directory")
    p.add_argument("--n-train", type=int, dest="n_train")
    p.add_argument("--n-val", type=int, dest="n_val")
    p.add_argument("--n-test", type=int, dest="n_test")
    p.add_argument("--beta", type=float, help="planted signal strength in [0, 1]")
    p.add_argument("--choices", type=int)
    p.add_argument("--base-rate", type=float, dest="base_rate")
    p.add_argument("--samples", type=int, help="sampled paths per question")
    p.add_argument("--t-min", type=int, dest="t_min")
    p.add_argument("--t-max", type=int, dest="t_max")

    p = _add(sub, "harvest", "harvest trajectories and sampled paths from an endpoint")
    p.add_argument("--questions", help="questions jsonl file")
    p.add_argument("--out", help="output directory")
    p.add_argument("--split", help="split name used in output file names")
    p.add_argument("--base-url", dest="base_url")
    p.add_argument("--model", help="endpoint model name")
    p.add_argument("--template", help="prompt template id")
    p.add_argument("--n-samples", type=int, dest="n_samples")
    p.add_argument("--temperature", type=float)
    p.add_argument("--max-new-tokens", type=int, dest="max_new_tokens")
    p.add_argument("--cache-dir", dest="cache_dir")
    p.add_argument("--api-key-env", dest="api_key_env")
    p.add_argument("--timeout", type=float)
    p.add_argument("--max-in-flight", type=int, dest="max_in_flight")
    p.add_argument("--max-retries", type=int, dest="max_retries")
    p.add_argument("--backoff", type=float)
    p.add_argument("--no-paths", action="store_true", help="skip sampled paths")

    p = _add(sub, "extract-features", "turn trajectories into padded feature sequences")
    p.add_argument("--in", dest="in_dir", help="directory with <split>.traj.jsonl files")
    p.add_argument("--out", help="output directory")
    p.add_argument("--subset", choices=("full", "numeric", "linguistic"))

    p = _add(sub, "train", "train the escalation detector on extracted features")
    p.add_argument("--in", dest="in_dir", help="directory from extract-features")
    p.add_argument("--out", help="output directory for checkpoint and log")
    p.add_argument("--hidden", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--head-hidden", type=int, dest="head_hidden")
    p.add_argument("--no-feature-gate", action="store_true", dest="no_feature_gate")
    p.add_argument("--no-mhsa", action="store_true", dest="no_mhsa")
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--max-epochs", type=int, dest="max_epochs")
    p.add_argument("--patience", type=int)
    p.add_argument("--loss-variant", choices=("final", "final_aux"), dest="loss_variant")
    p.add_argument("--aux-weight", type=float, dest="aux_weight")
    p.add_argument("--no-class-weights", action="store_true", dest="no_class_weights")

    for name, help_text, split_default in (
        ("calibrate", "sweep the acceptance threshold on a validation split", "val"),
        ("route", "apply a threshold to a split and write outcome files", "test"),
    ):
        p = _add(sub, name, help_text)
        p.add_argument("--data", help="directory with <split>.{questions,traj,paths}.jsonl")
        p.add_argument("--features", help="directory from extract-features")
        p.add_argument("--model", help="checkpoint file")
        p.add_argument("--out", help="output directory")
        p.add_argument("--split", help=f"split name (default {split_default})")
        p.add_argument("--method", choices=("sc", "cer", "dv"))
        p.add_argument("--budget", type=int, help="sampled paths consumed per escalation")
        p.add_argument("--votes-needed", type=int, dest="votes_needed")
        p.add_argument("--include-greedy-vote", action="store_true", dest="include_greedy_vote")
        p.add_argument("--no-sunk-greedy", action="store_true", dest="no_sunk_greedy")
        if name == "calibrate":
            p.add_argument("--max-rel-drop", type=float, dest="max_rel_drop")
        else:
            p.add_argument("--tau", type=float)
            p.add_argument("--selection", help="selection.json from calibrate")

    p = _add(sub, "evaluate", "summarize one outcome file")
    p.add_argument("--outcomes", help="outcomes jsonl file")
    p.add_argument("--out", help="optional output directory")

    p = _add(sub, "bootstrap", "paired bootstrap significance between two outcome files")
    p.add_argument("--a", help="first outcomes jsonl file")
    p.add_argument("--b", help="second outcomes jsonl file")
    p.add_argument("--resamples", type=int)
    p.add_argument("--method", choices=("sign-flip", "percentile"))
    p.add_argument("--out", help="optional output directory")

    p = _add(sub, "report", "summary, significance and outcome tables for a routed run")
    p.add_argument("--in", dest="in_dir", help="directory with outcomes.*.jsonl")
    p.add_argument("--out", help="output directory")
    p.add_argument("--resamples", type=int)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    explicit = {k: v for k, v in vars(ns).items() if k != "subcommand"}
    try:
        opts = resolve_options(ns.subcommand, explicit)
        return HANDLERS[ns.subcommand](opts)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (HarvestError, CapabilityError) as exc:
        print(f"endpoint error: {exc}", file=sys.stderr)
        return EXIT_ENDPOINT
    except CotriageError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
