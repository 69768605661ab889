"""Command line front end: run one experiment, sweep a grid, or self-verify.

Exit codes: 0 success, 1 runtime/I-O failure (or any failed sweep cell),
2 bad configuration or usage, 3 training divergence.
"""

import argparse
import copy
import csv
import dataclasses
import hashlib
import itertools
import sys
from pathlib import Path

import yaml

from . import metrics, nn, protocols, selfcheck, sim

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_DIVERGED = 3

METHOD_ABBREV = {
    "none": "NC",
    "all_reduce": "AR",
    "easgd": "EA",
    "pull_gossip": "GS",
    "push_gossip": "PG",
    "elastic_gossip": "EG",
    "full_consensus": "FC",
}

_TOP_KEYS = {
    "seed",
    "workers",
    "effective_batch",
    "steps",
    "eval_every",
    "model",
    "protocol",
    "optimizer",
    "data",
}

_MISSING = object()


# --- config file parsing -------------------------------------------------------


def _section(doc, name, allowed):
    node = doc.get(name)
    if node is None:
        raise sim.ConfigError(f"missing required section {name!r}")
    if not isinstance(node, dict):
        raise sim.ConfigError(f"{name}: expected a mapping, got {node!r}")
    unknown = sorted(set(node) - allowed)
    if unknown:
        raise sim.ConfigError(f"unknown key {name}.{unknown[0]}")
    return node


def _lookup(section, key, path, default=_MISSING):
    # an explicit null counts as unset, so sweeps can delete a key
    value = section.get(key)
    if value is not None:
        return value
    if default is _MISSING:
        raise sim.ConfigError(f"missing required key {path}.{key}")
    return default


def _as_int(value, path):
    if isinstance(value, bool) or not isinstance(value, int):
        raise sim.ConfigError(f"{path}: expected an integer, got {value!r}")
    return value


def _as_float(value, path):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise sim.ConfigError(f"{path}: expected a number, got {value!r}")
    return float(value)


def _as_str(value, path):
    if not isinstance(value, str):
        raise sim.ConfigError(f"{path}: expected a string, got {value!r}")
    return value


def config_from_dict(doc):
    """Validate a parsed key/value tree into an ExperimentConfig.

    Key names and nesting are normative; unknown keys anywhere are rejected
    with their full path so typos cannot silently fall back to defaults.
    """
    if not isinstance(doc, dict):
        raise sim.ConfigError(f"config root must be a mapping, got {doc!r}")
    unknown = sorted(set(doc) - _TOP_KEYS)
    if unknown:
        raise sim.ConfigError(f"unknown key {unknown[0]}")
    model_d = _section(doc, "model", {"layer_sizes", "input_dropout", "hidden_dropout"})
    proto_d = _section(doc, "protocol", {"method", "alpha", "tau", "comm_probability"})
    opt_d = _section(doc, "optimizer", {"eta", "mu"})
    data_d = _section(
        doc,
        "data",
        {
            "source",
            "n",
            "dims",
            "classes",
            "spread",
            "images",
            "labels",
            "holdout",
            "partition_mode",
            "majority_share",
            "sample_order",
        },
    )

    if proto_d.get("tau") is not None and proto_d.get("comm_probability") is not None:
        raise sim.ConfigError(
            "protocol.tau and protocol.comm_probability are mutually exclusive; "
            "set exactly one"
        )

    sizes = _lookup(model_d, "layer_sizes", "model")
    if (
        not isinstance(sizes, (list, tuple))
        or not sizes
        or any(isinstance(s, bool) or not isinstance(s, int) for s in sizes)
    ):
        raise sim.ConfigError(
            f"model.layer_sizes: expected a list of integers, got {sizes!r}"
        )
    try:
        model = nn.MlpSpec(
            tuple(sizes),
            input_dropout=_as_float(
                _lookup(model_d, "input_dropout", "model", 0.0), "model.input_dropout"
            ),
            hidden_dropout=_as_float(
                _lookup(model_d, "hidden_dropout", "model", 0.0), "model.hidden_dropout"
            ),
        )
    except ValueError as e:
        raise sim.ConfigError(f"model: {e}")

    alpha = proto_d.get("alpha")
    tau = proto_d.get("tau")
    p = proto_d.get("comm_probability")
    try:
        protocol = protocols.ProtocolSpec(
            _as_str(_lookup(proto_d, "method", "protocol"), "protocol.method"),
            alpha=None if alpha is None else _as_float(alpha, "protocol.alpha"),
            tau=None if tau is None else _as_int(tau, "protocol.tau"),
            comm_probability=None if p is None else _as_float(p, "protocol.comm_probability"),
        )
    except sim.ConfigError:
        raise
    except ValueError as e:
        raise sim.ConfigError(f"protocol: {e}")

    optimizer = sim.OptimizerSpec(
        eta=_as_float(_lookup(opt_d, "eta", "optimizer"), "optimizer.eta"),
        mu=_as_float(_lookup(opt_d, "mu", "optimizer", 0.0), "optimizer.mu"),
    )

    data_cfg = sim.DataConfig(
        source=_as_str(_lookup(data_d, "source", "data"), "data.source"),
        holdout=_as_int(_lookup(data_d, "holdout", "data"), "data.holdout"),
        n=_as_int(_lookup(data_d, "n", "data", 0), "data.n"),
        dims=_as_int(_lookup(data_d, "dims", "data", 0), "data.dims"),
        classes=_as_int(_lookup(data_d, "classes", "data", 0), "data.classes"),
        spread=_as_float(_lookup(data_d, "spread", "data", 0.0), "data.spread"),
        images=_as_str(_lookup(data_d, "images", "data", ""), "data.images"),
        labels=_as_str(_lookup(data_d, "labels", "data", ""), "data.labels"),
        partition_mode=_as_str(
            _lookup(data_d, "partition_mode", "data", "uniform"), "data.partition_mode"
        ),
        majority_share=_as_float(
            _lookup(data_d, "majority_share", "data", 0.8), "data.majority_share"
        ),
        sample_order=_as_str(
            _lookup(data_d, "sample_order", "data", "shuffled"), "data.sample_order"
        ),
    )

    return sim.ExperimentConfig(
        model=model,
        protocol=protocol,
        optimizer=optimizer,
        data=data_cfg,
        workers=_as_int(_lookup(doc, "workers", ""), "workers"),
        effective_batch=_as_int(_lookup(doc, "effective_batch", ""), "effective_batch"),
        steps=_as_int(_lookup(doc, "steps", ""), "steps"),
        seed=_as_int(_lookup(doc, "seed", ""), "seed"),
        eval_every=_as_int(_lookup(doc, "eval_every", "", 100), "eval_every"),
    )


def _load_doc(path):
    try:
        raw = Path(path).read_text()
    except OSError as e:
        raise sim.ConfigError(f"cannot read config {path}: {e}")
    try:
        return yaml.safe_load(raw)
    except yaml.YAMLError as e:
        raise sim.ConfigError(f"{path}: {e}")


def parse_config(path):
    return config_from_dict(_load_doc(path))


def config_to_dict(config):
    """Fully resolved key/value tree; parses back to an equal config."""
    proto = {"method": config.protocol.method}
    if config.protocol.alpha is not None:
        proto["alpha"] = config.protocol.alpha
    if config.protocol.tau is not None:
        proto["tau"] = config.protocol.tau
    if config.protocol.comm_probability is not None:
        proto["comm_probability"] = config.protocol.comm_probability
    dc = config.data
    data_d = {"source": dc.source, "holdout": dc.holdout}
    if dc.source == "synthetic":
        data_d.update(n=dc.n, dims=dc.dims, classes=dc.classes, spread=dc.spread)
    else:
        data_d.update(images=dc.images, labels=dc.labels)
    data_d.update(
        partition_mode=dc.partition_mode,
        majority_share=dc.majority_share,
        sample_order=dc.sample_order,
    )
    return {
        "seed": config.seed,
        "workers": config.workers,
        "effective_batch": config.effective_batch,
        "steps": config.steps,
        "eval_every": config.eval_every,
        "model": {
            "layer_sizes": list(config.model.layer_sizes),
            "input_dropout": config.model.input_dropout,
            "hidden_dropout": config.model.hidden_dropout,
        },
        "protocol": proto,
        "optimizer": {"eta": config.optimizer.eta, "mu": config.optimizer.mu},
        "data": data_d,
    }


def config_digest(config):
    text = yaml.safe_dump(config_to_dict(config), sort_keys=True)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


# --- run -------------------------------------------------------------------------


def _materialize(config, outdir, force):
    """Run one experiment and write metrics.csv, checkpoint.bin, config.yaml."""
    outdir = Path(outdir)
    files = [outdir / n for n in ("metrics.csv", "checkpoint.bin", "config.yaml")]
    clash = next((f for f in files if f.exists()), None)
    if clash is not None and not force:
        raise sim.ConfigError(f"refusing to overwrite {clash}; rerun with --force")
    outdir.mkdir(parents=True, exist_ok=True)
    resolved = yaml.safe_dump(config_to_dict(config), sort_keys=False)
    try:
        result = sim.run_experiment(config)
    except sim.DivergenceError as e:
        if e.records:
            metrics.write_metrics(files[0], e.records)
        files[2].write_text(resolved)
        raise
    metrics.write_metrics(files[0], result.records)
    sim.save_checkpoint(files[1], result.final_params, config_digest(config))
    files[2].write_text(resolved)
    return result


def cmd_run(args):
    config = parse_config(args.config)
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    try:
        result = _materialize(config, args.out, args.force)
    except sim.DivergenceError as e:
        print(f"diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    last = result.records[-1]
    print(
        f"done: {config.steps} steps, rank0 acc {last.rank0_acc:.4f}, "
        f"aggregate acc {last.aggregate_acc:.4f} -> {args.out}"
    )
    return EXIT_OK


# --- sweep -----------------------------------------------------------------------


def parse_axis(spec):
    key, sep, rest = spec.partition("=")
    key = key.strip()
    if not sep or not key:
        raise sim.ConfigError(f"axis {spec!r} must look like key=value1,value2,...")
    values = [yaml.safe_load(tok) for tok in rest.split(",") if tok.strip()]
    if not values:
        raise sim.ConfigError(f"axis {key!r} has no values")
    return key, values


def set_by_path(doc, dotted, value):
    parts = dotted.split(".")
    node = doc
    for p in parts[:-1]:
        nxt = node.setdefault(p, {})
        if not isinstance(nxt, dict):
            raise sim.ConfigError(f"axis key {dotted!r}: {p} is not a section")
        node = nxt
    if value is None:
        node.pop(parts[-1], None)
    else:
        node[parts[-1]] = value


def run_label(config, include_alpha=False):
    """Short cell name: method abbreviation, worker count, schedule, and,
    when the moving rate is itself being swept, the alpha value."""
    parts = [METHOD_ABBREV[config.protocol.method], str(config.workers)]
    if config.protocol.method in protocols.SCHEDULED_METHODS:
        if config.protocol.tau is not None:
            parts.append(str(config.protocol.tau))
        else:
            parts.append(format(config.protocol.comm_probability, ".4g"))
    if include_alpha and config.protocol.alpha is not None:
        parts.append(format(config.protocol.alpha, ".4g"))
    return "-".join(parts)


def _label_from_doc(doc, include_alpha):
    # best effort for cells whose config never validated
    try:
        return run_label(config_from_dict(doc), include_alpha)
    except (sim.ConfigError, KeyError, TypeError):
        proto = doc.get("protocol") or {}
        method = proto.get("method", "unknown")
        return f"{METHOD_ABBREV.get(method, method)}-{doc.get('workers', '?')}"


def cmd_sweep(args):
    base = _load_doc(args.config)
    config_from_dict(base)  # fail fast if the base itself is broken
    axes = [parse_axis(s) for s in args.axis]
    if not axes:
        raise sim.ConfigError("sweep needs at least one --axis")
    seeds = [int(tok) for tok in args.seeds.split(",") if tok.strip()]
    if not seeds:
        raise sim.ConfigError("--seeds needs at least one seed")
    outdir = Path(args.out)
    summary_path = outdir / "summary.csv"
    if summary_path.exists():
        raise sim.ConfigError(f"refusing to overwrite {summary_path}")
    outdir.mkdir(parents=True, exist_ok=True)
    include_alpha = any(key == "protocol.alpha" for key, _ in axes)

    rows = []
    failures = 0
    for combo in itertools.product(*(values for _, values in axes)):
        doc = copy.deepcopy(base)
        for (key, _), value in zip(axes, combo):
            set_by_path(doc, key, value)
        for seed in seeds:
            doc["seed"] = seed
            label = _label_from_doc(doc, include_alpha)
            cell = outdir / f"{label}-s{seed}"
            try:
                result = _materialize(config_from_dict(doc), cell, force=False)
            except sim.DivergenceError:
                rows.append([label, seed, "diverged", "", "", ""])
                failures += 1
                continue
            except (sim.ConfigError, ValueError) as e:
                print(f"cell {label} seed {seed}: {e}", file=sys.stderr)
                rows.append([label, seed, "error", "", "", ""])
                failures += 1
                continue
            last = result.records[-1]
            rows.append(
                [
                    label,
                    seed,
                    "ok",
                    last.step,
                    format(last.rank0_acc, ".17g"),
                    format(last.aggregate_acc, ".17g"),
                ]
            )
    with open(summary_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["label", "seed", "status", "step", "rank0_acc", "aggregate_acc"])
        writer.writerows(rows)
    print(f"{len(rows)} cells, {failures} failed -> {summary_path}")
    return EXIT_OK if failures == 0 else EXIT_FAILURE


# --- verify ------------------------------------------------------------------------


def cmd_verify(args):
    ok = True
    for name, passed, detail in selfcheck.run_all():
        line = f"{'ok' if passed else 'FAIL'} {name}"
        print(line + (f": {detail}" if detail else ""))
        ok = ok and passed
    return EXIT_OK if ok else EXIT_FAILURE


# --- entry point ----------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="eglab",
        description="Deterministic simulator for gossip-based distributed SGD.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one experiment from a config file")
    run_p.add_argument("--config", required=True, help="YAML experiment config")
    run_p.add_argument("--seed", type=int, default=None, help="override config seed")
    run_p.add_argument("--out", required=True, help="output directory")
    run_p.add_argument(
        "--force", action="store_true", help="overwrite existing output files"
    )

    sweep_p = sub.add_parser("sweep", help="run a grid of configs x seeds")
    sweep_p.add_argument("--config", required=True, help="base YAML config")
    sweep_p.add_argument(
        "--axis",
        action="append",
        default=[],
        metavar="KEY=V1,V2,...",
        help="dotted config key and values; repeatable; value 'null' deletes the key",
    )
    sweep_p.add_argument("--seeds", required=True, help="comma-separated seed list")
    sweep_p.add_argument("--out", required=True, help="sweep output directory")

    sub.add_parser("verify", help="run the built-in invariant suite")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(args)
        if args.command == "sweep":
            return cmd_sweep(args)
        return cmd_verify(args)
    except sim.ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"io error: {e}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
