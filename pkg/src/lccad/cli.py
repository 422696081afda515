"""Experiment runner.

Three subcommands cover the study shapes the library is built for:

* ``toy-sweep``: two Gaussian classes on a chain or grid; sweeps the class
  mean distance (clustering quality, ARI) and the contamination rate
  (detection quality, AUROC) against a k-means baseline (theta = 1) and a
  single-sphere baseline (K = 1).
* ``facies``: synthetic channel-facies grid; writes state, score, and
  per-feature relevance heatmaps plus per-node tables and metrics.
* ``analyze``: the facies artifact set for a user-supplied CSV grid.

Every run writes ``manifest.json`` with the fully resolved configuration,
including the auto-resolved kernel bandwidth and regularizer of every fit,
so a run can be replayed exactly.  All artifacts are written atomically
and are byte-identical for identical config and seeds.

Exit codes: 0 success, 1 validation error, 2 IO error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .core import AUTO, HyperParams
from .data import GridSpec, ToySpec, gen_grid_facies, gen_toy, load_grid_csv
from .evaluation import ari, auroc
from .explain import relevance_map
from .model import fit, score
from .pgm import atomic_write_bytes, write_heatmap

__all__ = ["main", "RunConfig", "ValidationFailure"]

METHODS = ("lccad", "kmeans", "svdd")

DEFAULT_DELTAS = tuple(np.arange(0.0, 6.5, 0.5))
DEFAULT_CONTAMINATIONS = (0.01, 0.02, 0.05, 0.1)


class ValidationFailure(ValueError):
    """Bad flags, config keys, or hyperparameters (exit code 1)."""


def fmt(value):
    """Format one CSV cell; floats get 6 significant digits."""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".6g")
    return str(value)


def write_csv(path, header, rows):
    lines = [",".join(header)]
    lines += [",".join(fmt(cell) for cell in row) for row in rows]
    atomic_write_bytes(path, ("\n".join(lines) + "\n").encode("ascii"))


def write_manifest(path, payload):
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    atomic_write_bytes(path, text.encode("ascii"))


def parse_config_file(path):
    """Flat key=value file: one pair per line, # comments, blanks ignored."""
    try:
        with open(path, "r", encoding="ascii") as fh:
            text = fh.read()
    except OSError as exc:
        raise IOError(f"cannot read config file {path}: {exc}") from exc
    pairs = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValidationFailure(
                f"{path}:{lineno}: expected key=value, got {line!r}"
            )
        key, _, value = line.partition("=")
        pairs[key.strip().replace("-", "_")] = value.strip()
    return pairs


def _parse_float_list(text):
    try:
        return tuple(float(tok) for tok in str(text).split(",") if tok.strip())
    except ValueError as exc:
        raise ValidationFailure(f"bad float list {text!r}") from exc


def _parse_int_list(text):
    try:
        return tuple(int(tok) for tok in str(text).split(",") if tok.strip())
    except ValueError as exc:
        raise ValidationFailure(f"bad integer list {text!r}") from exc


def _parse_pair(text):
    vals = _parse_float_list(text)
    if len(vals) != 2:
        raise ValidationFailure(f"expected two comma-separated floats, got {text!r}")
    return vals


def _parse_gamma(text):
    if str(text).strip() == AUTO:
        return AUTO
    try:
        return float(text)
    except ValueError as exc:
        raise ValidationFailure(f"gamma must be a float or 'auto', got {text!r}") from exc


def _parse_bool(text):
    token = str(text).strip().lower()
    if token in ("1", "true", "yes"):
        return True
    if token in ("0", "false", "no"):
        return False
    raise ValidationFailure(f"expected a boolean, got {text!r}")


REQUIRED = object()

# (name, parser, default) per subcommand; REQUIRED means no default.
HYPER_FIELDS = (
    ("K", int, 2),
    ("theta", float, 0.8),
    ("nu", float, 1.0),
    ("gamma", _parse_gamma, AUTO),
    ("sigma", float, None),
    ("rff_dim", int, 128),
    ("max_outer_iters", int, 50),
)

TOY_FIELDS = (
    ("n_per_class", int, 100),
    ("delta", float, 4.0),
    ("std1", float, 1.0),
    ("std2", float, 1.0),
    ("layout", str, "chain"),
    ("contamination", float, 0.05),
)

GRID_FIELDS = (
    ("height", int, 20),
    ("width", int, 30),
    ("n_channels", int, 3),
    ("channel_width", float, 3.0),
    ("amplitude", float, 4.0),
    ("mean0", _parse_pair, (0.0, 0.0)),
    ("mean1", _parse_pair, (2.5, 2.5)),
    ("std0", _parse_pair, (1.0, 1.0)),
    ("std1", _parse_pair, (1.0, 1.0)),
    ("n_anomalies", int, 15),
    ("anomaly_magnitude", float, 3.0),
)

SWEEP_FIELDS = (
    ("deltas", _parse_float_list, DEFAULT_DELTAS),
    ("contaminations", _parse_float_list, DEFAULT_CONTAMINATIONS),
)

ANALYZE_FIELDS = (
    ("input", str, REQUIRED),
    ("height", int, REQUIRED),
    ("width", int, REQUIRED),
    ("dims", int, REQUIRED),
    ("header", _parse_bool, False),
)

FIELDS_BY_COMMAND = {
    "toy-sweep": HYPER_FIELDS + TOY_FIELDS + SWEEP_FIELDS,
    "facies": HYPER_FIELDS + GRID_FIELDS,
    "analyze": HYPER_FIELDS + ANALYZE_FIELDS,
}

DEFAULT_SEEDS = {
    "toy-sweep": tuple(range(10)),
    "facies": tuple(range(5)),
    "analyze": (0,),
}


class RunConfig:
    """Resolved settings for one run: subcommand, field values, seeds, out."""

    def __init__(self, subcommand, values, seeds, out):
        self.subcommand = subcommand
        self.values = dict(values)
        self.seeds = tuple(int(s) for s in seeds)
        self.out = str(out)
        if not self.seeds:
            raise ValidationFailure("seeds must be non-empty")
        for name, _, default in FIELDS_BY_COMMAND[subcommand]:
            if default is REQUIRED and self.values.get(name) is REQUIRED:
                raise ValidationFailure(f"missing required option --{name}")

    def __getitem__(self, name):
        return self.values[name]

    def hyper(self, seed, **overrides):
        kw = {name: self.values[name] for name, _, _ in HYPER_FIELDS}
        kw.update(overrides)
        try:
            return HyperParams(seed=seed, **kw)
        except ValueError as exc:
            raise ValidationFailure(str(exc)) from exc

    def as_manifest(self):
        values = {}
        for key, val in sorted(self.values.items()):
            if isinstance(val, tuple):
                values[key] = list(val)
            else:
                values[key] = val
        # the output path is deliberately not embedded: runs of the same
        # experiment into different directories stay byte-identical
        return {
            "subcommand": self.subcommand,
            "seeds": list(self.seeds),
            **values,
        }


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="lccad",
        description="Latent-class contextual anomaly detection experiments.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for command, fields in FIELDS_BY_COMMAND.items():
        p = sub.add_parser(command)
        p.add_argument("--config", default=None, help="flat key=value file")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--seeds", default=None, help="comma-separated seed list")
        for name, _, _ in fields:
            p.add_argument("--" + name.replace("_", "-"), dest=name, default=None)
    return parser


def resolve_config(argv):
    """Merge defaults < config file < command-line flags into a RunConfig."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        if exc.code == 0:
            raise
        raise ValidationFailure("invalid command line") from exc

    fields = FIELDS_BY_COMMAND[args.subcommand]
    known = {name for name, _, _ in fields} | {"seeds", "out"}
    layered = {}
    if args.config is not None:
        for key, value in parse_config_file(args.config).items():
            if key not in known:
                raise ValidationFailure(f"unknown config key {key!r}")
            layered[key] = value
    for name, _, _ in fields:
        flag = getattr(args, name)
        if flag is not None:
            layered[name] = flag
    if args.seeds is not None:
        layered["seeds"] = args.seeds
    if args.out is not None:
        layered["out"] = args.out

    values = {}
    for name, parse, default in fields:
        if name in layered:
            raw = layered[name]
            try:
                values[name] = parse(raw)
            except ValidationFailure:
                raise
            except (TypeError, ValueError) as exc:
                raise ValidationFailure(f"bad value for {name}: {raw!r}") from exc
        else:
            values[name] = default
    raw_seeds = layered.get("seeds")
    if raw_seeds is None:
        seeds = DEFAULT_SEEDS[args.subcommand]
    else:
        seeds = _parse_int_list(raw_seeds)
    out = layered.get("out")
    if out is None:
        raise ValidationFailure("missing required option --out")
    return RunConfig(args.subcommand, values, seeds, out)


def _fit_method(method, X, graph, hp_lccad):
    """Fit one of the three study methods from a shared hyperparameter base."""
    if method == "lccad":
        hp = hp_lccad
    elif method == "kmeans":
        hp = HyperParams(
            K=hp_lccad.K,
            theta=1.0,
            nu=hp_lccad.nu,
            gamma=hp_lccad.gamma,
            sigma=hp_lccad.sigma,
            rff_dim=hp_lccad.rff_dim,
            seed=hp_lccad.seed,
            max_outer_iters=hp_lccad.max_outer_iters,
        )
    elif method == "svdd":
        hp = HyperParams(
            K=1,
            theta=1.0,
            nu=hp_lccad.nu,
            gamma=hp_lccad.gamma,
            sigma=hp_lccad.sigma,
            rff_dim=hp_lccad.rff_dim,
            seed=hp_lccad.seed,
            max_outer_iters=hp_lccad.max_outer_iters,
        )
    else:
        raise ValueError(f"unknown method {method!r}")
    model, report = fit(X, graph, hp)
    return model, report


def _resolved_entry(model, **keys):
    entry = dict(keys)
    entry["gamma"] = model.gamma_
    entry["sigma"] = model.sigma_
    return entry


def cmd_toy_sweep(config):
    """Mean-distance and contamination sweeps over the three methods."""
    resolved = []
    delta_rows = []
    for delta in config["deltas"]:
        for seed in config.seeds:
            spec = ToySpec(
                n_per_class=config["n_per_class"],
                delta=float(delta),
                std1=config["std1"],
                std2=config["std2"],
                layout=config["layout"],
                contamination=config["contamination"],
                seed=seed,
            )
            X, graph, truth = gen_toy(spec)
            for method in METHODS:
                model, _ = _fit_method(method, X, graph, config.hyper(seed))
                row_ari = ari(model.assignment, truth.true_states)
                row_auc = auroc(score(model), truth.anomaly_labels)
                delta_rows.append((float(delta), seed, method, row_ari, row_auc))
                resolved.append(
                    _resolved_entry(
                        model, sweep="delta", value=float(delta),
                        seed=seed, method=method,
                    )
                )

    contamination_rows = []
    for rate in config["contaminations"]:
        for seed in config.seeds:
            spec = ToySpec(
                n_per_class=config["n_per_class"],
                delta=config["delta"],
                std1=config["std1"],
                std2=config["std2"],
                layout=config["layout"],
                contamination=float(rate),
                seed=seed,
            )
            X, graph, truth = gen_toy(spec)
            for method in METHODS:
                model, _ = _fit_method(method, X, graph, config.hyper(seed))
                row_ari = ari(model.assignment, truth.true_states)
                row_auc = auroc(score(model), truth.anomaly_labels)
                contamination_rows.append(
                    (float(rate), seed, method, row_ari, row_auc)
                )
                resolved.append(
                    _resolved_entry(
                        model, sweep="contamination", value=float(rate),
                        seed=seed, method=method,
                    )
                )

    summary_rows = []
    for sweep, rows in (("delta", delta_rows), ("contamination", contamination_rows)):
        values = sorted({row[0] for row in rows})
        for value in values:
            for method in METHODS:
                cell = [r for r in rows if r[0] == value and r[2] == method]
                for pos, metric in ((3, "ari"), (4, "auroc")):
                    data = np.array([r[pos] for r in cell])
                    summary_rows.append(
                        (sweep, value, method, metric,
                         float(data.mean()), float(data.std()))
                    )

    out = config.out
    write_csv(
        os.path.join(out, "delta_sweep.csv"),
        ("delta", "seed", "method", "ari", "auroc"),
        delta_rows,
    )
    write_csv(
        os.path.join(out, "contamination_sweep.csv"),
        ("contamination", "seed", "method", "ari", "auroc"),
        contamination_rows,
    )
    write_csv(
        os.path.join(out, "summary.csv"),
        ("sweep", "value", "method", "metric", "mean", "std"),
        summary_rows,
    )
    manifest = config.as_manifest()
    manifest["resolved_fits"] = resolved
    write_manifest(os.path.join(out, "manifest.json"), manifest)
    return 0


def _grid_artifacts(config, X, graph, shape, seed, truth=None):
    """Fit + write the per-seed artifact set; returns the metrics row."""
    height, width = shape
    model, report = _fit_method("lccad", X, graph, config.hyper(seed))
    states = model.assignment.states
    scores = score(model)
    rel = relevance_map(model, X, (height, width))
    d = rel.shape[2]

    seed_dir = os.path.join(config.out, f"seed-{seed}")
    os.makedirs(seed_dir, exist_ok=True)
    write_heatmap(os.path.join(seed_dir, "states.pgm"), states.reshape(shape))
    write_heatmap(os.path.join(seed_dir, "scores.pgm"), scores.reshape(shape))
    for i in range(d):
        write_heatmap(os.path.join(seed_dir, f"relevance_{i}.pgm"), rel[:, :, i])

    rows_idx = np.arange(height * width)
    header = ["row", "col", "state", "score"]
    columns = [rows_idx // width, rows_idx % width, states, scores]
    if truth is not None:
        header += ["true_state", "label"]
        columns += [truth.true_states.states, truth.anomaly_labels.astype(int)]
    header += [f"relevance_{i}" for i in range(d)]
    columns += [rel[:, :, i].reshape(-1) for i in range(d)]
    table = list(zip(*columns))
    write_csv(os.path.join(seed_dir, "nodes.csv"), header, table)

    if truth is not None:
        metrics_row = (
            seed,
            ari(model.assignment, truth.true_states),
            auroc(scores, truth.anomaly_labels),
        )
    else:
        metrics_row = (seed, float(scores.mean()), float(scores.max()))
    resolved = _resolved_entry(
        model, seed=seed, method="lccad",
        iterations=report.iterations, stopped_on=report.stopped_on,
    )
    return metrics_row, resolved


def cmd_facies(config):
    """Channel-facies study: maps, tables, and metrics per seed."""
    metrics = []
    resolved = []
    for seed in config.seeds:
        spec = GridSpec(
            height=config["height"],
            width=config["width"],
            n_channels=config["n_channels"],
            channel_width=config["channel_width"],
            amplitude=config["amplitude"],
            mean0=tuple(config["mean0"]),
            mean1=tuple(config["mean1"]),
            std0=tuple(config["std0"]),
            std1=tuple(config["std1"]),
            n_anomalies=config["n_anomalies"],
            anomaly_magnitude=config["anomaly_magnitude"],
            seed=seed,
        )
        X, graph, truth = gen_grid_facies(spec)
        row, entry = _grid_artifacts(
            config, X, graph, (spec.height, spec.width), seed, truth
        )
        metrics.append(row)
        resolved.append(entry)

    write_csv(
        os.path.join(config.out, "metrics.csv"),
        ("seed", "ari", "auroc"),
        metrics,
    )
    manifest = config.as_manifest()
    manifest["resolved_fits"] = resolved
    write_manifest(os.path.join(config.out, "manifest.json"), manifest)
    return 0


def cmd_analyze(config):
    """Facies artifact set for an arbitrary CSV grid (no ground truth)."""
    X, graph = load_grid_csv(
        config["input"],
        config["height"],
        config["width"],
        config["dims"],
        header=config["header"],
    )
    metrics = []
    resolved = []
    for seed in config.seeds:
        row, entry = _grid_artifacts(
            config, X, graph, (config["height"], config["width"]), seed
        )
        metrics.append(row)
        resolved.append(entry)

    write_csv(
        os.path.join(config.out, "metrics.csv"),
        ("seed", "score_mean", "score_max"),
        metrics,
    )
    manifest = config.as_manifest()
    manifest["resolved_fits"] = resolved
    write_manifest(os.path.join(config.out, "manifest.json"), manifest)
    return 0


COMMANDS = {
    "toy-sweep": cmd_toy_sweep,
    "facies": cmd_facies,
    "analyze": cmd_analyze,
}


def main(argv=None):
    if argv is None:
        argv = sys.argv[1:]
    try:
        config = resolve_config(list(argv))
        try:
            os.makedirs(config.out, exist_ok=True)
        except OSError as exc:
            raise IOError(f"cannot create output directory: {exc}") from exc
        return COMMANDS[config.subcommand](config)
    except ValidationFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
