"""Command-line entry point.

Every option can also come from an INI config file (``--config``): keys
mirror the long flag names without dashes (``n-nodes`` or ``n_nodes``) and
are looked up first in the section named after the subcommand, then in
``[global]``. Precedence: command line, config file, ``MOBIGRAPH_SEED``
(seed only), built-in default.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import io
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Sequence

from . import __version__
from .errors import DataError, MobigraphError, NumericalError
from .gnn import LinkPredictor, predict_links, split_edges, train_link_predictor
from .graph_core import (
    Modality,
    Period,
    dumps_graph,
    graph_to_dict,
    interpolate,
    load_graph,
    permute_graph,
    to_graphml,
)
from .harness import (
    ComparisonReport,
    McConfig,
    compare_matched_unmatched,
    distance_report,
    distance_rows_to_csv,
    run_monte_carlo,
    timing_benchmark,
)
from .ingest import IngestConfig, build_period_graphs, parse_trips
from .matching import MatchConfig, MatchResult, pad_with_null_nodes, register

log = logging.getLogger("mobigraph")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
SEED_ENV = "MOBIGRAPH_SEED"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def derive_seed(seed: int, stage: str) -> int:
    """Stage-specific 63-bit seed from the global seed and a stage label."""
    digest = hashlib.sha256(f"{seed}:{stage}".encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def _float_list(text: str) -> list[float]:
    return [float(x) for x in str(text).split(",") if x.strip()]


def _int_list(text: str) -> list[int]:
    return [int(x) for x in str(text).split(",") if x.strip()]


@dataclass(frozen=True)
class _Opt:
    flag: str
    type: Callable[[str], Any]
    default: Any
    help: str
    choices: Sequence[str] | None = None

    @property
    def dest(self) -> str:
        return self.flag.lstrip("-").replace("-", "_")


COMMON = [
    _Opt("--seed", int, 0, f"global seed; every stage derives its own seed from it (env {SEED_ENV})"),
    _Opt("--out", str, "out", "output directory; nothing is written elsewhere"),
    _Opt("--threads", int, 1, "maximum worker threads for restarts / trials"),
    _Opt("--log-level", str, "INFO", "logging level", ["DEBUG", "INFO", "WARNING", "ERROR"]),
]
MATCH = [
    _Opt("--lambda", float, 0.5, "edge-vs-node balance in [0, 1]"),
    _Opt("--restarts", int, 5, "Frank-Wolfe runs (first from the barycenter)"),
    _Opt("--tol", float, 1e-9, "Frank-Wolfe gap stopping threshold"),
    _Opt("--max-iters", int, 100, "Frank-Wolfe iteration cap per run"),
    _Opt("--null-cost", float, 0.0, "attribute cost of matching a real node to a null node"),
]
TRAIN = [
    _Opt("--test-fraction", float, 0.2, "fraction of edges held out for testing"),
    _Opt("--lr", float, 0.01, "Adam learning rate"),
]
MC = [
    _Opt("--trials", int, 100, "Monte-Carlo trials"),
    _Opt("--top-k", int, 10, "top-scoring candidates kept per trial"),
    _Opt("--bins", int, 10, "equal-width likelihood bins on [0, 1]"),
    _Opt("--epochs", int, 10000, "training epochs per trial"),
]

COMMANDS: dict[str, tuple[str, list[_Opt]]] = {
    "ingest": (
        "build AM/PM mobility graphs from a taxi-trip CSV",
        [
            _Opt("--input", str, None, "trip CSV (NYC yellow-taxi schema)"),
            _Opt("--n-nodes", int, 16, "number of zones to sample"),
            _Opt("--modality", str, "avg-time", "edge quantity", ["avg-time", "trip-count"]),
            _Opt("--period", str, "both", "which period graph(s) to write", ["am", "pm", "both"]),
            _Opt("--min-duration", float, 1.0, "shortest trip kept, minutes"),
            _Opt("--max-duration", float, 180.0, "longest trip kept, minutes"),
            _Opt("--layout-iterations", int, 50, "force-directed layout iterations"),
        ],
    ),
    "match": (
        "register graph g2 onto g1",
        [_Opt("--g1", str, None, "reference graph JSON"), _Opt("--g2", str, None, "graph JSON to register")] + MATCH,
    ),
    "interpolate": (
        "straight-line walk from g1 to registered g2",
        [
            _Opt("--g1", str, None, "reference graph JSON"),
            _Opt("--g2", str, None, "second graph JSON (unregistered)"),
            _Opt("--match", str, None, "match.json to reuse; matched afresh if omitted"),
            _Opt("--steps", int, 5, "number of snapshots including both ends"),
        ]
        + MATCH,
    ),
    "predict": (
        "train one link predictor and score held-out pairs",
        [_Opt("--graph", str, None, "graph JSON"), _Opt("--epochs", int, 5000, "training epochs")] + TRAIN,
    ),
    "montecarlo": ("Monte-Carlo link prediction histogram", [_Opt("--graph", str, None, "graph JSON")] + MC + TRAIN),
    "compare": (
        "matched vs unmatched link prediction",
        [_Opt("--g1", str, None, "reference graph JSON"), _Opt("--g2", str, None, "second graph JSON")]
        + MC
        + TRAIN
        + MATCH,
    ),
    "benchmark": (
        "matching run time versus graph size, with a quadratic fit",
        [
            _Opt("--sizes", _int_list, [16, 32, 64, 128], "comma-separated node counts"),
            _Opt("--repeats", int, 5, "runs per size (median reported)"),
            _Opt("--iterations", int, 30, "fixed Frank-Wolfe iteration budget"),
            _Opt("--lambda", float, 0.5, "edge-vs-node balance"),
        ],
    ),
    "report": (
        "distance before/after matching across lambda values",
        [
            _Opt("--g1", str, None, "reference graph JSON"),
            _Opt("--g2", str, None, "second graph JSON"),
            _Opt("--lambdas", _float_list, [0.0, 0.5, 1.0], "comma-separated lambda values"),
        ]
        + [o for o in MATCH if o.flag != "--lambda"],
    ),
}
REQUIRED = {
    "ingest": ["input"],
    "match": ["g1", "g2"],
    "interpolate": ["g1", "g2"],
    "predict": ["graph"],
    "montecarlo": ["graph"],
    "compare": ["g1", "g2"],
    "report": ["g1", "g2"],
}
PATH_ARGS = {"input", "g1", "g2", "graph", "match"}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mobigraph", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", default=None, help="INI config file mirroring the flags")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    for name, (help_text, opts) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", default=argparse.SUPPRESS, help="INI config file mirroring the flags")
        for opt in COMMON + opts:
            shown = ",".join(map(str, opt.default)) if isinstance(opt.default, list) else opt.default
            suffix = " (required)" if opt.dest in REQUIRED.get(name, []) else f" (default: {shown})"
            p.add_argument(
                opt.flag, dest=opt.dest, type=opt.type, default=None, choices=opt.choices, help=opt.help + suffix
            )
    return parser


def resolve(command: str, ns: argparse.Namespace, config: configparser.ConfigParser | None) -> dict[str, Any]:
    """Apply command line > config file > environment > default precedence."""
    values: dict[str, Any] = {}
    for opt in COMMON + COMMANDS[command][1]:
        value = getattr(ns, opt.dest, None)
        if value is None and config is not None:
            for section in (command, "global"):
                if not config.has_section(section):
                    continue
                for key in (opt.dest.replace("_", "-"), opt.dest):
                    if config.has_option(section, key):
                        raw = config.get(section, key)
                        try:
                            value = opt.type(raw)
                        except ValueError as exc:
                            raise UsageError(f"config [{section}] {key}: {exc}") from exc
                        if opt.choices and value not in opt.choices:
                            raise UsageError(f"config [{section}] {key}: {value!r} not in {list(opt.choices)}")
                        break
                if value is not None:
                    break
        if value is None and opt.dest == "seed" and os.environ.get(SEED_ENV):
            try:
                value = int(os.environ[SEED_ENV])
            except ValueError as exc:
                raise UsageError(f"{SEED_ENV} must be an integer") from exc
        if value is None:
            value = opt.default
        values[opt.dest] = value
    for key in REQUIRED.get(command, []):
        if values.get(key) is None:
            raise UsageError(f"{command}: --{key.replace('_', '-')} is required")
    for key in PATH_ARGS:
        if values.get(key) is not None and not Path(values[key]).exists():
            raise DataError(f"input file not found: {values[key]}")
    return values


# -- helpers ---------------------------------------------------------------------


def _out_dir(v: dict[str, Any]) -> Path:
    out = Path(v["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write(out: Path, name: str, text: str) -> Path:
    path = out / name
    path.write_text(text, encoding="utf-8")
    log.info("wrote %s", path)
    return path


def _json(doc: Any) -> str:
    return json.dumps(doc, indent=1) + "\n"


def _match_cfg(v: dict[str, Any], lam: float | None = None) -> MatchConfig:
    return MatchConfig(
        lam=v["lambda"] if lam is None else lam,
        max_iterations=v["max_iters"],
        convergence_tol=v["tol"],
        restarts=v["restarts"],
        seed=derive_seed(v["seed"], "match"),
        null_cost=v["null_cost"],
        threads=v["threads"],
    )


def _mc_cfg(v: dict[str, Any], stage: str) -> McConfig:
    return McConfig(
        trials=v["trials"],
        top_k=v["top_k"],
        bins=v["bins"],
        epochs=v["epochs"],
        lr=v["lr"],
        base_seed=derive_seed(v["seed"], stage) % (2**31),
        test_fraction=v["test_fraction"],
        threads=v["threads"],
    )


# -- subcommands -------------------------------------------------------------------


def cmd_ingest(v: dict[str, Any]) -> None:
    cfg = IngestConfig(
        n_nodes=v["n_nodes"],
        seed=derive_seed(v["seed"], "ingest"),
        modality=Modality(v["modality"]),
        min_duration_minutes=v["min_duration"],
        max_duration_minutes=v["max_duration"],
        layout_iterations=v["layout_iterations"],
    )
    with open(v["input"], newline="", encoding="utf-8") as fh:
        trips, diagnostics = parse_trips(fh)
    log.info("parsed %d trips, rejected %d rows", len(trips), len(diagnostics))
    am, pm = build_period_graphs(trips, cfg)
    out = _out_dir(v)
    for period, g in ((Period.AM, am), (Period.PM, pm)):
        if v["period"] in ("both", period.value):
            _write(out, f"graph_{period.value}.json", dumps_graph(g))
            _write(out, f"graph_{period.value}.graphml", to_graphml(g))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["row", "reason"])
    w.writerows((d.row, d.reason) for d in diagnostics)
    _write(out, "diagnostics.csv", buf.getvalue())


def cmd_match(v: dict[str, Any]) -> None:
    g1, g2 = load_graph(v["g1"]), load_graph(v["g2"])
    result, g1_used, g2_reg = register(g1, g2, _match_cfg(v))
    out = _out_dir(v)
    text = _json(result.to_dict())
    _write(out, "match.json", text)
    _write(out, "g2_registered.json", dumps_graph(g2_reg))
    if g1_used.n != g1.n:
        _write(out, "g1_padded.json", dumps_graph(g1_used))
    sys.stdout.write(text)


def cmd_interpolate(v: dict[str, Any]) -> None:
    g1, g2 = load_graph(v["g1"]), load_graph(v["g2"])
    if v["match"]:
        result = MatchResult.from_dict(json.loads(Path(v["match"]).read_text(encoding="utf-8")))
        if g1.n != g2.n:
            g1, g2 = pad_with_null_nodes(g1, g2)
        g2_reg = permute_graph(g2, result.permutation)
    else:
        _, g1, g2_reg = register(g1, g2, _match_cfg(v))
    path = interpolate(g1, g2_reg, v["steps"])
    doc = [{"t": t, **graph_to_dict(g)} for t, g in zip(path.ts, path.steps)]
    _write(_out_dir(v), "interpolation.json", _json(doc))


def cmd_predict(v: dict[str, Any]) -> None:
    g = load_graph(v["graph"])
    seed = derive_seed(v["seed"], "predict") % (2**31)
    split = split_edges(g, v["test_fraction"], seed)
    model, losses = train_link_predictor(g, split, v["epochs"], v["lr"], seed)
    candidates = list(split.test_pos) + list(split.test_neg)
    scores = predict_links(model, split.train_graph(g), candidates)
    out = _out_dir(v)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["u", "v", "node_u", "node_v", "label", "likelihood"])
    for k, ((a, b), s) in enumerate(zip(candidates, scores)):
        w.writerow([a, b, g.node_ids[a], g.node_ids[b], int(k < len(split.test_pos)), repr(float(s))])
    _write(out, "scores.csv", buf.getvalue())
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "loss"])
    w.writerows((e, repr(loss)) for e, loss in enumerate(losses))
    _write(out, "loss_history.csv", buf.getvalue())
    _write(out, "model.json", _json(model.to_dict()))


def cmd_montecarlo(v: dict[str, Any]) -> None:
    g = load_graph(v["graph"])
    hist, records = run_monte_carlo(g, _mc_cfg(v, "montecarlo"))
    out = _out_dir(v)
    _write(out, "histogram.csv", hist.to_csv())
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["trial", "seed", "rank", "likelihood", "correct", "final_loss"])
    for r in records:
        for rank, (s, ok) in enumerate(zip(r.scores, r.correct)):
            w.writerow([r.trial, r.seed, rank, repr(s), int(ok), repr(r.final_loss)])
    _write(out, "trials.csv", buf.getvalue())


def cmd_compare(v: dict[str, Any]) -> None:
    g1, g2 = load_graph(v["g1"]), load_graph(v["g2"])
    row = compare_matched_unmatched(g1, g2, _mc_cfg(v, "compare"), _match_cfg(v))
    _write(_out_dir(v), "comparison.csv", ComparisonReport([row]).to_csv())


def cmd_benchmark(v: dict[str, Any]) -> None:
    report = timing_benchmark(v["sizes"], v["repeats"], derive_seed(v["seed"], "benchmark"), v["iterations"], v["lambda"])
    _write(_out_dir(v), "timing.csv", report.to_csv())


def cmd_report(v: dict[str, Any]) -> None:
    g1, g2 = load_graph(v["g1"]), load_graph(v["g2"])
    rows = distance_report(g1, g2, v["lambdas"], _match_cfg({**v, "lambda": 0.5}))
    _write(_out_dir(v), "distances.csv", distance_rows_to_csv(rows))


HANDLERS: dict[str, Callable[[dict[str, Any]], None]] = {
    "ingest": cmd_ingest,
    "match": cmd_match,
    "interpolate": cmd_interpolate,
    "predict": cmd_predict,
    "montecarlo": cmd_montecarlo,
    "compare": cmd_compare,
    "benchmark": cmd_benchmark,
    "report": cmd_report,
}


def dispatch(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    if ns.command is None:
        parser.print_usage(sys.stderr)
        sys.stderr.write("mobigraph: error: a subcommand is required\n")
        return EXIT_USAGE
    config = None
    if getattr(ns, "config", None):
        config = configparser.ConfigParser()
        try:
            if not config.read(ns.config, encoding="utf-8"):
                sys.stderr.write(f"mobigraph: error: config file not found: {ns.config}\n")
                return EXIT_USAGE
        except configparser.Error as exc:
            sys.stderr.write(f"mobigraph: error: bad config file: {exc}\n")
            return EXIT_USAGE
    try:
        values = resolve(ns.command, ns, config)
    except UsageError as exc:
        sys.stderr.write(f"mobigraph: error: {exc}\n")
        return EXIT_USAGE
    except DataError as exc:
        sys.stderr.write(f"mobigraph: data error: {exc}\n")
        return EXIT_DATA
    logging.basicConfig(
        level=getattr(logging, values["log_level"]),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        HANDLERS[ns.command](values)
    except NumericalError as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC
    except (MobigraphError, OSError, json.JSONDecodeError) as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    return EXIT_OK


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
