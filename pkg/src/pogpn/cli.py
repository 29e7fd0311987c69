"""Command-line entry point: ``pogpn {synth,train,predict,eval,gradcheck}``.

Every failure prints one line ``pogpn: error[<kind>]: <reason>`` on stderr and
exits with the code for that kind (see ``EXIT_CODES``).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path
from typing import Any, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from . import checkpoint as ckptmod
from . import config as cfgmod
from . import data as datamod
from . import gradcheck, pipeline, training
from .graph import GraphError
from .likelihoods import LikelihoodError

EXIT_CODES = {"usage": 1, "config": 2, "diverged": 3, "data": 4, "gradcheck": 5, "io": 6}

logger = logging.getLogger("pogpn")


class CliError(Exception):
    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind

    @property
    def code(self) -> int:
        return EXIT_CODES[self.kind]


def _one_line(msg: Any) -> str:
    return " ".join(str(msg).split())


def _write_csv(path: Path, header: Sequence[str], rows: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) for v in row])


def _ensure_dir(path: str | Path) -> Path:
    p = Path(path)
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError("io", f"cannot create {p}: {exc.strerror or exc}") from None
    return p


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_synth(args: argparse.Namespace) -> int:
    out = _ensure_dir(args.out)
    seed = pipeline.env_seed(args.seed)
    sd = datamod.synth_generate(args.n_train, noise_seed=seed, n_test=args.n_test, standardize=False)
    try:
        for name, ds, truth in (("train", sd.train, sd.truth_train), ("test", sd.test, sd.truth_test)):
            datamod.write_synth_csv(out / f"{name}.csv", ds.X[:, 0], ds.Y["f1"][:, 0], ds.Y["f2"][:, 0],
                                    ds.Y["f3"][:, 0])
            cols = ["x", "f1", "f2", "f3", "y2"]
            _write_csv(out / f"{name}_truth.csv", cols,
                       np.column_stack([ds.X[:, 0]] + [truth[c] for c in cols[1:]]))
    except OSError as exc:
        raise CliError("io", f"cannot write to {out}: {exc.strerror or exc}") from None
    logger.info("wrote %d training and %d test rows to %s", args.n_train, args.n_test, out)
    return 0


def _load_config(path: str) -> dict[str, Any]:
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise CliError("config", f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise CliError("config", f"config {path} is not valid JSON: {exc}") from None
    return cfgmod.resolve(raw)


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _load_config(args.config)
    seed = pipeline.env_seed(cfg["training"].get("seed", 0))
    cfg["training"]["seed"] = seed
    cfgmod.build_graph(cfg["graph"])  # surface graph errors before touching data
    bound = pipeline.load_bound_data(cfg, args.data_dir)
    out = _ensure_dir(args.out)
    t0 = time.perf_counter()
    try:
        fitted = pipeline.fit(cfg, bound.train, seed)
    except training.TrainingDiverged as exc:
        training.write_trace(out / "loss_trace.csv", exc.trace)
        raise CliError("diverged", f"training diverged: {exc}") from None
    wall = time.perf_counter() - t0
    res = fitted.result
    training.write_trace(out / "loss_trace.csv", res.trace)
    ckptmod.save(out / "checkpoint.json", ckptmod.build(cfg, seed, res.states, bound.records))
    final = {}
    for row in res.trace:
        final[row.scope] = row.loss
    manifest = {
        "config_hash": cfgmod.config_hash(cfg),
        "seed": seed,
        "loss": fitted.train_cfg.loss,
        "method": fitted.train_cfg.method,
        "epochs": fitted.train_cfg.total_epochs,
        "final_metrics": {f"final_loss_{k}": v for k, v in sorted(final.items())},
        "loss_trace": "loss_trace.csv",
        "checkpoint": "checkpoint.json",
        "timing": "timing.json",
        "version": __version__,
    }
    ckptmod.write_atomic(out / "manifest.json", ckptmod.dumps(manifest))
    ckptmod.write_atomic(out / "timing.json", ckptmod.dumps({"wall_time_seconds": wall}))
    logger.info("trained %d epochs in %.1fs; outputs in %s", manifest["epochs"], wall, out)
    return 0


def _restore(path: str):
    ckpt = ckptmod.load(path)
    cfg = ckpt["config"]
    spec = cfgmod.build_graph(cfg["graph"])
    states = ckptmod.decode_states(ckpt["parameters"])
    if set(states) != set(spec.ids):
        raise ckptmod.CheckpointError(f"checkpoint nodes {sorted(states)} do not match graph {sorted(spec.ids)}")
    return ckpt, cfg, spec, states, ckptmod.decode_records(ckpt["standardization"])


def cmd_predict(args: argparse.Namespace) -> int:
    ckpt, cfg, spec, states, records = _restore(args.checkpoint)
    kind = cfg["data"].get("kind", "synthetic")
    names = pipeline.INPUT_COLUMNS.get(kind)
    try:
        table = datamod.read_table(args.inputs)
    except FileNotFoundError:
        raise CliError("data", f"inputs file {args.inputs} not found") from None
    if names is None:
        names = sorted(table)
    missing = [c for c in names if c not in table]
    if missing:
        raise CliError("data", f"inputs file lacks columns {missing}")
    X_orig = np.column_stack([table[c] for c in names])
    X = pipeline.model_inputs(X_orig, records)
    S = args.samples or cfg["training"].get("predict_samples", pipeline.DEFAULT_PREDICT_SAMPLES)
    seed = pipeline.env_seed(ckpt["seed"]) if args.seed is None else args.seed
    header, rows = pipeline.prediction_table(spec, states, X, X_orig, names, records, S, seed,
                                             zero_noise=args.zero_noise)
    out = Path(args.out)
    _ensure_dir(out.parent)
    _write_csv(out, header, rows)
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    ckpt, cfg, spec, states, _ = _restore(args.checkpoint)
    bound = pipeline.load_bound_data(cfg, args.data_dir)
    # evaluate in the units the model was trained in
    bound.train.standardization = ckptmod.decode_records(ckpt["standardization"])
    if bound.test is not None:
        bound.test = datamod.load_synth_csv(Path(args.data_dir) / "test.csv", bound.train.standardization)
    S = args.samples or cfg["training"].get("predict_samples", pipeline.DEFAULT_PREDICT_SAMPLES)
    seed = pipeline.env_seed(ckpt["seed"])
    result = pipeline.evaluate(spec, states, bound, S, seed)
    text = ckptmod.dumps(result)
    if args.out:
        out = Path(args.out)
        _ensure_dir(out.parent)
        ckptmod.write_atomic(out, text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    seed = pipeline.env_seed(args.seed)
    results = gradcheck.run_all(seed)
    lines = [f"{r.name}\t{r.error:.3e}\t{'ok' if r.ok else 'FAIL'}" for r in results]
    report = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(report)
    sys.stdout.write(report)
    bad = gradcheck.worst(results)
    if not bad.ok:
        raise CliError("gradcheck", f"gradient check failed; worst offender {bad.name} "
                                    f"(relative error {bad.error:.3e})")
    return 0


# ---------------------------------------------------------------------------
# parser and dispatch
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        print(f"pogpn: error[usage]: {_one_line(message)}", file=sys.stderr)
        sys.exit(EXIT_CODES["usage"])


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pogpn", description="Train and query partially observable GP networks.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--threads", type=int, default=None, help="cap BLAS/OpenMP threads")
    p.add_argument("--log-level", default="WARNING",
                   choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write the synthetic train/test CSVs and noise-free truth")
    s.add_argument("--n-train", type=int, default=40)
    s.add_argument("--n-test", type=int, default=200)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="fit a network from a JSON config")
    t.add_argument("--config", required=True)
    t.add_argument("--data-dir", required=True)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("predict", help="per-node predictive table for new inputs")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--inputs", required=True)
    r.add_argument("--samples", type=int, default=None)
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--zero-noise", action="store_true",
                   help="propagate posterior means; bands then reflect likelihood noise only")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_predict)

    e = sub.add_parser("eval", help="held-out metrics as JSON")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data-dir", required=True)
    e.add_argument("--samples", type=int, default=None)
    e.add_argument("--out", default=None)
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("gradcheck", help="finite-difference audit of every primitive and the network losses")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", default=None)
    g.set_defaults(func=cmd_gradcheck)
    return p


def _classify(exc: BaseException) -> CliError | None:
    if isinstance(exc, CliError):
        return exc
    if isinstance(exc, (cfgmod.ConfigError, GraphError, LikelihoodError, ckptmod.CheckpointError)):
        return CliError("config", _one_line(exc))
    if isinstance(exc, (FileNotFoundError, datamod.DataError)):
        return CliError("data", _one_line(exc))
    if isinstance(exc, training.TrainingDiverged):
        return CliError("diverged", _one_line(exc))
    return None


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    if args.threads is not None and args.threads < 1:
        parser.error("--threads must be positive")
    try:
        if args.threads is not None:
            with threadpool_limits(limits=args.threads):
                return args.func(args)
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - mapped to exit codes below
        err = _classify(exc)
        if err is None:
            raise
        print(f"pogpn: error[{err.kind}]: {_one_line(err)}", file=sys.stderr)
        return err.code


if __name__ == "__main__":
    sys.exit(main())
