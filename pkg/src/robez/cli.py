"""``robez`` command line: moment checks, fetch accounting, training, benchmarks.

Exit codes: 0 success, 2 usage or configuration error, 3 a runtime check
failed (moment outside its bound, fetch bound exceeded, training diverged).

Every command accepts ``--config FILE`` with flat ``key = value`` lines;
keys are flag names (``trials = 1000`` or ``z-list = 1,16``). Flags given on
the command line win over the file.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import memfetch, sketch
from .robe import TableSpec, make_plan

SCHEMA_VERSION = 1
EXIT_OK, EXIT_USAGE, EXIT_CHECK = 0, 2, 3
SE_BOUND = 4.0
EXACT_RTOL = 1e-12

log = logging.getLogger("robez")


class UsageError(Exception):
    pass


def threads() -> int:
    try:
        return max(1, int(os.environ.get("ROBE_THREADS", "1")))
    except ValueError:
        return 1


def read_config_file(path) -> dict:
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _int_list(text) -> list[int]:
    if isinstance(text, list):
        return text
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    if str(text).lower() in ("1", "true", "yes", "on"):
        return True
    if str(text).lower() in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _apply_config(parser: argparse.ArgumentParser, args: argparse.Namespace, argv: list[str]) -> argparse.Namespace:
    """Fill values from --config for every flag not given on the command line."""
    if not getattr(args, "config", None):
        return args
    values = read_config_file(args.config)
    given = {a.split("=", 1)[0].lstrip("-").replace("-", "_") for a in argv if a.startswith("--")}
    actions = {a.dest: a for a in parser._actions}
    for key, raw in values.items():
        if key not in actions:
            raise UsageError(f"unknown config key {key!r}")
        if key in given:
            continue
        action = actions[key]
        if isinstance(action, argparse._StoreTrueAction):
            value = _bool(raw)
        elif action.type is not None:
            value = action.type(raw)
        else:
            value = raw
        if action.choices is not None and value not in action.choices:
            raise UsageError(f"config value {key}={raw!r} not in {sorted(action.choices)}")
        setattr(args, key, value)
    return args


def _resolved(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("func",)}


def _emit(records, out: str | None, jsonl: bool):
    text = "\n".join(json.dumps(r, sort_keys=True) for r in records) + "\n" if jsonl else json.dumps(records[0], indent=2, sort_keys=True) + "\n"
    if out and out != "-":
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _rel_close(a: float, b: float, rtol: float) -> bool:
    return abs(a - b) <= rtol * max(abs(a), abs(b), 1e-300)


# -- variance ---------------------------------------------------------------


def cmd_variance(args) -> int:
    if not args.out:
        raise UsageError("--out is required")
    rng = np.random.default_rng(args.seed)
    x = rng.standard_normal(args.n)
    y = rng.standard_normal(args.n)
    ip = float(x @ y)
    v1 = sketch.theoretical_variance_v1(x, y, args.m)
    records, ok = [], True
    prev = None
    for z in args.z:
        if args.n % z or z > args.m:
            raise UsageError(f"z={z} must divide n={args.n} and be <= m={args.m}")
        vz = sketch.theoretical_variance_vz(x, y, args.m, z)
        rec = {
            "schema_version": SCHEMA_VERSION,
            "command": "variance",
            "config": _resolved(args),
            "n": args.n, "m": args.m, "z": z, "seed": args.seed,
            "inner_product": ip, "v1_theory": v1, "vz_theory": vz,
        }
        if args.exhaustive:
            draws = args.m ** (args.n // z) * 2 ** args.n
            if draws > sketch.ENUMERATION_LIMIT:
                raise UsageError(f"--exhaustive needs {draws} draws, above the limit {sketch.ENUMERATION_LIMIT}")
            mean, var = sketch.exhaustive_moments(x, y, args.m, z)
            checks = {"mean": _rel_close(mean, ip, EXACT_RTOL), "var": _rel_close(var, vz, EXACT_RTOL)}
            rec.update(mode="exhaustive", trials=draws, mean=mean, var=var, se_mean=0.0, se_var=0.0)
        else:
            r = sketch.monte_carlo_moments(x, y, args.m, z, args.trials, args.seed, args.backend, threads())
            rec.update(mode="monte_carlo", backend=args.backend, trials=r.trials, mean=r.mean_estimate,
                       var=r.variance_estimate, se_mean=r.standard_error_mean, se_var=r.standard_error_variance)
            checks = {
                "mean": abs(r.mean_estimate - ip) <= SE_BOUND * r.standard_error_mean,
                "var": abs(r.variance_estimate - vz) <= SE_BOUND * r.standard_error_variance,
            }
            if args.backend == "universal":
                # theory assumes fully random hashing; report the gap only
                rec["gap_mean_se"] = (r.mean_estimate - ip) / r.standard_error_mean if r.standard_error_mean else 0.0
                rec["gap_var_se"] = (r.variance_estimate - vz) / r.standard_error_variance if r.standard_error_variance else 0.0
                checks = {k: True for k in checks}
        if prev is not None and z % prev[0] == 0:
            checks["vz_monotone"] = vz <= prev[1] * (1 + EXACT_RTOL)
        prev = (z, vz)
        rec["checks"] = checks
        ok &= all(checks.values())
        records.append(rec)
    _emit(records, args.out, jsonl=True)
    return EXIT_OK if ok else EXIT_CHECK


# -- fetch ------------------------------------------------------------------


def cmd_fetch(args) -> int:
    m = args.m if args.m is not None else max(100 * args.d, args.z)
    z = 1 if args.scheme == memfetch.ROBE1 else args.z
    try:
        config = memfetch.FetchModelConfig(args.d, args.b, z, max(m, z), args.alignment)
        bound = memfetch.fetch_bound(config, args.scheme)
    except memfetch.NoTableRowError as exc:
        raise UsageError(f"no fetch-table row applies: {exc}") from None
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    rec = {
        "schema_version": SCHEMA_VERSION,
        "command": "fetch",
        "config": _resolved(args),
        "scheme": args.scheme, "d": args.d, "b": args.b, "z": z, "m": config.m,
        "bound": bound, "observed_max": None, "observed_mean": None,
    }
    code = EXIT_OK
    if args.simulate:
        if args.scheme == memfetch.ORIGINAL:
            rng = np.random.default_rng(args.seed)
            queries = [(0, int(t)) for t in rng.integers(0, args.vocab, args.simulate)]
            summary = memfetch.simulate_original_fetches(config, queries)
        else:
            plan = make_plan(config.m, z, [TableSpec(0, args.vocab, args.d)], seed=args.seed)
            queries = memfetch.random_queries(plan, args.simulate, args.seed)
            summary = memfetch.simulate_fetches(plan, config, queries)
        rec.update(observed_max=summary.max, observed_mean=summary.mean,
                   histogram={str(k): v for k, v in sorted(summary.histogram.items())})
        if summary.max > bound:
            code = EXIT_CHECK
    _emit([rec], args.out, jsonl=False)
    return code


# -- train ------------------------------------------------------------------


SYNTH_KEYS = {
    "rows": ("n_rows", int), "features": ("n_cat_features", int), "vocab": ("vocab_size", int),
    "dim": ("embed_dim_truth", int), "noise": ("noise", float), "seed": ("seed", int),
    "dense": ("n_dense", int), "signal": ("signal", float), "zipf": ("zipf_exponent", float),
}


def parse_synth_spec(text: str) -> dict:
    """``rows=20000,features=4,vocab=100,dim=8,noise=0.1`` -> synth_dataset kwargs."""
    kwargs = {"n_rows": 20000, "n_cat_features": 4, "vocab_size": 100, "embed_dim_truth": 8, "noise": 0.1, "seed": 0}
    for part in filter(None, (p.strip() for p in text.split(","))):
        key, _, value = part.partition("=")
        if key not in SYNTH_KEYS or not value:
            raise UsageError(f"bad --synth item {part!r}; keys: {', '.join(SYNTH_KEYS)}")
        name, conv = SYNTH_KEYS[key]
        try:
            kwargs[name] = conv(value)
        except ValueError:
            raise UsageError(f"bad --synth value {part!r}") from None
    return kwargs


def cmd_train(args) -> int:
    from .trainer.data import DatasetError, load_csv_dataset, synth_dataset
    from .trainer.model import ModelConfig, TrainingDiverged, train

    if not args.out:
        raise UsageError("--out is required")
    if bool(args.data) == bool(args.synth):
        raise UsageError("give exactly one of --data or --synth")
    if args.backend == "robe" and args.m is None:
        raise UsageError("--backend robe needs --m")
    try:
        if args.data:
            ds = load_csv_dataset(args.data)
        else:
            ds = synth_dataset(**parse_synth_spec(args.synth))
        train_split, eval_split = ds.split(0.9, seed=args.seed)
        config = ModelConfig(
            embed_dim=args.dim, backend=args.backend, m=args.m, z=args.z, learning_rate=args.lr,
            epochs=args.epochs, batch_size=args.batch_size, seed=args.seed, use_sign_hash=args.sign,
        )
    except (DatasetError, FileNotFoundError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    try:
        model, report = train(config, train_split, eval_split)
    except TrainingDiverged as exc:
        log.error("training diverged: %s", exc)
        _emit([{"schema_version": SCHEMA_VERSION, "command": "train", "config": _resolved(args),
                "status": "diverged", "error": str(exc)}], args.out, jsonl=False)
        return EXIT_CHECK
    rec = {"schema_version": SCHEMA_VERSION, "command": "train", "config": _resolved(args),
           "status": "ok", "dataset": ds.name, "rows": len(ds), **report.to_dict()}
    _emit([rec], args.out, jsonl=False)
    if args.checkpoint and args.backend == "robe":
        model.save(args.checkpoint)
    return EXIT_OK


# -- bench ------------------------------------------------------------------


def cmd_bench(args) -> int:
    from .trainer.bench import bench_lookup_throughput

    report = bench_lookup_throughput(
        d=args.d, m=args.m, z_values=args.z_list, n_queries=args.queries, seed=args.seed,
        vocab_size=args.vocab, n_tables=args.tables, repeats=args.repeats, hash_only=args.hash_only,
    )
    _emit([{"schema_version": SCHEMA_VERSION, "command": "bench", "config": _resolved(args), **report}],
          args.out, jsonl=False)
    return EXIT_OK


# -- thm2 -------------------------------------------------------------------


def pair_offsets(n: int, d: int, z: int, placement: str) -> tuple[int, int]:
    if placement == "same":
        if z < 2 * d:
            raise UsageError(f"same-block placement needs z >= 2*d (z={z}, d={d})")
        return 0, d
    b = max(z, d)
    if b + d > n:
        raise UsageError(f"different-block placement needs n >= max(z, d) + d (n={n})")
    return 0, b


def thm2_theta(n: int, d: int, a: int, b: int, seed: int, background: float) -> np.ndarray:
    """Background noise everywhere; correlated embeddings at offsets a and b."""
    rng = np.random.default_rng(seed)
    theta = background * rng.standard_normal(n)
    theta[a:a + d] = rng.standard_normal(d)
    theta[b:b + d] = theta[a:a + d] + 0.3 * rng.standard_normal(d)
    return theta


def cmd_thm2(args) -> int:
    if args.n % args.z or args.z > args.m or (args.z % args.d and args.d % args.z):
        raise UsageError("need z | n, z <= m and z | d or d | z")
    a, b = pair_offsets(args.n, args.d, args.z, args.placement)
    theta = thm2_theta(args.n, args.d, a, b, args.seed, args.background)
    true = float(theta[a:a + args.d] @ theta[b:b + args.d])
    r = sketch.embedding_pair_moments(theta, a, b, args.d, args.m, args.z, args.trials, args.seed, "oracle", threads())
    factor = sketch.expected_pair_factor(a, b, args.d, args.m, args.z)
    ratio = r.mean_estimate / true
    se_ratio = r.standard_error_mean / abs(true)
    z_score = (ratio - factor) / se_ratio if se_ratio else math.inf
    rec = {
        "schema_version": SCHEMA_VERSION, "command": "thm2", "config": _resolved(args),
        "placement": args.placement, "a_offset": a, "b_offset": b, "true_inner_product": true,
        "mean": r.mean_estimate, "var": r.variance_estimate, "se_mean": r.standard_error_mean,
        "se_var": r.standard_error_variance, "ratio": ratio, "se_ratio": se_ratio,
        "predicted_factor": factor, "z_score": z_score,
        "variance_scale": sketch.pair_variance_scale(theta, a, b, args.d, args.m),
    }
    _emit([rec], args.out, jsonl=True)
    return EXIT_OK if abs(z_score) <= SE_BOUND else EXIT_CHECK


# -- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="robez", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", help="flat key = value file; flags override it")
        p.set_defaults(func=func)
        return p

    p = add("variance", cmd_variance, "inner-product estimator moments vs. theory")
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--m", type=int, default=16)
    p.add_argument("--z", type=_int_list, default=[1], help="block sizes, comma separated")
    p.add_argument("--trials", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--exhaustive", action="store_true", help="enumerate every hash draw")
    p.add_argument("--backend", choices=("oracle", "universal"), default="oracle")
    p.add_argument("--out")

    p = add("fetch", cmd_fetch, "cache-line fetch bound and simulation")
    p.add_argument("--d", type=int, required=False, default=16)
    p.add_argument("--b", type=int, default=4)
    p.add_argument("--z", type=int, default=1)
    p.add_argument("--m", type=int, default=None)
    p.add_argument("--scheme", choices=memfetch.SCHEMES, default=memfetch.ROBEZ)
    p.add_argument("--simulate", type=int, default=0, metavar="N", help="simulate N random lookups")
    p.add_argument("--alignment", type=int, default=0, help="array start offset within a cache line")
    p.add_argument("--vocab", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")

    p = add("train", cmd_train, "train the click model on full or ROBE embeddings")
    p.add_argument("--data", help="CSV with header label,d0..,c0..")
    p.add_argument("--synth", help="synthetic data spec, e.g. rows=20000,features=4,vocab=100,dim=8,noise=0.1")
    p.add_argument("--backend", choices=("full", "robe"), default="full")
    p.add_argument("--m", type=int)
    p.add_argument("--z", type=int)
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--lr", type=float, default=0.5)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--sign", action="store_true", help="enable the sign hash")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--checkpoint", help="write ROBE checkpoint (+ .json sidecar) here")
    p.add_argument("--out")

    p = add("bench", cmd_bench, "lookup throughput for full tables and ROBE block sizes")
    p.add_argument("--d", type=int, default=16)
    p.add_argument("--m", type=int, default=1 << 16)
    p.add_argument("--z-list", type=_int_list, default=None, help="block sizes (default 1,d)")
    p.add_argument("--queries", type=int, default=200_000)
    p.add_argument("--vocab", type=int, default=100_000)
    p.add_argument("--tables", type=int, default=4)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--hash-only", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")

    p = add("thm2", cmd_thm2, "bias of reconstructed embedding inner products")
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--d", type=int, default=8)
    p.add_argument("--m", type=int, default=100)
    p.add_argument("--z", type=int, default=8)
    p.add_argument("--trials", type=int, default=100_000)
    p.add_argument("--placement", choices=("same", "different"), default="different")
    p.add_argument("--background", type=float, default=0.05, help="scale of the other coordinates")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        sub = parser._subparsers._group_actions[0].choices[args.command]
        args = _apply_config(sub, args, argv)
        if args.command == "bench" and args.z_list is None:
            args.z_list = [1, args.d]
        log.info("resolved config: %s", json.dumps(_resolved(args), sort_keys=True, default=str))
        return args.func(args)
    except (UsageError, argparse.ArgumentTypeError, OSError) as exc:
        print(f"robez {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
