"""``dpmld`` command line: data generation, training, budget tables, audits, benchmarks.

Every subcommand accepts ``--config FILE`` with flat ``key = value`` lines
(keys are the long flag names with underscores). Flags given on the command
line override the file. ``DPMLD_SEED`` supplies the seed when neither does.

Exit statuses: 0 success, 2 configuration error, 3 data or file error,
4 audit violation.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import audit as au
from .data import DataFormatError, GeneratorConfig, generate, load_external, write_dataset
from .gumbel import GumbelConfig
from .privacy import (
    DropoutRates,
    NormalizationSpec,
    PrivacyBudget,
    allocate_budget,
    matched_baseline,
)
from .trainer import TrainConfig, TrainResult, allocation_report, setup, train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_AUDIT = 4

SCHEMA_VERSION = 1
MU_GRID = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
RUN_AUDIT_STEP = 0.25


class ConfigError(Exception):
    pass


def _fmt(x: float) -> str:
    return f"{x:.9g}"


def _float_list(text: str) -> list[float]:
    """``0.1,0.5`` or an inclusive range ``start:stop:step``."""
    text = text.strip()
    try:
        if ":" in text:
            start, stop, step = (float(t) for t in text.split(":"))
            if step <= 0 or stop < start:
                raise ValueError
            n = int(round((stop - start) / step))
            return [float(round(start + i * step, 12)) for i in range(n + 1)]
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad number list {text!r}") from None


def _bool(text: str) -> bool:
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def read_config(path) -> dict[str, str]:
    values = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = (t.strip() for t in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


def write_config(values: dict, path: Path) -> None:
    lines = [f"{k} = {v}" for k, v in values.items() if v is not None]
    path.write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------- parser


def _train_flags(p: argparse.ArgumentParser) -> None:
    d = TrainConfig()
    g = d.gumbel
    p.add_argument("--data", help="dataset directory or jsonl file")
    p.add_argument("--epsilon", type=float, default=d.epsilon, help="total privacy budget (default %(default)s)")
    p.add_argument("--epochs", type=int, default=d.epochs, help="training epochs (default %(default)s)")
    p.add_argument("--batch-size", type=int, default=d.batch_size, help="mini-batch size (default %(default)s)")
    p.add_argument("--lr-p", type=float, default=d.lr_p, help="model learning rate (default %(default)s)")
    p.add_argument("--lr-w", type=float, default=d.lr_w, help="dropout-rate learning rate (default %(default)s)")
    p.add_argument("--momentum", type=float, default=d.momentum, help="SGD momentum (default %(default)s)")
    p.add_argument("--p-steps", type=int, default=d.p_steps, help="model steps per batch (default %(default)s)")
    p.add_argument("--w-steps", type=int, default=d.w_steps, help="rate steps per batch (default %(default)s)")
    p.add_argument("--tau-start", type=float, default=g.tau_start, help="initial temperature (default %(default)s)")
    p.add_argument("--tau-decay", type=float, default=g.decay, help="temperature decay per epoch (default %(default)s)")
    p.add_argument("--tau-floor", type=float, default=g.tau_floor, help="temperature floor (default %(default)s)")
    p.add_argument("--train-frac", type=float, default=d.train_frac, help="training fraction (default %(default)s)")
    p.add_argument("--init-rate", type=float, default=d.init_rate, help="initial drop rate (default %(default)s)")
    p.add_argument("--seed", type=int, default=None, help="run seed (default: $DPMLD_SEED, else 0)")


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(prog="dpmld", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    subs = {}

    def add(name, help_):
        p = sub.add_parser(name, help=help_, description=help_)
        p.add_argument("--config", help="flat key = value file; flags override it")
        subs[name] = p
        return p

    gd = GeneratorConfig()
    p = add("gen-data", "write a synthetic two-modality dataset")
    p.add_argument("--out", default="data", help="output directory (default %(default)s)")
    p.add_argument("--n", type=int, default=gd.n_samples, help="number of samples (default %(default)s)")
    p.add_argument("--seed", type=int, default=None, help="generator seed (default: $DPMLD_SEED, else 0)")
    p.add_argument("--channels", type=int, default=gd.eeg_channels, help="EEG channels (default %(default)s)")
    p.add_argument("--om-dims", type=int, default=gd.om_dims, help="OM dimensions (default %(default)s)")
    p.add_argument("--timesteps", type=int, default=gd.timesteps, help="samples per window (default %(default)s)")
    p.add_argument("--balance", type=float, default=gd.class_balance, help="class-1 fraction (default %(default)s)")
    p.add_argument("--noise-sd", type=float, default=gd.noise_sd, help="background noise level (default %(default)s)")
    p.add_argument("--format", choices=("jsonl", "csv"), default="jsonl", help="file layout (default %(default)s)")

    p = add("train", "train one model and write a run directory")
    _train_flags(p)
    p.add_argument("--scheme", choices=("elementwise", "uniform"), default="elementwise",
                   help="dropout scheme for private runs (default %(default)s)")
    p.add_argument("--mu", type=float, default=TrainConfig().mu, help="uniform-scheme drop rate (default %(default)s)")
    p.add_argument("--non-private", action="store_true", help="disable masking and noise entirely")
    p.add_argument("--out", default="run", help="run directory (default %(default)s)")

    p = add("allocate", "print the per-feature budget table")
    p.add_argument("--epsilon", type=float, default=1.0, help="total privacy budget (default %(default)s)")
    p.add_argument("--w", type=_float_list, default="0.5", help="drop rates, list or start:stop:step (default %(default)s)")

    p = add("audit", "audit realized privacy loss against the claimed budget")
    p.add_argument("--epsilon", type=float, default=1.0, help="claimed budget (default %(default)s)")
    p.add_argument("--w", type=_float_list, default="0.1:0.9:0.1", help="drop-rate grid (default %(default)s)")
    p.add_argument("--pairs", default="grid:0.05",
                   help="'grid[:step]' over [0,1]^2 or a file of 'f1,f2' lines (default %(default)s)")
    p.add_argument("--mc-draws", type=float, default=0, help="Monte Carlo draws per rate, 0 to skip (default 0)")
    p.add_argument("--extended", action="store_true", help="allow pairs outside [0,1]; report without a verdict")
    p.add_argument("--seed", type=int, default=None, help="Monte Carlo seed (default: $DPMLD_SEED, else 0)")
    p.add_argument("--out", default="audit_report.json", help="report file (default %(default)s)")

    p = add("benchmark", "compare element-wise, uniform and non-private training over seeds")
    _train_flags(p)
    p.add_argument("--epsilons", type=_float_list, default="0.01,0.1,1.0", help="budgets (default %(default)s)")
    p.add_argument("--seeds", type=int, default=5, help="number of seeds (default %(default)s)")
    p.add_argument("--mus", type=_float_list, default="0.1:0.9:0.1", help="uniform-scheme rates swept (default %(default)s)")
    p.add_argument("--schemes", default="elementwise,uniform,non-private", help="schemes to run (default %(default)s)")
    p.add_argument("--jobs", type=int, default=1, help="concurrent runs (default %(default)s)")
    p.add_argument("--out", default="benchmark.csv", help="result table (default %(default)s)")
    p.add_argument("--runs-dir", default=None, help="optional directory for per-run metrics")

    p = add("report", "write per-block allocation arrays for a finished run")
    p.add_argument("--run", default="run", help="run directory (default %(default)s)")
    p.add_argument("--out", default=None, help="output directory (default: the run directory)")
    return parser, subs


def parse_args(argv=None) -> argparse.Namespace:
    parser, subs = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        sub = subs[args.command]
        actions = {a.dest: a for a in sub._actions}
        values = read_config(args.config)
        unknown = sorted(set(values) - set(actions) - {"command"})
        if unknown:
            raise ConfigError(f"unknown config keys for {args.command}: {', '.join(unknown)}")
        defaults = {}
        for key, value in values.items():
            if key == "command":
                continue
            if isinstance(actions[key], argparse._StoreTrueAction):
                defaults[key] = _bool(value)
            else:
                defaults[key] = None if value == "" else value
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return args


def resolve_seed(seed) -> int:
    if seed is not None:
        return int(seed)
    env = os.environ.get("DPMLD_SEED")
    if env is None or env.strip() == "":
        return 0
    try:
        return int(env)
    except ValueError:
        raise ConfigError(f"DPMLD_SEED must be an integer, got {env!r}") from None


# ---------------------------------------------------------------- helpers


def train_config(args: argparse.Namespace, scheme: str | None = None) -> TrainConfig:
    if scheme is None:
        scheme = "non-private" if getattr(args, "non_private", False) else args.scheme
    try:
        return TrainConfig(
            epsilon=args.epsilon,
            epochs=args.epochs,
            batch_size=args.batch_size,
            lr_p=args.lr_p,
            lr_w=args.lr_w,
            momentum=args.momentum,
            gumbel=GumbelConfig(args.tau_start, args.tau_decay, args.tau_floor),
            seed=resolve_seed(args.seed),
            p_steps=args.p_steps,
            w_steps=args.w_steps,
            train_frac=args.train_frac,
            scheme=scheme,
            mu=getattr(args, "mu", TrainConfig().mu),
            init_rate=args.init_rate,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_data(path):
    if not path:
        raise DataFormatError("no dataset given (--data)")
    try:
        return load_external(path)
    except FileNotFoundError:
        raise DataFormatError(f"dataset not found: {path}") from None


def effective_allocation(cfg: TrainConfig, rates: DropoutRates) -> tuple[np.ndarray, np.ndarray]:
    """Drop rate and noise scale actually applied to each feature."""
    k = len(rates)
    if cfg.scheme == "non-private":
        return np.zeros(k), np.zeros(k)
    if cfg.scheme == "uniform":
        base = matched_baseline(cfg.mu, cfg.epsilon)
        return np.full(k, cfg.mu), np.full(k, 1.0 / base.eps_prime_uniform)
    w = rates.rates
    return w, allocate_budget(w, cfg.epsilon).scales


def metrics_line(record: dict) -> str:
    return json.dumps({"schema_version": SCHEMA_VERSION, **record}) + "\n"


def write_allocation(report: dict, out: Path) -> None:
    for block, arrays in report.items():
        with open(out / f"allocation_{block}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "w", "b", "mean_abs_f"])
            for i, (r, s, m) in enumerate(zip(arrays["rate"], arrays["scale"], arrays["magnitude"])):
                w.writerow([i, _fmt(r), _fmt(s), _fmt(m)])


def run_audit(cfg: TrainConfig, w: np.ndarray) -> dict:
    if cfg.scheme == "non-private":
        return {"verdict": "not applicable (non-private run)"}
    pairs = au.grid_pairs(RUN_AUDIT_STEP)
    if cfg.scheme == "uniform":
        report, _ = au.audit_baseline(matched_baseline(cfg.mu, cfg.epsilon), pairs)
    else:
        report = au.audit_mechanism(cfg.epsilon, np.unique(w), pairs)
    return report.to_dict()


def save_run(result: TrainResult, out: Path) -> dict:
    model, rates, cfg = result.model, result.rates, result.config
    w, b = effective_allocation(cfg, rates)
    slices = model.block_slices()
    block_of = np.empty(len(w), dtype=object)
    for name, s in slices.items():
        block_of[s] = name
    with open(out / "rates.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "block", "w", "b"])
        for i in range(len(w)):
            writer.writerow([i, block_of[i], _fmt(w[i]), _fmt(b[i])])
    state = model.params.state()
    state["norm.lo"], state["norm.hi"] = model.norm.lo, model.norm.hi
    state["rates.logits"] = rates.logits
    np.savez(out / "params.npz", **state)
    report = allocation_report(model, w, b, result.train)
    write_allocation(report, out)
    audit_doc = run_audit(cfg, w)
    (out / "audit.json").write_text(json.dumps(audit_doc, indent=2) + "\n")
    return report


def _snapshot(args: argparse.Namespace, seed: int) -> dict:
    skip = {"command", "config", "out"}
    values = {k: v for k, v in vars(args).items() if k not in skip}
    values["seed"] = seed
    if "data" in values and values["data"]:
        values["data"] = str(Path(values["data"]).resolve())
    return values


# ---------------------------------------------------------------- commands


def cmd_gen_data(args) -> int:
    try:
        cfg = GeneratorConfig(
            n_samples=args.n,
            eeg_channels=args.channels,
            om_dims=args.om_dims,
            timesteps=args.timesteps,
            class_balance=args.balance,
            noise_sd=args.noise_sd,
            seed=resolve_seed(args.seed),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    samples = generate(cfg)
    try:
        out = write_dataset(samples, args.out, format=args.format, config=cfg)
    except OSError as exc:
        raise DataFormatError(f"cannot write dataset to {args.out}: {exc}") from None
    counts = np.bincount([s.label for s in samples], minlength=2)
    print(f"wrote {len(samples)} samples to {out} (class 0: {counts[0]}, class 1: {counts[1]})")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = train_config(args)
    dataset = load_data(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_config(_snapshot(args, cfg.seed), out / "config.txt")
    with open(out / "metrics.jsonl", "w") as fh:

        def on_epoch(m):
            fh.write(metrics_line(m.record()))
            fh.flush()
            print(f"epoch {m.epoch:3d}  train_acc {m.train_acc:.4f}  test_acc {m.test_acc:.4f}  "
                  f"macro_f1 {m.macro_f1:.4f}  tau {m.tau:.3f}")

        result = train(dataset, cfg, on_epoch=on_epoch)
    report = save_run(result, out)
    if result.metrics:
        print(f"best test_acc {result.best_test_acc:.4f}  best macro_f1 {result.best_macro_f1:.4f}")
    for block, arrays in report.items():
        print(f"{block:4s} mean w {arrays['mean_rate']:.4f}  mean b {arrays['mean_scale']:.4f}")
    print(f"run written to {out}")
    return EXIT_OK


def allocation_table(eps: float, ws) -> str:
    budget = PrivacyBudget(eps)
    alloc = allocate_budget(np.asarray(ws, dtype=np.float64), budget)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["w", "eps_prime", "b", "w+(1-w)exp(eps_prime)", "exp(eps)"])
    for w, e, b in zip(ws, alloc.eps_prime, alloc.scales):
        writer.writerow([_fmt(w), _fmt(e), _fmt(b), _fmt(w + (1 - w) * np.exp(e)), _fmt(np.exp(budget.epsilon))])
    return buf.getvalue()


def cmd_allocate(args) -> int:
    try:
        sys.stdout.write(allocation_table(args.epsilon, args.w))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return EXIT_OK


def _read_pairs(spec: str) -> list[tuple[float, float]]:
    if spec.startswith("grid"):
        step = float(spec.split(":", 1)[1]) if ":" in spec else 0.05
        try:
            return au.grid_pairs(step)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    path = Path(spec)
    if not path.exists():
        raise ConfigError(f"pairs must be 'grid[:step]' or an existing file, got {spec!r}")
    pairs = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            f1, f2 = (float(t) for t in line.split(","))
        except ValueError:
            raise DataFormatError(f"{path}:{lineno}: expected 'f1,f2'") from None
        pairs.append((f1, f2))
    if not pairs:
        raise DataFormatError(f"{path}: no pairs")
    return pairs


def cmd_audit(args) -> int:
    pairs = _read_pairs(args.pairs)
    mc_draws = int(args.mc_draws)
    try:
        report = au.audit_mechanism(args.epsilon, args.w, pairs, extended=args.extended)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    doc = report.to_dict()
    if mc_draws:
        rng = np.random.default_rng(resolve_seed(args.seed))
        rows = []
        for w in args.w:
            entries = [e for e in report.entries if e.w == w]
            top = max(e.value for e in entries)
            worst = max((e for e in entries if e.value >= top - 1e-12), key=lambda e: e.f1 - e.f2)
            pair = au.AdjacentPair(worst.f1, worst.f2, w, args.epsilon, extended=args.extended)
            mc = au.monte_carlo_ratio(pair, n=mc_draws, rng=rng)
            rows.append({"w": w, "pair": [worst.f1, worst.f2], "analytic": worst.value,
                         "analytic_binned": mc.analytic_binned, "mc_estimate": mc.estimate,
                         "mc_width": mc.width, "agrees": mc.agrees})
        doc["monte_carlo"] = rows
    Path(args.out).write_text(json.dumps(doc, indent=2) + "\n")

    print(f"claimed epsilon  {_fmt(report.claimed)}")
    print(f"measured sup     {_fmt(report.measured)} at pair ({_fmt(report.worst.f1)}, {_fmt(report.worst.f2)}), "
          f"w={_fmt(report.worst.w)}, {report.worst.location}")
    print(f"margin           {_fmt(report.margin)}")
    for row in doc.get("monte_carlo", []):
        print(f"w={_fmt(row['w'])}  analytic {row['analytic_binned']:.6f}  "
              f"monte carlo {row['mc_estimate']:.6f} +/- {row['mc_width']:.6f}")
    print(f"verdict          {report.verdict} ({len(report.violations)} pairs over claimed + 1e-6)")
    if not args.extended and report.violations:
        return EXIT_AUDIT
    return EXIT_OK


# benchmark workers share the dataset through a module global set once per process
_BENCH_DATA = None


def _bench_init(dataset) -> None:
    global _BENCH_DATA
    _BENCH_DATA = dataset


def _bench_run(task: tuple[TrainConfig, str | None]) -> tuple[float, float]:
    cfg, metrics_path = task
    result = train(_BENCH_DATA, cfg)
    if metrics_path:
        Path(metrics_path).parent.mkdir(parents=True, exist_ok=True)
        with open(metrics_path, "w") as fh:
            for m in result.metrics:
                fh.write(metrics_line(m.record()))
    return result.best_test_acc, result.best_macro_f1


def _mean_sd(x) -> tuple[float, float]:
    x = np.asarray(x, dtype=np.float64)
    return float(x.mean()), float(x.std(ddof=1)) if x.size > 1 else 0.0


def run_benchmark(
    dataset,
    base: TrainConfig,
    epsilons,
    seeds,
    schemes=("elementwise", "uniform", "non-private"),
    mus=MU_GRID,
    jobs: int = 1,
    runs_dir=None,
) -> list[dict]:
    """Best test accuracy and macro-F1 per scheme and budget, mean and sd over seeds.

    The uniform scheme is run for every ``mu`` (budget matched to ``eps``) and
    the ``mu`` with the highest mean accuracy is reported.
    """
    tasks, keys = [], []
    for scheme in schemes:
        if scheme == "non-private":
            combos = [(None, None)]
        elif scheme == "uniform":
            combos = [(e, mu) for e in epsilons for mu in mus]
        else:
            combos = [(e, None) for e in epsilons]
        for eps, mu in combos:
            for seed in seeds:
                cfg = replace(base, scheme=scheme, seed=seed,
                              epsilon=base.epsilon if eps is None else eps,
                              mu=base.mu if mu is None else mu)
                path = None
                if runs_dir:
                    tag = scheme if eps is None else f"{scheme}_eps{eps:g}" + ("" if mu is None else f"_mu{mu:g}")
                    path = str(Path(runs_dir) / f"{tag}_seed{seed}" / "metrics.jsonl")
                tasks.append((cfg, path))
                keys.append((scheme, eps, mu))

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs, initializer=_bench_init, initargs=(dataset,)) as pool:
            results = list(pool.map(_bench_run, tasks))
    else:
        _bench_init(dataset)
        results = [_bench_run(t) for t in tasks]

    grouped: dict[tuple, list] = {}
    for key, res in zip(keys, results):
        grouped.setdefault(key, []).append(res)
    rows = []
    for scheme in schemes:
        eps_list = [None] if scheme == "non-private" else list(epsilons)
        for eps in eps_list:
            cands = [(k, v) for k, v in grouped.items() if k[0] == scheme and k[1] == eps]
            (_, _, mu), vals = max(cands, key=lambda kv: np.mean([a for a, _ in kv[1]]))
            acc_m, acc_s = _mean_sd([a for a, _ in vals])
            f1_m, f1_s = _mean_sd([f for _, f in vals])
            rows.append({"scheme": scheme, "epsilon": eps, "mu": mu, "acc_mean": acc_m, "acc_sd": acc_s,
                         "f1_mean": f1_m, "f1_sd": f1_s, "seeds": len(vals)})
    return rows


def benchmark_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    cols = ["scheme", "epsilon", "mu", "acc_mean", "acc_sd", "f1_mean", "f1_sd", "seeds"]
    writer.writerow(cols)
    for r in rows:
        writer.writerow(["" if r[c] is None else (_fmt(r[c]) if isinstance(r[c], float) else r[c]) for c in cols])
    return buf.getvalue()


def cmd_benchmark(args) -> int:
    schemes = tuple(s.strip() for s in args.schemes.split(",") if s.strip())
    bad = set(schemes) - {"elementwise", "uniform", "non-private"}
    if bad or not schemes:
        raise ConfigError(f"unknown schemes: {sorted(bad)}")
    if args.seeds < 1 or args.jobs < 1:
        raise ConfigError("--seeds and --jobs must be >= 1")
    for e in args.epsilons:
        try:
            PrivacyBudget(e)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    base = train_config(args, scheme="elementwise")
    dataset = load_data(args.data)
    seeds = [base.seed + i for i in range(args.seeds)]
    rows = run_benchmark(dataset, base, args.epsilons, seeds, schemes, args.mus, args.jobs, args.runs_dir)
    text = benchmark_csv(rows)
    Path(args.out).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def load_run(run: Path):
    """Rebuild model, rates and config of a finished run from its directory."""
    if not (run / "config.txt").exists() or not (run / "params.npz").exists():
        raise DataFormatError(f"no run artifact in {run}")
    args = parse_args(["train", "--config", str(run / "config.txt")])
    cfg = train_config(args)
    model, _, train_data, _, _ = setup(load_data(args.data), cfg)
    with np.load(run / "params.npz") as state:
        arrays = {k: state[k] for k in state.files}
    model.norm = NormalizationSpec(arrays.pop("norm.lo"), arrays.pop("norm.hi"))
    rates = DropoutRates(arrays.pop("rates.logits"), w_min=cfg.w_min, w_max=cfg.w_max)
    model.params.load_state(arrays)
    return model, rates, cfg, train_data


def cmd_report(args) -> int:
    run = Path(args.run)
    model, rates, cfg, train_data = load_run(run)
    out = Path(args.out) if args.out else run
    out.mkdir(parents=True, exist_ok=True)
    w, b = effective_allocation(cfg, rates)
    report = allocation_report(model, w, b, train_data)
    write_allocation(report, out)
    for block, arrays in report.items():
        print(f"{block:4s} n={len(arrays['rate']):3d}  mean w {arrays['mean_rate']:.6f}  "
              f"mean b {arrays['mean_scale']:.6f}  mean |f| {arrays['mean_magnitude']:.6f}")
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "allocate": cmd_allocate,
    "audit": cmd_audit,
    "benchmark": cmd_benchmark,
    "report": cmd_report,
}


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataFormatError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
