"""Command-line front end.

Subcommands read preference pairs from JSONL, run the weighting / loss /
solver machinery, and emit machine-readable JSON or CSV. No plotting:
figures are downstream of the exported data. Exit codes: 0 success,
2 input or validation error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from .core import SchemaError, load_pairs, write_pairs
from .lab import SynthConfig, generate, reference_policy, train
from .loss import LossConfig, grad_norm, pair_loss, report_to_record
from .ot import (
    ENTROPY_FORMS,
    NumericalError,
    UotConfig,
    cost_matrix,
    plan_to_json,
    solve_uot,
)
from .weighting import (
    SCHEME_NAMES,
    Dpo,
    LdDpo,
    Otpo,
    SamPo,
    SimPo,
    Similarity,
    TauMode,
    UniformMin,
    normalize,
    weights,
    weights_to_record,
)

TAU_MODE_NAMES = [m.value for m in TauMode]


def build_scheme(name, *, alpha=0.5, seed=0, eps1=1.0, eps2=0.2,
                 tau_mode="min", entropy_form="shifted"):
    if name == "dpo":
        return Dpo()
    if name == "simpo":
        return SimPo()
    if name == "sampo":
        return SamPo(seed=int(seed))
    if name == "lddpo":
        return LdDpo(alpha=float(alpha))
    if name == "uniform":
        return UniformMin()
    if name == "similarity":
        return Similarity()
    if name == "otpo":
        cfg = UotConfig(eps1=float(eps1), eps2=float(eps2), entropy_form=entropy_form)
        return Otpo(cfg=cfg, tau_mode=TauMode(tau_mode))
    raise SchemaError(f"unknown scheme '{name}'")


# ---------------------------------------------------------------------------
# config file and flag merging (precedence: defaults < config file < flags)

def _parse_config_file(path) -> dict:
    values = {}
    with open(path, "r", encoding="utf-8") as f:
        for ln, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise SchemaError(f"config line {ln}: expected 'key = value'")
            key, _, text = line.partition("=")
            key = key.strip().replace("-", "_")
            text = text.strip()
            try:
                value = json.loads(text)
            except json.JSONDecodeError:
                value = text.strip("\"'")
            values[key] = value
    return values


def _merge_options(args, defaults: dict) -> dict:
    """Resolve each option from flag, then config file, then default."""
    config = _parse_config_file(args.config) if getattr(args, "config", None) else {}
    unknown = set(config) - set(defaults)
    if unknown:
        raise SchemaError(f"unknown config key(s): {', '.join(sorted(unknown))}")
    out = {}
    for key, default in defaults.items():
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            out[key] = flag_value
        elif key in config:
            out[key] = config[key]
        else:
            out[key] = default
    return out


SCHEME_DEFAULTS = {
    "scheme": "otpo",
    "alpha": 0.5,
    "seed": 0,
    "eps1": 1.0,
    "eps2": 0.2,
    "tau_mode": "min",
    "entropy_form": "shifted",
}


def _add_input_flags(p):
    p.add_argument("input", help="preference pairs, one JSON record per line")
    p.add_argument("--strict", action="store_true", default=None,
                   help="reject positive log-probabilities")
    p.add_argument("--hidden-bin", help="sidecar binary file of float64 hidden states")
    p.add_argument("--hidden-index", help="JSON offset index for --hidden-bin")


def _add_scheme_flags(p):
    p.add_argument("--scheme", choices=SCHEME_NAMES)
    p.add_argument("--alpha", type=float, help="tail discount for lddpo")
    p.add_argument("--seed", type=int,
                   help="random seed (sampo sampling; also the corpus seed for train-toy)")
    p.add_argument("--eps1", type=float, help="entropy weight of the transport solver")
    p.add_argument("--eps2", type=float, help="marginal-KL weight of the transport solver")
    p.add_argument("--tau-mode", choices=TAU_MODE_NAMES, dest="tau_mode")
    p.add_argument("--entropy-form", choices=list(ENTROPY_FORMS), dest="entropy_form")


def _add_common_flags(p):
    p.add_argument("--out", default="-", help="output path, '-' for stdout")
    p.add_argument("--threads", type=int, help="pair-level worker threads"
                   " (env OTW_THREADS as fallback)")
    p.add_argument("--config", help="key = value file merged under the flags")


def _thread_count(opts) -> int:
    n = opts.get("threads")
    if n is None:
        raw = os.environ.get("OTW_THREADS", "1")
        try:
            n = int(raw)
        except ValueError:
            raise SchemaError(f"OTW_THREADS must be an integer, got {raw!r}") from None
    n = int(n)
    if n < 1:
        raise SchemaError(f"threads must be >= 1, got {n}")
    return n


def _map_pairs(fn, pairs, threads: int):
    if threads == 1:
        return [fn(p) for p in pairs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, pairs))


def _load_input(args, opts):
    return load_pairs(
        args.input,
        strict=bool(opts.get("strict")),
        hidden_bin=getattr(args, "hidden_bin", None),
        hidden_index=getattr(args, "hidden_index", None),
    )


def _write_lines(out, lines):
    text = "".join(line + "\n" for line in lines)
    if out == "-":
        sys.stdout.write(text)
    else:
        with open(out, "w", encoding="utf-8") as f:
            f.write(text)


# ---------------------------------------------------------------------------
# subcommands

def cmd_weights(args) -> int:
    defaults = dict(SCHEME_DEFAULTS, strict=False, threads=None)
    opts = _merge_options(args, defaults)
    scheme = build_scheme(
        opts["scheme"], alpha=opts["alpha"], seed=opts["seed"], eps1=opts["eps1"],
        eps2=opts["eps2"], tau_mode=opts["tau_mode"], entropy_form=opts["entropy_form"],
    )
    pairs = _load_input(args, opts)
    records = _map_pairs(
        lambda p: weights_to_record(p.pair_id, weights(p, scheme)),
        pairs, _thread_count(opts),
    )
    _write_lines(args.out, [json.dumps(r) for r in records])
    return 0


def _sankey_json(pair, plan, threshold: float) -> dict:
    links = []
    for i, j in np.argwhere(plan.gamma > threshold):
        links.append({"source": f"C{int(i)}", "target": f"R{int(j)}",
                      "value": float(plan.gamma[i, j])})
    w_c = np.zeros(len(pair.chosen))
    w_r = np.zeros(len(pair.rejected))
    for link in links:
        w_c[int(link["source"][1:])] += link["value"]
        w_r[int(link["target"][1:])] += link["value"]
    nodes = [
        {"id": f"C{i}", "token": str(int(t)), "weight": float(w_c[i])}
        for i, t in enumerate(pair.chosen.token_ids)
    ] + [
        {"id": f"R{j}", "token": str(int(t)), "weight": float(w_r[j])}
        for j, t in enumerate(pair.rejected.token_ids)
    ]
    return {"pair_id": pair.pair_id, "threshold": threshold,
            "nodes": nodes, "links": links}


def cmd_plan(args) -> int:
    defaults = {"eps1": 1.0, "eps2": 0.2, "entropy_form": "shifted",
                "threshold": 1e-6, "strict": False, "threads": None}
    opts = _merge_options(args, defaults)
    pairs = _load_input(args, opts)
    if not pairs:
        raise SchemaError(f"no pairs found in {args.input}")
    if args.pair_id is None:
        pair = pairs[0]
    else:
        matches = [p for p in pairs if p.pair_id == args.pair_id]
        if not matches:
            raise SchemaError(f"pair_id '{args.pair_id}' not found in {args.input}")
        pair = matches[0]
    cfg = UotConfig(eps1=float(opts["eps1"]), eps2=float(opts["eps2"]),
                    entropy_form=opts["entropy_form"])
    plan = solve_uot(cost_matrix(pair.chosen.hidden, pair.rejected.hidden), cfg)
    threshold = float(opts["threshold"])
    if args.sankey:
        payload = _sankey_json(pair, plan, threshold)
    else:
        payload = {"pair_id": pair.pair_id, **plan_to_json(plan, threshold)}
    _write_lines(args.out, [json.dumps(payload)])
    return 0


def cmd_loss(args) -> int:
    defaults = dict(SCHEME_DEFAULTS, beta=0.1, simpo_gamma=0.0, strict=False, threads=None)
    opts = _merge_options(args, defaults)
    scheme = build_scheme(
        opts["scheme"], alpha=opts["alpha"], seed=opts["seed"], eps1=opts["eps1"],
        eps2=opts["eps2"], tau_mode=opts["tau_mode"], entropy_form=opts["entropy_form"],
    )
    cfg = LossConfig(beta=float(opts["beta"]), scheme=scheme,
                     simpo_gamma=float(opts["simpo_gamma"]))
    pairs = _load_input(args, opts)
    reports = _map_pairs(lambda p: pair_loss(p, cfg), pairs, _thread_count(opts))
    lines = []
    for pair, rep in zip(pairs, reports):
        rec = report_to_record(pair.pair_id, rep)
        rec["scheme"] = scheme.name
        rec["beta"] = cfg.beta
        lines.append(json.dumps(rec))
    n = len(reports)
    if n == 0:
        raise SchemaError(f"no pairs found in {args.input}")
    aggregate = {
        "aggregate": True,
        "pairs": n,
        "scheme": scheme.name,
        "beta": cfg.beta,
        "mean_loss": sum(r.loss for r in reports) / n,
        "mean_delta_r": sum(r.delta_r for r in reports) / n,
        "mean_grad_norm": sum(grad_norm(r) for r in reports) / n,
    }
    lines.append(json.dumps(aggregate))
    _write_lines(args.out, lines)
    return 0


SWEEP_METRICS = (
    "weight_variance_median",
    "weight_variance_mean",
    "total_mass_median",
    "total_mass_mean",
    "reward_margin_mean",
    "reward_margin_std",
    "loss_mean",
)


def _parse_grid(text, flag) -> list[float]:
    values = [float(v) for v in str(text).split(",") if v.strip() != ""]
    if not values:
        raise SchemaError(f"{flag} must list at least one value")
    return values


def cmd_sweep(args) -> int:
    defaults = {"eps1_grid": "0.1,1", "eps2_grid": "0.2", "tau_mode": "min",
                "entropy_form": "shifted", "beta": 0.1, "strict": False, "threads": None}
    opts = _merge_options(args, defaults)
    eps1_grid = _parse_grid(opts["eps1_grid"], "--eps1-grid")
    eps2_grid = _parse_grid(opts["eps2_grid"], "--eps2-grid")
    pairs = _load_input(args, opts)
    if not pairs:
        raise SchemaError(f"no pairs found in {args.input}")
    threads = _thread_count(opts)

    rows = []
    for eps1 in eps1_grid:
        for eps2 in eps2_grid:
            scheme = build_scheme("otpo", eps1=eps1, eps2=eps2,
                                  tau_mode=opts["tau_mode"],
                                  entropy_form=opts["entropy_form"])
            cfg = LossConfig(beta=float(opts["beta"]), scheme=scheme)

            def one(pair, scheme=scheme, cfg=cfg):
                plan = solve_uot(
                    cost_matrix(pair.chosen.hidden, pair.rejected.hidden), scheme.cfg
                )
                tw = normalize(plan, len(pair.chosen), len(pair.rejected),
                               scheme.tau_mode, scheme=scheme)
                rep = pair_loss(pair, cfg, token_weights=tw)
                wvar = float(np.var(np.concatenate([tw.w_chosen, tw.w_rejected])))
                return wvar, plan.total_mass, cfg.beta * rep.delta_r, rep.loss

            stats = _map_pairs(one, pairs, threads)
            wvars = np.array([s[0] for s in stats])
            masses = np.array([s[1] for s in stats])
            margins = np.array([s[2] for s in stats])
            losses = np.array([s[3] for s in stats])
            values = {
                "weight_variance_median": float(np.median(wvars)),
                "weight_variance_mean": float(wvars.mean()),
                "total_mass_median": float(np.median(masses)),
                "total_mass_mean": float(masses.mean()),
                "reward_margin_mean": float(margins.mean()),
                "reward_margin_std": float(margins.std()),
                "loss_mean": float(losses.mean()),
            }
            for metric in SWEEP_METRICS:
                rows.append((eps1, eps2, metric, values[metric]))

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["eps1", "eps2", "metric", "value"])
    for row in rows:
        writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    _write_lines(args.out, [buf.getvalue().rstrip("\n")])
    return 0


def cmd_train_toy(args) -> int:
    defaults = dict(
        SCHEME_DEFAULTS,
        vocab_size=64, dim=16, num_pairs=100, shared_span=6, length_bias=10,
        noise_scale=0.25, beta=0.1, simpo_gamma=0.0, steps=100, lr=0.5,
    )
    opts = _merge_options(args, defaults)
    if int(opts["steps"]) < 1:
        raise SchemaError(f"--steps must be >= 1, got {opts['steps']}")
    if not float(opts["lr"]) >= 0:
        raise SchemaError(f"--lr must be >= 0, got {opts['lr']}")

    synth = SynthConfig(
        vocab_size=int(opts["vocab_size"]), d=int(opts["dim"]),
        num_pairs=int(opts["num_pairs"]), shared_span_len=int(opts["shared_span"]),
        length_bias=int(opts["length_bias"]), noise_scale=float(opts["noise_scale"]),
        seed=int(opts["seed"]),
    )
    scheme = build_scheme(
        opts["scheme"], alpha=opts["alpha"], seed=opts["seed"], eps1=opts["eps1"],
        eps2=opts["eps2"], tau_mode=opts["tau_mode"], entropy_form=opts["entropy_form"],
    )
    cfg = LossConfig(beta=float(opts["beta"]), scheme=scheme,
                     simpo_gamma=float(opts["simpo_gamma"]))

    pairs = generate(synth)
    if args.dump_corpus:
        write_pairs(pairs, args.dump_corpus)
    policy = reference_policy(synth)
    report = train(policy, pairs, cfg, int(opts["steps"]), float(opts["lr"]))

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["step", "mean_loss", "mean_delta_r", "grad_norm",
                     "mean_chosen_len", "mean_rejected_len"])
    for t in range(len(report.loss)):
        writer.writerow([t, repr(float(report.loss[t])), repr(float(report.delta_r[t])),
                         repr(float(report.grad_norm[t])),
                         repr(float(report.mean_chosen_len[t])),
                         repr(float(report.mean_rejected_len[t]))])
    summary = {
        "scheme": scheme.name,
        "beta": cfg.beta,
        "steps": int(opts["steps"]),
        "lr": float(opts["lr"]),
        "num_pairs": synth.num_pairs,
        "length_bias": synth.length_bias,
        "seed": synth.seed,
        "slope": report.length_fit.slope,
        "intercept": report.length_fit.intercept,
        "r": report.length_fit.r,
        "r_defined": report.length_fit.r_defined,
        "reward_margin_mean": report.reward_margin_mean,
        "reward_margin_std": report.reward_margin_std,
        "final_loss": float(report.loss[-1]),
        "max_grad_norm": float(report.grad_norm.max()),
    }
    if args.out == "-":
        sys.stdout.write(buf.getvalue())
        sys.stdout.write(json.dumps(summary) + "\n")
    else:
        with open(args.out + ".csv", "w", encoding="utf-8") as f:
            f.write(buf.getvalue())
        with open(args.out + ".json", "w", encoding="utf-8") as f:
            f.write(json.dumps(summary) + "\n")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="otweights",
        description="Token weights, transport plans, and weighted preference losses.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("weights", help="per-pair token weights as JSONL")
    _add_input_flags(p)
    _add_scheme_flags(p)
    _add_common_flags(p)
    p.set_defaults(func=cmd_weights)

    p = sub.add_parser("plan", help="transport plan (or Sankey data) for one pair")
    _add_input_flags(p)
    p.add_argument("--eps1", type=float)
    p.add_argument("--eps2", type=float)
    p.add_argument("--entropy-form", choices=list(ENTROPY_FORMS), dest="entropy_form")
    p.add_argument("--pair-id", dest="pair_id", help="defaults to the first pair")
    p.add_argument("--sankey", action="store_true", help="emit nodes/links JSON")
    p.add_argument("--threshold", type=float, help="drop plan entries at or below this")
    _add_common_flags(p)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("loss", help="per-pair loss reports plus an aggregate line")
    _add_input_flags(p)
    _add_scheme_flags(p)
    p.add_argument("--beta", type=float)
    p.add_argument("--simpo-gamma", type=float, dest="simpo_gamma")
    _add_common_flags(p)
    p.set_defaults(func=cmd_loss)

    p = sub.add_parser("sweep", help="eps grid sweep: weight/mass/margin stats as CSV")
    _add_input_flags(p)
    p.add_argument("--eps1-grid", dest="eps1_grid", help="comma-separated values")
    p.add_argument("--eps2-grid", dest="eps2_grid", help="comma-separated values")
    p.add_argument("--tau-mode", choices=TAU_MODE_NAMES, dest="tau_mode")
    p.add_argument("--entropy-form", choices=list(ENTROPY_FORMS), dest="entropy_form")
    p.add_argument("--beta", type=float)
    _add_common_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("train-toy", help="synthesize a corpus, train, report length trends")
    p.add_argument("--vocab-size", type=int, dest="vocab_size")
    p.add_argument("--dim", type=int)
    p.add_argument("--num-pairs", type=int, dest="num_pairs")
    p.add_argument("--shared-span", type=int, dest="shared_span")
    p.add_argument("--length-bias", type=int, dest="length_bias")
    p.add_argument("--noise-scale", type=float, dest="noise_scale")
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--simpo-gamma", type=float, dest="simpo_gamma")
    p.add_argument("--dump-corpus", dest="dump_corpus",
                   help="also write the generated pairs as JSONL")
    _add_scheme_flags(p)
    _add_common_flags(p)
    p.set_defaults(func=cmd_train_toy)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except (ValueError, OSError) as e:  # SchemaError is a ValueError
        print(f"error: {e}", file=sys.stderr)
        return 2
    except NumericalError as e:
        print(f"numerical error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
