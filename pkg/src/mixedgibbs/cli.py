"""Command-line front end.

Subcommands: ``gen`` (synthesize a dataset), ``check`` (growth-regime
audit), ``sample`` (run a chain, dump a trajectory), ``drift`` and
``contract`` (estimate the drift envelope and contraction factors),
``wcurve`` (coupled-chain Wasserstein curve), ``rate`` (evaluate the rate
formulas), ``scale`` (the full pipeline across a growing sequence).

Configuration precedence: built-in defaults, then a ``--config`` JSON
document, then explicit flags.  Every run writes ``manifest.json`` echoing
the fully resolved configuration, and re-running a manifest reproduces all
numeric artifacts byte for byte on the same platform.  Exit codes: 0 ok,
2 configuration parse error, 3 missing input, 4 numerical failure (the
failure details land in ``error.json``).
"""

from __future__ import annotations

import argparse
import json
import math
import struct
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import fastpath
from .bounds_engine import RateInputs, optimize_rate
from .coupling_lab import (
    CouplingConfig,
    default_start,
    estimate_contraction,
    estimate_drift,
    geometric_decay_rate,
    make_drift_probes,
    wasserstein_curve,
)
from .data_forge import GenConfig, generate, resolve_p, scale_sequence
from .gibbs_kernel import SingularDesignError
from .model_core import (
    AssumptionThresholds,
    DatasetFormatError,
    Hyperparameters,
    ModelContext,
    check_assumptions,
    load_dataset,
    write_dataset,
)

SCHEMA = 1
TRAJ_MAGIC = b"MGTRJ001"


def _write_json(path: Path, payload: dict):
    payload = {"schema": SCHEMA, **payload}
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def _write_manifest(out: Path, command: str, config: dict):
    _write_json(out / "manifest.json", {"command": command, "config": config})


def _fail_numerical(out: Path, exc: Exception) -> int:
    _write_json(out / "error.json", {"error": {"type": type(exc).__name__, "message": str(exc)}})
    print(f"error: {exc}", file=sys.stderr)
    return 4


def _svg_line_chart(path: Path, xs, series, labels, title, log_y=False):
    """Minimal standalone SVG polyline chart; no plotting dependency."""
    width, height, pad = 640, 420, 54
    xs = list(map(float, xs))
    cleaned = []
    for ys in series:
        ys = [float(v) for v in ys]
        cleaned.append([v if (math.isfinite(v) and (not log_y or v > 0)) else None for v in ys])
    flat = [v for ys in cleaned for v in ys if v is not None]
    if not flat or len(xs) < 2:
        path.write_text("<svg xmlns='http://www.w3.org/2000/svg'/>\n")
        return
    transform = math.log10 if log_y else (lambda v: v)
    lo, hi = min(map(transform, flat)), max(map(transform, flat))
    if hi - lo < 1e-12:
        hi = lo + 1.0
    x_lo, x_hi = min(xs), max(xs)

    def sx(x):
        return pad + (x - x_lo) / (x_hi - x_lo) * (width - 2 * pad)

    def sy(v):
        return height - pad - (transform(v) - lo) / (hi - lo) * (height - 2 * pad)

    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"]
    parts = [
        f"<svg xmlns='http://www.w3.org/2000/svg' width='{width}' height='{height}'>",
        f"<text x='{width / 2}' y='20' text-anchor='middle' font-size='14'>{title}</text>",
        f"<rect x='{pad}' y='{pad}' width='{width - 2 * pad}' height='{height - 2 * pad}' "
        "fill='none' stroke='#888'/>",
    ]
    for k, ys in enumerate(cleaned):
        pts = " ".join(f"{sx(x):.1f},{sy(v):.1f}" for x, v in zip(xs, ys) if v is not None)
        color = colors[k % len(colors)]
        parts.append(f"<polyline points='{pts}' fill='none' stroke='{color}' stroke-width='1.5'/>")
        parts.append(
            f"<text x='{width - pad + 4}' y='{pad + 14 * (k + 1)}' font-size='11' "
            f"fill='{color}'>{labels[k]}</text>"
        )
    parts.append("</svg>")
    path.write_text("\n".join(parts) + "\n")


def _resolve(defaults: dict, config_path, flags: dict) -> dict:
    resolved = dict(defaults)
    if config_path:
        doc = json.loads(Path(config_path).read_text())
        if "config" in doc and "command" in doc:  # a manifest reruns directly
            doc = doc["config"]
        unknown = set(doc) - set(defaults)
        if unknown:
            raise KeyError(f"unknown config keys: {sorted(unknown)}")
        resolved.update(doc)
    resolved.update({k: v for k, v in flags.items() if v is not None})
    return resolved


def _hyper(cfg: dict) -> Hyperparameters:
    return Hyperparameters(a1=cfg["a1"], b1=cfg["b1"], a2=cfg["a2"], b2=cfg["b2"])


def _load_context(cfg: dict) -> ModelContext:
    data = load_dataset(cfg["data"])
    return ModelContext.create(data, _hyper(cfg))


HYPER_DEFAULTS = {"a1": 2.0, "b1": 1.0, "a2": 2.0, "b2": 1.0}


# ---------------------------------------------------------------------------
# subcommand implementations


def _cmd_gen(cfg: dict, out: Path) -> int:
    gen_cfg = GenConfig(
        q=cfg["q"], p=cfg["p"], r=cfg["r"], size_ratio_max=cfg["size_ratio_max"],
        delta=cfg["delta"], epsilon=cfg["epsilon"], beta_true=cfg["beta"],
        mu_true=cfg["mu"], lambda_true=cfg["lam"], tau_true=cfg["tau"],
        covariate_scale=cfg["covariate_scale"], seed=cfg["seed"],
    )
    data = generate(gen_cfg)
    write_dataset(out / "dataset.csv", data)
    truth = asdict(gen_cfg)
    truth["p_resolved"] = resolve_p(gen_cfg)
    truth["n_total"] = data.n_total
    _write_json(out / "truth.json", {"generator": truth})
    return 0


def _cmd_check(cfg: dict, out: Path) -> int:
    data = load_dataset(cfg["data"])
    thresholds = AssumptionThresholds(
        m_max=cfg["m_max"], k1_min=cfg["k1_min"], k2_max=cfg["k2_max"],
        ell_max=cfg["ell_max"], p_over_q_max=cfg["p_over_q_max"], growth_min=cfg["growth_min"],
    )
    report = check_assumptions(data, cfg["delta"], thresholds)
    _write_json(out / "assumptions.json", {"report": asdict(report)})
    return 0


def _write_trajectory(out: Path, lam_tau, v_trace, states, thin, write_bin, data):
    rows = range(0, lam_tau.shape[0], thin)
    p, q = data.p, data.q
    with (out / "trajectory.csv").open("w") as fh:
        fh.write("iter,eta0,lambda,tau,V\n")
        for k in rows:
            fh.write(
                f"{k + 1},{states[k, p]!r},{lam_tau[k, 0]!r},{lam_tau[k, 1]!r},{v_trace[k]!r}\n"
            )
    if write_bin:
        with (out / "trajectory.bin").open("wb") as fh:
            fh.write(TRAJ_MAGIC)
            fh.write(struct.pack("<II", p, q))
            fh.write(np.asarray(data.group_sizes, dtype="<u4").tobytes())
            for k in rows:
                fh.write(np.asarray(states[k], dtype="<f8").tobytes())


def _cmd_sample(cfg: dict, out: Path) -> int:
    ctx = _load_context(cfg)
    rng = np.random.default_rng(np.random.SeedSequence(cfg["seed"]))
    state = default_start(ctx)
    if cfg["burn_in"]:
        state, _, _, _ = fastpath.run_chain_fast(state, cfg["burn_in"], rng, ctx)
    _, lam_tau, v_trace, states = fastpath.run_chain_fast(
        state, cfg["iters"], rng, ctx, record_states=True
    )
    _write_trajectory(out, lam_tau, v_trace, states, cfg["thin"], cfg["bin"], ctx.data)
    return 0


def _cmd_drift(cfg: dict, out: Path) -> int:
    ctx = _load_context(cfg)
    rng = np.random.default_rng(np.random.SeedSequence(cfg["seed"]))
    probes = make_drift_probes(ctx, cfg["probes"], rng, burn_in=cfg["burn_in"])
    est = estimate_drift(ctx, probes, cfg["reps"], seed=cfg["seed"])
    _write_json(out / "drift.json", {"estimate": asdict(est)})
    return 0


def _cmd_contract(cfg: dict, out: Path) -> int:
    ctx = _load_context(cfg)
    coupling = CouplingConfig(
        delta=cfg["delta"], pairs=cfg["pairs"], reps_per_pair=cfg["reps"],
        burn_in=cfg["burn_in"], seed=cfg["seed"], xi=cfg["xi"],
    )
    est = estimate_contraction(ctx, coupling)
    _write_json(out / "contraction.json", {"estimate": asdict(est)})
    return 0


def _cmd_wcurve(cfg: dict, out: Path) -> int:
    ctx = _load_context(cfg)
    ns, w_hat, ci_lo, ci_hi = wasserstein_curve(
        ctx, default_start(ctx), cfg["n_max"], cfg["reps"], cfg["burn_in"], seed=cfg["seed"]
    )
    with (out / "wcurve.csv").open("w") as fh:
        fh.write("n,w_hat,ci_lo,ci_hi\n")
        for k in range(len(ns)):
            fh.write(f"{ns[k]},{w_hat[k]!r},{ci_lo[k]!r},{ci_hi[k]!r}\n")
    decay = geometric_decay_rate(ns, w_hat)
    _write_json(out / "wcurve.json", {"decay_rate": decay, "n_max": cfg["n_max"], "reps": cfg["reps"]})
    if cfg["plot"]:
        _svg_line_chart(out / "wcurve.svg", ns, [w_hat], ["mean coupled distance"],
                        "Wasserstein upper-bound curve", log_y=True)
    return 0


def _cmd_rate(cfg: dict, out: Path) -> int:
    inputs = RateInputs(
        zeta=cfg["zeta"], l_drift=cfg["l"], gamma=cfg["gamma"],
        gamma0=cfg["gamma0"], xi=cfg["xi"], c_norm=cfg["c_norm"],
    )
    report = optimize_rate(inputs, delta=cfg["delta"])
    _write_json(out / "rate.json", {"inputs": asdict(inputs), "report": asdict(report)})
    if not report.a3_holds:
        raise SingularDesignError(
            "no admissible exponent: the contraction/drift constants violate "
            "the rate condition"
        )
    return 0


def _cmd_scale(cfg: dict, out: Path) -> int:
    q_list = [int(v) for v in str(cfg["q_list"]).split(",")]
    base = GenConfig(
        q=q_list[0], p=cfg["p"], r=None, delta=cfg["delta"], epsilon=cfg["epsilon"],
        mu_true=cfg["mu"], lambda_true=cfg["lam"], tau_true=cfg["tau"], seed=cfg["seed"],
    )
    members = scale_sequence(base, q_list)
    hyper = _hyper(cfg)
    rows = []
    for member in members:
        data = generate(member)
        ctx = ModelContext.create(data, hyper)
        q = member.q
        seed = member.seed
        rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
        probes = make_drift_probes(ctx, cfg["probes"], rng, burn_in=cfg["burn_in"])
        drift = estimate_drift(ctx, probes, cfg["reps"], seed=seed)
        coupling = CouplingConfig(delta=cfg["delta"], pairs=cfg["pairs"],
                                  reps_per_pair=cfg["pair_reps"], burn_in=cfg["burn_in"],
                                  seed=seed)
        contraction = estimate_contraction(ctx, coupling)
        rho = a_star = math.nan
        if contraction.gamma_in is not None and contraction.gamma_in < 1:
            try:
                inputs = RateInputs(
                    zeta=drift.zeta_hat, l_drift=drift.l_hat, gamma=contraction.gamma_in,
                    gamma0=max(contraction.gamma_out or 0.0, contraction.gamma_in),
                    xi=q ** (cfg["delta"] / 3.0),
                )
                report = optimize_rate(inputs, delta=cfg["delta"])
                if report.a3_holds:
                    rho, a_star = report.rho, report.a_star
            except ValueError:
                pass
        ns, w_hat, _, _ = wasserstein_curve(
            ctx, default_start(ctx), cfg["n_max"], cfg["wreps"], cfg["burn_in"],
            seed=seed,
        )
        wdecay = geometric_decay_rate(ns, w_hat)
        rows.append({
            "q": q, "r_bar": ctx.design.r_bar, "zeta_hat": drift.zeta_hat,
            "l_hat": drift.l_hat, "gamma_in": contraction.gamma_in,
            "gamma_out": contraction.gamma_out, "rho": rho, "a_star": a_star,
            "wdecay": wdecay,
        })
    header = ["q", "r_bar", "zeta_hat", "l_hat", "gamma_in", "gamma_out", "rho", "a_star", "wdecay"]
    with (out / "scale.csv").open("w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_csv_cell(row[h]) for h in header) + "\n")
    _write_json(out / "scale.json", {"rows": rows})
    if cfg["plot"]:
        qs = [row["q"] for row in rows]
        _svg_line_chart(out / "scale.svg", qs,
                        [[row["zeta_hat"] for row in rows], [row["rho"] for row in rows]],
                        ["zeta_hat", "rho"], "Scaling study", log_y=False)
    return 0


def _csv_cell(value):
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "nan"
    if isinstance(value, float):
        return repr(value)
    return str(value)


# ---------------------------------------------------------------------------
# argument wiring

def _add_common(sub, with_hyper=True):
    sub.add_argument("--out", default=".", help="output directory")
    sub.add_argument("--config", default=None, help="JSON config file, overridden by flags")
    sub.add_argument("--seed", type=int, default=None)
    if with_hyper:
        for name in ("a1", "b1", "a2", "b2"):
            sub.add_argument(f"--{name}", type=float, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mixedgibbs")
    subs = parser.add_subparsers(dest="command", required=True)

    sub = subs.add_parser("gen", help="generate a synthetic dataset")
    _add_common(sub, with_hyper=False)
    sub.add_argument("--q", type=int, default=None)
    sub.add_argument("--p", type=int, default=None)
    sub.add_argument("--balanced-r", dest="r", type=int, default=None)
    sub.add_argument("--size-ratio-max", dest="size_ratio_max", type=float, default=None)
    sub.add_argument("--delta", type=float, default=None)
    sub.add_argument("--epsilon", type=float, default=None)
    sub.add_argument("--beta", type=float, default=None)
    sub.add_argument("--mu", type=float, default=None)
    sub.add_argument("--lam", type=float, default=None)
    sub.add_argument("--tau", type=float, default=None)
    sub.add_argument("--covariate-scale", dest="covariate_scale", type=float, default=None)

    sub = subs.add_parser("check", help="audit growth-regime assumptions")
    _add_common(sub, with_hyper=False)
    sub.add_argument("--data", default=None)
    sub.add_argument("--delta", type=float, default=None)
    for name in ("m-max", "k1-min", "k2-max", "ell-max", "p-over-q-max", "growth-min"):
        sub.add_argument(f"--{name}", dest=name.replace("-", "_"), type=float, default=None)

    sub = subs.add_parser("sample", help="run a chain and dump the trajectory")
    _add_common(sub)
    sub.add_argument("--data", default=None)
    sub.add_argument("--iters", type=int, default=None)
    sub.add_argument("--burn-in", dest="burn_in", type=int, default=None)
    sub.add_argument("--thin", type=int, default=None)
    sub.add_argument("--bin", action="store_true", default=None)

    sub = subs.add_parser("drift", help="estimate the drift envelope")
    _add_common(sub)
    sub.add_argument("--data", default=None)
    sub.add_argument("--probes", type=int, default=None)
    sub.add_argument("--reps", type=int, default=None)
    sub.add_argument("--burn-in", dest="burn_in", type=int, default=None)

    sub = subs.add_parser("contract", help="estimate contraction factors")
    _add_common(sub)
    sub.add_argument("--data", default=None)
    sub.add_argument("--delta", type=float, default=None)
    sub.add_argument("--xi", type=float, default=None)
    sub.add_argument("--pairs", type=int, default=None)
    sub.add_argument("--reps", type=int, default=None)
    sub.add_argument("--burn-in", dest="burn_in", type=int, default=None)

    sub = subs.add_parser("wcurve", help="coupled-chain Wasserstein curve")
    _add_common(sub)
    sub.add_argument("--data", default=None)
    sub.add_argument("--n-max", dest="n_max", type=int, default=None)
    sub.add_argument("--reps", type=int, default=None)
    sub.add_argument("--burn-in", dest="burn_in", type=int, default=None)
    sub.add_argument("--plot", action="store_true", default=None)

    sub = subs.add_parser("rate", help="evaluate the explicit rate formulas")
    _add_common(sub, with_hyper=False)
    sub.add_argument("--zeta", type=float, default=None)
    sub.add_argument("--l", type=float, default=None)
    sub.add_argument("--gamma", type=float, default=None)
    sub.add_argument("--gamma0", type=float, default=None)
    sub.add_argument("--xi", type=float, default=None)
    sub.add_argument("--c-norm", dest="c_norm", type=float, default=None)
    sub.add_argument("--delta", type=float, default=None)

    sub = subs.add_parser("scale", help="full pipeline across a growing sequence")
    _add_common(sub)
    sub.add_argument("--q-list", dest="q_list", default=None)
    sub.add_argument("--delta", type=float, default=None)
    sub.add_argument("--epsilon", type=float, default=None)
    sub.add_argument("--p", type=int, default=None)
    sub.add_argument("--mu", type=float, default=None)
    sub.add_argument("--lam", type=float, default=None)
    sub.add_argument("--tau", type=float, default=None)
    sub.add_argument("--probes", type=int, default=None)
    sub.add_argument("--reps", type=int, default=None)
    sub.add_argument("--pairs", type=int, default=None)
    sub.add_argument("--pair-reps", dest="pair_reps", type=int, default=None)
    sub.add_argument("--wreps", type=int, default=None)
    sub.add_argument("--n-max", dest="n_max", type=int, default=None)
    sub.add_argument("--burn-in", dest="burn_in", type=int, default=None)
    sub.add_argument("--plot", action="store_true", default=None)
    return parser


DEFAULTS = {
    "gen": {"q": 8, "p": 2, "r": None, "size_ratio_max": 1.0, "delta": 0.1, "epsilon": 0.0,
            "beta": 0.0, "mu": 0.0, "lam": 1.0, "tau": 1.0, "covariate_scale": 1.0, "seed": 0},
    "check": {"data": None, "delta": 0.1, "m_max": 4.0, "k1_min": 1e-8, "k2_max": 1e8,
              "ell_max": 1e8, "p_over_q_max": 1.0, "growth_min": 1.0, "seed": 0},
    "sample": {"data": None, "iters": 1000, "burn_in": 0, "thin": 1, "bin": False, "seed": 0,
               **HYPER_DEFAULTS},
    "drift": {"data": None, "probes": 64, "reps": 64, "burn_in": 500, "seed": 0, **HYPER_DEFAULTS},
    "contract": {"data": None, "delta": 0.1, "xi": None, "pairs": 48, "reps": 64,
                 "burn_in": 500, "seed": 0, **HYPER_DEFAULTS},
    "wcurve": {"data": None, "n_max": 100, "reps": 100, "burn_in": 500, "plot": False, "seed": 0,
               **HYPER_DEFAULTS},
    "rate": {"zeta": 0.1, "l": 0.1, "gamma": 0.5, "gamma0": 1.0, "xi": 2.0, "c_norm": 1.0,
             "delta": None, "seed": 0},
    "scale": {"q_list": "8,16,32", "delta": 0.1, "epsilon": 0.0, "p": 3, "mu": 0.0, "lam": 1.0,
              "tau": 1.0, "probes": 48, "reps": 48, "pairs": 32, "pair_reps": 48, "wreps": 64,
              "n_max": 80, "burn_in": 400, "seed": 0, **HYPER_DEFAULTS},
}

COMMANDS = {
    "gen": _cmd_gen,
    "check": _cmd_check,
    "sample": _cmd_sample,
    "drift": _cmd_drift,
    "contract": _cmd_contract,
    "wcurve": _cmd_wcurve,
    "rate": _cmd_rate,
    "scale": _cmd_scale,
}

_REQUIRED_INPUTS = {"check", "sample", "drift", "contract", "wcurve"}


def run_command(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 2
    command = args.command
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "out", "config")}
    out = Path(args.out)
    try:
        cfg = _resolve(DEFAULTS[command], args.config, flags)
    except (KeyError, json.JSONDecodeError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out.mkdir(parents=True, exist_ok=True)
    if command in _REQUIRED_INPUTS:
        if not cfg.get("data"):
            print("config error: --data is required", file=sys.stderr)
            return 2
        if not Path(cfg["data"]).exists():
            print(f"missing input: {cfg['data']}", file=sys.stderr)
            return 3
    try:
        code = COMMANDS[command](cfg, out)
    except FileNotFoundError as exc:
        print(f"missing input: {exc}", file=sys.stderr)
        return 3
    except DatasetFormatError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (SingularDesignError, FloatingPointError, ValueError) as exc:
        return _fail_numerical(out, exc)
    _write_manifest(out, command, cfg)
    return code


def main(argv=None) -> int:
    return run_command(sys.argv[1:] if argv is None else argv)


if __name__ == "__main__":
    sys.exit(main())
