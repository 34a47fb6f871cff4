"""Experiment harness: ``sgdm-harness {gradcheck,train,noise-eval,sweep,stats}``."""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np

from sgdm import gradcheck
from sgdm.errors import InvalidConfigError
from sgdm.guided import SgdmConfig
from sgdm.nn import VARIANTS
from sgdm.rdconv import RdconvConfig
from sgdm.stats import razor_flop_ratio, sgdm_cost
from sgdm.train import TrainConfig, build_model, load_config, load_run, make_config, noise_eval, save_run, train

DEFAULT_SIGMAS = "0,0.05,0.1,0.2"
SWEEPS = {
    "r_razor": "0.75,0.5,0.25,0.125,0.0625",
    "spatial_k": "7,9,11,13,15",
    "r_split": "0.15,0.2,0.25,0.3",
}


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _dims(text: str) -> tuple[int, int, int, int]:
    dims = tuple(int(v) for v in text.split(","))
    if len(dims) != 4:
        raise argparse.ArgumentTypeError(f"expected B,C,H,W, got {text!r}")
    return dims  # type: ignore[return-value]


def _write(out: str | None, name: str, text: str) -> None:
    if out is None:
        return
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    (path / name).write_text(text)


def _train_config(args, **extra) -> TrainConfig:
    overrides = {"seed": args.seed, **extra}
    if args.config:
        return load_config(args.config, **overrides)
    return make_config(**overrides)


def _sgdm_cfg(r_razor=0.5, spatial_k=15, r_split=0.25, n_kernels=4) -> SgdmConfig:
    return SgdmConfig(r_split=r_split, rdconv=RdconvConfig(r_razor=r_razor, n_kernels=n_kernels, spatial_k=spatial_k))


# --- subcommands -----------------------------------------------------------


def cmd_gradcheck(args) -> int:
    tol = float("inf") if args.tol in ("inf", "Infinity") else float(args.tol)
    results = gradcheck.run_all(seed=args.seed or 0, tol=tol)
    print(gradcheck.format_results(results))
    csv = "group,size,max_rel_error,status\n" + "".join(
        f"{r.group},{r.size},{'' if r.max_rel_error is None else repr(r.max_rel_error)},{r.status}\n" for r in results)
    _write(args.out, "gradcheck.csv", csv)
    failed = [r.group for r in results if r.status == "FAIL"]
    if failed:
        print(f"{len(failed)} group(s) exceed tolerance {tol:g}: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


def cmd_train(args) -> int:
    extra = {k: getattr(args, k) for k in ("variant", "epochs") if getattr(args, k) is not None}
    cfg = _train_config(args, **extra)
    model, history = train(cfg, log=None if args.quiet else print)
    run_dir = Path(args.out or "runs") / f"{cfg.variant}-seed{cfg.seed}"
    save_run(run_dir, cfg, model, history)
    print(f"saved {run_dir}")
    return 0


def robustness_rows(run_dirs, sigmas) -> list[tuple[str, int, float, float]]:
    rows = []
    for run_dir in run_dirs:
        cfg, model = load_run(run_dir)
        for sigma, acc in noise_eval(model, cfg, sigmas):
            rows.append((cfg.variant, cfg.seed, sigma, acc))
    return rows


def robustness_csv(rows) -> str:
    return "variant,seed,sigma,accuracy\n" + "".join(f"{v},{s},{sig:g},{acc:.6f}\n" for v, s, sig, acc in rows)


def robustness_summary(rows) -> str:
    """Mean accuracy per (variant, sigma) across seeds."""
    variants = [v for v in VARIANTS if any(r[0] == v for r in rows)]
    sigmas = sorted({r[2] for r in rows})
    lines = ["variant       " + "".join(f"  sigma={s:<6g}" for s in sigmas)]
    for v in variants:
        cells = []
        for s in sigmas:
            accs = [r[3] for r in rows if r[0] == v and r[2] == s]
            cells.append(f"  {np.mean(accs):>12.4f}")
        lines.append(f"{v:<14}" + "".join(cells))
    return "\n".join(lines)


def cmd_noise_eval(args) -> int:
    sigmas = _floats(args.sigmas)
    rows = robustness_rows(args.checkpoint, sigmas)
    text = robustness_csv(rows)
    print(text, end="")
    print(robustness_summary(rows))
    _write(args.out, "robustness.csv", text)
    return 0


def sweep_rows(param: str, values, dims, train_cfg: TrainConfig | None = None, warn=None):
    """One row per valid value: (value, params, flops, accuracy or None)."""
    rows = []
    for value in values:
        kwargs = {param: int(value) if param == "spatial_k" else float(value)}
        try:
            cfg = _sgdm_cfg(**kwargs)
            rep = sgdm_cost(dims[1], cfg, dims)
        except (InvalidConfigError, ValueError) as exc:
            if warn is not None:
                warn(f"skipping {param}={value}: {exc}")
            continue
        acc = None
        if train_cfg is not None:
            tc = dataclasses.replace(train_cfg, variant="sgdm", **kwargs)
            acc = train(tc)[1][-1].test_acc
        rows.append((value, rep.total_params, rep.total_flops, acc))
    return rows


def format_sweep(param: str, rows) -> str:
    with_acc = any(r[3] is not None for r in rows)
    head = f"{param:<10} {'Params(M)':>10} {'FLOPs(G)':>10}" + (f" {'Acc(%)':>8}" if with_acc else "")
    lines = [head, "-" * len(head)]
    for value, params, flops, acc in rows:
        line = f"{value:<10g} {params / 1e6:>10.3f} {flops / 1e9:>10.3f}"
        if with_acc:
            line += f" {100 * acc:>8.1f}"
        lines.append(line)
    return "\n".join(lines)


def cmd_sweep(args) -> int:
    values = _floats(args.values or SWEEPS[args.param])
    train_cfg = _train_config(args, epochs=args.epochs) if args.train else None
    rows = sweep_rows(args.param, values, args.dims, train_cfg, warn=lambda m: print(f"warning: {m}", file=sys.stderr))
    print(format_sweep(args.param, rows))
    csv = f"{args.param},params,flops,accuracy\n" + "".join(
        f"{v:g},{p},{f},{'' if a is None else f'{a:.6f}'}\n" for v, p, f, a in rows)
    _write(args.out, f"sweep_{args.param}.csv", csv)
    return 0


def cmd_stats(args) -> int:
    if args.model:
        cfg = _train_config(args, variant=args.model)
        model = build_model(cfg)
        rep = model.cost_report((1, 1, 32, 32))
        title = f"classifier variant={args.model}, input (1, 1, 32, 32)"
    else:
        cfg = _sgdm_cfg(args.r_razor, args.spatial_k, args.r_split, args.n_kernels)
        rep = sgdm_cost(args.dims[1], cfg, args.dims)
        title = f"SGDM on {args.dims}, r_split={args.r_split}, r_razor={args.r_razor}, spatial_k={args.spatial_k}"
    print(title)
    print(rep.format_table())
    if not args.model:
        print(f"razored / unrazored attention projection FLOPs = {razor_flop_ratio(args.r_razor)} (r_razor^2)")
    _write(args.out, "stats.csv", rep.to_csv())
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="PRNG seed (PCG64)")
    common.add_argument("--config", help="key=value config file")
    common.add_argument("--out", help="output directory for CSVs / checkpoints")

    p = argparse.ArgumentParser(prog="sgdm-harness", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gradcheck", parents=[common], help="finite-difference checks of all backward passes")
    g.add_argument("--tol", default="1e-4", help="max relative error per entry ('inf' disables)")
    g.set_defaults(func=cmd_gradcheck)

    t = sub.add_parser("train", parents=[common], help="train the toy classifier")
    t.add_argument("--variant", choices=VARIANTS)
    t.add_argument("--epochs", type=int)
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(func=cmd_train)

    n = sub.add_parser("noise-eval", parents=[common], help="accuracy under additive Gaussian noise")
    n.add_argument("--checkpoint", nargs="+", required=True, help="run directories written by 'train'")
    n.add_argument("--sigmas", default=DEFAULT_SIGMAS)
    n.set_defaults(func=cmd_noise_eval)

    s = sub.add_parser("sweep", parents=[common], help="ablation sweep of params/FLOPs (and optionally accuracy)")
    s.add_argument("--param", choices=sorted(SWEEPS), required=True)
    s.add_argument("--values", help="comma-separated values (defaults to the standard ablation set)")
    s.add_argument("--dims", type=_dims, default=(2, 512, 40, 40))
    s.add_argument("--train", action="store_true", help="also train the toy classifier per value")
    s.add_argument("--epochs", type=int, default=None)
    s.set_defaults(func=cmd_sweep)

    st = sub.add_parser("stats", parents=[common], help="parameter/FLOP report")
    st.add_argument("--dims", type=_dims, default=(2, 512, 40, 40))
    st.add_argument("--r-razor", type=float, default=0.5)
    st.add_argument("--r-split", type=float, default=0.25)
    st.add_argument("--spatial-k", type=int, default=15)
    st.add_argument("--n-kernels", type=int, default=4)
    st.add_argument("--model", choices=VARIANTS, help="report the toy classifier instead of a single SGDM")
    st.set_defaults(func=cmd_stats)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
