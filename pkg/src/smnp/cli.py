"""Command-line interface.

Subcommands: fit-smnp, fit-mnp, predict, traces, prior-curves, simulate,
postprocess.  Every output is CSV plus a JSON metadata document under the
--out directory; all randomness flows from --seed.  SMNP_THREADS caps the
simulation study's worker processes.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import io as sio
from .basemnp import run_mnp
from .posterior import export_traces, postprocess_identify, predict_probs, price_curve
from .prior_probe import PriorProbeConfig, psi_curve
from .rng import RngStream
from .simstudy import SimScenario, run_study
from .smnp import run_smnp
from .types import Hyperparameters


def _grid(text: str) -> np.ndarray:
    try:
        lo, hi, step = (float(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"grid must look like lo:hi:step, got {text!r}"
        ) from None
    if step <= 0 or hi < lo:
        raise argparse.ArgumentTypeError(f"bad grid {text!r}")
    return np.arange(lo, hi + step / 2, step)


def _chain_args(sub, iters=20000, burn=5000, thin=5):
    sub.add_argument("--iters", type=int, default=iters)
    sub.add_argument("--burn", type=int, default=burn)
    sub.add_argument("--thin", type=int, default=thin)
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--nu", type=float, default=None, help="prior degrees of freedom (default p+1)")
    sub.add_argument("--c", type=float, default=None, help="prior scale off-diagonal (default 1/(p-1))")
    sub.add_argument("--beta-var", type=float, default=100.0, help="coefficient prior variance")


def _hyper(args) -> Hyperparameters:
    return Hyperparameters(
        nu=args.nu,
        c=args.c,
        beta_var=args.beta_var,
        iters=args.iters,
        burn=args.burn,
        thin=args.thin,
        seed=args.seed,
    )


def _label_index(labels, label: str) -> int:
    if label not in labels:
        raise ValueError(f"unknown category label {label!r}; have {list(labels)}")
    return list(labels).index(label)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="smnp",
        description="Symmetric multinomial probit: fitting, prediction, diagnostics",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    fs = sub.add_parser("fit-smnp", help="fit the symmetric model")
    fs.add_argument("data", help="dataset CSV")
    _chain_args(fs)
    fs.add_argument("--out", required=True, help="output directory")
    fs.add_argument("--float-format", default=sio.DEFAULT_FLOAT_FMT)

    fm = sub.add_parser("fit-mnp", help="fit a base-category model")
    fm.add_argument("data")
    fm.add_argument("--base", required=True, help="base category label")
    _chain_args(fm)
    fm.add_argument("--out", required=True)
    fm.add_argument("--float-format", default=sio.DEFAULT_FLOAT_FMT)

    pr = sub.add_parser("predict", help="predictive probabilities along a price grid")
    pr.add_argument("draws", help="directory written by fit-smnp/fit-mnp")
    pr.add_argument("--brand", required=True, help="category label whose value varies")
    pr.add_argument("--grid", required=True, type=_grid, help="lo:hi:step")
    pr.add_argument("--log-price", action="store_true", help="grid is in money units; model uses log")
    pr.add_argument("--fixed", default=None, help="comma list of the other brands' values (default: fitted means)")
    pr.add_argument("--covariate", type=int, default=0)
    pr.add_argument("--mc-per-draw", type=int, default=32)
    pr.add_argument("--seed", type=int, default=0)
    pr.add_argument("--out", required=True)
    pr.add_argument("--float-format", default="%.10g")

    tr = sub.add_parser("traces", help="export an iteration-indexed parameter series")
    tr.add_argument("draws")
    tr.add_argument("--param", required=True, help="b | alpha2 | log_kernel | beta[k] | sigma[i,j]")
    tr.add_argument("--out", required=True)
    tr.add_argument("--float-format", default=sio.DEFAULT_FLOAT_FMT)

    pc = sub.add_parser("prior-curves", help="prior selection-probability probe")
    pc.add_argument("--nu", type=float, default=2.0)
    pc.add_argument("--v-grid", type=_grid, default=_grid("0:3:0.1"))
    pc.add_argument("--sigma-draws", type=int, default=10000)
    pc.add_argument("--eps-draws", type=int, default=10000)
    pc.add_argument("--phi-at", type=float, default=1.0)
    pc.add_argument("--seed", type=int, default=0)
    pc.add_argument("--out", required=True)
    pc.add_argument("--float-format", default="%.10g")

    si = sub.add_parser("simulate", help="synthetic comparison study")
    si.add_argument("--replicates", type=int, required=True)
    si.add_argument("--n", type=int, default=750)
    si.add_argument("--p", type=int, default=6)
    si.add_argument("--iters", type=int, default=5000)
    si.add_argument("--burn", type=int, default=1000)
    si.add_argument("--thin", type=int, default=4)
    si.add_argument("--seed", type=int, default=0)
    si.add_argument("--workers", type=int, default=None)
    si.add_argument("--out", required=True)
    si.add_argument("--float-format", default="%.10g")

    pp = sub.add_parser("postprocess", help="rescale draws to tr(Sigma) = p")
    pp.add_argument("draws")
    pp.add_argument("--out", required=True)
    pp.add_argument("--float-format", default=sio.DEFAULT_FLOAT_FMT)
    return ap


def _cmd_fit(args, kind: str) -> int:
    dataset = sio.parse_dataset(args.data)
    hyper = _hyper(args)
    if kind == "smnp":
        store = run_smnp(dataset, hyper)
    else:
        store = run_mnp(dataset, hyper, base=_label_index(dataset.labels, args.base))
    out = sio.save_draws(store, args.out, args.float_format)
    print(f"wrote {store.n_draws} draws to {out}")
    return 0


def _cmd_predict(args) -> int:
    store = sio.load_draws(args.draws)
    labels = store.labels
    brand = _label_index(labels, args.brand)
    k_a = int(store.meta.get("k_a", 0))
    if k_a == 0:
        raise ValueError("the fitted model has no alternative covariates to vary")
    if args.fixed is not None:
        fixed = np.array([float(v) for v in args.fixed.split(",")])
    else:
        mean = store.meta.get("x_a_mean")
        if mean is None:
            raise ValueError("no fitted covariate means stored; pass --fixed")
        fixed = np.asarray(mean, dtype=float)[:, args.covariate]
        if args.log_price:
            fixed = np.exp(fixed)
    curve = price_curve(
        store,
        brand=brand,
        price_grid=args.grid,
        fixed_prices=fixed,
        log_scale=args.log_price,
        covariate=args.covariate,
        mc_per_draw=args.mc_per_draw,
        rng=RngStream(args.seed, 29).generator(),
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    header = ["value"] + [f"prob_{l}" for l in labels] + [f"se_{l}" for l in labels]
    rows = [
        [float(curve.grid[g])] + [float(v) for v in curve.probs[g]] + [float(v) for v in curve.se[g]]
        for g in range(curve.grid.size)
    ]
    sio.write_table(out / "predictions.csv", header, rows, args.float_format)
    with (out / "predictions_meta.json").open("w") as fh:
        json.dump(
            {
                "draws": str(args.draws),
                "brand": args.brand,
                "log_price": bool(args.log_price),
                "fixed": fixed.tolist(),
                "covariate": args.covariate,
                "mc_per_draw": args.mc_per_draw,
                "seed": args.seed,
            },
            fh,
            indent=2,
        )
        fh.write("\n")
    print(f"wrote {curve.grid.size} grid rows to {out / 'predictions.csv'}")
    return 0


def _cmd_traces(args) -> int:
    store = sio.load_draws(args.draws)
    series = export_traces(store, args.param)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    safe = args.param.replace("[", "_").replace("]", "").replace(",", "_")
    path = out / f"trace_{safe}.csv"
    sio.write_table(
        path, ["iteration", args.param], [[int(a), float(b)] for a, b in series], args.float_format
    )
    print(f"wrote {series.shape[0]} rows to {path}")
    return 0


def _cmd_prior_curves(args) -> int:
    cfg = PriorProbeConfig(
        nu=args.nu,
        v_grid=args.v_grid,
        n_sigma_draws=args.sigma_draws,
        n_eps_draws=args.eps_draws,
    )
    res = psi_curve(cfg, RngStream(args.seed, 23).generator(), phi_sample_v=args.phi_at)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for which in ("base", "nonbase"):
        for g, v in enumerate(res.v_grid):
            rows.append([which, float(v), float(res.psi[which][g]), float(res.se[which][g])])
    sio.write_table(out / "psi_curves.csv", ["which", "v", "psi", "se"], rows, args.float_format)
    sio.write_table(
        out / "phi_samples.csv",
        ["draw", "phi_base", "phi_nonbase"],
        [
            [s, float(res.phi_samples["base"][s]), float(res.phi_samples["nonbase"][s])]
            for s in range(args.sigma_draws)
        ],
        args.float_format,
    )
    print(f"wrote psi curves ({len(rows)} rows) and phi samples to {out}")
    return 0


def _cmd_simulate(args) -> int:
    scenario = SimScenario(n=args.n, p=args.p)
    chain = Hyperparameters(iters=args.iters, burn=args.burn, thin=args.thin, seed=args.seed)
    result = run_study(
        args.replicates,
        scenario,
        chain,
        master_seed=args.seed,
        workers=args.workers,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for rep in range(result.n_replicates):
        for f, name in enumerate(result.model_names):
            rows.append([rep, name, float(result.scores[rep, f])])
    sio.write_table(out / "scores.csv", ["replicate", "model", "total_variation"], rows, args.float_format)
    with (out / "study_meta.json").open("w") as fh:
        json.dump(
            {
                **result.meta,
                "beats_median": int(result.smnp_beats_median().sum()),
                "worst": int(result.smnp_is_worst().sum()),
                "replicates": result.n_replicates,
            },
            fh,
            indent=2,
        )
        fh.write("\n")
    wins = int(result.smnp_beats_median().sum())
    print(
        f"symmetric fit beat the median base fit in {wins}/{result.n_replicates} replicates; "
        f"wrote {out / 'scores.csv'}"
    )
    return 0


def _cmd_postprocess(args) -> int:
    store = sio.load_draws(args.draws)
    out = sio.save_draws(postprocess_identify(store), args.out, args.float_format)
    print(f"wrote rescaled draws to {out}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "fit-smnp":
            return _cmd_fit(args, "smnp")
        if args.command == "fit-mnp":
            return _cmd_fit(args, "mnp")
        if args.command == "predict":
            return _cmd_predict(args)
        if args.command == "traces":
            return _cmd_traces(args)
        if args.command == "prior-curves":
            return _cmd_prior_curves(args)
        if args.command == "simulate":
            return _cmd_simulate(args)
        if args.command == "postprocess":
            return _cmd_postprocess(args)
        raise ValueError(f"unknown command {args.command!r}")
    except Exception as exc:  # surface one diagnostic line, nonzero exit
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
