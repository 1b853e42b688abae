"""Command-line entry point.

Subcommands: ``decompose`` and ``reconstruct`` move tensors between the
HTK1 container and .htz format archives; ``gradcheck`` verifies analytic
gradients against finite differences; ``train`` runs a reproducible
experiment; ``profile`` emits complexity and gradient-transfer reports.

Exit codes: 0 success, 2 usage or configuration error, 3 numerical
failure. Each command's last stdout line is a JSON summary.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="htkit",
        description="Hierarchical Tucker / tensor-train compressed layers: "
        "decomposition, gradient checks, training and profiling.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_dec = sub.add_parser("decompose", help="decompose an HTK1 tensor into .htz")
    p_dec.add_argument("--input", required=True, help="HTK1 tensor file")
    p_dec.add_argument("--format", choices=("ht", "tt"), default="ht")
    p_dec.add_argument("--tree", choices=("balanced", "degenerate"),
                       default="balanced")
    p_dec.add_argument("--rank", type=int, default=None)
    p_dec.add_argument("--tol", type=float, default=None)
    p_dec.add_argument("--out", required=True, help="output .htz path")

    p_rec = sub.add_parser("reconstruct", help="rebuild a dense tensor from .htz")
    p_rec.add_argument("--input", required=True, help=".htz archive")
    p_rec.add_argument("--out", required=True, help="output HTK1 path")

    p_grad = sub.add_parser("gradcheck", help="finite-difference gradient check")
    p_grad.add_argument("--config", default=None,
                        help="JSON config; omit for the built-in default suite")
    p_grad.add_argument("--seed", type=int, default=None)

    p_train = sub.add_parser("train", help="train a configured model")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--out", required=True, help="output directory")
    p_train.add_argument("--seed", type=int, default=None,
                         help="override the schedule seed")
    p_train.add_argument("--threads", type=int, default=1)
    p_train.add_argument("--wall-clock", action="store_true",
                         help="record measured wall time in the metrics CSV "
                         "(off by default so reruns are byte-identical)")

    p_prof = sub.add_parser("profile", help="complexity and gradient-transfer reports")
    p_prof.add_argument("--config", required=True)
    p_prof.add_argument("--out", required=True, help="output directory")
    p_prof.add_argument("--seed", type=int, default=None)

    return parser


def _summary(payload: dict) -> None:
    print(json.dumps(payload))


def _write_csv(path, rows, columns):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k, "") for k in columns})


def cmd_decompose(args) -> int:
    import numpy as np

    from .analysis import format_stats
    from .ht import ht_decompose, ht_reconstruct
    from .htz import save_format
    from .tensor_io import read_htk
    from .tree import build_tree
    from .tt import tt_decompose, tt_reconstruct

    if args.rank is None and args.tol is None:
        return _usage_error("provide --rank and/or --tol")
    tensor = read_htk(args.input)
    if args.format == "ht":
        tree = build_tree(tensor.ndim, args.tree)
        fmt = ht_decompose(tensor, tree, rank=args.rank, tol=args.tol)
        back = ht_reconstruct(fmt)
    else:
        fmt = tt_decompose(tensor, rank=args.rank, tol=args.tol)
        back = tt_reconstruct(fmt)
    denom = np.linalg.norm(tensor)
    rel = float(np.linalg.norm(back - tensor) / (denom if denom else 1.0))
    stats = format_stats(fmt, tensor.shape)
    save_format(fmt, args.out)
    print(f"wrote {args.out}")
    print(f"relative reconstruction error: {rel:.3e}")
    print(f"stored parameters: {stats['param_count']}")
    print(f"compression factor: {stats['compression_factor']:.3f}")
    _summary(
        {
            "command": "decompose",
            "out": str(args.out),
            "relative_error": rel,
            "param_count": stats["param_count"],
            "compression_factor": stats["compression_factor"],
        }
    )
    return 0


def cmd_reconstruct(args) -> int:
    from .ht import HTFormat, ht_reconstruct
    from .htz import load_format
    from .tensor_io import write_htk
    from .tt import tt_reconstruct

    fmt = load_format(args.input)
    tensor = (
        ht_reconstruct(fmt) if isinstance(fmt, HTFormat) else tt_reconstruct(fmt)
    )
    write_htk(args.out, tensor)
    print(f"wrote {args.out} with shape {tuple(tensor.shape)}")
    _summary(
        {
            "command": "reconstruct",
            "out": str(args.out),
            "shape": list(tensor.shape),
        }
    )
    return 0


def cmd_gradcheck(args) -> int:
    from .config import load_json
    from .gradcheck import run_gradcheck

    layers = None
    seed = 0
    corrupt = None
    if args.config is not None:
        cfg = load_json(args.config)
        if "layers" not in cfg:
            from .errors import ConfigError

            raise ConfigError("gradcheck config needs a 'layers' list")
        layers = cfg["layers"]
        seed = int(cfg.get("seed", 0))
        corrupt = cfg.get("corrupt_factor")
    if args.seed is not None:
        seed = args.seed
    rows = run_gradcheck(layers, seed=seed, corrupt_factor=corrupt)
    width = max(len(r["layer"]) for r in rows)
    print(f"{'layer':<{width}}  {'factor':<10}  max rel err  status")
    for row in rows:
        status = "ok" if row["passed"] else "FAIL"
        print(
            f"{row['layer']:<{width}}  {row['factor']:<10}  "
            f"{row['max_rel_err']:.3e}    {status}"
        )
    failed = [r for r in rows if not r["passed"]]
    for row in failed:
        print(f"FAILED: {row['layer']} factor {row['factor']}", file=sys.stderr)
    _summary(
        {
            "command": "gradcheck",
            "checked": len(rows),
            "failed": [f"{r['layer']}:{r['factor']}" for r in failed],
            "passed": not failed,
        }
    )
    return 0 if not failed else 1


METRIC_COLUMNS = ["epoch", "lr", "train_loss", "train_acc", "val_acc",
                  "wall_seconds"]


def cmd_train(args) -> int:
    from .config import load_experiment
    from .htz import save_checkpoint
    from .plots import training_curves
    from .training import train

    cfg, model, data, schedule = load_experiment(args.config, args.seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics = train(model, data, schedule, threads=args.threads)

    rows = []
    for row in metrics:
        row = dict(row)
        if not args.wall_clock:
            row["wall_seconds"] = 0.0
        row["lr"] = f"{row['lr']:.10g}"
        row["train_loss"] = f"{row['train_loss']:.10g}"
        row["train_acc"] = f"{row['train_acc']:.10g}"
        row["val_acc"] = f"{row['val_acc']:.10g}"
        row["wall_seconds"] = f"{row['wall_seconds']:.10g}"
        rows.append(row)
    metrics_path = out_dir / "metrics.csv"
    _write_csv(metrics_path, rows, METRIC_COLUMNS)

    save_checkpoint(
        out_dir / "checkpoint.htz",
        model.params,
        meta={"config": cfg["model"], "epochs": schedule.epochs},
    )
    (out_dir / "schedule.json").write_text(
        json.dumps(
            {
                "learning_rate": schedule.learning_rate,
                "momentum": schedule.momentum,
                "decay_factor": schedule.decay_factor,
                "decay_every": schedule.decay_every,
                "epochs": schedule.epochs,
                "batch_size": schedule.batch_size,
                "seed": schedule.seed,
            },
            indent=1,
        )
    )
    figure_path = training_curves({"train": metrics}, out_dir / "curves.png")

    compression = model.compression_report()
    report_lines = ["layer compression:"]
    for row in compression:
        report_lines.append(
            f"  {row['layer']}: {row['stored_params']} of {row['dense_params']} "
            f"params (factor {row['compression_factor']:.2f})"
        )
    print("\n".join(report_lines))
    print(f"final validation accuracy: {metrics[-1]['val_acc']:.4f}")
    _summary(
        {
            "command": "train",
            "metrics_csv": str(metrics_path),
            "checkpoint": str(out_dir / "checkpoint.htz"),
            "figure": str(figure_path),
            "final_val_acc": metrics[-1]["val_acc"],
            "epochs": schedule.epochs,
        }
    )
    return 0


PROFILE_COLUMNS = ["method", "d", "m", "n", "r", "space_formula", "space_exact",
                   "compute_formula", "multiplies_measured"]
TRANSFER_COLUMNS = ["spec", "factor", "rows", "cols", "elements", "oracle_rows",
                    "oracle_cols", "grad_norm", "mean_abs_update"]


def _complexity_rows(section) -> list[dict]:
    from .analysis import ComplexityQuery, complexity_estimate, format_stats
    from .layers import TensorizedFCSpec, fc_cost_estimate

    methods = section.get("methods", ["ht", "tt", "tr", "btd"])
    d = int(section.get("d", 4))
    m = int(section.get("m", 4))
    n = int(section.get("n", 4))
    M = int(section.get("M", m**d))
    N = int(section.get("N", n**d))
    C = section.get("C", 2)
    rows = []
    for method in methods:
        for r in section.get("ranks", [2, 4, 8]):
            q = ComplexityQuery(
                method=method, M=M, N=N, d=d, m=m, n=n, r=int(r),
                C=int(C) if method == "btd" else None,
            )
            est = complexity_estimate(q)
            row = {
                "method": method,
                "d": d,
                "m": m,
                "n": n,
                "r": int(r),
                "space_formula": est["space"],
                "space_exact": "",
                "compute_formula": est["compute"],
                "multiplies_measured": "",
            }
            if method in ("ht", "tt"):
                spec = TensorizedFCSpec(
                    m=(m,) * d, n=(n,) * d, format_kind=method, rank=int(r)
                )
                from .layers import init_fc_params
                import numpy as np

                params = init_fc_params(spec, np.random.default_rng(0))
                row["space_exact"] = format_stats(
                    params, (spec.M, spec.N)
                )["param_count"]
                row["multiplies_measured"] = fc_cost_estimate(spec, "chain")[
                    "measured_multiplies"
                ]
            elif method == "fc":
                row["space_exact"] = M * N
                row["multiplies_measured"] = M * N
            rows.append(row)
    return rows


def _transfer_profiles(section, seed_override):
    from .analysis import TransferProbe, gradient_transfer_profile
    from .layers import TensorizedFCSpec

    specs = []
    labels = []
    for entry in section.get("specs", []):
        specs.append(
            TensorizedFCSpec(
                m=tuple(entry["m"]), n=tuple(entry["n"]),
                format_kind=entry.get("format", "ht"),
                rank=int(entry.get("rank", 2)),
            )
        )
        labels.append(entry.get("label", f"spec{len(specs)}"))
    probe = TransferProbe(
        seed=int(section.get("seed", 0)) if seed_override is None else seed_override,
        batch=int(section.get("batch", 4)),
        lr=float(section.get("lr", 0.01)),
    )
    return gradient_transfer_profile(specs, probe, labels)


def cmd_profile(args) -> int:
    from .config import load_json
    from .errors import ConfigError
    from .plots import complexity_chart, transfer_chart

    cfg = load_json(args.config)
    if "complexity" not in cfg and "transfer" not in cfg:
        raise ConfigError(
            "profile config needs a 'complexity' and/or 'transfer' section"
        )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = {}
    if "complexity" in cfg:
        rows = _complexity_rows(cfg["complexity"])
        path = out_dir / "complexity.csv"
        _write_csv(path, rows, PROFILE_COLUMNS)
        written["complexity_csv"] = str(path)
        written["complexity_figure"] = str(
            complexity_chart(rows, out_dir / "complexity.png")
        )
        print(f"wrote {path} ({len(rows)} rows)")
    if "transfer" in cfg:
        profiles = _transfer_profiles(cfg["transfer"], args.seed)
        rows = []
        for profile in profiles:
            for record in profile.records:
                rows.append({"spec": profile.label, **record})
        path = out_dir / "transfer.csv"
        _write_csv(path, rows, TRANSFER_COLUMNS)
        written["transfer_csv"] = str(path)
        written["transfer_figure"] = str(
            transfer_chart(profiles, out_dir / "transfer.png")
        )
        print(f"wrote {path} ({len(rows)} rows)")
    _summary({"command": "profile", **written})
    return 0


def _usage_error(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return 2


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "train" and args.threads < 1:
        return _usage_error("--threads must be >= 1")

    from .errors import ConfigError, ContainerFormatError, NumericalError, ShapeMismatchError

    handlers = {
        "decompose": cmd_decompose,
        "reconstruct": cmd_reconstruct,
        "gradcheck": cmd_gradcheck,
        "train": cmd_train,
        "profile": cmd_profile,
    }
    try:
        return handlers[args.command](args)
    except FileNotFoundError as err:
        filename = err.filename if err.filename else err
        return _usage_error(f"file not found: {filename}")
    except (ConfigError, ContainerFormatError, ShapeMismatchError, ValueError) as err:
        return _usage_error(str(err))
    except NumericalError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        dump = Path("htkit_failure_dump.json")
        try:
            out_dir = Path(getattr(args, "out", "."))
            out_dir.mkdir(parents=True, exist_ok=True)
            dump = out_dir / "failure_dump.json"
        except Exception:
            pass
        dump.write_text(json.dumps({"error": str(err)}, indent=1))
        print(f"diagnostic dump written to {dump}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
