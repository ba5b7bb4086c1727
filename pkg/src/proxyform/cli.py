"""Command-line interface.

Subcommands: gen-scene, enhance, flops, gradcheck, bench, export.
Exit codes: 0 success, 1 usage error, 2 runtime error. The
PROXYFORM_SEED environment variable overrides the config seed (an
explicit --seed flag wins over both).
"""

import argparse
import csv
import os
import sys
import time
from pathlib import Path

from . import figures, io
from .gradchecks import run_grad_checks
from .pipeline import (PipelineConfig, SceneSpec, TARGET_REDUCTION,
                       best_sweep_match, enhance, flops_report, gen_scene,
                       init_params, overhead_sweep, synth_proxies)


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; remap to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _resolve_seed(flag_seed, cfg_seed: int) -> int:
    if flag_seed is not None:
        return flag_seed
    env = os.environ.get("PROXYFORM_SEED")
    if env is not None:
        return int(env)
    return cfg_seed


def _load_or_default_config(args) -> PipelineConfig:
    cfg = io.load_config(args.config) if getattr(args, "config", None) else PipelineConfig()
    cfg.seed = _resolve_seed(getattr(args, "seed", None), cfg.seed)
    for attr, key in (("head_init", "head_init"), ("workers", "workers")):
        value = getattr(args, attr, None)
        if value is not None:
            setattr(cfg, key, value)
    cfg.validate()
    return cfg


def _figures_dir(args):
    if getattr(args, "figures", None) is None:
        return None
    d = Path(args.figures)
    d.mkdir(parents=True, exist_ok=True)
    return d


def cmd_gen_scene(args) -> int:
    seed = _resolve_seed(args.seed, 0)
    spec = SceneSpec(n_points=args.n, n_blobs=args.blobs,
                     blob_fraction=args.blob_fraction, blob_sigma=args.blob_sigma,
                     extent=tuple(args.extent), background_noise=args.noise)
    cloud, labels = gen_scene(spec, seed)
    io.export_cloud(cloud, args.out, args.format)
    print(f"wrote {cloud.shape[0]} points to {args.out} (seed {seed})")
    if args.labels_out:
        with open(args.labels_out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["index", "label"])
            writer.writerows(enumerate(labels.tolist()))
        print(f"wrote labels to {args.labels_out}")
    fig_dir = _figures_dir(args)
    if fig_dir:
        figures.save_scene_figure(cloud, labels, fig_dir / "scene.png",
                                  title=f"scene seed={seed}")
        print(f"wrote {fig_dir / 'scene.png'}")
    return 0


def cmd_enhance(args) -> int:
    cfg = _load_or_default_config(args)
    if args.input:
        cloud = io.load_cloud(args.input)
    else:
        cloud, _ = gen_scene(SceneSpec(n_points=args.n), cfg.seed)
    params = io.load_params(args.params) if args.params else init_params(cfg)
    proxies = synth_proxies(cfg.seed, cfg.n_text_proxies, cfg.n_views,
                            cfg.tokens_per_view, cfg.c)
    enhanced, report = enhance(cfg, cloud, proxies=proxies, params=params)
    io.export_cloud(enhanced, args.out)
    total = sum(t["seconds"] for t in report.timings)
    print(f"enhanced {report.n_points} points, {report.kept_clusters} clusters kept, "
          f"{report.fraction_moved:.3f} moved, {total:.2f} s")
    if args.report:
        io.save_report(report, args.report)
        print(f"wrote report to {args.report}")
    if args.save_params:
        io.save_params(params, args.save_params)
        print(f"wrote parameters to {args.save_params}")
    fig_dir = _figures_dir(args)
    if fig_dir:
        figures.save_enhance_figure(cloud, enhanced, fig_dir / "enhance.png")
        figures.save_timing_figure(report.timings, fig_dir / "timings.png")
        print(f"wrote figures to {fig_dir}")
    return 0


def _print_flops_table(result) -> None:
    reports = result["reports"]
    print(f"{'variant':<8} {'FLOPs (G)':>12} {'params (M)':>12} {'vs self':>9}")
    for variant in ("self", "cross", "proxy"):
        rep = reports[variant]
        red = result["reduction_vs_self"].get(variant)
        red_str = f"{red:.3f}" if red is not None else "-"
        print(f"{variant:<8} {rep.total / 1e9:>12.3f} "
              f"{rep.params_total / 1e6:>12.3f} {red_str:>9}")


def cmd_flops(args) -> int:
    cfg = PipelineConfig(grid_counts=(args.grid,) * 3, beta=args.beta, c=args.c,
                         ffn_mult=args.ffn_mult, layers=args.layers,
                         n_text_proxies=args.proxies)
    result = flops_report(cfg)
    n_seq = cfg.kept_clusters
    print(f"n_seq={n_seq} (grid {args.grid}^3, beta {args.beta}), "
          f"n_proxy={args.proxies}, C={args.c}, ffn_mult={args.ffn_mult}, "
          f"layers={args.layers}")
    _print_flops_table(result)
    core = result["core_reduction_vs_self"]["proxy"]
    print(f"attention-core reduction vs self: {core:.3f}")

    out_dir = Path(args.out_dir) if args.out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
        io.save_report({v: r.to_dict() for v, r in result["reports"].items()},
                       out_dir / "flops.json")
        print(f"wrote {out_dir / 'flops.json'}")

    rows = best = None
    if args.sweep:
        rows = overhead_sweep()
        best = best_sweep_match(rows)
        print(f"sweep: {len(rows)} configs; closest to target "
              f"{TARGET_REDUCTION:.4f}: n_seq={best['n_seq']} C={best['c']} "
              f"n_proxy={best['n_proxy']} ffn_mult={best['ffn_mult']} "
              f"-> reduction {best['reduction']:.4f}")
        if out_dir:
            with open(out_dir / "sweep.csv", "w", newline="") as fh:
                writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
                writer.writeheader()
                writer.writerows(rows)
            io.save_report({"target": TARGET_REDUCTION, "best": best},
                           out_dir / "sweep_best.json")
            print(f"wrote {out_dir / 'sweep.csv'}")

    fig_dir = _figures_dir(args)
    if fig_dir:
        from .proxy import VARIANTS, flops_count
        xs = list(range(128, 2049, 128))
        curves = {v: (xs, [flops_count(n, args.proxies, args.c, args.ffn_mult,
                                       args.layers, v).total for n in xs])
                  for v in VARIANTS}
        figures.save_flops_figure(curves, fig_dir / "flops.png")
        if rows is not None:
            figures.save_sweep_figure(rows, TARGET_REDUCTION, best,
                                      fig_dir / "sweep.png")
        print(f"wrote figures to {fig_dir}")
    return 0


def cmd_gradcheck(args) -> int:
    results = run_grad_checks(seed=args.seed, instances=args.instances)
    failed = False
    for name, err in results.items():
        ok = err <= args.tol
        failed |= not ok
        print(f"{name:<16} max rel error {err:.3e}  "
              f"{'ok' if ok else f'FAIL (tol {args.tol:g})'}")
    return 2 if failed else 0


def cmd_bench(args) -> int:
    seed = _resolve_seed(args.seed, 0)
    cfg = PipelineConfig(grid_counts=(args.grid,) * 3,
                         offset_bound_s=args.offset_bound, beta=args.beta,
                         c=args.c, c_off=args.c_off, layers=args.layers, m=args.m,
                         seed=seed, head_init="random", workers=args.workers)
    cloud, _ = gen_scene(SceneSpec(n_points=args.n), seed)
    t0 = time.perf_counter()
    _, report = enhance(cfg, cloud)
    elapsed = time.perf_counter() - t0
    for t in report.timings:
        print(f"{t['stage']:<12} {t['seconds']:8.3f} s")
    print(f"{'total':<12} {elapsed:8.3f} s  (N={args.n}, grid {args.grid}^3, "
          f"C={args.c}, layers={args.layers}, workers={args.workers})")
    if args.out_dir:
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "timings.csv", "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["stage", "seconds"])
            writer.writeheader()
            writer.writerows(report.timings)
        io.save_report(report, out_dir / "report.json")
        print(f"wrote {out_dir / 'timings.csv'}")
    fig_dir = _figures_dir(args)
    if fig_dir:
        figures.save_timing_figure(report.timings, fig_dir / "timings.png")
        print(f"wrote {fig_dir / 'timings.png'}")
    return 0


def cmd_export(args) -> int:
    cloud = io.load_cloud(args.input, args.in_format)
    io.export_cloud(cloud, args.out, args.out_format)
    print(f"converted {cloud.shape[0]} points: {args.input} -> {args.out}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="proxyform",
                     description="Proxy-guided point-cloud submanifold enhancement")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-scene", help="write a synthetic scene cloud")
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--blobs", type=int, default=3)
    p.add_argument("--blob-fraction", type=float, default=0.5)
    p.add_argument("--blob-sigma", type=float, default=0.08)
    p.add_argument("--extent", type=float, nargs=3, default=[2.4, 1.6, 0.8])
    p.add_argument("--noise", type=float, default=0.02)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=["ply", "csv"], default=None)
    p.add_argument("--labels-out", default=None)
    p.add_argument("--figures", default=None)
    p.set_defaults(func=cmd_gen_scene)

    p = sub.add_parser("enhance", help="run the enhancement pipeline")
    p.add_argument("--config", default=None, help="pipeline config JSON")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--in", dest="input", default=None, help="input cloud (ply/csv)")
    p.add_argument("--n", type=int, default=2000, help="scene size when no --in")
    p.add_argument("--out", required=True)
    p.add_argument("--report", default=None)
    p.add_argument("--params", default=None, help="load a parameter checkpoint")
    p.add_argument("--save-params", default=None)
    p.add_argument("--head-init", choices=["zero", "random"], default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--figures", default=None)
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("flops", help="analytic FLOPs/params for attention variants")
    p.add_argument("--grid", type=int, default=12)
    p.add_argument("--beta", type=float, default=0.6)
    p.add_argument("--c", type=int, default=256)
    p.add_argument("--proxies", type=int, default=32)
    p.add_argument("--ffn-mult", type=int, default=4)
    p.add_argument("--layers", type=int, default=3)
    p.add_argument("--sweep", action="store_true",
                   help="sweep configs for the overhead-reduction target")
    p.add_argument("--out-dir", default=None)
    p.add_argument("--figures", default=None)
    p.set_defaults(func=cmd_flops)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--tol", type=float, default=1e-5)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("bench", help="time the pipeline on a synthetic scene")
    p.add_argument("--n", type=int, default=20000)
    p.add_argument("--grid", type=int, default=12)
    p.add_argument("--offset-bound", type=float, default=4.0,
                   help="offset bound in grid units (2x must stay below --grid)")
    p.add_argument("--beta", type=float, default=0.6)
    p.add_argument("--c", type=int, default=64)
    p.add_argument("--c-off", type=int, default=64)
    p.add_argument("--layers", type=int, default=1)
    p.add_argument("--m", type=int, default=32)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--figures", default=None)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("export", help="convert a cloud between ply and csv")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--in-format", choices=["ply", "csv"], default=None)
    p.add_argument("--out-format", choices=["ply", "csv"], default=None)
    p.set_defaults(func=cmd_export)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 1
    try:
        return args.func(args)
    except Exception as exc:  # runtime failures -> exit 2 with a message
        print(f"proxyform: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
