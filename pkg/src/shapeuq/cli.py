"""Command-line entry point wiring training, reconstruction, fusion, and
evaluation into reproducible runs.

Subcommands: train-decoder, train-encoder, render-dataset, reconstruct,
fuse, evaluate, calibrate.  Every command resolves its configuration
(flags, optionally overriding a JSON config file; flags win), writes the
resolved config as a sidecar before doing any work, and derives all
randomness from one root seed.  Exit codes: 0 success, 1 usage, 2 data,
3 numeric/training failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1
FUSION_MODES_CLI = ("average", "bayesian", "bayesian-k")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # argparse defaults to exit code 2; usage errors are exit code 1 here
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _apply_config_file(args: argparse.Namespace, parser_defaults: dict
                       ) -> argparse.Namespace:
    """Merge a JSON config file under explicit flags.

    File values apply only where the flag was left at its default; unknown
    keys are rejected.
    """
    if not getattr(args, "config", None):
        return args
    path = Path(args.config)
    if not path.exists():
        raise DataError(f"config file not found: {path}")
    data = json.loads(path.read_text(encoding="utf-8"))
    known = set(vars(args))
    unknown = set(data) - known
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    for key, value in data.items():
        if getattr(args, key) == parser_defaults.get(key):
            setattr(args, key, value)
    return args


def _write_sidecar(outdir: Path, command: str, args: argparse.Namespace
                   ) -> None:
    outdir.mkdir(parents=True, exist_ok=True)
    resolved = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    resolved["command"] = command
    resolved["format_version"] = FORMAT_VERSION
    (outdir / f"{command}_config.json").write_text(
        json.dumps(resolved, indent=2, sort_keys=True, default=str) + "\n",
        encoding="utf-8")


def _load_models(args):
    from .decoder import load_decoder
    from .encoder import load_encoder
    dec_path = Path(args.decoder)
    enc_path = Path(args.encoder) if getattr(args, "encoder", None) else None
    if not dec_path.exists():
        raise DataError(f"decoder model not found: {dec_path}")
    dec, book = load_decoder(dec_path)
    enc = None
    if enc_path is not None:
        if not enc_path.exists():
            raise DataError(f"encoder model not found: {enc_path}")
        enc = load_encoder(enc_path)
    return dec, book, enc


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_train_decoder(args) -> int:
    from . import decoder, shapes
    outdir = Path(args.out)
    _write_sidecar(outdir, "train-decoder", args)
    family = shapes.make_family(args.family_size, seed=args.family_seed)
    train, _ = shapes.split_family(family, args.holdout)
    config = decoder.DecoderTrainConfig(
        latent_dim=args.latent_dim, epochs=args.epochs, seed=args.seed,
        lr_weights=args.lr_weights, lr_codes=args.lr_codes,
        code_reg_weight=args.code_reg_weight)
    samples = decoder.build_training_samples(train, config)
    try:
        model, codebook, trace = decoder.train_decoder(train, samples, config)
    except decoder.TrainingError as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    shapes.save_family_manifest(outdir / "family.txt", family)
    decoder.save_decoder(outdir / "decoder.shapeuq", model, codebook,
                         seed=args.seed)
    decoder.save_codebook(outdir / "codebook.txt", codebook)
    (outdir / "decoder_loss.csv").write_text(
        "epoch,loss\n" + "".join(f"{i},{v!r}\n" for i, v in enumerate(trace)),
        encoding="utf-8")
    print(f"decoder trained: final loss {trace[-1]:.6f}; artifacts in {outdir}")
    return EXIT_OK


def cmd_train_encoder(args) -> int:
    from . import decoder, encoder, shapes, views
    outdir = Path(args.out)
    _write_sidecar(outdir, "train-encoder", args)
    dec_path = Path(args.decoder)
    family_path = Path(args.family)
    if not dec_path.exists() or not family_path.exists():
        raise DataError(f"missing decoder ({dec_path}) or family manifest "
                        f"({family_path})")
    dec, codebook = decoder.load_decoder(dec_path)
    family = shapes.load_family_manifest(family_path)
    train = [s for s in family if s.instance_id in codebook]
    dataset = views.make_view_dataset(train, codebook,
                                      views_per_instance=args.views,
                                      seed=args.seed)
    config = encoder.EncoderTrainConfig(
        loss=args.loss, m_samples=args.m_samples, epochs=args.epochs,
        lr=args.lr, seed=args.seed)
    try:
        model, trace = encoder.train_encoder(dataset, config)
    except encoder.TrainingError as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    encoder.save_encoder(outdir / f"encoder_{args.loss}.shapeuq", model,
                         seed=args.seed, config=config)
    (outdir / f"encoder_{args.loss}_loss.csv").write_text(
        "epoch,loss\n" + "".join(f"{i},{v!r}\n" for i, v in enumerate(trace)),
        encoding="utf-8")
    print(f"encoder ({args.loss}) trained: final loss {trace[-1]:.6f}; "
          f"artifacts in {outdir}")
    return EXIT_OK


def cmd_render_dataset(args) -> int:
    from . import decoder, shapes, views
    outdir = Path(args.out)
    _write_sidecar(outdir, "render-dataset", args)
    family_path = Path(args.family)
    if not family_path.exists():
        raise DataError(f"family manifest not found: {family_path}")
    family = shapes.load_family_manifest(family_path)
    codebook = None
    if args.codebook:
        book_path = Path(args.codebook)
        if not book_path.exists():
            raise DataError(f"codebook not found: {book_path}")
        codebook = decoder.load_codebook(book_path)
        family = [s for s in family if s.instance_id in codebook]
    dataset = views.make_view_dataset(family, codebook,
                                      views_per_instance=args.views,
                                      seed=args.seed)
    if args.min_scale < 1.0:
        from .seeding import child_seed
        dataset.views = [
            views.corrupt_crop(v, args.min_scale,
                               child_seed(args.seed, "crop", str(i)))
            for i, v in enumerate(dataset.views)]
    views.save_view_dataset(outdir / "views", dataset)
    print(f"rendered {len(dataset)} views into {outdir / 'views'}")
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    from . import encoder as enc_mod
    from . import experiments, fusion, meshing, propagation, views
    outdir = Path(args.out)
    _write_sidecar(outdir, "reconstruct", args)
    dec, _, enc = _load_models(args)
    if enc is None:
        raise DataError("reconstruct requires --encoder")
    ds_path = Path(args.views)
    if not ds_path.exists():
        raise DataError(f"view dataset not found: {ds_path}")
    dataset = views.load_view_dataset(ds_path)
    instances = sorted({v.instance_id for v in dataset.views})
    if args.instance is not None:
        if args.instance not in instances:
            raise DataError(f"instance {args.instance} not in dataset "
                            f"{instances}")
        instances = [args.instance]

    for iid in instances:
        obs_views = [v for v in dataset.views if v.instance_id == iid]
        observations = [enc_mod.encode(enc, v) for v in obs_views]
        code, posterior = experiments.fuse_observations(
            observations, args.fusion, args.k)
        grid = propagation.propagate_grid(
            dec, posterior, args.resolution, args.m_samples, seed=args.seed
        ) if posterior is not None else None
        if grid is not None:
            mesh = meshing.marching_cubes(grid.mean)
        else:
            mesh = experiments.reconstruct_code_mesh(dec, code,
                                                     args.resolution)
        if posterior is not None and mesh.n_vertices:
            mesh = meshing.attach_uncertainty(mesh, dec, posterior,
                                              args.m_samples, seed=args.seed)
        meshing.export_ply(mesh, outdir / f"instance_{iid:03d}.ply")
        selected = None
        if args.fusion == "bayesian-k":
            selected = fusion.select_lowest_trace(
                observations, min(args.k, len(observations)))
        fusion.save_fusion_trace_csv(outdir / f"instance_{iid:03d}_trace.csv",
                                     observations, selected)
        print(f"instance {iid}: {mesh.n_vertices} vertices, "
              f"{len(mesh.triangles)} faces -> "
              f"{outdir / f'instance_{iid:03d}.ply'}")
    return EXIT_OK


def cmd_fuse(args) -> int:
    from . import fusion
    from .latent import LatentGaussian
    outdir = Path(args.out)
    _write_sidecar(outdir, "fuse", args)
    src = Path(args.observations)
    if not src.exists():
        raise DataError(f"observations file not found: {src}")
    observations = []
    for line in src.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        vals = [float(v) for v in line.replace(",", " ").split()]
        if len(vals) % 2:
            raise DataError(f"observation row must hold mean then variance "
                            f"halves, got {len(vals)} values")
        d = len(vals) // 2
        observations.append(LatentGaussian(vals[:d], vals[d:]))
    if not observations:
        raise DataError(f"no observations in {src}")
    selected = None
    if args.fusion == "bayesian-k":
        selected, posterior = fusion.fuse_top_k(
            observations, min(args.k, len(observations)))
        mean, var = posterior.mean, posterior.var
    elif args.fusion == "bayesian":
        posterior = fusion.fuse(observations)
        mean, var = posterior.mean, posterior.var
    else:
        mean, var = fusion.average_means(observations), None
    with open(outdir / "fused.txt", "w", encoding="utf-8") as f:
        f.write(" ".join(repr(float(v)) for v in mean))
        if var is not None:
            f.write("\n" + " ".join(repr(float(v)) for v in var))
        f.write("\n")
    fusion.save_fusion_trace_csv(outdir / "fusion_trace.csv", observations,
                                 selected)
    print(f"fused {len(observations)} observations -> {outdir / 'fused.txt'}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from . import experiments, shapes
    outdir = Path(args.out)
    _write_sidecar(outdir, "evaluate", args)
    dec, _, enc = _load_models(args)
    if enc is None:
        raise DataError("evaluate requires --encoder")
    family_path = Path(args.family)
    if not family_path.exists():
        raise DataError(f"family manifest not found: {family_path}")
    family = shapes.load_family_manifest(family_path)
    seeds = tuple(int(s) for s in args.seeds.split(","))
    min_scales = tuple(float(s) for s in args.min_scales.split(","))
    sweep = experiments.run_min_scale_sweep(
        family, dec, enc, min_scales=min_scales, k=args.k, seeds=seeds,
        views_per_instance=args.views, mesh_resolution=args.resolution)
    experiments.write_sweep_csv(outdir / "sweep_iou.csv", sweep, metric="iou")
    experiments.write_sweep_csv(outdir / "sweep_chamfer.csv", sweep,
                                metric="chamfer")
    experiments.write_sweep_csv(outdir / "sweep_emd.csv", sweep, metric="emd")
    print(f"evaluation sweep written to {outdir}")
    for ms in sorted(sweep, reverse=True):
        row = " ".join(f"{mode}={sweep[ms][mode]['iou']:.4f}"
                       for mode in sorted(sweep[ms]))
        print(f"  min_scale {ms:g}: {row}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    from . import encoder as enc_mod
    from . import metrics, propagation, shapes, views
    from .seeding import child_seed
    outdir = Path(args.out)
    _write_sidecar(outdir, "calibrate", args)
    dec, book, enc = _load_models(args)
    if enc is None:
        raise DataError("calibrate requires --encoder")
    family_path = Path(args.family)
    if not family_path.exists():
        raise DataError(f"family manifest not found: {family_path}")
    family = [s for s in shapes.load_family_manifest(family_path)
              if s.instance_id in book]
    dataset = views.make_view_dataset(family, book, views_per_instance=4,
                                      seed=args.seed)

    # latent space: every dimension of every encoded view independently
    mus, sigmas, targets = [], [], []
    gaussians = []
    for view, code in zip(dataset.views, dataset.codes):
        g = enc_mod.encode(enc, view)
        gaussians.append((g, view.instance_id))
        mus.append(g.mean)
        sigmas.append(g.sigma)
        targets.append(code)
    latent_curve = metrics.calibration_curve(
        np.concatenate(mus), np.concatenate(sigmas), np.concatenate(targets),
        space="latent")
    metrics.save_calibration_csv(outdir / "calibration_latent.csv",
                                 latent_curve)

    # SDF space: propagate each belief to sample points, score vs analytic
    spec_by_id = {s.instance_id: s for s in family}
    sm, ss, st = [], [], []
    for i, (g, iid) in enumerate(gaussians[:args.sdf_views]):
        spec = spec_by_id[iid]
        pts, gt = shapes.sample_training_points(
            spec, 128, 128, 0.02, seed=child_seed(args.seed, "calib", str(i)))
        mean, var = propagation.propagate_point(
            dec, g, pts, args.m_samples, seed=child_seed(args.seed, "mc",
                                                         str(i)))
        sm.append(mean)
        ss.append(np.sqrt(np.maximum(var, metrics.SCORE_VAR_FLOOR)))
        st.append(np.clip(gt, -dec.sdf_clamp, dec.sdf_clamp))
    sdf_curve = metrics.calibration_curve(
        np.concatenate(sm), np.concatenate(ss), np.concatenate(st),
        space="sdf")
    metrics.save_calibration_csv(outdir / "calibration_sdf.csv", sdf_curve)
    print(f"calibration curves written to {outdir} "
          f"(latent max gap {latent_curve.max_gap():.3f}, "
          f"sdf max gap {sdf_curve.max_gap():.3f})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="shapeuq",
                     description="Uncertainty-aware shape reconstruction")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=0, help="root seed")
        p.add_argument("--config", help="JSON config file (flags win)")

    p = sub.add_parser("train-decoder", help="auto-decoder training")
    add_common(p)
    p.add_argument("--family-size", type=int, default=20)
    p.add_argument("--family-seed", type=int, default=11)
    p.add_argument("--holdout", type=int, default=4)
    p.add_argument("--latent-dim", type=int, default=8)
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument("--lr-weights", type=float, default=1e-4)
    p.add_argument("--lr-codes", type=float, default=1e-3)
    p.add_argument("--code-reg-weight", type=float, default=1e-4)
    p.set_defaults(func=cmd_train_decoder)

    p = sub.add_parser("train-encoder", help="uncertainty encoder training")
    add_common(p)
    p.add_argument("--decoder", required=True, help="decoder container path")
    p.add_argument("--family", required=True, help="family manifest path")
    p.add_argument("--loss", choices=["nll", "es"], default="es")
    p.add_argument("--m-samples", type=int, default=64)
    p.add_argument("--views", type=int, default=24)
    p.add_argument("--epochs", type=int, default=150)
    p.add_argument("--lr", type=float, default=1e-3)
    p.set_defaults(func=cmd_train_encoder)

    p = sub.add_parser("render-dataset", help="render views of a family")
    add_common(p)
    p.add_argument("--family", required=True)
    p.add_argument("--codebook", help="optional codebook for gt codes")
    p.add_argument("--views", type=int, default=10)
    p.add_argument("--min-scale", type=float, default=1.0)
    p.set_defaults(func=cmd_render_dataset)

    p = sub.add_parser("reconstruct", help="views -> fused uncertain mesh")
    add_common(p)
    p.add_argument("--decoder", required=True)
    p.add_argument("--encoder", required=True)
    p.add_argument("--views", required=True, help="view dataset directory")
    p.add_argument("--instance", type=int, help="reconstruct one instance")
    p.add_argument("--fusion", choices=list(FUSION_MODES_CLI),
                   default="bayesian")
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--resolution", type=int, default=64)
    p.add_argument("--m-samples", type=int, default=10)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("fuse", help="fuse latent Gaussians from a text file")
    add_common(p)
    p.add_argument("--observations", required=True,
                   help="text file: one row per view, mean then variance")
    p.add_argument("--fusion", choices=list(FUSION_MODES_CLI),
                   default="bayesian")
    p.add_argument("--k", type=int, default=4)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("evaluate", help="crop-severity fusion sweep")
    add_common(p)
    p.add_argument("--decoder", required=True)
    p.add_argument("--encoder", required=True)
    p.add_argument("--family", required=True)
    p.add_argument("--min-scales", default="1.0,0.8,0.4,0.2,0.1")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--views", type=int, default=10)
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--resolution", type=int, default=32)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("calibrate", help="latent + SDF calibration curves")
    add_common(p)
    p.add_argument("--decoder", required=True)
    p.add_argument("--encoder", required=True)
    p.add_argument("--family", required=True)
    p.add_argument("--m-samples", type=int, default=64)
    p.add_argument("--sdf-views", type=int, default=16)
    p.set_defaults(func=cmd_calibrate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    defaults = {a.dest: a.default for g in parser._subparsers._group_actions
                for a in g.choices[args.command]._actions}
    try:
        args = _apply_config_file(args, defaults)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FloatingPointError, ArithmeticError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
