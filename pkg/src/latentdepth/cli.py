"""Command line experiment runner.

Every command takes an optional JSON config (--config) whose keys match the
command's flags (dashes or underscores); flags given on the command line win.
Unknown keys are errors. Exit codes: 0 ok, 2 config error, 3 data error,
4 divergence.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import covisibility, io, linear_model, synth
from .codec import DepthMap, encode
from .decoder import coarse_grid_basis, fit_basis, load_basis, save_basis
from .masking import MAX_VIEW_ANGLE_DEG, TAU
from .losses import HUBER_DELTA, LAMBDA_DEPTH, LAMBDA_PHOTO, LAMBDA_W, LAMBDA_Z
from .metrics import COLUMNS as METRIC_COLUMNS, evaluate, mean_report
from .objective import LossConfig, MultiViewObjective
from .optimizer import DivergenceError, RefineConfig, refine_codes

log = logging.getLogger("latentdepth")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4


class ConfigError(Exception):
    pass


class DataError(Exception):
    pass


# (default, type, help). type "bool" becomes --x/--no-x.
DEFAULTS = {
    "matrix-model": {
        "out": ("matrix_model.csv", str, "output CSV"),
        "seeds": (10, int, "number of seeds (0..seeds-1)"),
        "n_train": (50, int, "training scenes"),
        "n_test": (50, int, "test scenes"),
        "p_per_object": (20, int, "points per object"),
        "noise_sigma": (0.05, float, "image noise std"),
        "feature_dim": (10, int, "feature dimension"),
        "latent_dim": (3, int, "latent dimension"),
        "plot": (None, str, "optional SVG of test predictions"),
    },
    "synth": {
        "out": ("benchmark", str, "output directory"),
        "suites": ("abcd", str, "suites to generate"),
        "height": (192, int, "image height"),
        "width": (256, int, "image width"),
        "seed": (0, int, "texture seed"),
    },
    "fit-basis": {
        "out": ("basis.bin", str, "output basis file"),
        "train": ([], list, "scene directories with ground-truth depth"),
        "latent_dim": (192, int, "number of basis maps (svd mode)"),
        "mode": ("svd", str, "svd or grid"),
        "latent_grid": ([12, 16], list, "coarse grid shape (grid mode)"),
        "height": (192, int, "image height (grid mode)"),
        "width": (256, int, "image width (grid mode)"),
    },
    "refine": {
        "scene": (None, str, "scene directory"),
        "out": ("refined", str, "output directory"),
        "basis": ("grid", str, "'grid' or a basis file"),
        "latent_grid": ([12, 16], list, "coarse grid shape"),
        "mean_rho": (0.5, float, "constant mean rho for the grid basis"),
        "lr": (1e-3, float, "AdaMax learning rate"),
        "beta1": (0.9, float, "AdaMax beta1"),
        "beta2": (0.999, float, "AdaMax beta2"),
        "eps": (1e-8, float, "AdaMax epsilon"),
        "rel_tol": (1e-4, float, "relative loss change stopping threshold"),
        "max_iters": (500, int, "iteration cap"),
        "mask_refresh": (10, int, "iterations between mask refreshes"),
        "optimize_alpha": (None, "bool", "optimize mean depths (default: only without ground truth)"),
        "alpha_init": (1.0, float, "initial mean depth without ground truth"),
        "lambda_photo": (LAMBDA_PHOTO, float, "photometric weight"),
        "lambda_depth": (LAMBDA_DEPTH, float, "depth consistency weight"),
        "lambda_z": (LAMBDA_Z, float, "code regularization weight"),
        "lambda_w": (LAMBDA_W, float, "weight regularization weight"),
        "huber_photo": (HUBER_DELTA, float, "Huber delta for intensities"),
        "huber_depth": (HUBER_DELTA, float, "Huber delta for normalized depth"),
        "tau": (TAU, float, "MAD occlusion threshold"),
        "max_view_angle": (MAX_VIEW_ANGLE_DEG, float, "viewing angle threshold (deg)"),
        "raw_sum": (False, "bool", "sum pixel losses instead of averaging"),
        "occlusion_rule": ("one_sided", str, "one_sided or literal"),
        "reference": (0, int, "reference view index for co-visible selection"),
        "set_size": (5, int, "co-visible set size"),
        "overlap_min": (covisibility.OVERLAP_MIN, float, "minimum mutual overlap"),
        "min_parallax": (covisibility.MIN_PARALLAX_DEG, float, "redundancy threshold (deg)"),
        "voxel_size": (None, float, "voxel size (default median depth / 20)"),
        "median_scale": (False, "bool", "median-scale before computing metrics"),
        "export_masks": (False, "bool", "write per-category mask PGMs"),
    },
    "eval": {
        "pred": (None, str, "directory of predicted PFM depths"),
        "gt": (None, str, "directory of ground-truth PFM depths"),
        "out": ("metrics.csv", str, "output CSV"),
        "median_scale": (False, "bool", "apply median scaling"),
    },
    "covis": {
        "scene": (None, str, "scene directory"),
        "out": ("covisible.jsonl", str, "output JSON lines"),
        "reference": (None, int, "reference index (default: every view)"),
        "set_size": (5, int, "co-visible set size"),
        "overlap_min": (covisibility.OVERLAP_MIN, float, "minimum mutual overlap"),
        "min_parallax": (covisibility.MIN_PARALLAX_DEG, float, "redundancy threshold (deg)"),
        "voxel_size": (None, float, "voxel size (default median depth / 20)"),
    },
}


def _flag(key):
    return "--" + key.replace("_", "-")


def build_parser():
    parser = argparse.ArgumentParser(prog="latentdepth", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for cmd, spec in DEFAULTS.items():
        p = sub.add_parser(cmd)
        p.add_argument("--config", help="JSON config file")
        for key, (default, typ, help_) in spec.items():
            kw = dict(dest=key, default=argparse.SUPPRESS, help=f"{help_} [{default}]")
            if typ == "bool":
                p.add_argument(_flag(key), action=argparse.BooleanOptionalAction, **kw)
            elif typ is list:
                p.add_argument(_flag(key), nargs="+", **kw)
            else:
                p.add_argument(_flag(key), type=typ, **kw)
    return parser


def resolve_config(command, args):
    """Defaults < JSON config < explicit flags. Unknown config keys raise ConfigError."""
    spec = DEFAULTS[command]
    cfg = {k: v[0] for k, v in spec.items()}
    if getattr(args, "config", None):
        try:
            loaded = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError("config must be a JSON object")
        for key, value in loaded.items():
            norm = key.replace("-", "_")
            if norm not in spec:
                raise ConfigError(f"unknown config key {key!r} for {command}")
            cfg[norm] = value
    for key in spec:
        if hasattr(args, key):
            cfg[key] = getattr(args, key)
    return cfg


def _require(cfg, *keys):
    for k in keys:
        if cfg.get(k) is None:
            raise ConfigError(f"missing required setting {_flag(k)}")


# --- commands ----------------------------------------------------------------

def cmd_matrix_model(cfg):
    if cfg["seeds"] < 1:
        raise ConfigError("--seeds must be >= 1")
    rows = []
    for seed in range(cfg["seeds"]):
        rows += linear_model.matrix_study(seed, cfg["n_train"], cfg["n_test"], cfg["p_per_object"],
                                          cfg["noise_sigma"], cfg["feature_dim"], cfg["latent_dim"])
    io.write_csv(cfg["out"], "matrix-model", ["seed", "config", "train_ssd", "test_ssd"], rows)
    by_config = {}
    for r in rows:
        by_config.setdefault(r["config"], []).append(r)
    for name, rs in by_config.items():
        print(f"{name:>16}: train {np.mean([r['train_ssd'] for r in rs]):10.4f}"
              f"  test {np.mean([r['test_ssd'] for r in rs]):10.4f}")
    if cfg["plot"]:
        plot_matrix_predictions(cfg, cfg["plot"])
    return rows


def plot_matrix_predictions(cfg, path, n_scenes=4):
    """Top view (x vs depth) of true and predicted test scenes, with and without codes."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rng = np.random.default_rng(0)
    train = linear_model.generate_scenes(cfg["n_train"], cfg["p_per_object"], cfg["noise_sigma"], rng)
    test = linear_model.generate_scenes(cfg["n_test"], cfg["p_per_object"], cfg["noise_sigma"], rng)
    plain = linear_model.fit_without_z(train, cfg["feature_dim"])
    latent, _ = linear_model.fit_with_z(train, cfg["feature_dim"], cfg["latent_dim"])
    p = cfg["p_per_object"]
    fig, axes = plt.subplots(2, n_scenes, figsize=(3 * n_scenes, 6))
    for col in range(n_scenes):
        x, y = test.X_noisy[col], test.Y[col]
        z = linear_model.best_z_for_scene(latent, x, y)
        for row, pred in enumerate([linear_model.predict(plain, x), linear_model.predict(latent, x, z)]):
            ax = axes[row, col]
            for k in range(linear_model.N_OBJECTS):
                blk = slice(3 * p * k, 3 * p * (k + 1))
                yt, yp = y[blk], pred[blk]
                ax.plot(yt[:p], yt[p:2 * p], "k.", ms=3)
                ax.plot(yp[:p], yp[p:2 * p], "-", lw=1)
            ax.set_xlabel("w1")
            ax.set_ylabel("w2 (depth)")
            ax.set_aspect("equal")
            ax.set_title(("no z" if row == 0 else "best z") + f", scene {col}", fontsize=9)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def cmd_synth(cfg):
    suites = [s for s in cfg["suites"] if s in synth.SUITES]
    if not suites or len(suites) != len(cfg["suites"]):
        raise ConfigError(f"--suites must be letters from {''.join(synth.SUITES)}")
    dirs = synth.make_benchmark(cfg["out"], (cfg["height"], cfg["width"]), cfg["seed"], suites)
    for s, d in dirs.items():
        print(f"suite {s}: {d}")
    return dirs


def _load_scene(path):
    try:
        return synth.load_scene_dir(path)
    except (FileNotFoundError, ValueError) as exc:
        raise DataError(str(exc)) from exc


def cmd_fit_basis(cfg):
    if cfg["mode"] == "grid":
        gh, gw = map(int, cfg["latent_grid"])
        basis = coarse_grid_basis(cfg["height"], cfg["width"], (gh, gw))
    elif cfg["mode"] == "svd":
        if not cfg["train"]:
            raise ConfigError("svd mode needs --train scene directories")
        rhos = []
        for d in cfg["train"]:
            _, _, depths = _load_scene(d)
            for dm in depths:
                if dm is None:
                    raise DataError(f"{d}: training scenes need ground-truth depth")
                rhos.append(encode(dm, float(dm.d[dm.valid].mean())).rho)
        basis = fit_basis(rhos, cfg["latent_dim"])
    else:
        raise ConfigError(f"unknown basis mode {cfg['mode']!r}")
    save_basis(cfg["out"], basis)
    print(f"wrote {basis.latent_dim}-dim {basis.mode} basis {basis.shape} to {cfg['out']}")
    return basis


def _make_basis(cfg, shape):
    if cfg["basis"] == "grid":
        gh, gw = map(int, cfg["latent_grid"])
        return coarse_grid_basis(*shape, (gh, gw), cfg["mean_rho"])
    try:
        basis = load_basis(cfg["basis"])
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot load basis {cfg['basis']}: {exc}") from exc
    if basis.shape != tuple(shape):
        raise DataError(f"basis shape {basis.shape} does not match images {tuple(shape)}")
    return basis


def _refine_config(cfg, optimize_alpha):
    if cfg["occlusion_rule"] not in ("one_sided", "literal"):
        raise ConfigError(f"unknown occlusion rule {cfg['occlusion_rule']!r}")
    if cfg["max_iters"] < 0 or cfg["mask_refresh"] < 1:
        raise ConfigError("--max-iters must be >= 0 and --mask-refresh >= 1")
    loss = LossConfig(cfg["lambda_photo"], cfg["lambda_depth"], cfg["lambda_z"], cfg["lambda_w"],
                      cfg["huber_photo"], cfg["huber_depth"], cfg["tau"], cfg["max_view_angle"],
                      cfg["raw_sum"], cfg["occlusion_rule"])
    return RefineConfig(cfg["lr"], cfg["beta1"], cfg["beta2"], cfg["eps"], cfg["rel_tol"],
                        cfg["max_iters"], cfg["mask_refresh"], optimize_alpha, loss=loss)


def _select_views(cfg, ids, views, depths):
    if len(views) <= 2:
        return list(range(len(views))), None
    ref = cfg["reference"]
    if not 0 <= ref < len(views):
        raise ConfigError(f"--reference {ref} out of range for {len(views)} views")
    vm = covisibility.build_from_views(list(range(len(views))), views, depths, cfg["voxel_size"])
    cs = covisibility.select_covisible(vm, ref, min(cfg["set_size"], len(views)),
                                       cfg["overlap_min"], cfg["min_parallax"])
    if len(cs.members) < 2:
        raise DataError(f"no co-visible partner for view {ids[ref]}")
    return sorted(cs.members), cs


def _with_ids(cs, ids):
    """Same set with view indices replaced by frame ids."""
    return covisibility.CovisibleSet(ids[cs.reference], [ids[m] for m in cs.members],
                                     {ids[k]: v for k, v in cs.overlaps.items()},
                                     {ids[k]: v for k, v in cs.parallaxes.items()}, cs.complete)


def cmd_refine(cfg):
    _require(cfg, "scene")
    ids, views, gts = _load_scene(cfg["scene"])
    if len(views) < 2:
        raise DataError(f"{cfg['scene']}: refinement needs at least two posed views")
    has_gt = all(g is not None for g in gts)
    optimize_alpha = (not has_gt) if cfg["optimize_alpha"] is None else bool(cfg["optimize_alpha"])
    if has_gt:
        alpha_all = np.array([g.d[g.valid].mean() for g in gts])
    else:
        alpha_all = np.full(len(views), float(cfg["alpha_init"]))
    basis = _make_basis(cfg, views[0].shape)
    rcfg = _refine_config(cfg, optimize_alpha)

    init_depths = gts if has_gt else [
        DepthMap.from_array(np.full(v.shape, a)) for v, a in zip(views, alpha_all)]
    sel, cs = _select_views(cfg, ids, views, init_depths)
    views_sel = [views[k] for k in sel]
    alpha0 = alpha_all[sel]

    out = Path(cfg["out"])
    (out / "depth").mkdir(parents=True, exist_ok=True)
    # the output location is not part of the experiment; keep the record path-free
    record = {k: v for k, v in cfg.items() if k != "out"}
    (out / "config.json").write_text(json.dumps(record, indent=2, sort_keys=True))
    if cs is not None:
        (out / "covisible.jsonl").write_text(_with_ids(cs, ids).to_json() + "\n")

    result = refine_codes(views_sel, basis, None, alpha0, rcfg)
    obj = MultiViewObjective(views_sel, basis, rcfg.loss)
    final = obj.depths(result.z, result.alpha)
    for k, d in zip(sel, final):
        io.write_pfm(out / "depth" / f"{ids[k]}.pfm", d)

    trace_rows = [{"iteration": n, "photo": t.photo, "depth": t.depth, "alpha": t.alpha,
                   "z_reg": t.z_reg, "w_reg": t.w_reg, "total": t.total,
                   "kept_pixels": int(sum(t.pixels_used.values()))}
                  for n, t in enumerate(result.trace)]
    io.write_csv(out / "trace.csv", "trace",
                 ["iteration", "photo", "depth", "alpha", "z_reg", "w_reg", "total", "kept_pixels"],
                 trace_rows)
    if cfg["export_masks"] and result.frozen is not None:
        (out / "masks").mkdir(exist_ok=True)
        for ps in result.frozen.pairs:
            m = ps.masks
            for name in ("bounds", "chirality", "occlusion", "viewing_angle", "combined"):
                io.write_mask(out / "masks" / f"{ids[sel[ps.i]]}_{ids[sel[ps.j]]}_{name}.pgm",
                              getattr(m, name).reshape(views[0].shape))

    reports = None
    if has_gt:
        initial = obj.depths(np.zeros_like(result.z), alpha0)
        reports = []
        rows = []
        for k, d0, d1 in zip(sel, initial, final):
            r0 = evaluate(DepthMap.from_array(d0), gts[k], cfg["median_scale"])
            r1 = evaluate(DepthMap.from_array(d1), gts[k], cfg["median_scale"])
            reports.append((r0, r1))
            rows.append({"frame": ids[k], **r1.row()})
            print(f"view {ids[k]}: rmse {r0.rmse:.4f} -> {r1.rmse:.4f}, "
                  f"delta1 {r0.delta_acc[0]:.3f} -> {r1.delta_acc[0]:.3f}")
        rows.append({"frame": "mean", **mean_report([r for _, r in reports]).row()})
        io.write_csv(out / "metrics.csv", "metrics", METRIC_COLUMNS, rows)
    else:
        log.info("no ground truth: metrics skipped")
    last = result.trace[-1] if result.trace else None
    if last is not None:
        print(f"loss {result.trace[0].total:.6g} -> {last.total:.6g} "
              f"after {result.iterations} iterations ({result.stop_reason})")
    return result, reports


def cmd_eval(cfg):
    _require(cfg, "pred", "gt")
    pred_dir, gt_dir = Path(cfg["pred"]), Path(cfg["gt"])
    pred = {p.stem: p for p in sorted(pred_dir.glob("*.pfm"))}
    gt = {p.stem: p for p in sorted(gt_dir.glob("*.pfm"))}
    if not pred or set(pred) != set(gt):
        missing = sorted(set(pred) ^ set(gt))
        raise DataError(f"frame ids differ between {pred_dir} and {gt_dir}: {missing}")
    rows, reports = [], []
    for fid in sorted(pred):
        r = evaluate(DepthMap.from_array(io.read_pfm(pred[fid])),
                     DepthMap.from_array(io.read_pfm(gt[fid])), cfg["median_scale"])
        reports.append(r)
        rows.append({"frame": fid, **r.row()})
    mean = mean_report(reports)
    rows.append({"frame": "mean", **mean.row()})
    io.write_csv(cfg["out"], "metrics", METRIC_COLUMNS, rows)
    print(f"{len(reports)} frames: rmse {mean.rmse:.4f} abs_rel {mean.abs_rel:.4f} "
          f"delta1 {mean.delta_acc[0]:.3f}")
    return reports


def cmd_covis(cfg):
    _require(cfg, "scene")
    ids, views, depths = _load_scene(cfg["scene"])
    if any(d is None for d in depths):
        raise DataError("co-visibility selection needs a depth map for every view")
    vm = covisibility.build_from_views(list(range(len(views))), views, depths, cfg["voxel_size"])
    refs = range(len(views)) if cfg["reference"] is None else [cfg["reference"]]
    lines = []
    for ref in refs:
        if not 0 <= ref < len(views):
            raise ConfigError(f"--reference {ref} out of range")
        cs = covisibility.select_covisible(vm, ref, cfg["set_size"], cfg["overlap_min"],
                                           cfg["min_parallax"])
        lines.append(_with_ids(cs, ids).to_json())
    Path(cfg["out"]).write_text("\n".join(lines) + "\n")
    return lines


COMMANDS = {"matrix-model": cmd_matrix_model, "synth": cmd_synth, "fit-basis": cmd_fit_basis,
            "refine": cmd_refine, "eval": cmd_eval, "covis": cmd_covis}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args.command, args)
        COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def main_exit():
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
