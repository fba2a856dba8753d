"""Command-line front end.

Subcommands: ``train``, ``infer``, ``eval``, ``inspect-adjacency``,
``describe``, ``grad-check``.  Images are 8-bit RGB PNG, mapped to
[0, 1] by dividing by 255.  Exit codes: 0 success, 2 usage or config
problem, 3 numerical failure (divergence, non-finite values, or a
failed gradient check).

Every run is deterministic given its seed and inputs; repeating a
command reproduces its outputs byte for byte.
"""

from __future__ import annotations

import argparse
import os
import sys
import tempfile

import numpy as np

from .adjacency import update_adjacency
from .checkpoint import load_checkpoint
from .data import bicubic_resize, fixture_images, make_pairs
from .gradcheck import grad_check
from .metrics import evaluate_pairs, self_ensemble
from .model import GVTNet
from .runconfig import ConfigError, RunConfig, load_run_config, serialize_run_config
from .tensor import NumericsError, Tensor
from .training import OptimState, TrainingDivergence, l1_loss, train

__all__ = ["main"]


def _read_image(path: str) -> np.ndarray:
    """Load a PNG as float64 [3, H, W] in [0, 1]."""
    from PIL import Image
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    except FileNotFoundError:
        raise ConfigError(f"image not found: {path}") from None
    except Exception as exc:
        raise ConfigError(f"cannot read image {path}: {exc}") from None
    return arr.transpose(2, 0, 1) / 255.0


def _write_image(path: str, img: np.ndarray) -> None:
    """Write [3, H, W] values in [0, 1] as 8-bit RGB PNG, atomically."""
    from PIL import Image
    data = np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".png.part")
    os.close(fd)
    try:
        Image.fromarray(data.transpose(1, 2, 0), "RGB").save(tmp, format="PNG")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# argparse dest -> config key, for flags that override the config file.
_OVERRIDE_KEYS = {
    "threshold": "adjacency_threshold",
    "minkowski_p": "adjacency_p",
    "adjacency_compare": "adjacency_compare",
    "mask_mode": "gvt_mask_mode",
    "scale": "scale",
    "channels": "channels",
    "groups": "n_groups",
    "blocks": "n_blocks",
    "window": "window",
    "heads": "heads",
    "steps": "steps",
    "batch": "batch",
    "lr": "lr",
    "seed": "seed",
    "checkpoint_every": "checkpoint_every",
    "log_every": "log_every",
    "out": "out_dir",
    "data": "data_dir",
}
_FLAG_KEYS = {
    "no_stl": "disable_stl",
    "no_gvt": "disable_gvt",
    "plain_qkv": "plain_linear_qkv",
}


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="FILE",
                   help="flat 'key = value' config file")
    p.add_argument("--threshold", type=float, metavar="T",
                   help="adjacency distance threshold")
    p.add_argument("--minkowski-p", choices=["1", "2", "inf"],
                   help="distance order for adjacency")
    p.add_argument("--adjacency-compare", choices=["gt", "lt"],
                   help="link windows with distance above (gt) or below (lt) T")
    p.add_argument("--mask-mode", choices=["hadamard", "additive"],
                   help="how adjacency gates graph attention scores")
    p.add_argument("--no-stl", action="store_true", default=None,
                   help="drop the shifted-window layer from each block")
    p.add_argument("--no-gvt", action="store_true", default=None,
                   help="drop the graph layer from each block")
    p.add_argument("--plain-qkv", action="store_true", default=None,
                   help="pointwise-only q/k/v projections")
    p.add_argument("--scale", type=int, choices=[2, 4, 8],
                   help="upscaling factor")
    p.add_argument("--channels", type=int, help="embedding width")
    p.add_argument("--groups", type=int, help="number of residual groups")
    p.add_argument("--blocks", type=int, help="blocks per group")
    p.add_argument("--window", type=int, help="attention window side")
    p.add_argument("--heads", type=int, help="attention heads")
    p.add_argument("--seed", type=int, help="rng seed")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--steps", type=int, help="optimization steps")
    p.add_argument("--batch", type=int, help="examples per step")
    p.add_argument("--lr", type=float, help="learning rate")
    p.add_argument("--checkpoint-every", type=int, metavar="N",
                   help="also checkpoint every N steps (0 = final only)")
    p.add_argument("--log-every", type=int, metavar="N",
                   help="trace cadence in steps")


def _run_config(args: argparse.Namespace) -> RunConfig:
    overrides: dict[str, object] = {}
    for dest, key in _OVERRIDE_KEYS.items():
        value = getattr(args, dest, None)
        if value is not None:
            overrides[key] = value
    for dest, key in _FLAG_KEYS.items():
        if getattr(args, dest, None):
            overrides[key] = True
    return load_run_config(getattr(args, "config", None), overrides)


def _pad_to_window(img: np.ndarray, window: int) -> np.ndarray:
    h, w = img.shape[-2], img.shape[-1]
    ph = (window - h % window) % window
    pw = (window - w % window) % window
    if not (ph or pw):
        return img
    pad = [(0, 0)] * (img.ndim - 2) + [(0, ph), (0, pw)]
    return np.pad(img, pad, mode="reflect")


def _load_training_images(rc: RunConfig, use_fixtures: bool) -> list[np.ndarray]:
    if use_fixtures:
        lr_side = max(2 * rc.net.window, 16)
        lr_side += (-lr_side) % rc.net.window
        return fixture_images(n=4, size=lr_side * rc.net.scale,
                              seed=rc.train.seed)
    if not rc.data_dir:
        raise ConfigError("no data_dir configured; pass --data or --fixtures")
    if not os.path.isdir(rc.data_dir):
        raise ConfigError(f"data_dir is not a directory: {rc.data_dir}")
    paths = sorted(p for p in os.listdir(rc.data_dir) if p.endswith(".png"))
    if not paths:
        raise ConfigError(f"no .png files in {rc.data_dir}")
    images = []
    need = rc.net.scale * rc.net.window
    for name in paths:
        img = _read_image(os.path.join(rc.data_dir, name))
        h, w = img.shape[-2], img.shape[-1]
        if h % need or w % need:
            raise ConfigError(
                f"{name}: extents {h}x{w} must be divisible by "
                f"scale*window = {need}")
        images.append(img)
    return images


def cmd_train(args: argparse.Namespace) -> int:
    rc = _run_config(args)
    hr_images = _load_training_images(rc, args.fixtures)
    pairs = make_pairs(hr_images, rc.net.scale, seed=rc.train.seed)

    optim = None
    start_step = 0
    if args.resume:
        model, extra = load_checkpoint(args.resume)
        optim = OptimState.from_records(extra)
        start_step = optim.step
        print(f"resumed from {args.resume} at step {start_step}")
    else:
        model = GVTNet(rc.net, seed=rc.train.seed)

    os.makedirs(rc.out_dir, exist_ok=True)
    with open(os.path.join(rc.out_dir, "run_config.txt"), "w") as f:
        f.write(serialize_run_config(rc))

    result = train(pairs, model, rc.train, out_dir=rc.out_dir,
                   optim=optim, start_step=start_step)
    print(f"trained {result.final_step - start_step} steps on "
          f"{len(pairs)} pairs")
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"trace: {os.path.join(rc.out_dir, 'loss.csv')}")
    return 0


def cmd_infer(args: argparse.Namespace) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    img = _read_image(args.input)
    if args.ensemble:
        sr = self_ensemble(model.infer, img)
    else:
        sr = model.infer(img)
    _write_image(args.output, sr)
    print(f"{args.input} {img.shape[-2]}x{img.shape[-1]} -> "
          f"{args.output} {sr.shape[-2]}x{sr.shape[-1]}")
    return 0


def _collect_eval_pairs(directory: str
                        ) -> tuple[list[tuple[np.ndarray, np.ndarray]], list[str]]:
    """Pair <name>_lr.png with <name>_hr.png; anything else is an error."""
    if not os.path.isdir(directory):
        raise ConfigError(f"not a directory: {directory}")
    lr, hr, odd = {}, {}, []
    for name in sorted(os.listdir(directory)):
        if not name.endswith(".png"):
            continue
        stem = name[:-len(".png")]
        if stem.endswith("_lr"):
            lr[stem[:-3]] = name
        elif stem.endswith("_hr"):
            hr[stem[:-3]] = name
        else:
            odd.append(name)
    unpaired = odd + [lr[s] for s in sorted(lr.keys() - hr.keys())] \
        + [hr[s] for s in sorted(hr.keys() - lr.keys())]
    if unpaired:
        raise ConfigError(
            "unpaired files (need <name>_lr.png + <name>_hr.png): "
            + ", ".join(sorted(unpaired)))
    if not lr:
        raise ConfigError(f"no image pairs in {directory}")
    names = sorted(lr)
    pairs = [(_read_image(os.path.join(directory, lr[s])),
              _read_image(os.path.join(directory, hr[s]))) for s in names]
    return pairs, names


def cmd_eval(args: argparse.Namespace) -> int:
    pairs, names = _collect_eval_pairs(args.data)
    if args.stub == "identity":
        predict = lambda x: x  # noqa: E731
    elif args.stub == "bicubic":
        s = args.scale or 2
        predict = lambda x: bicubic_resize(x, s * x.shape[-2], s * x.shape[-1])  # noqa: E731
    elif args.checkpoint:
        model, _ = load_checkpoint(args.checkpoint)
        predict = model.infer
    else:
        raise ConfigError("eval needs --checkpoint or --stub")
    report = evaluate_pairs(predict, pairs, names=names, crop=args.crop,
                            y_channel=args.y_channel, ensemble=args.ensemble)
    print(report.table())
    if args.report:
        with open(args.report, "w") as f:
            f.write(report.to_csv())
        print(f"report: {args.report}")
    return 0


def cmd_inspect_adjacency(args: argparse.Namespace) -> int:
    if args.features == "pixels":
        # Graph construction applied to raw RGB tokens; model-free, so a
        # constant image really does give the self-loop-only graph.
        rc = _run_config(args)
        window, adj_cfg = rc.net.window, rc.net.adjacency
        img = _pad_to_window(_read_image(args.image), window)
        feats = img[None]
        group_label = "pixels"
    else:
        if args.checkpoint:
            model, _ = load_checkpoint(args.checkpoint)
        elif args.random:
            rc = _run_config(args)
            model = GVTNet(rc.net, seed=rc.train.seed)
        else:
            raise ConfigError(
                "inspect-adjacency needs --checkpoint or --random "
                "(or --features pixels)")
        window, adj_cfg = model.cfg.window, model.cfg.adjacency
        img = _pad_to_window(_read_image(args.image), window)
        try:
            feats = model.group_input_features(img, args.group)
        except IndexError as exc:
            raise ConfigError(str(exc)) from None
        group_label = f"group {args.group}"
    adj = update_adjacency(feats, window, adj_cfg)

    mats = adj.matrices.astype(int)
    m = mats.shape[-1]
    lines = []
    for w_idx in range(mats.shape[0]):
        for row in range(m):
            lines.append(f"{w_idx},{row},"
                         + ",".join(str(v) for v in mats[w_idx, row]))
    with open(args.csv, "w") as f:
        f.write("\n".join(lines) + "\n")

    off_diag = mats.copy()
    idx = np.arange(m)
    off_diag[:, idx, idx] = 0
    isolated_per_window = (off_diag.sum(axis=2) == 0).sum(axis=1)
    print(f"{group_label}: {adj.n_windows} windows of {m} tokens "
          f"(grid {adj.grid_h}x{adj.grid_w})")
    print(f"edge density: {adj.edge_density()!r}")
    print(f"isolated tokens (self-loop only): {int(isolated_per_window.sum())}")
    print(f"matrices: {args.csv} ({len(lines)} rows)")
    if args.per_window:
        for w_idx in range(mats.shape[0]):
            print(f"window {w_idx}: density {mats[w_idx].mean():.4f}, "
                  f"isolated {int(isolated_per_window[w_idx])}")
    return 0


def cmd_describe(args: argparse.Namespace) -> int:
    if args.checkpoint:
        model, _ = load_checkpoint(args.checkpoint)
    else:
        rc = _run_config(args)
        model = GVTNet(rc.net, seed=rc.train.seed)
    cfg = model.cfg
    layers = []
    if not cfg.disable_stl:
        layers.append("shifted-window")
    if not cfg.disable_gvt:
        layers.append("graph")
    print(f"scale x{cfg.scale}, {cfg.n_groups} group(s) x {cfg.n_blocks} "
          f"block(s), {cfg.channels} channels, window {cfg.window}, "
          f"{cfg.heads} heads")
    print(f"block layers: {' + '.join(layers)}; qkv "
          + ("pointwise only" if cfg.plain_linear_qkv else "depthwise+pointwise"))
    if not cfg.disable_gvt:
        a = cfg.adjacency
        p = "inf" if a.p == float("inf") else str(int(a.p))
        print(f"adjacency: p={p}, threshold={a.threshold:g}, "
              f"compare={a.comparison}, mask={cfg.gvt_mask_mode}")
    counts = model.describe()
    print(f"parameters: {counts['total']}")
    print(f"  shallow        {counts['shallow']}")
    print(f"  groups         {counts['groups']} "
          f"({' + '.join(str(n) for n in counts['per_group'])})")
    print(f"  body conv      {counts['body_conv']}")
    print(f"  reconstruction {counts['reconstruction']}")
    return 0


# Small enough that central differences over every layer stay fast.
_GRAD_CHECK_DEFAULTS = {"channels": 8, "n_groups": 1, "n_blocks": 1,
                        "window": 4, "heads": 2, "scale": 2}


def cmd_grad_check(args: argparse.Namespace) -> int:
    overrides: dict[str, object] = \
        {} if args.config else dict(_GRAD_CHECK_DEFAULTS)
    for dest, key in _OVERRIDE_KEYS.items():
        value = getattr(args, dest, None)
        if value is not None:
            overrides[key] = value
    for dest, key in _FLAG_KEYS.items():
        if getattr(args, dest, None):
            overrides[key] = True
    rc = load_run_config(args.config, overrides)
    model = GVTNet(rc.net, seed=rc.train.seed)
    rng = np.random.default_rng(rc.train.seed)
    side = args.side
    x = Tensor(rng.uniform(0.1, 0.9, size=(1, 3, side, side)))
    target = Tensor(rng.uniform(0.1, 0.9,
                                size=(1, 3, rc.net.scale * side,
                                      rc.net.scale * side)))
    report = grad_check(lambda: l1_loss(model(x), target),
                        list(model.named_parameters()),
                        eps=args.eps, tol=args.tol,
                        max_elems_per_tensor=args.max_elems,
                        seed=rc.train.seed)
    print(report.summary())
    print(f"max relative error: {report.max_rel_err:.3e} "
          f"({'PASS' if report.passed else 'FAIL'})")
    return 0 if report.passed else 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gvtnet",
        description="Window-graph transformer for face super-resolution.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="optimize a model on LR/HR pairs")
    _add_model_flags(p)
    _add_train_flags(p)
    p.add_argument("--data", metavar="DIR",
                   help="directory of HR .png images (LR is derived)")
    p.add_argument("--fixtures", action="store_true",
                   help="train on built-in synthetic images")
    p.add_argument("--out", metavar="DIR", help="run directory")
    p.add_argument("--resume", metavar="CKPT",
                   help="continue from a checkpoint (model + optimizer)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="upscale one PNG")
    p.add_argument("checkpoint")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--ensemble", action="store_true",
                   help="average the 8 flip/rotation views")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score a model on an LR/HR directory")
    p.add_argument("--checkpoint")
    p.add_argument("--stub", choices=["identity", "bicubic"],
                   help="replace the model with a fixed predictor")
    p.add_argument("--scale", type=int, choices=[2, 4, 8],
                   help="factor for the bicubic stub")
    p.add_argument("--data", required=True, metavar="DIR",
                   help="directory of <name>_lr.png / <name>_hr.png pairs")
    p.add_argument("--ensemble", action="store_true")
    p.add_argument("--crop", type=int, default=0, metavar="PX",
                   help="trim border pixels before scoring")
    p.add_argument("--y-channel", action="store_true",
                   help="PSNR on BT.601 luma instead of RGB")
    p.add_argument("--report", default="metrics.csv", metavar="CSV",
                   help="where to write per-image scores ('' to skip)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect-adjacency",
                       help="dump the window graph a group would use")
    _add_model_flags(p)
    p.add_argument("image", help="input PNG")
    p.add_argument("--checkpoint", help="take model + config from a checkpoint")
    p.add_argument("--random", action="store_true",
                   help="fresh seeded model from flags/config instead")
    p.add_argument("--features", choices=["model", "pixels"], default="model",
                   help="build the graph from a group's input features "
                        "(default) or from raw RGB tokens")
    p.add_argument("--group", type=int, default=0,
                   help="residual group index (default 0)")
    p.add_argument("--csv", default="adjacency.csv", metavar="FILE",
                   help="matrix dump path; one row per (window, token)")
    p.add_argument("--per-window", action="store_true",
                   help="also print per-window density/isolation lines")
    p.set_defaults(func=cmd_inspect_adjacency)

    p = sub.add_parser("describe", help="print architecture + parameter counts")
    _add_model_flags(p)
    p.add_argument("--checkpoint", help="describe a saved model instead")
    p.set_defaults(func=cmd_describe)

    p = sub.add_parser("grad-check",
                       help="finite-difference audit of the whole pipeline")
    _add_model_flags(p)
    p.add_argument("--side", type=int, default=8,
                   help="input side length (default 8)")
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--max-elems", type=int, default=64,
                   help="sampled elements per parameter tensor")
    p.set_defaults(func=cmd_grad_check)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (TrainingDivergence, NumericsError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
