"""Command-line interface: train, infer, eval, inspect, dwt.

Exit codes: 0 success; 2 bad configuration or checkpoint/scale mismatch;
3 training diverged (non-finite loss); 4 missing or unreadable file.

Thread count comes from --threads or the MLCRAIST_THREADS environment
variable; deterministic mode (the default for training) forces one thread.
The BLAS thread environment variables are only effective when set before
numpy is first imported, so heavy imports happen lazily per command.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path


class FileAccessError(RuntimeError):
    """A required input file is missing or unreadable (exit code 4)."""


# ---------------------------------------------------------------------------
# configuration plumbing
# ---------------------------------------------------------------------------

def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


_CONFIG_KEYS = {
    "scale": int, "width": int, "n_scatb": int, "heads": int, "window": int,
    "afb_mode": str, "use_cab": _parse_bool, "use_lhfib": _parse_bool,
    "dwt_levels": int, "batch_size": int, "total_iters": int,
    "base_lr": float, "lr_halving_period": int, "patch_size": int,
    "seed": int, "log_every": int,
}


def read_config_file(path) -> dict:
    """Parse a flat key=value config file; '#' starts a comment."""
    values: dict = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise FileAccessError(f"cannot read config file {path}: {e}") from e
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ValueError(f"{path}:{lineno}: expected key=value")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in _CONFIG_KEYS:
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = _CONFIG_KEYS[key](raw)
    return values


ABLATIONS = ("afb-add", "afb-concat", "dwt-level1", "no-cab", "no-lhfib")


def _apply_ablations(cfg_dict: dict, ablations) -> None:
    for name in ablations or ():
        if name == "afb-add":
            cfg_dict["afb_mode"] = "add"
        elif name == "afb-concat":
            cfg_dict["afb_mode"] = "concat"
        elif name == "dwt-level1":
            cfg_dict["dwt_levels"] = 1
        elif name == "no-cab":
            cfg_dict["use_cab"] = False
        elif name == "no-lhfib":
            cfg_dict["use_lhfib"] = False


def _merged(defaults: dict, file_values: dict, flag_values: dict) -> dict:
    out = dict(defaults)
    out.update({k: v for k, v in file_values.items() if k in defaults})
    out.update({k: v for k, v in flag_values.items() if v is not None})
    return out


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    from .checkpoint import save_checkpoint
    from .model import MlCraist, ModelConfig
    from .training import TrainConfig, train

    file_values = read_config_file(args.config) if args.config else {}

    model_defaults = ModelConfig().to_dict()
    model_flags = {"scale": args.scale, "width": args.width,
                   "n_scatb": args.n_scatb, "heads": args.heads,
                   "window": args.window}
    model_dict = _merged(model_defaults, file_values, model_flags)
    _apply_ablations(model_dict, args.ablation)
    model_cfg = ModelConfig.from_dict(model_dict)

    train_defaults = {"batch_size": 32, "total_iters": 1_000_000,
                      "base_lr": 1e-4, "lr_halving_period": None,
                      "patch_size": 64, "seed": 0, "log_every": 1}
    train_flags = {"batch_size": args.batch, "total_iters": args.iters,
                   "base_lr": args.lr, "lr_halving_period": args.lr_period,
                   "patch_size": args.patch, "seed": args.seed,
                   "log_every": args.log_every}
    td = _merged(train_defaults, file_values, train_flags)
    train_cfg = TrainConfig(**td)
    train_cfg.validate()

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = out_dir / "model.ckpt"
    log_path = out_dir / "loss.log"

    started = time.strftime("%Y-%m-%dT%H:%M:%S")
    model = MlCraist(model_cfg, seed=train_cfg.seed)
    history = train(model, args.data, train_cfg, log_path=log_path)
    save_checkpoint(ckpt_path, model_cfg, model)
    finished = time.strftime("%Y-%m-%dT%H:%M:%S")

    losses = [h[1] for h in history]
    decile = max(len(losses) // 10, 1)
    manifest = {
        "model_config": model_cfg.to_dict(),
        "train_config": train_cfg.to_dict(),
        "seed": train_cfg.seed,
        "started": started,
        "finished": finished,
        "checkpoint": str(ckpt_path),
        "loss_log": str(log_path),
        "metrics": {
            "iterations": train_cfg.total_iters,
            "first_decile_mean_l1": float(sum(losses[:decile]) / decile),
            "last_decile_mean_l1": float(sum(losses[-decile:]) / decile),
        },
    }
    tmp = out_dir / "manifest.json.tmp"
    tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True),
                   encoding="utf-8")
    os.replace(tmp, out_dir / "manifest.json")
    print(f"wrote {ckpt_path}, {log_path}, {out_dir / 'manifest.json'}")
    return 0


def cmd_infer(args) -> int:
    import numpy as np

    from .data import load_image, save_image
    from .model import upscale_array
    from .ops import resize_array

    model = None
    if args.baseline is None:
        if args.ckpt is None:
            raise ConfigErrorProxy("--ckpt is required unless --baseline is given")
        from .checkpoint import load_model
        model = load_model(args.ckpt)
        scale = model.config.scale
        if args.scale is not None and args.scale != scale:
            raise ConfigErrorProxy(
                f"checkpoint was trained for scale {scale}, "
                f"but --scale {args.scale} was requested")
    else:
        if args.scale is None:
            raise ConfigErrorProxy("--baseline bicubic requires --scale")
        scale = args.scale

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name in args.images:
        try:
            img = load_image(name)
        except (OSError, ValueError) as e:
            raise FileAccessError(f"cannot read image {name}: {e}") from e
        if args.baseline is not None:
            sr = resize_array(img, img.shape[-2] * scale, img.shape[-1] * scale,
                              kind="cubic")
        else:
            sr = upscale_array(model, img)
        sr = np.clip(sr, 0.0, 1.0)
        out_path = out_dir / f"{Path(name).stem}_x{scale}.png"
        save_image(out_path, sr)
        print(f"{name} -> {out_path}")
    return 0


def cmd_eval(args) -> int:
    import numpy as np

    from .data import load_image
    from .metrics import epi, psnr, rgb_to_y, ssim

    gt_dir = Path(args.gt)
    sr_dir = Path(args.sr)
    gt_files = sorted(gt_dir.glob("*.png"))
    if not gt_files:
        raise FileAccessError(f"no PNG files in {gt_dir}")
    rows = []
    for gt_path in gt_files:
        sr_path = sr_dir / gt_path.name
        if not sr_path.exists():
            raise FileAccessError(f"missing counterpart {sr_path}")
        try:
            gt = load_image(gt_path)
            sr = load_image(sr_path)
        except (OSError, ValueError) as e:
            raise FileAccessError(f"cannot read image pair {gt_path.name}: {e}") from e
        if gt.shape != sr.shape:
            raise ConfigErrorProxy(
                f"{gt_path.name}: shapes differ ({gt.shape} vs {sr.shape})")
        y_gt = rgb_to_y(gt[None])[0, 0]
        y_sr = rgb_to_y(sr[None])[0, 0]
        if args.crop:
            c = args.crop
            y_gt = y_gt[c:-c, c:-c]
            y_sr = y_sr[c:-c, c:-c]
        rows.append((gt_path.name, psnr(y_sr, y_gt), ssim(y_sr, y_gt),
                     epi(y_sr, y_gt)))

    def fmt(v: float) -> str:
        return "inf" if v == float("inf") else f"{v:.4f}"

    print(f"{'name':<32} {'psnr_y':>10} {'ssim_y':>8} {'epi':>8}")
    for name, p, s, e in rows:
        print(f"{name:<32} {fmt(p):>10} {s:>8.4f} {e:>8.4f}")
    mean_psnr = float(np.mean([r[1] for r in rows]))
    mean_ssim = float(np.mean([r[2] for r in rows]))
    mean_epi = float(np.mean([r[3] for r in rows]))
    print(f"{'mean':<32} {fmt(mean_psnr):>10} {mean_ssim:>8.4f} {mean_epi:>8.4f}")

    out_path = Path(args.out)
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write("name,psnr_y,ssim_y,epi\n")
        for name, p, s, e in rows:
            fh.write(f"{name},{fmt(p)},{s:.6f},{e:.6f}\n")
        fh.write(f"mean,{fmt(mean_psnr)},{mean_ssim:.6f},{mean_epi:.6f}\n")
    print(f"wrote {out_path}")
    return 0


def cmd_inspect(args) -> int:
    from .model import MlCraist, ModelConfig, param_breakdown, param_count, \
        tail_param_delta

    if args.ckpt is not None:
        from .checkpoint import load_checkpoint
        cfg, _ = load_checkpoint(args.ckpt)
    else:
        d = ModelConfig().to_dict()
        flags = {"scale": args.scale, "width": args.width,
                 "n_scatb": args.n_scatb, "heads": args.heads,
                 "window": args.window}
        d.update({k: v for k, v in flags.items() if v is not None})
        _apply_ablations(d, args.ablation)
        cfg = ModelConfig.from_dict(d)

    model = MlCraist(cfg, seed=0)
    print(f"config: {cfg.to_dict()}")
    for module, count in param_breakdown(model).items():
        print(f"{module:<12} {count:>10}")
    total = param_count(model)
    print(f"{'total':<12} {total:>10}  ({total / 1000.0:.1f}K)")
    print(f"tail-conv delta scale 2->3: {tail_param_delta(2, 3, cfg.width)}")
    print(f"tail-conv delta scale 3->4: {tail_param_delta(3, 4, cfg.width)}")
    return 0


def cmd_dwt(args) -> int:
    import numpy as np

    from .data import load_image, save_image
    from .engine import Tensor
    from .wavelet import SubBandSet, dwt2_multilevel, idwt2_haar

    try:
        img = load_image(args.image)
    except (OSError, ValueError) as e:
        raise FileAccessError(f"cannot read image {args.image}: {e}") from e
    levels = args.levels
    mult = 1 << levels
    h, w = img.shape[-2:]
    hp = (h + mult - 1) // mult * mult
    wp = (w + mult - 1) // mult * mult
    if hp != h or wp != w:
        img = np.pad(img, ((0, 0), (0, hp - h), (0, wp - w)), mode="edge")
        print(f"replicate-padded {h}x{w} -> {hp}x{wp} for {levels} level(s)")
    x = Tensor(img[None])
    pyramid = dwt2_multilevel(x, levels)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = Path(args.image).stem
    for level, bands in enumerate(pyramid, start=1):
        for band_name, band in zip(("LL", "LH", "HL", "HH"), bands.bands()):
            arr = band.data[0]
            lo, hi = float(arr.min()), float(arr.max())
            if hi - lo < 1e-12:
                norm = np.full_like(arr, 0.5)  # degenerate all-constant band
            else:
                norm = (arr - lo) / (hi - lo)
            path = out_dir / f"{stem}_L{level}_{band_name}.png"
            save_image(path, norm)
            print(f"level {level} {band_name}: min={lo:.6f} max={hi:.6f} -> {path}")

    if args.verify:
        recon = None
        for bands in reversed(pyramid):
            if recon is not None:
                bands = SubBandSet(recon, bands.LH, bands.HL, bands.HH)
            recon = idwt2_haar(bands)
        err = float(np.max(np.abs(recon.data - x.data)))
        print(f"reconstruction max abs error: {err:.3e}")
    return 0


# ---------------------------------------------------------------------------
# plumbing
# ---------------------------------------------------------------------------

class ConfigErrorProxy(ValueError):
    """Configuration problem detected before the heavy modules are loaded."""


def _setup_threads(args) -> None:
    threads = getattr(args, "threads", None)
    if threads is None:
        env = os.environ.get("MLCRAIST_THREADS")
        threads = int(env) if env else None
    if getattr(args, "deterministic", False):
        threads = 1
    if threads is not None and "numpy" not in sys.modules:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
            os.environ[var] = str(threads)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mlcraist",
        description="Wavelet cross-attention super-resolution toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model on a directory of PNGs")
    p.add_argument("--data", required=True, help="directory of HR PNG images")
    p.add_argument("--out", required=True, help="output directory for run artifacts")
    p.add_argument("--config", help="key=value config file (flags override)")
    p.add_argument("--scale", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--n-scatb", type=int, dest="n_scatb")
    p.add_argument("--heads", type=int)
    p.add_argument("--window", type=int)
    p.add_argument("--ablation", action="append", choices=ABLATIONS)
    p.add_argument("--iters", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--patch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--lr-period", type=int, dest="lr_period")
    p.add_argument("--seed", type=int)
    p.add_argument("--log-every", type=int, dest="log_every")
    p.add_argument("--threads", type=int)
    p.add_argument("--no-deterministic", dest="deterministic",
                   action="store_false", default=True,
                   help="allow multi-threaded BLAS (breaks byte-reproducibility)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="upscale images with a checkpoint")
    p.add_argument("--ckpt", help="checkpoint file")
    p.add_argument("--scale", type=int, help="must match the checkpoint")
    p.add_argument("--baseline", choices=["bicubic"],
                   help="ignore the model and emit plain bicubic upscaling")
    p.add_argument("--out", required=True)
    p.add_argument("--threads", type=int)
    p.add_argument("images", nargs="+")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="PSNR-Y/SSIM-Y/EPI between two directories")
    p.add_argument("--sr", required=True, help="directory of reconstructed images")
    p.add_argument("--gt", required=True, help="directory of ground-truth images")
    p.add_argument("--crop", type=int, default=0,
                   help="pixels to trim from each border before scoring")
    p.add_argument("--out", default="eval_results.csv",
                   help="machine-readable results file")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect", help="parameter accounting for a config/checkpoint")
    p.add_argument("--ckpt")
    p.add_argument("--scale", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--n-scatb", type=int, dest="n_scatb")
    p.add_argument("--heads", type=int)
    p.add_argument("--window", type=int)
    p.add_argument("--ablation", action="append", choices=ABLATIONS)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("dwt", help="write wavelet sub-band images")
    p.add_argument("--image", required=True)
    p.add_argument("--levels", type=int, default=2)
    p.add_argument("--out", required=True)
    p.add_argument("--verify", action="store_true",
                   help="check synthesis reconstructs the input")
    p.set_defaults(func=cmd_dwt)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _setup_threads(args)
    try:
        return args.func(args)
    except FileAccessError as e:
        print(f"error: {e}", file=sys.stderr)
        return 4
    except ConfigErrorProxy as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - map library errors to exit codes
        from .checkpoint import CheckpointError
        from .engine import InvalidArgumentError
        from .training import ConfigError, TrainingDivergedError
        if isinstance(e, TrainingDivergedError):
            print(f"error: {e}", file=sys.stderr)
            return 3
        if isinstance(e, (ConfigError, CheckpointError, InvalidArgumentError,
                          ValueError)):
            print(f"error: {e}", file=sys.stderr)
            return 2
        raise


if __name__ == "__main__":
    sys.exit(main())
