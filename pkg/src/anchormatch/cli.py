"""Command-line entry point: ``train``, ``match``, ``eval``, ``ablate`` and ``synth``.

Every subcommand prints its resolved configuration as a ``# config {...}``
JSON header. Saving that JSON and passing it back with ``--config`` re-runs
the command with identical settings; flags given alongside ``--config``
still win. Exit codes: 0 success, 1 runtime or I/O failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .anchors import AnchorSet, GroundTruthField, read_anchor_file, sample_gt_anchors
from .errors import ArtifactNotFoundError, CheckpointError, EmptyAnchorError
from .evaluation import (
    DEFAULT_THRESHOLDS,
    EvalPair,
    MetricCurve,
    curve_from_errors,
    eval_anchors,
    make_eval_set,
    match_errors,
    mma,
    pair_errors,
    parse_variant,
    run_ablation,
    train_variant,
    checkpoint_path,
)
from .matching import match_points, read_match_file, write_match_file
from .network import ModelConfig, forward, grid_coords, load_checkpoint, parse_checkpoint
from .training import TrainConfig, apply_homography, iteration_rng, random_texture, synth_pair, train

SEED_ENV = "ANCHORMATCH_SEED"
MAX_ANCHORS = 500
EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# file helpers
# ---------------------------------------------------------------------------


def _atomic_write_text(path, text: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _atomic_save_image(img, path) -> None:
    tmp = f"{path}.tmp"
    img.save(tmp, format="PNG")
    os.replace(tmp, path)


def load_image(path, multiple: int = 8) -> np.ndarray:
    """Read an 8-bit PNG/PPM as ``[3, H, W]`` floats ``v / 255``.

    Grayscale input is replicated to three channels. Images whose sides are
    not multiples of ``multiple`` are resized down to the nearest multiple
    (bilinear); normalized coordinates are unaffected by this.
    """
    from PIL import Image

    with Image.open(path) as im:
        im = im.convert("RGB")
        w, h = im.size
        tw, th = max(multiple, w - w % multiple), max(multiple, h - h % multiple)
        if (tw, th) != (w, h):
            im = im.resize((tw, th), Image.BILINEAR)
        arr = np.asarray(im, dtype=np.uint8)
    return arr.transpose(2, 0, 1).astype(np.float64) / 255.0


def read_homography(path) -> np.ndarray:
    """A 3x3 row-major matrix in normalized coordinates (image a -> image b); '#' lines ignored."""
    vals = []
    with open(path) as fh:
        for line in fh:
            s = line.split("#", 1)[0].strip()
            if s:
                vals.extend(float(v) for v in s.split())
    if len(vals) != 9:
        raise ValueError(f"{path}: expected 9 homography entries, got {len(vals)}")
    return np.asarray(vals).reshape(3, 3)


def write_homography(path, hmat: np.ndarray) -> None:
    rows = [" ".join(repr(float(v)) for v in r) for r in np.asarray(hmat)]
    _atomic_write_text(path, "# normalized (u, v) homography, image a -> image b\n" + "\n".join(rows) + "\n")


def gt_from_homography(hmat: np.ndarray, image_hw) -> GroundTruthField:
    h, w = image_hw
    target, wscale = apply_homography(hmat, grid_coords(h, w))
    valid = np.all((target >= 0) & (target <= 1), axis=1) & (wscale > 0)
    return GroundTruthField(target.reshape(h, w, 2), valid.reshape(h, w))


def save_image(arr: np.ndarray, path) -> None:
    """Write ``[3, H, W]`` floats in [0, 1] as an 8-bit PNG."""
    from PIL import Image

    img = Image.fromarray(np.rint(np.clip(arr, 0, 1) * 255).astype(np.uint8).transpose(1, 2, 0))
    _atomic_save_image(img, path)


# ---------------------------------------------------------------------------
# visualization
# ---------------------------------------------------------------------------


def render_matches(image_a, image_b, matches, anchors: AnchorSet | None, path, max_lines: int = 300) -> None:
    """Side-by-side image with match lines and green anchor markers."""
    from PIL import Image, ImageDraw

    def to_img(a):
        return Image.fromarray(np.rint(np.clip(a, 0, 1) * 255).astype(np.uint8).transpose(1, 2, 0))

    ia, ib = to_img(image_a), to_img(image_b)
    (wa, ha), (wb, hb) = ia.size, ib.size
    canvas = Image.new("RGB", (wa + wb, max(ha, hb)))
    canvas.paste(ia, (0, 0))
    canvas.paste(ib, (wa, 0))
    draw = ImageDraw.Draw(canvas)
    step = max(1, len(matches) // max_lines)
    for k, m in enumerate(matches[::step]):
        hue = (k * 47) % 255
        colour = (255, hue, 255 - hue)
        xa, ya = m.query[0] * (wa - 1), m.query[1] * (ha - 1)
        xb, yb = wa + m.fine_match[0] * (wb - 1), m.fine_match[1] * (hb - 1)
        draw.line([(xa, ya), (xb, yb)], fill=colour, width=1)
    if anchors is not None:
        for (ua, va), (ub, vb) in zip(anchors.points_a, anchors.points_b):
            for x, y in ((ua * (wa - 1), va * (ha - 1)), (wa + ub * (wb - 1), vb * (hb - 1))):
                draw.ellipse([x - 2, y - 2, x + 2, y + 2], outline=(0, 255, 0), fill=(0, 255, 0))
    _atomic_save_image(canvas, path)


def render_curves(curves: dict[str, MetricCurve], path, size=(480, 320)) -> None:
    """Minimal line plot of metric curves (fraction versus threshold)."""
    from PIL import Image, ImageDraw

    w, h = size
    pad = 30
    img = Image.new("RGB", size, "white")
    draw = ImageDraw.Draw(img)
    draw.rectangle([pad, pad // 2, w - pad // 2, h - pad], outline="black")
    tmax = max(max(c.thresholds) for c in curves.values())
    palette = [(31, 119, 180), (214, 39, 40), (44, 160, 44), (148, 103, 189), (255, 127, 14), (23, 190, 207)]
    for k, (name, c) in enumerate(curves.items()):
        colour = palette[k % len(palette)]
        pts = [(pad + (t / tmax) * (w - 1.5 * pad), (h - pad) - v * (h - 1.5 * pad)) for t, v in zip(c.thresholds, c.values)]
        draw.line(pts, fill=colour, width=2)
        draw.text((pad + 6, pad // 2 + 4 + 12 * k), name, fill=colour)
    _atomic_save_image(img, path)


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _model_flags(p: argparse.ArgumentParser) -> None:
    d = ModelConfig()
    g = p.add_argument_group("model")
    g.add_argument("--coarse-dim", type=int, default=d.coarse_dim)
    g.add_argument("--fine-dim", type=int, default=d.fine_dim)
    g.add_argument("--layers", type=int, default=d.n_layers)
    g.add_argument("--heads", type=int, default=d.heads)
    g.add_argument("--pos-dim", type=int, default=d.pos_dim)
    g.add_argument("--literal-residual", action="store_true", default=d.literal_residual)
    g.add_argument("--normalize-features", action="store_true", default=d.normalize_features)
    g.add_argument("--init-seed", type=int, default=d.init_seed)


def _train_flags(p: argparse.ArgumentParser) -> None:
    d = TrainConfig()
    g = p.add_argument_group("training")
    g.add_argument("--iters", type=int, default=d.total_iters)
    g.add_argument("--lr", type=float, default=d.learning_rate)
    g.add_argument("--halve-every", type=int, default=d.halve_every)
    g.add_argument("--queries", type=int, default=d.queries_per_pair)
    g.add_argument("--train-anchors", type=int, default=d.anchors_per_pair)
    g.add_argument("--image-size", type=int, default=d.image_size)
    g.add_argument("--texture", choices=("noise", "repeated", "mixed"), default=d.texture)
    g.add_argument("--warp", type=float, default=d.warp_magnitude)
    g.add_argument("--jitter", type=float, default=d.photometric_jitter)
    g.add_argument("--scale-range", type=_floats, default=list(d.scale_range))
    g.add_argument("--anchor-noise", type=_floats, default=list(d.anchor_noise))
    g.add_argument("--noise-start", type=float, default=d.noise_start)
    g.add_argument("--sigma-floor", type=float, default=d.sigma_floor)


def _eval_set_flags(p: argparse.ArgumentParser, texture: str = "mixed") -> None:
    g = p.add_argument_group("synthetic evaluation set")
    g.add_argument("--pairs", type=int, default=100)
    g.add_argument("--eval-texture", choices=("noise", "repeated", "mixed"), default=texture)
    g.add_argument("--eval-warp", type=float, default=0.1)
    g.add_argument("--eval-size", type=int, default=96)
    g.add_argument("--eval-anchors", type=int, default=32)
    g.add_argument("--eval-seed", type=int, default=10_000)
    g.add_argument("--grid", type=int, default=64, help="dense query lattice side per pair")
    g.add_argument("--window-frac", type=float, default=0.125)
    g.add_argument("--thresholds", type=_floats, default=list(DEFAULT_THRESHOLDS))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="anchormatch", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model on synthetic homography pairs")
    p.add_argument("--out-dir", required=True, help="existing directory for checkpoint and log")
    p.add_argument("--variant", default="full", help="architecture variant (full, no_graph, low_res, no_intra, no_point)")
    p.add_argument("--checkpoint-every", type=int, default=0)
    _train_flags(p)
    _model_flags(p)

    p = sub.add_parser("match", help="match two images given anchor correspondences")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image-a", required=True)
    p.add_argument("--image-b", required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--anchors", help="anchor file: 'u_a v_a u_b v_b' per line")
    src.add_argument("--anchors-from-gt", metavar="HOMOGRAPHY", help="sample anchors from a homography sidecar")
    p.add_argument("--gt-anchors", type=int, default=32, help="anchor count drawn with --anchors-from-gt")
    p.add_argument("--max-anchors", type=int, default=MAX_ANCHORS)
    p.add_argument("--queries", help="query file ('u v' per line); default is a dense lattice")
    p.add_argument("--grid", type=int, default=64)
    p.add_argument("--window-frac", type=float, default=0.125)
    p.add_argument("--cycle-threshold", type=float, default=5.0)
    p.add_argument("--top-k", type=int, default=2000)
    p.add_argument("--out", required=True, help="match file to write")
    p.add_argument("--visualize", help="write a side-by-side PNG with match lines and anchors")

    p = sub.add_parser("eval", help="compute PCK / MMA tables")
    p.add_argument("--matches", nargs="+", help="match files to score (needs --homography per file)")
    p.add_argument("--homography", nargs="+", help="homography sidecars paired with --matches")
    p.add_argument("--checkpoint", help="evaluate a checkpoint on a synthetic set instead")
    p.add_argument("--split", choices=("heldout", "train", "both"), default="heldout")
    p.add_argument("--metric", choices=("pck", "mma"), default="mma")
    p.add_argument("--out", help="table file to write")
    p.add_argument("--plot", help="PNG line plot of the curves")
    _eval_set_flags(p)

    p = sub.add_parser("ablate", help="train and evaluate architecture/anchor variants")
    p.add_argument("--variants", nargs="+", default=["full", "no_graph"])
    p.add_argument("--checkpoint-dir", required=True)
    p.add_argument("--retrain", action="store_true", help="train even if a checkpoint exists")
    p.add_argument("--out", help="table file to write")
    _train_flags(p)
    _model_flags(p)
    _eval_set_flags(p, texture="repeated")

    p = sub.add_parser("synth", help="write a synthetic image pair and its homography sidecar")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--size", type=int, default=96)
    p.add_argument("--texture", choices=("noise", "repeated", "mixed"), default="noise")
    p.add_argument("--warp", type=float, default=0.1)
    p.add_argument("--jitter", type=float, default=1.0)

    for sp in sub.choices.values():
        sp.add_argument("--seed", type=int, default=None, help=f"random seed (default ${SEED_ENV} or 0)")
        sp.add_argument("--config", help="JSON config echoed by a previous run")
    return parser


def _read_config(path) -> dict:
    """Accept either a bare JSON object or a ``# config {...}`` echo line (first one found)."""
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    for line in text.splitlines():
        if line.startswith("# config "):
            return json.loads(line[len("# config "):])
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: not a config file ({exc})") from None


def _config_argv(cfg: dict, sub: argparse.ArgumentParser) -> list[str]:
    """Turn a resolved config back into flags for ``sub``."""
    options = {a.dest: a for a in sub._actions if a.option_strings}
    out = []
    for key, value in cfg.items():
        action = options.get(key)
        if action is None or key in ("config", "help") or value is None:
            continue
        flag = action.option_strings[-1]
        if isinstance(action, argparse._StoreTrueAction):
            if value:
                out.append(flag)
        elif isinstance(value, list):
            if action.nargs == "+":
                out += [flag, *map(str, value)]
            else:
                out += [flag, ",".join(repr(float(v)) for v in value)]
        else:
            out += [flag, repr(value) if isinstance(value, float) else str(value)]
    return out


def parse_args(argv) -> argparse.Namespace:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    commands = parser._subparsers._group_actions[0].choices
    cfg_path = None
    for i, a in enumerate(argv):
        if a == "--config" and i + 1 < len(argv):
            cfg_path = argv[i + 1]
        elif a.startswith("--config="):
            cfg_path = a.split("=", 1)[1]
    if cfg_path and argv and argv[0] in commands:
        cfg = _read_config(cfg_path)
        if cfg.get("command", argv[0]) != argv[0]:
            raise UsageError(f"config is for {cfg['command']!r}, not {argv[0]!r}")
        # config values first, so flags given on the command line override them
        argv = [argv[0], *_config_argv(cfg, commands[argv[0]]), *argv[1:]]
    args = parser.parse_args(argv)
    if args.seed is None:
        args.seed = _default_seed()
    return args


def resolved_config(args: argparse.Namespace) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("config",)}


def echo_config(args, out=None) -> str:
    line = "# config " + json.dumps(resolved_config(args), sort_keys=True)
    print(line, file=out or sys.stdout, flush=True)
    return line


def model_config_from(args) -> ModelConfig:
    return ModelConfig(coarse_dim=args.coarse_dim, fine_dim=args.fine_dim, n_layers=args.layers, heads=args.heads,
                       pos_dim=args.pos_dim, literal_residual=args.literal_residual,
                       normalize_features=args.normalize_features, init_seed=args.init_seed)


def train_config_from(args) -> TrainConfig:
    return TrainConfig(learning_rate=args.lr, halve_every=args.halve_every, total_iters=args.iters,
                       queries_per_pair=args.queries, anchors_per_pair=args.train_anchors, image_size=args.image_size,
                       texture=args.texture, warp_magnitude=args.warp, photometric_jitter=args.jitter,
                       scale_range=tuple(args.scale_range), anchor_noise=tuple(args.anchor_noise),
                       noise_start=args.noise_start, sigma_floor=args.sigma_floor, seed=args.seed)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _require_dir(path) -> None:
    if not os.path.isdir(path):
        raise FileNotFoundError(f"output directory does not exist: {path}")


def cmd_train(args) -> int:
    _require_dir(args.out_dir)
    variant = parse_variant(args.variant)
    if variant.anchors is not None or variant.noise is not None:
        raise UsageError("train --variant takes an architecture name only")
    echo_config(args)
    _atomic_write_text(os.path.join(args.out_dir, "config.json"), json.dumps(resolved_config(args), indent=1) + "\n")
    ckpt = os.path.join(args.out_dir, "model.ckpt")
    log_path = os.path.join(args.out_dir, "train.log")
    if os.path.exists(log_path):
        os.remove(log_path)
    tr = train(train_config_from(args), variant.model_config(model_config_from(args)), log_path=log_path,
               checkpoint_path=ckpt, checkpoint_every=args.checkpoint_every)
    last = tr.history[-1] if tr.history else None
    if last is not None:
        print(f"trained {tr.iteration} iterations; last loss {last.loss:.4f} fine error {last.fine_px:.2f}px")
    print(f"wrote {ckpt}")
    return EXIT_OK


def _read_queries(path) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            parts = s.split()
            if len(parts) < 2:
                raise ValueError(f"{path}:{lineno}: expected 'u v'")
            rows.append([float(parts[0]), float(parts[1])])
    q = np.asarray(rows, dtype=np.float64).reshape(-1, 2)
    if len(q) == 0 or q.min() < 0 or q.max() > 1:
        raise ValueError(f"{path}: queries must be a nonempty list of points in [0, 1]^2")
    return q


def lattice(n: int) -> np.ndarray:
    u = np.linspace(0, 1, n)
    uu, vv = np.meshgrid(u, u)
    return np.stack([uu.ravel(), vv.ravel()], axis=1)


def cmd_match(args) -> int:
    echo_config(args)
    params = load_checkpoint(args.checkpoint)
    image_a, image_b = load_image(args.image_a), load_image(args.image_b)
    if args.anchors:
        anchors = read_anchor_file(args.anchors)
    else:
        gt = gt_from_homography(read_homography(args.anchors_from_gt), image_a.shape[1:])
        anchors = sample_gt_anchors(gt, args.gt_anchors, rng=np.random.default_rng(args.seed))
    if len(anchors) > args.max_anchors:
        keep = np.sort(np.random.default_rng(args.seed).choice(len(anchors), args.max_anchors, replace=False))
        anchors = anchors.subset(keep)
        print(f"capped anchors at {args.max_anchors}")
    queries = _read_queries(args.queries) if args.queries else lattice(args.grid)
    pyr_a, pyr_b = forward(image_a, image_b, anchors, params)
    matches = match_points(queries, pyr_a, pyr_b, args.window_frac, args.cycle_threshold, args.top_k,
                           params.config.normalize_features)
    settings = {"anchors": len(anchors), "queries": len(queries), "window_frac": args.window_frac,
                "cycle_threshold_px": args.cycle_threshold, "top_k": args.top_k}
    write_match_file(args.out, matches, image_a.shape[1:], image_b.shape[1:], settings)
    if args.visualize:
        render_matches(image_a, image_b, matches, anchors, args.visualize)
    cyc = [m.cycle_distance for m in matches]
    med = f"{np.median(cyc):.3f}" if cyc else "nan"
    print(f"kept {len(matches)} of {len(queries)} queries; median cycle distance {med}px")
    print(f"wrote {args.out}")
    return EXIT_OK


def _synthetic_curves(params, pairs: list[EvalPair], args) -> MetricCurve:
    thresholds = tuple(args.thresholds)
    if args.metric == "mma":
        return mma(curve_from_errors(pair_errors(params, p, None, args.window_frac, args.grid), thresholds)
                   for p in pairs)
    errs = np.concatenate([pair_errors(params, p, None, args.window_frac, args.grid) for p in pairs])
    return curve_from_errors(errs, thresholds)


def cmd_eval(args) -> int:
    thresholds = tuple(args.thresholds)
    if bool(args.matches) == bool(args.checkpoint):
        raise UsageError("give either --matches (with --homography) or --checkpoint")
    echo_config(args)
    curves: dict[str, MetricCurve] = {}
    if args.matches:
        if not args.homography or len(args.homography) != len(args.matches):
            raise UsageError("--homography needs one sidecar per match file")
        per_file = []
        for mpath, hpath in zip(args.matches, args.homography):
            rows, header = read_match_file(mpath)
            gt = gt_from_homography(read_homography(hpath), header["image_a"])
            _, valid = gt.lookup(rows[:, :2])
            if not valid.all():
                print(f"# {mpath}: skipped {int((~valid).sum())} matches without ground truth")
            per_file.append(match_errors(rows[valid], gt))
        if args.metric == "mma":
            curves["matches"] = mma(curve_from_errors(e, thresholds) for e in per_file)
        else:
            curves["matches"] = curve_from_errors(np.concatenate(per_file), thresholds)
    else:
        params, meta = _load_with_meta(args.checkpoint)
        splits = ("heldout", "train") if args.split == "both" else (args.split,)
        for split in splits:
            if split == "heldout":
                pairs = make_eval_set(args.pairs, args.eval_texture, args.eval_warp, args.eval_size,
                                      args.eval_anchors, args.eval_seed)
            else:
                # the training stream regenerated from the checkpoint's own config
                tc = TrainConfig.from_dict(meta.get("train", {}))
                pairs = make_eval_set(args.pairs, tc.texture, tc.warp_magnitude, tc.image_size,
                                      tc.anchors_per_pair, tc.seed, tc.photometric_jitter)
            curves[split] = _synthetic_curves(params, pairs, args)
    text = "".join(f"# {name} {args.metric}\n" + c.to_table() for name, c in curves.items())
    print(text, end="")
    if args.out:
        _atomic_write_text(args.out, text)
    if args.plot:
        render_curves(curves, args.plot)
    return EXIT_OK


def _load_with_meta(path):
    with open(path, "rb") as fh:
        return parse_checkpoint(fh.read())


def cmd_ablate(args) -> int:
    try:
        variants = [parse_variant(v) for v in args.variants]
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if not os.path.isdir(args.checkpoint_dir):
        raise FileNotFoundError(f"checkpoint directory does not exist: {args.checkpoint_dir}")
    echo_config(args)
    tcfg, mcfg = train_config_from(args), model_config_from(args)
    for model in dict.fromkeys(v.model for v in variants):
        if args.retrain or not os.path.exists(checkpoint_path(args.checkpoint_dir, model)):
            print(f"training {model}", flush=True)
            train_variant(model, args.checkpoint_dir, tcfg, mcfg)
    pairs = make_eval_set(args.pairs, args.eval_texture, args.eval_warp, args.eval_size, args.eval_anchors,
                          args.eval_seed)
    thresholds = tuple(args.thresholds)
    head = "variant anchors noise_fraction noise_sigma_px " + " ".join(f"pck@{t:g}px" for t in thresholds)
    lines = [head]
    for v in variants:
        c = run_ablation(v, pairs, args.checkpoint_dir, args.seed, window_frac=args.window_frac, grid=args.grid,
                         thresholds=thresholds)
        k = v.anchors if v.anchors is not None else min(args.eval_anchors, len(pairs[0].anchors))
        nf, ns = v.noise if v.noise is not None else (0.0, 0.0)
        lines.append(f"{v.name} {k} {nf:g} {ns:g} " + " ".join(f"{x:.4f}" for x in c.values))
    text = "\n".join(lines) + "\n"
    print(text, end="")
    if args.out:
        _atomic_write_text(args.out, text)
    return EXIT_OK


def cmd_synth(args) -> int:
    _require_dir(args.out_dir)
    echo_config(args)
    rng = iteration_rng(args.seed, 0)
    sample = synth_pair(random_texture(rng, args.size, args.size, args.texture), args.warp, args.jitter, rng)
    paths = [os.path.join(args.out_dir, n) for n in ("a.png", "b.png", "homography.txt")]
    save_image(sample.image_a, paths[0])
    save_image(sample.image_b, paths[1])
    write_homography(paths[2], sample.homography)
    print("wrote " + " ".join(paths))
    return EXIT_OK


COMMANDS = {"train": cmd_train, "match": cmd_match, "eval": cmd_eval, "ablate": cmd_ablate, "synth": cmd_synth}


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except SystemExit as exc:  # argparse usage errors
        return int(exc.code) if exc.code is not None else EXIT_OK
    except UsageError as exc:
        print(f"anchormatch: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"anchormatch: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ArtifactNotFoundError, CheckpointError, EmptyAnchorError, ValueError) as exc:
        print(f"anchormatch: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
