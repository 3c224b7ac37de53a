"""``bracketforge`` command line.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__, hdrio, metrics, mevmtoy, runtime, sdrsim, selftest, vmm
from .bracket import ExposureBracket, ExposureBracketer
from .core import DataError
from .merge import merge_frames
from .paramfile import FORMAT_VERSION
from .rng import Rng

log = logging.getLogger("bracketforge")

DEFAULTS = {
    "sdrsim.mode": "over",
    "sdrsim.gamma": sdrsim.DISPLAY_GAMMA,
    "sdrsim.sigma_s": None,
    "sdrsim.sigma_r": None,
    "sdrsim.rho": 0.5,
    "bracket.e0": "auto",
    "bracket.ev": 4.0,
    "bracket.format": "pfm",
    "merge.method": "classical",
    "vmm.steps": 2000,
    "vmm.lr": 1e-3,
    "vmm.batch": 2048,
    "vmm.scenes": 200,
    "vmm.size": 32,
    "toy.steps": 3000,
    "toy.batch": 8,
    "toy.lr": 1e-3,
    "toy.sequences": 64,
    "toy.form": "linear",
    "toy.learn_gate": True,
    "toy.sample_steps": 8,
    "metrics.gt_percentile": metrics.GT_PERCENTILE,
}


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def load_config(path) -> dict:
    cfg = dict(DEFAULTS)
    if path is None:
        return cfg
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise UsageError("config must be a JSON object of dotted keys")
    unknown = sorted(set(raw) - set(DEFAULTS))
    if unknown:
        raise UsageError(f"unknown config keys: {unknown}")
    cfg.update(raw)
    return cfg


def pick(args, name, cfg, key):
    """Explicit flag beats config file beats built-in default."""
    value = getattr(args, name, None)
    return cfg[key] if value is None else value


def frame_name(i: int, suffix: str) -> str:
    return f"frame_{i:04d}{suffix}"


def write_video(video, directory: Path, fmt: str = "pfm") -> list[str]:
    directory.mkdir(parents=True, exist_ok=True)
    names = []
    for i, frame in enumerate(np.asarray(video)):
        name = frame_name(i, "." + fmt)
        if fmt == "pfm":
            hdrio.write_pfm(frame, directory / name)
        else:
            hdrio.write_png8(np.clip(frame, 0.0, 1.0), directory / name)
        names.append(name)
    return names


def json_safe(obj):
    if isinstance(obj, float) and math.isinf(obj):
        return "inf" if obj > 0 else "-inf"
    if isinstance(obj, dict):
        return {k: json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [json_safe(v) for v in obj]
    return obj


def write_json(obj, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(json_safe(obj), indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------- commands

def cmd_simulate(args, cfg):
    hdr = hdrio.read_video_dir(args.input, (".pfm",))
    mode = pick(args, "mode", cfg, "sdrsim.mode")
    E = sdrsim.protocol_exposures(hdr, mode)
    crf = sdrsim.sample_crf(Rng(args.crf_seed)) if args.crf_seed is not None else None
    noise, rng = None, Rng(args.seed)
    if args.noise_seed is not None:
        rng = Rng(args.noise_seed)
        noise = sdrsim.sample_noise(rng)
        s, r = cfg["sdrsim.sigma_s"], cfg["sdrsim.sigma_r"]
        if s is not None or r is not None:
            noise = sdrsim.NoiseParams(s or 0.0, r or 0.0, cfg["sdrsim.rho"])
    gamma = float(cfg["sdrsim.gamma"])
    sdr = sdrsim.simulate_sdr_input(hdr, E, crf, noise, rng, gamma=None if crf else gamma)
    out = Path(args.out)
    names = write_video(sdr.data, out / "sdr", "png")
    manifest = hdrio.BracketManifest(
        paths=[[f"sdr/{n}" for n in names]],
        exposures=[[float(e) for e in E]],
        crf=crf.as_dict() if crf else {"gamma": gamma},
        seed=rng.seed,
    )
    hdrio.write_manifest(manifest, out / "manifest.json")
    return 0


def cmd_bracket(args, cfg):
    e0 = pick(args, "e0", cfg, "bracket.e0")
    if e0 != "auto":
        try:
            e0 = float(e0)
        except ValueError:
            raise UsageError(f"--e0 must be 'auto' or a number, got {e0!r}") from None
    ev = float(pick(args, "ev", cfg, "bracket.ev"))
    fmt = pick(args, "format", cfg, "bracket.format")
    hdr = hdrio.read_video_dir(args.input, (".pfm",))
    b = ExposureBracketer(e0=e0, ev=ev, seed=args.seed).fit(hdr).transform(hdr)
    out = Path(args.out)
    paths, exposures = [], []
    for k, slot in enumerate(("base", "plus", "minus")):
        names = write_video(getattr(b, slot), out / slot, fmt)
        paths.append([f"{slot}/{n}" for n in names])
        exposures.append([float(e) for e in b.exposures[k]])
    manifest = hdrio.BracketManifest(paths=paths, exposures=exposures, ev_spacing=ev, crf=None, seed=args.seed)
    hdrio.write_manifest(manifest, out / "manifest.json")
    return 0


def linearize(frames: np.ndarray, crf: dict | None) -> np.ndarray:
    if crf is None:
        return frames
    if "gamma" in crf:
        return sdrsim.gamma_decode(frames, crf["gamma"])
    return sdrsim.invert_crf(frames, sdrsim.CrfParams(crf["n"], crf["sigma"]))


def load_levels(manifest: hdrio.BracketManifest):
    m = manifest.sorted()
    levels = [np.stack([hdrio.read_frame(m.resolve(p)) for p in level]) for level in m.paths]
    levels = [linearize(v.astype(np.float64), m.crf) for v in levels]
    return levels, m.exposure_table()


def cmd_merge(args, cfg):
    manifest = hdrio.read_manifest(args.manifest)
    levels, E = load_levels(manifest)
    method = pick(args, "method", cfg, "merge.method")
    if method == "classical":
        H = merge_frames(np.stack(levels), E[:, :, None, None, None]).astype(np.float32)
    else:
        if args.model is None:
            raise UsageError("--method vmm needs --model")
        if len(levels) != 3:
            raise DataError(f"the learned merger needs exactly 3 exposures, manifest has {len(levels)}")
        manifest.check_spacing()
        minus, base, plus = levels
        b = ExposureBracket(base, plus, minus, exposures=E[[1, 2, 0]], ev=manifest.ev_spacing)
        H = vmm.vmm_merge(b, vmm.load_vmm(args.model))
    write_video(H, Path(args.out), "pfm")
    return 0


def vmm_training_set(args, cfg):
    n = int(cfg["vmm.scenes"])
    if args.data is None:
        return vmm.synthetic_dataset(n, args.seed, int(cfg["vmm.size"]))
    frames = [hdrio.read_pfm(p) for p in sorted(Path(args.data).rglob("*.pfm"))]
    if not frames:
        raise DataError(f"no .pfm frames under {args.data}")
    return vmm.dataset_from_frames(frames, args.seed)


def cmd_train_vmm(args, cfg):
    data = vmm_training_set(args, cfg)
    config = vmm.TrainConfig(lr=float(cfg["vmm.lr"]), steps=int(pick(args, "steps", cfg, "vmm.steps")),
                             batch=int(cfg["vmm.batch"]), seed=args.seed)
    history = []
    params = vmm.vmm_train(data, config, history=history)
    meta = {"steps": config.steps, "seed": config.seed, "scenes": len(data)}
    if history:
        meta.update(first_loss=history[0], last_loss=history[-1])
    vmm.save_vmm(args.out, params, meta)
    return 0


def cmd_eval(args, cfg):
    pred = hdrio.read_video_dir(args.pred, (".pfm",))
    gt = hdrio.read_video_dir(args.gt, (".pfm",))
    if pred.shape != gt.shape:
        raise DataError(f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")
    report = metrics.evaluate(pred, gt, percentile=float(cfg["metrics.gt_percentile"]))
    write_json(report, args.report)
    return 0


def cmd_tonemap(args, cfg):
    hdr = hdrio.read_video_dir(args.input, (".pfm",))
    write_video(metrics.reinhard_tonemap(hdr), Path(args.out), "png")
    return 0


def cmd_scanline(args, cfg):
    text = metrics.scanline(hdrio.read_frame(args.frame), args.row)
    if args.out is None or args.out == "-":
        sys.stdout.write(text)
    else:
        Path(args.out).write_text(text, encoding="utf-8")
    return 0


def toy_config(args, cfg):
    learn = cfg["toy.learn_gate"] and not getattr(args, "frozen_gate", False)
    return mevmtoy.ToyConfig(steps=int(pick(args, "steps", cfg, "toy.steps")), batch=int(cfg["toy.batch"]),
                             lr=float(cfg["toy.lr"]), seed=args.seed, learn_gate=bool(learn),
                             form=cfg["toy.form"])


def cmd_toy_train(args, cfg):
    config = toy_config(args, cfg)
    data = mevmtoy.synthetic_dataset(int(cfg["toy.sequences"]), args.seed)
    history = []
    params = mevmtoy.toy_train(data, config, history=history)
    meta = {"steps": config.steps, "seed": config.seed, "learn_gate": config.learn_gate,
            "eval_loss": mevmtoy.evaluation_loss(params, data, cfg=config.rope)}
    mevmtoy.save_toy(args.out, params, config.rope, meta)
    return 0


def cmd_toy_demo(args, cfg):
    params, rope = mevmtoy.load_toy(args.model)
    steps = int(pick(args, "steps", cfg, "toy.sample_steps"))
    crf, target = mevmtoy.make_sequence(Rng(args.seed, args.sequence))
    sample = mevmtoy.toy_sample(crf, params, steps, Rng(args.seed, 0x5A3), rope)
    out = Path(args.out)
    F = crf.shape[0]
    write_video(mevmtoy.from_latent(crf), out / "crf", "png")
    summary = {"steps": steps, "sequence": args.sequence}
    for k, (name, _, _) in enumerate(mevmtoy.SEGMENTS[1:]):
        gen_seg, ref_seg = sample[k * F:(k + 1) * F], target[k * F:(k + 1) * F]
        write_video(mevmtoy.from_latent(gen_seg), out / name, "png")
        write_video(mevmtoy.from_latent(ref_seg), out / f"{name}_target", "png")
        summary[f"{name}_mae"] = float(np.abs(gen_seg - ref_seg).mean())
    summary["mae"] = float(np.abs(sample - target).mean())
    write_json(summary, out / "summary.json")
    return 0


def cmd_selftest(args, cfg):
    return 0 if selftest.run() else 2


# ------------------------------------------------------------------ parser

def version_text() -> str:
    return f"bracketforge {__version__} (parameter files: VMM1 v{FORMAT_VERSION}, MEVT v{FORMAT_VERSION})"


def build_parser() -> Parser:
    common = Parser(add_help=False)
    g = common.add_argument_group("global options")
    g.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="root seed for all randomness")
    g.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="worker threads")
    g.add_argument("--deterministic", action="store_true", default=argparse.SUPPRESS,
                   help="ordered reductions for bitwise-reproducible output")
    g.add_argument("--config", default=argparse.SUPPRESS, help="JSON file of dotted-key overrides")
    g.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    p = Parser(prog="bracketforge", parents=[common],
               description="Exposure bracket simulation, merging and evaluation for HDR video.")
    p.add_argument("--version", action="version", version=version_text())
    sub = p.add_subparsers(dest="command", required=True, parser_class=Parser)

    def add(name, fn, help_):
        sp = sub.add_parser(name, parents=[common], help=help_)
        sp.set_defaults(func=fn)
        return sp

    sp = add("simulate", cmd_simulate, "render SDR input video from linear HDR frames")
    sp.add_argument("--input", required=True, help="directory of .pfm HDR frames")
    sp.add_argument("--mode", choices=[m.value for m in sdrsim.ExposureMode])
    sp.add_argument("--crf-seed", type=int, help="draw a random camera response (default: display gamma)")
    sp.add_argument("--noise-seed", type=int, help="enable sensor noise drawn from this seed")
    sp.add_argument("--out", required=True)

    sp = add("bracket", cmd_bracket, "cut a three-exposure linear bracket from HDR frames")
    sp.add_argument("--input", required=True)
    sp.add_argument("--e0", help="'auto' or a reference exposure")
    sp.add_argument("--ev", type=float)
    sp.add_argument("--format", choices=["pfm", "png"])
    sp.add_argument("--out", required=True)

    sp = add("merge", cmd_merge, "merge a bracket manifest into HDR frames")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--method", choices=["classical", "vmm"])
    sp.add_argument("--model", help="VMM parameter file for --method vmm")
    sp.add_argument("--out", required=True)

    sp = add("train-vmm", cmd_train_vmm, "train the learned merger")
    sp.add_argument("--data", help="directory of .pfm HDR frames (default: synthetic scenes)")
    sp.add_argument("--steps", type=int)
    sp.add_argument("--out", required=True)

    sp = add("eval", cmd_eval, "score predicted HDR frames against ground truth")
    sp.add_argument("--pred", required=True)
    sp.add_argument("--gt", required=True)
    sp.add_argument("--report", required=True)

    sp = add("tonemap", cmd_tonemap, "Reinhard tonemap HDR frames to PNG")
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--out", required=True)

    sp = add("scanline", cmd_scanline, "export one row of a frame as CSV")
    sp.add_argument("--frame", required=True)
    sp.add_argument("--row", type=int, required=True)
    sp.add_argument("--out")

    sp = add("toy-train", cmd_toy_train, "train the toy multi-exposure flow model")
    sp.add_argument("--steps", type=int)
    sp.add_argument("--frozen-gate", action="store_true", help="keep the exposure offset gate at zero")
    sp.add_argument("--out", required=True)

    sp = add("toy-demo", cmd_toy_demo, "sample a bracket with a trained toy model")
    sp.add_argument("--model", required=True)
    sp.add_argument("--steps", type=int)
    sp.add_argument("--sequence", type=int, default=0, help="index of the synthetic sequence to show")
    sp.add_argument("--out", required=True)

    add("selftest", cmd_selftest, "run the built-in invariant checks")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args.seed = getattr(args, "seed", 0)
        if not 0 <= args.seed < 2 ** 64:
            raise UsageError("--seed must be a non-negative 64-bit integer")
        threads = getattr(args, "threads", 1)
        if threads < 1:
            raise UsageError("--threads must be >= 1")
        logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        cfg = load_config(getattr(args, "config", None))
        with runtime.settings(threads=threads, deterministic=getattr(args, "deterministic", False)):
            return args.func(args, cfg)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (DataError, OSError, FloatingPointError) as exc:
        print(f"bracketforge: error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        # bad values reaching a parameter check (config entries, ev, ...)
        print(f"bracketforge: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
