"""Command line for the printdefect workflows.

Exit codes: 0 ok, 1 I/O, 2 numeric, 3 size, 4 usage, 5 mismatch, 6 audit failure.
Human-readable summaries go to stdout, diagnostics to stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import imgio
from .datagen import (
    GenConfig,
    Mode,
    SamplePair,
    audit_dataset,
    derive_seed,
    export_dataset,
    extract_training_patch,
    generate_sample,
    load_manifest,
    training_stack,
)
from .errors import (
    ConfigError,
    DimMismatch,
    FormatError,
    ImageTooSmall,
    LabelOutOfRange,
    RankDeficient,
    SourceTooSmall,
)
from .evaluation import confusion, render_overlay, summarize
from .imgcore import ClassScheme
from .infer import SEGMENTERS, FRDiffParams, NRProjParams, build_stack, infer, make_segmenter
from .printscan import DEFAULT_RIDGE, PrintScanModel, fit_printscan

EXIT_OK, EXIT_IO, EXIT_NUMERIC, EXIT_SIZE, EXIT_USAGE, EXIT_MISMATCH, EXIT_AUDIT = range(7)

log = logging.getLogger("printdefect")


class CliExit(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _check_keys(d, allowed, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be a JSON object")
    unknown = set(d) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")


def _params(cls, d, where):
    _check_keys(d, [f.name for f in fields(cls)], where)
    return cls(**d)


@dataclass(frozen=True)
class CliConfig:
    """One JSON file holding every tunable.

    Layout: ``{"gen": {...}, "noise": {...}, "baselines": {"frdiff": {...},
    "nrproj": {...}}, "class_scheme": "multi"}``. ``noise`` overrides
    ``gen.texture`` and ``class_scheme`` overrides ``gen.class_scheme``.
    """

    gen: GenConfig = field(default_factory=GenConfig)
    frdiff: FRDiffParams = field(default_factory=FRDiffParams)
    nrproj: NRProjParams = field(default_factory=NRProjParams)

    @property
    def scheme(self) -> ClassScheme:
        return self.gen.scheme

    @classmethod
    def from_dict(cls, d: dict) -> "CliConfig":
        _check_keys(d, ("gen", "noise", "baselines", "class_scheme"), "config")
        gen = dict(d.get("gen", {}))
        _check_keys(gen, [f.name for f in fields(GenConfig)], "gen")
        if "noise" in d:
            if "texture" in gen:
                raise ConfigError("give streak texture either as gen.texture or as noise, not both")
            gen["texture"] = d["noise"]
        if "class_scheme" in d:
            gen["class_scheme"] = d["class_scheme"]
        baselines = d.get("baselines", {})
        _check_keys(baselines, ("frdiff", "nrproj"), "baselines")
        try:
            return cls(GenConfig.from_dict(gen),
                       _params(FRDiffParams, baselines.get("frdiff", {}), "baselines.frdiff"),
                       _params(NRProjParams, baselines.get("nrproj", {}), "baselines.nrproj"))
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict:
        gen = self.gen.to_dict()
        noise = gen.pop("texture")
        scheme = gen.pop("class_scheme")
        return {"gen": gen, "noise": noise, "class_scheme": scheme,
                "baselines": {"frdiff": self.frdiff.__dict__.copy(), "nrproj": self.nrproj.__dict__.copy()}}

    @classmethod
    def load(cls, path) -> "CliConfig":
        if path is None:
            return cls()
        try:
            d = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(d)


def _config(args) -> CliConfig:
    cfg = CliConfig.load(getattr(args, "config", None))
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["master_seed"] = args.seed
    if getattr(args, "classes", None) is not None:
        overrides["class_scheme"] = args.classes
    if overrides:
        d = cfg.to_dict()
        d["gen"].update(overrides)
        if "class_scheme" in overrides:
            d["class_scheme"] = overrides.pop("class_scheme")
            d["gen"].pop("class_scheme")
        cfg = CliConfig.from_dict(d)
    return cfg


def _model(path):
    return None if path is None else PrintScanModel.load(path)


# --- subcommands -------------------------------------------------------------

def cmd_fit_printscan(args) -> int:
    src = imgio.read_rgb(args.src)
    dst = imgio.read_rgb(args.dst)
    model, report = fit_printscan(src, dst, samples=args.samples, ridge=args.ridge)
    model.save(args.out, ridge=args.ridge, rmse=report.rmse)
    rmse = " ".join(f"{ch}={v:.3e}" for ch, v in report.to_dict()["rmse"].items())
    print(f"fitted print-scan model from {report.samples} samples: rmse {rmse}, "
          f"rank {report.rank}, condition {report.condition:.3e}")
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_synth(args) -> int:
    cfg = _config(args)
    src = imgio.read_rgb(args.input)
    seed = derive_seed(cfg.gen.master_seed, 0)
    pair = generate_sample(src, _model(args.model), cfg.gen, seed)
    imgio.write_rgb(args.out_img, pair.defective)
    imgio.write_mask(args.out_mask, pair.mask)
    if args.out_ref:
        imgio.write_rgb(args.out_ref, pair.reference)
    if args.overlay:
        imgio.write_rgb(args.overlay, render_overlay(pair.defective, pair.mask))
    kinds = ", ".join(s.kind.value for s in pair.specs) or "none"
    print(f"synthesized {pair.mask.shape[1]}x{pair.mask.shape[0]} sample with defects: {kinds}")
    return EXIT_OK


def cmd_gen_dataset(args) -> int:
    cfg = _config(args)
    manifest = export_dataset(args.src_dir, args.out_dir, cfg.gen, args.count, _model(args.model),
                              workers=args.workers)
    for s in manifest["skipped"]:
        print(f"warning: skipped sample {s['id']} ({s['reason']})", file=sys.stderr)
    print(f"wrote {len(manifest['samples'])} of {args.count} samples to {args.out_dir}")
    return EXIT_OK


def _load_pair(dataset: Path, entry, scheme) -> SamplePair:
    return SamplePair(imgio.read_rgb(dataset / entry["reference"]), imgio.read_rgb(dataset / entry["defective"]),
                      imgio.read_mask(dataset / entry["mask"]), (), int(entry["seed"]), scheme)


def cmd_export_patches(args) -> int:
    dataset = Path(args.dataset)
    manifest = load_manifest(dataset)
    scheme = ClassScheme.parse(manifest["class_scheme"])
    mode = Mode(args.mode)
    out = Path(args.out)
    (out / "patches").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    index = []
    for entry in manifest["samples"]:
        pair = _load_pair(dataset, entry, scheme)
        stack = training_stack(pair, mode)
        rng = np.random.default_rng(derive_seed(args.seed, int(entry["index"])))
        for k in range(args.per_image):
            patch = extract_training_patch(pair, mode, rng, args.patch_size, entry["id"], stack=stack)
            name = f"{entry['id']}_{k:03d}"
            tensor = Path("patches") / f"{name}.pdpt"
            mask = Path("masks") / f"{name}.png"
            imgio.write_tensor(out / tensor, patch.input.astype(np.float32), imgio.PATCH_MAGIC)
            imgio.write_mask(out / mask, patch.mask)
            index.append({"patch": str(tensor), "mask": str(mask), "sample_id": entry["id"],
                          "rect": list(patch.rect), "mode": mode.value, "channels": mode.channels})
    doc = {"dataset": str(dataset), "mode": mode.value, "patch_size": args.patch_size, "seed": args.seed,
           "class_scheme": scheme.value,
           "channel_order": ["defective"] if mode is Mode.NR else list(manifest["fr_channel_order"]),
           "patches": index}
    (out / "index.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(index)} {mode.value} patches to {out}")
    return EXIT_OK


def cmd_infer(args) -> int:
    if args.segmenter == "frdiff" and not args.ref:
        raise CliExit(EXIT_USAGE, "--segmenter frdiff needs --ref")
    if args.segmenter == "external" and not args.scores_in:
        raise CliExit(EXIT_USAGE, "--segmenter external needs --scores-in")
    if args.segmenter == "oracle" and not args.gt:
        raise CliExit(EXIT_USAGE, "--segmenter oracle needs --gt")
    cfg = _config(args)
    dfc = imgio.read_rgb(args.img)
    gt = imgio.read_mask(args.gt) if args.gt else None
    seg = make_segmenter(args.segmenter, cfg.scheme, gt=gt, scores_path=args.scores_in,
                         frdiff=cfg.frdiff, nrproj=cfg.nrproj)
    ref = imgio.read_rgb(args.ref) if seg.input_channels == 6 else None
    stack = build_stack(dfc, ref)
    t0 = time.perf_counter()
    pred = infer(stack, seg, args.strategy)
    seconds = time.perf_counter() - t0
    imgio.write_mask(args.out, pred)
    if args.overlay:
        imgio.write_rgb(args.overlay, render_overlay(dfc, pred))
    print(f"{args.strategy} inference with {args.segmenter}: {seconds:.4f} s/image")
    return EXIT_OK


def _mask_names(d: Path) -> list[str]:
    return sorted(p.name for p in d.glob("*.png"))


def cmd_eval(args) -> int:
    pred_dir, gt_dir = Path(args.pred_dir), Path(args.gt_dir)
    for d in (pred_dir, gt_dir):
        if not d.is_dir():
            raise FileNotFoundError(f"{d} is not a directory")
    scheme = ClassScheme.parse(args.classes)
    names = _mask_names(gt_dir)
    if not names:
        raise CliExit(EXIT_MISMATCH, f"{gt_dir} holds no mask PNGs")
    run_dirs = sorted(p for p in pred_dir.iterdir() if p.is_dir() and p.name.startswith("run_"))
    if run_dirs:
        runs = run_dirs
    else:
        runs = [pred_dir] * args.runs
    for d in dict.fromkeys(runs):
        got = _mask_names(d)
        if got != names:
            missing = sorted(set(names) - set(got))
            extra = sorted(set(got) - set(names))
            raise CliExit(EXIT_MISMATCH, f"{d}: prediction files do not match ground truth "
                                         f"(missing {missing[:5]}, unexpected {extra[:5]})")
    gts = {n: imgio.read_mask(gt_dir / n) for n in names}

    def prep(m):
        return ClassScheme.MULTI.collapse(m) if scheme is ClassScheme.COLLAPSED else m

    confs, per_image = [], []
    cache = {}
    for d in runs:
        if d not in cache:
            total = np.zeros((scheme.num_classes,) * 2, dtype=np.int64)
            for n in names:
                total += confusion(prep(imgio.read_mask(d / n)), prep(gts[n]), scheme.num_classes)
            cache[d] = total
        confs.append(cache[d])
    report = summarize(confs, scheme, args.seconds_per_image, len(names), method=args.method,
                       strategy=args.strategy)
    report.save(args.out)
    if args.csv:
        Path(args.csv).write_text(report.to_csv())
    print(f"mIoU {report.miou_mean:.4f} +/- {report.miou_std:.4f} over {report.runs} run(s), "
          f"{len(names)} image(s)")
    return EXIT_OK


def cmd_audit(args) -> int:
    report = audit_dataset(args.dataset)
    if report.samples == 0:
        print("dataset has zero samples; nothing to audit")
        return EXIT_OK
    if report.ok:
        print(f"audit passed for {report.samples} samples "
              f"(visible fraction {report.stats.visible_fraction:.4f})")
        return EXIT_OK
    for sid, reasons in sorted(report.failures.items()):
        for r in reasons:
            print(f"FAIL {sid}: {r}")
    print(f"audit failed for {len(report.failures)} of {report.samples} samples", file=sys.stderr)
    return EXIT_AUDIT


# --- argument parsing ----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="printdefect", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log debug diagnostics to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("fit-printscan", help="fit the 16-term print-scan color model")
    s.add_argument("--src", required=True, help="digital original")
    s.add_argument("--dst", required=True, help="aligned printed-and-scanned image")
    s.add_argument("--out", required=True, help="model JSON to write")
    s.add_argument("--samples", type=int, default=10_000)
    s.add_argument("--ridge", type=float, default=DEFAULT_RIDGE)
    s.set_defaults(func=cmd_fit_printscan)

    s = sub.add_parser("synth", help="inject defects into one image")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--model", help="print-scan model JSON; omitted means no color simulation")
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--out-img", required=True)
    s.add_argument("--out-mask", required=True)
    s.add_argument("--out-ref")
    s.add_argument("--overlay")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("gen-dataset", help="generate a seeded synthetic dataset")
    s.add_argument("--src-dir", required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--model")
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_gen_dataset)

    s = sub.add_parser("export-patches", help="write normalized random training patches")
    s.add_argument("--dataset", required=True)
    s.add_argument("--mode", choices=[m.value for m in Mode], default="nr")
    s.add_argument("--patch-size", type=int, default=513)
    s.add_argument("--per-image", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_export_patches)

    s = sub.add_parser("infer", help="segment one image")
    s.add_argument("--img", required=True, help="scanned (defective) image")
    s.add_argument("--ref", help="digital reference; required by frdiff")
    s.add_argument("--segmenter", choices=SEGMENTERS, required=True)
    s.add_argument("--strategy", choices=("resized", "patch"), default="patch")
    s.add_argument("--out", required=True)
    s.add_argument("--overlay")
    s.add_argument("--scores-in", help="score tensor for the external segmenter")
    s.add_argument("--gt", help="ground-truth mask for the oracle segmenter")
    s.add_argument("--config")
    s.add_argument("--classes", choices=[c.value for c in ClassScheme])
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("eval", help="score predicted masks against ground truth")
    s.add_argument("--pred-dir", required=True, help="mask PNGs, or run_* subdirectories of them")
    s.add_argument("--gt-dir", required=True)
    s.add_argument("--classes", choices=[c.value for c in ClassScheme], default="multi")
    s.add_argument("--runs", type=int, default=4, help="replicas when --pred-dir has no run_* subdirectories")
    s.add_argument("--out", required=True)
    s.add_argument("--csv")
    s.add_argument("--method", default="unknown", help="label for the report, e.g. nr or fr")
    s.add_argument("--strategy", default="unknown", help="label for the report, resized or patch")
    s.add_argument("--seconds-per-image", type=float, default=0.0)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("audit", help="verify a generated dataset")
    s.add_argument("--dataset", required=True)
    s.set_defaults(func=cmd_audit)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "runs", 1) < 1:
        print("error: --runs must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except CliExit as exc:
        code, msg = exc.code, str(exc)
    except (FormatError, OSError) as exc:
        code, msg = EXIT_IO, str(exc)
    except (SourceTooSmall, ImageTooSmall) as exc:
        code, msg = EXIT_SIZE, str(exc)
    except (DimMismatch, LabelOutOfRange) as exc:
        code, msg = EXIT_MISMATCH, str(exc)
    except (RankDeficient, ArithmeticError, np.linalg.LinAlgError) as exc:
        code, msg = EXIT_NUMERIC, str(exc)
    except ValueError as exc:
        code, msg = EXIT_USAGE, str(exc)
    print(f"error: {msg}", file=sys.stderr)
    return code

if __name__ == "__main__":
    sys.exit(main())
