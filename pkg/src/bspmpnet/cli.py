"""Command-line surface: train, enhance, evaluate, analyze, synth-data.

Exit codes: 0 on success, 2 for usage/config/input problems, 3 for runtime
failures. The compute device comes from the BSPMPNET_DEVICE environment
variable (default cpu).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .config import (apply_overrides, load_config, run_config_from_mapping,
                     write_config)
from .datasets import SynthSpec, read_manifest, synth_dataset
from .dsp import StftConfig, Waveform, read_wav, stft, write_wav
from .errors import (BspMpnetError, CheckpointError, ConfigurationError,
                     InputError, TrainingError)
from .metrics import (ExternalTool, build_report, cosine_similarity, llr,
                      si_snr, stoi)
from .model import BspMpnet, BspMpnetConfig
from .training import fit, load_checkpoint

KNOWN_METRICS = ("si_snr", "cosine", "llr", "stoi")


def _device() -> torch.device:
    return torch.device(os.environ.get("BSPMPNET_DEVICE", "cpu"))


def load_model(path: str | Path, device: torch.device | None = None) -> tuple[BspMpnet, dict]:
    """Rebuild a model from a checkpoint's config echo and weights."""
    payload = load_checkpoint(path)
    config = BspMpnetConfig.from_dict(payload["model_config"])
    model = BspMpnet(config)
    state = {k: torch.from_numpy(np.array(v)) for k, v in payload["model"].items()}
    model.load_state_dict(state)
    model.eval()
    return model.to(device or _device()), payload


# ------------------------------------------------------------------ train

def cmd_train(args) -> int:
    mapping = load_config(args.config)
    apply_overrides(mapping, args.set or [])
    rc = run_config_from_mapping(mapping)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_config(mapping, out / "run_config.ini")

    torch.manual_seed(rc.train.seed)
    model = BspMpnet(rc.model).to(_device())
    result = fit(model, args.train_manifest, args.valid_manifest, rc.train,
                 out, resume_from=args.resume)
    if result.best_metric is not None:
        print(f"best validation SI-SNR: {result.best_metric:.2f} dB")
    print(f"checkpoints written under {out}")
    return 0


# ---------------------------------------------------------------- enhance

def cmd_enhance(args) -> int:
    model, _ = load_model(args.checkpoint)
    rate = model.config.stft.sample_rate
    in_path = Path(args.input)
    if in_path.suffix == ".jsonl":
        entries = read_manifest(in_path)
        files = [Path(e.noisy or e.clean) for e in entries]
    else:
        files = [in_path]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for path in files:
        wave = read_wav(path, expected_rate=rate)
        start = time.perf_counter()
        _, _, enhanced = model.enhance(wave)
        elapsed = time.perf_counter() - start
        target = out / path.name
        write_wav(target, enhanced, fmt="int16")
        print(f"{path.name}: {wave.duration:.2f}s audio, "
              f"RTF {elapsed / wave.duration:.4f} -> {target}")
    return 0


# --------------------------------------------------------------- evaluate

def _read_pairs(path: Path) -> list[tuple[str, Path, Path]]:
    pairs = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        record = json.loads(line)
        enhanced = record.get("enhanced") or record.get("noisy")
        if "clean" not in record or enhanced is None:
            raise InputError(f"{path}:{lineno}: need clean and enhanced/noisy paths")
        pairs.append((record.get("utterance_id", f"utt_{lineno}"),
                      Path(record["clean"]), Path(enhanced)))
    if not pairs:
        raise InputError(f"{path}: empty evaluation manifest")
    return pairs


def cmd_evaluate(args) -> int:
    pairs = _read_pairs(Path(args.manifest))
    missing = [str(p) for _, c, e in pairs for p in (c, e) if not p.exists()]
    if missing:
        raise InputError("missing files: " + ", ".join(missing))
    metric_names = [m.strip() for m in args.metrics.split(",") if m.strip()]
    for name in metric_names:
        if name not in KNOWN_METRICS:
            raise ConfigurationError(f"unknown metric {name!r}; choose from {KNOWN_METRICS}")
    tools = []
    for item in args.tool or []:
        if "=" not in item:
            raise ConfigurationError(f"tool spec {item!r} is not name=command")
        name, command = item.split("=", 1)
        tools.append(ExternalTool(name=name, command=command))

    stft_cfg = StftConfig()
    per_utt: dict[str, dict[str, float]] = {}
    total_audio = 0.0
    started = time.perf_counter()
    for utt_id, clean_path, enh_path in pairs:
        clean = read_wav(clean_path)
        enhanced = read_wav(enh_path)
        total_audio += clean.duration
        values: dict[str, float] = {}
        if "si_snr" in metric_names:
            values["si_snr"] = si_snr(clean, enhanced)
        if "cosine" in metric_names:
            values["cosine"] = cosine_similarity(
                stft(clean, stft_cfg), stft(enhanced, stft_cfg))
        if "llr" in metric_names:
            values["llr"] = llr(clean, enhanced, clean.sample_rate)
        if "stoi" in metric_names:
            values["stoi"] = stoi(clean, enhanced, clean.sample_rate)
        for tool in tools:
            values[tool.name] = tool.run(clean_path, enh_path)
        per_utt[utt_id] = values
    elapsed = time.perf_counter() - started

    report = build_report(per_utt, runtime={"total_audio_s": total_audio,
                                            "wall_s": elapsed})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.write_csv(out / "report.csv")
    report.write_json(out / "report.json")

    names = report.metric_names()
    print("  ".join(f"{n:>10}" for n in ["metric"] + names))
    print("  ".join([f"{'mean':>10}"] + [f"{report.aggregate[n]:>10.4f}" for n in names]))
    print(f"report written to {out / 'report.csv'}")
    return 0


# ---------------------------------------------------------------- analyze

def cmd_analyze(args) -> int:
    payload = load_checkpoint(args.checkpoint)
    weights = {}
    for path_name in ("mag", "pha"):
        key = f"fs_ssl.{path_name}.layer_weights.logits"
        if key in payload["model"]:
            logits = np.asarray(payload["model"][key], dtype=np.float64)
            exp = np.exp(logits - logits.max())
            weights[path_name] = exp / exp.sum()
    if not weights:
        raise CheckpointError(
            f"{args.checkpoint}: no SSL layer-weight sections in checkpoint")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "layer_weights.csv"
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write("path,layer,weight\n")
        for path_name, w in weights.items():
            for layer, value in enumerate(w):
                fh.write(f"{path_name},{layer},{value:.8f}\n")

    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 3.5))
    num_layers = len(next(iter(weights.values())))
    x = np.arange(num_layers)
    width = 0.8 / len(weights)
    for i, (path_name, w) in enumerate(weights.items()):
        ax.bar(x + i * width, w, width, label=path_name)
    ax.set_xlabel("backbone layer")
    ax.set_ylabel("normalized weight")
    ax.set_xticks(x + width * (len(weights) - 1) / 2, [str(i) for i in x])
    ax.legend()
    fig.tight_layout()
    png_path = out / "layer_weights.png"
    fig.savefig(png_path, dpi=120)
    plt.close(fig)
    print(f"wrote {csv_path} and {png_path}")
    return 0


# -------------------------------------------------------------- synth-data

def cmd_synth_data(args) -> int:
    snrs = tuple(float(s) for s in args.snr.split(","))
    spec = SynthSpec(num_utterances=args.count, duration=args.duration,
                     snr_db=snrs, noise_kind=args.noise, seed=args.seed)
    manifest = synth_dataset(spec, args.out)
    print(f"wrote {args.count} utterances; manifest at {manifest}")
    return 0


# ------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bspmpnet",
                                     description="Dual-path speech enhancement")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", default=None, help="INI config file")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                   help="override a config value")
    p.add_argument("--train-manifest", required=True)
    p.add_argument("--valid-manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("enhance", help="enhance a WAV file or manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="WAV file or .jsonl manifest")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("evaluate", help="score (clean, enhanced) pairs")
    p.add_argument("--manifest", required=True,
                   help=".jsonl with clean and enhanced paths per line")
    p.add_argument("--out", required=True)
    p.add_argument("--metrics", default="si_snr,cosine")
    p.add_argument("--tool", action="append", metavar="NAME=COMMAND",
                   help="external metric command with {clean}/{enhanced} placeholders")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("analyze", help="export SSL layer weights from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("synth-data", help="generate a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=4)
    p.add_argument("--duration", type=float, default=1.0)
    p.add_argument("--snr", default="0.0", help="comma-separated SNR list in dB")
    p.add_argument("--noise", default="white", choices=("white", "babble"))
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth_data)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except TrainingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if exc.loss_parts:
            print(f"  loss parts: {exc.loss_parts}", file=sys.stderr)
        if exc.batch_ids is not None:
            print(f"  batch ids: {exc.batch_ids}", file=sys.stderr)
        return 3
    except (ConfigurationError, InputError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except BspMpnetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
