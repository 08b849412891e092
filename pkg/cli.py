"""
DualSep コマンドライン

    python cli.py simulate --count 20 --seed 7 --out data/
    python cli.py init-weights --variant S --causal true --out weights/s_causal.dsepw
    python cli.py separate --in data/audio/utt-00000_mix.wav --out out/ --weights weights/s_causal.dsepw
    python cli.py eval --in data/manifest.jsonl --out reports/bf_iva.json --mode dsp-only
    python cli.py bench --mode streaming --out reports/rtf.json
    python cli.py spectrogram --in out/zone1.wav --out out/zone1.png

終了コード: 0 = 成功、1 = 設定・入力の検証エラー、2 = 入出力エラー
"""
import argparse
import json
import os
import sys
import threading
from typing import List, Optional

from src.audio.wav_io import load_wav, save_wav
from src.config import apply_overrides, load_config, parse_bool
from src.evaluation.report import eval_manifest, write_report
from src.evaluation.spectrogram_image import save_spectrograms
from src.exceptions import is_io_error
from src.nn.weights import count_params, init_random, save_weights
from src.pipeline.bench import measure_rtf
from src.pipeline.separation import run_stream, separate_offline
from src.schemas import CliConfig, ModelConfig
from src.sim.batch import MANIFEST_NAME, simulate_batch
from src.utils.io import ensure_dir, zone_wav_path
from src.utils.run_logger import RunLogger

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_IO = 2


def _parent(path: str) -> str:
    return os.path.dirname(os.path.abspath(path))


def _open_logger(run_dir: str, command: str, argv: List[str], cfg: CliConfig) -> RunLogger:
    logger = RunLogger(ensure_dir(run_dir), command)
    logger.set_context(argv=argv, config=cfg.model_dump(mode="json"))
    print(f"[config] {json.dumps(cfg.model_dump(mode='json'), sort_keys=True, separators=(',', ':'))}",
          file=sys.stderr)
    return logger


def cmd_simulate(args: argparse.Namespace, cfg: CliConfig, logger: RunLogger) -> None:
    spec = cfg.dataset
    if args.count is not None:
        spec = spec.model_validate({**spec.model_dump(mode="json"), "count": args.count})
    lock = threading.Lock()

    def progress(done: int, total: int, uid: str) -> None:
        with lock:
            logger.add_step("simulate", f"{done}/{total}", message=uid)

    records = simulate_batch(spec, args.out, threads=args.threads, progress=progress)
    logger.add_step("manifest", "success", message=os.path.join(args.out, MANIFEST_NAME),
                    detail={"count": len(records), "seed": spec.seed, "split": spec.split})


def cmd_separate(args: argparse.Namespace, cfg: CliConfig, logger: RunLogger) -> None:
    pipeline = cfg.pipeline
    mix = load_wav(args.inp, expected_rate=pipeline.sample_rate, layout="raw_mics", channel_layout=pipeline.layout)
    logger.add_step("load", "success", message=args.inp, detail={"channels": mix.channels, "samples": mix.length})
    if pipeline.mode == "streaming":
        zones = run_stream(mix, pipeline)
    else:
        zones = separate_offline(mix, pipeline)
    paths = []
    for z, signal in enumerate(zones):
        path = zone_wav_path(args.out, z)
        save_wav(signal, path)
        paths.append(path)
    logger.add_step("separate", "success", message=f"{len(paths)} zones -> {args.out}",
                    detail={"stages": pipeline.stages, "mode": pipeline.mode, "outputs": paths})


def cmd_eval(args: argparse.Namespace, cfg: CliConfig, logger: RunLogger) -> None:
    system = args.system or cfg.eval.system
    if args.system is None and args.mode is not None:
        system = cfg.pipeline.stages
    include_timing = args.timing or cfg.eval.include_timing
    report = eval_manifest(args.inp, system, cfg.pipeline, include_timing=include_timing, threads=args.threads)
    write_report(report, args.out, args.csv or cfg.eval.csv_path)
    agg = report.aggregate
    logger.add_step("eval", "success",
                    message=f"{system}: SiSNR {agg.sisnr_in:.2f} -> {agg.sisnr_out:.2f} dB over {agg.count} utterances",
                    detail={"report": args.out, "missing": report.missing})


def cmd_bench(args: argparse.Namespace, cfg: CliConfig, logger: RunLogger) -> None:
    duration = args.duration if args.duration is not None else cfg.bench.duration
    repeats = args.repeats if args.repeats is not None else cfg.bench.repeats
    report = measure_rtf(cfg.pipeline, duration, repeats, seed=cfg.bench.seed)
    write_report(report, args.out)
    logger.add_step("bench", "success",
                    message=f"RTF median {report.rtf_median:.3f} (p95 {report.rtf_p95:.3f})",
                    detail={"report": args.out, "stage_seconds": report.stage_seconds})


def cmd_spectrogram(args: argparse.Namespace, cfg: CliConfig, logger: RunLogger) -> None:
    signal = load_wav(args.inp, expected_rate=cfg.pipeline.sample_rate)
    paths = save_spectrograms(signal, args.out, cfg.pipeline.stft)
    logger.add_step("spectrogram", "success", message=f"{len(paths)} image(s)", detail={"paths": paths})


def cmd_init_weights(args: argparse.Namespace, cfg: CliConfig, logger: RunLogger) -> None:
    model: ModelConfig = cfg.pipeline.model
    store = init_random(model, cfg.dataset.seed)
    save_weights(store, args.out)
    logger.add_step("init-weights", "success", message=args.out,
                    detail={"params": count_params(store), "fingerprint": store.fingerprint})


COMMANDS = {
    "simulate": cmd_simulate,
    "separate": cmd_separate,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "spectrogram": cmd_spectrogram,
    "init-weights": cmd_init_weights,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="CliConfig JSON file")
    common.add_argument("--seed", type=int, help="dataset / bench / weight seed")
    common.add_argument("--mode", choices=["offline", "streaming", "dsp-only", "bf-only"])
    common.add_argument("--variant", choices=["S", "L"])
    common.add_argument("--causal", type=parse_bool, help="true or false")
    common.add_argument("--encoder-mode", dest="encoder_mode",
                        choices=["dual", "spectral_only", "spatial_only", "combined"])
    common.add_argument("--weights", help="weight container for the dualsep stage")
    common.add_argument("--threads", type=int, help="worker threads for simulate / eval")

    parser = argparse.ArgumentParser(prog="dualsep", description="In-car multi-zone speech separation",
                                     formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="render a synthetic cabin dataset")
    p.add_argument("--count", type=int)
    p.add_argument("--out", required=True, help="dataset directory")

    p = sub.add_parser("separate", parents=[common], help="separate a raw microphone WAV into zone WAVs")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True, help="directory for zone1.wav .. zoneM.wav")

    p = sub.add_parser("eval", parents=[common], help="score a system on a manifest")
    p.add_argument("--in", dest="inp", required=True, help="manifest.jsonl")
    p.add_argument("--out", required=True, help="report JSON")
    p.add_argument("--system", choices=["unprocessed", "bf", "bf_iva", "dualsep"])
    p.add_argument("--csv", help="per-utterance CSV")
    p.add_argument("--timing", action="store_true", help="include rtf (report is no longer byte-stable)")

    p = sub.add_parser("bench", parents=[common], help="measure the real-time factor")
    p.add_argument("--out", required=True, help="report JSON")
    p.add_argument("--duration", type=float)
    p.add_argument("--repeats", type=int)

    p = sub.add_parser("spectrogram", parents=[common], help="log-magnitude image per channel")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True, help=".png or .pgm")

    p = sub.add_parser("init-weights", parents=[common], help="write seeded random weights")
    p.add_argument("--out", required=True)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_INVALID

    try:
        cfg = apply_overrides(load_config(args.config), seed=args.seed, mode=args.mode, variant=args.variant,
                              causal=args.causal, weights=args.weights, encoder_mode=args.encoder_mode)
        logger = _open_logger(_parent(args.out), args.command, argv, cfg)
    except Exception as exc:
        print(f"[{args.command}] error: {exc}", file=sys.stderr)
        return EXIT_IO if is_io_error(exc) else EXIT_INVALID

    try:
        COMMANDS[args.command](args, cfg, logger)
    except Exception as exc:
        code = EXIT_IO if is_io_error(exc) else EXIT_INVALID
        logger.add_step(args.command, "error", message=str(exc),
                        detail={"type": type(exc).__name__, "exit_code": code, **getattr(exc, "detail", {})})
        return code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
