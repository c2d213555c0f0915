"""``vsr-fdx`` command-line entry point."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import campaign as camp
from .config import config_hash, load_scenario_config, parse_fault, parse_scenario_items
from .errors import (ConfigError, DimensionMismatchError, FrameError, MalformedFileError,
                     RegimeMismatchError, UncodableFaultSetError)
from .features import FeatureRegime, read_dataset, switch_names
from .sim import FaultScenario, read_trace, simulate, write_trace

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("vsr_fdx")


def _meta(args, cfg_hash: str) -> dict:
    out = {"seed": args.seed}
    if cfg_hash:
        out["config"] = cfg_hash
    return out


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _scenario_config(args):
    if args.config:
        cfg = load_scenario_config(args.config)
    else:
        cfg = parse_scenario_items([])
    faults = [parse_fault(f) for f in getattr(args, "fault", None) or []]
    if faults:
        cfg.scenario = FaultScenario(cfg.scenario.faults + tuple(faults))
        cfg.hash = config_hash([("fault", f) for f in args.fault] + [("config", cfg.hash)])
    if getattr(args, "duration", None) is not None:
        cfg.duration = args.duration
    if args.seed is None:
        args.seed = cfg.seed if cfg.seed is not None else 0
    return cfg


def _simulate_from_args(args):
    cfg = _scenario_config(args)
    duration = cfg.duration if cfg.duration is not None else 0.5
    trace = simulate(cfg.scenario, duration, cfg.params, args.seed,
                     onset_jitter=cfg.onset_jitter, config_hash=cfg.hash)
    return cfg, trace


# --- commands ----------------------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg, trace = _simulate_from_args(args)
    path = _out_dir(args) / "trace.csv"
    write_trace(trace, path)
    print(f"wrote {len(trace)} records ({trace.sample_rate:g} Hz) to {path}")
    return EXIT_OK


def cmd_dataset(args) -> int:
    cfg = camp.load_campaign_config(args.config) if args.config else camp.CampaignConfig()
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.train.seed = args.seed
    args.seed = cfg.seed
    datasets = camp.generate(cfg)
    paths = camp.write_campaign(datasets, _out_dir(args))
    print(camp.describe(datasets))
    print(f"total {camp.total_samples(datasets)} samples per regime; wrote {len(paths)} files")
    return EXIT_OK


def _dataset_file(path_or_dir, split: str, regime: str | None) -> Path:
    p = Path(path_or_dir)
    if p.is_dir():
        if regime is None:
            raise ConfigError("--regime is required when a dataset directory is given")
        return camp.dataset_path(p, split, FeatureRegime.parse(regime))
    return p


def cmd_train(args) -> int:
    from .mlp import save_model, train

    cfg = camp.load_campaign_config(args.config) if args.config else camp.CampaignConfig()
    if args.seed is None:
        args.seed = cfg.seed
    cfg.train.seed = args.seed
    if args.epochs is not None:
        cfg.train.max_epochs = args.epochs
    tr = read_dataset(_dataset_file(args.data, "train", args.regime))
    val_path = _dataset_file(args.data, "val", args.regime) if Path(args.data).is_dir() else None
    va = read_dataset(val_path) if val_path is not None and val_path.exists() else None

    def report(epoch, loss, val):
        if epoch % 10 == 0 or epoch == 1:
            log.info("epoch %d train_mse %.6f val_mse %.6f", epoch, loss, val)

    model, hist = train(tr.x, tr.y, va.x if va else None, va.y if va else None,
                        hidden=cfg.hidden, config=cfg.train, regime=tr.regime.tag, log=report)
    model.meta.update(_meta(args, cfg.hash))
    out = _out_dir(args)
    save_model(model, out / "model.txt")
    hist.to_csv(out / "history.csv", _meta(args, cfg.hash))
    print(f"trained {tr.regime.tag} model: {hist.stop_reason} after {len(hist.epochs)} epochs, "
          f"train_mse={hist.train_mse[-1]:.6f}; wrote {out / 'model.txt'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .diagnosis import evaluate
    from .mlp import load_model

    model = load_model(args.model)
    ds = read_dataset(_dataset_file(args.data, "test", args.regime or model.regime))
    if ds.regime.tag != model.regime:
        raise RegimeMismatchError(f"model regime {model.regime!r} vs dataset {ds.regime.tag!r}")
    if args.seed is None:
        args.seed = int(model.meta.get("seed", 0))
    ev = evaluate(model, ds.x, ds.y)
    out = _out_dir(args)
    ev.to_csv(out / "confusion.csv", _meta(args, str(model.meta.get("config", ""))))
    print(ev.summary())
    return EXIT_OK


def _frames_from_args(args):
    from .stream import frames_from_trace

    if args.trace:
        trace = read_trace(args.trace)
        if args.seed is None:
            args.seed = trace.seed
    else:
        _, trace = _simulate_from_args(args)
    if args.start > 0:
        trace = trace.window(args.start)
    return frames_from_trace(trace)


def cmd_serve(args) -> int:
    from .stream import serve_frames, write_frames

    frames = _frames_from_args(args)
    if args.frames_out:
        n = write_frames(frames, args.frames_out)
        print(f"wrote {n} frames to {args.frames_out}")
        return EXIT_OK

    def ready(port):
        print(f"serving {len(frames)} frames on {args.host}:{port} ({args.pacing})", flush=True)

    n = serve_frames(frames, args.host, args.port, pacing=args.pacing, ready=ready,
                     accept_timeout=args.accept_timeout)
    print(f"sent {n} frames")
    return EXIT_OK


def _parse_endpoint(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise ConfigError(f"expected host:port, got {text!r}")
    return host or "127.0.0.1", int(port)


def cmd_diagnose(args) -> int:
    from .diagnosis import DiagnosisSession
    from .mlp import load_model
    from .stream import iter_frames, prefetch, receive_frames

    model = load_model(args.model)
    session = DiagnosisSession(model, args.threshold, args.debounce)
    if args.seed is None:
        args.seed = int(model.meta.get("seed", 0))
    if args.frames:
        fh = open(args.frames, "rb")
        source = iter_frames(fh.read)
    elif args.connect:
        fh = None
        source = receive_frames(*_parse_endpoint(args.connect), timeout=args.connect_timeout)
    else:
        raise ConfigError("diagnose needs --frames <file> or --connect host:port")
    previous = frozenset()
    try:
        for frame in prefetch(source):
            rep, confirmed = session.process(frame.seq, frame.samples)
            if not args.quiet:
                print(rep.csv_row())
            if confirmed != previous:
                print(f"window {frame.seq}: confirmed {{{switch_names(confirmed)}}}")
                previous = confirmed
    finally:
        if fh is not None:
            fh.close()
    out = _out_dir(args)
    meta = _meta(args, str(model.meta.get("config", "")))
    with open(out / "diagnosis_log.csv", "w") as fh:
        fh.write("# " + ", ".join(f"{k}={v}" for k, v in meta.items()) + "\n")
        fh.write(session.log_text())
    print(f"final fault set: {{{switch_names(session.confirmed)}}}")
    return EXIT_OK


def cmd_plot(args) -> int:
    from .plotting import plot_diagnosis_log, plot_trace

    out = _out_dir(args)
    written = []
    if args.trace:
        scenario = load_scenario_config(args.config).scenario if args.config else None
        written.append(plot_trace(read_trace(args.trace), out / "trace.svg", scenario))
    if args.log:
        written.append(plot_diagnosis_log(args.log, out / "diagnosis.svg"))
    if not written:
        raise ConfigError("plot needs --trace and/or --log")
    for p in written:
        print(f"wrote {p}")
    return EXIT_OK


# --- argument parsing --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="vsr-fdx", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="simulate a fault scenario")
    s.add_argument("--duration", type=float)
    s.add_argument("--fault", action="append", help="<switch>,<onset>[,<clear>]; repeatable")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("dataset", parents=[common], help="run a labeled-data campaign")
    s.set_defaults(func=cmd_dataset)

    s = sub.add_parser("train", parents=[common], help="train a network on a dataset")
    s.add_argument("--data", required=True, help="dataset directory or train file")
    s.add_argument("--regime", help="transient, synthetic or timeseries:W")
    s.add_argument("--epochs", type=int)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", parents=[common], help="confusion matrix on a test set")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True, help="dataset directory or test file")
    s.add_argument("--regime")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("serve", parents=[common], help="stream a trace as 20 ms frames")
    s.add_argument("--trace", help="trace file; otherwise simulate --config")
    s.add_argument("--duration", type=float)
    s.add_argument("--fault", action="append")
    s.add_argument("--start", type=float, default=0.0,
                   help="skip the trace before this time (e.g. the start-up transient)")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=5600)
    s.add_argument("--pacing", choices=("realtime", "max"), default="realtime")
    s.add_argument("--accept-timeout", type=float, default=60.0)
    s.add_argument("--frames-out", help="write frames to a file instead of a socket")
    s.set_defaults(func=cmd_serve)

    s = sub.add_parser("diagnose", parents=[common], help="online windowed localization")
    s.add_argument("--model", required=True)
    s.add_argument("--frames", help="frame file")
    s.add_argument("--connect", help="host:port of a frame server")
    s.add_argument("--connect-timeout", type=float, default=10.0)
    s.add_argument("--threshold", type=float, default=0.10)
    s.add_argument("--debounce", type=int, default=2)
    s.add_argument("--quiet", action="store_true", help="only print confirmed-set changes")
    s.set_defaults(func=cmd_diagnose)

    s = sub.add_parser("plot", parents=[common], help="SVG figures of a trace or log")
    s.add_argument("--trace")
    s.add_argument("--log")
    s.set_defaults(func=cmd_plot)
    return p


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, (ConfigError, UncodableFaultSetError, RegimeMismatchError,
                        DimensionMismatchError)):
        return EXIT_CONFIG
    if isinstance(exc, (MalformedFileError, FrameError, OSError)):
        return EXIT_IO
    return EXIT_RUNTIME


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except Exception as exc:  # mapped to the documented exit codes
        code = exit_code_for(exc)
        print(f"vsr-fdx {args.command}: error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
