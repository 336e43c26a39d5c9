"""Command line entry point: configure, serve, replay, operator tooling."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import ConfigError, parse_config

CONFIG_FLAGS = [
    # (flag, config key, kwargs)
    ("--canvas", "canvas", dict(metavar="PNG", help="pristine canvas image")),
    ("--delta-t-ms", "delta_t_ms", dict(type=int, metavar="MS", help="gaze window length (500-3000)")),
    ("--n-frames", "n_frames", dict(type=int, metavar="N", help="interpolated frames per cycle")),
    ("--backend", "backend", dict(choices=["mock", "remote"], help="inpainting backend")),
    ("--remote-url", "remote_url", dict(metavar="URL", help="remote synthesis endpoint base URL")),
    ("--sim-inpaint-ms", "sim_inpaint_ms", dict(type=int, metavar="MS", help="simulated inpaint latency")),
    ("--sim-interp-ms", "sim_interp_ms", dict(type=int, metavar="MS", help="simulated interpolation time")),
    ("--gaze-listen", "gaze_listen", dict(metavar="HOST:PORT", help="TCP gaze ingest address")),
    ("--view-listen", "view_listen", dict(metavar="HOST:PORT", help="TCP viewer stream address")),
    ("--http-listen", "http_listen", dict(metavar="HOST:PORT", help="HTTP/WebSocket address")),
    ("--archive-dir", "archive_dir", dict(metavar="DIR", help="session archive directory")),
    ("--prompts", "prompts", dict(metavar="FILE", help="prompt file, one per line")),
    ("--replay", "replay", dict(metavar="TRACE", help="replay a gaze trace and exit after archiving")),
    ("--replay-end", "replay_end", dict(choices=["reverse", "archive"],
                                        help="end a replay with reversal playback or archive-only")),
    ("--session-id", "session_id", dict(metavar="ID", help="override the session identifier")),
]

BOOL_FLAGS = [
    ("--dump-masks", "dump_masks", "archive each cycle's binary mask PNG"),
    ("--replay-fast", "replay_fast", "replay on the virtual clock (no real-time pacing)"),
]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="morphcanvas",
        description="Gaze-driven generative morphing canvas server.",
    )
    for flag, key, kwargs in CONFIG_FLAGS:
        parser.add_argument(flag, dest=key, default=None, **kwargs)
    for flag, key, help_text in BOOL_FLAGS:
        parser.add_argument(flag, dest=key, action="store_true", default=None, help=help_text)
    parser.add_argument("--config", metavar="FILE", default=None,
                        help="key = value config file (same names as flags)")
    parser.add_argument("--make-canvas", metavar="OUT", default=None,
                        help="write a synthetic 2250x1500 canvas PNG and exit")
    parser.add_argument("--make-trace", metavar="OUT", default=None,
                        help="write a synthetic 75 Hz gaze trace and exit")
    parser.add_argument("--trace-seconds", type=float, default=30.0, metavar="S",
                        help="duration for --make-trace (default 30)")
    parser.add_argument("--seed", type=int, default=7, metavar="N",
                        help="seed for --make-canvas / --make-trace")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.make_canvas:
        from .synthetic import write_canvas

        out = write_canvas(args.make_canvas, seed=args.seed)
        print(f"wrote canvas {out}")
        return 0
    if args.make_trace:
        from .synthetic import generate_trace, write_trace

        messages = generate_trace(round(args.trace_seconds * 1000), seed=args.seed)
        out = write_trace(args.make_trace, messages)
        print(f"wrote trace {out} ({len(messages)} messages)")
        return 0

    flag_values = {key: getattr(args, key) for _, key, _ in CONFIG_FLAGS}
    flag_values.update({key: getattr(args, key) for _, key, _ in BOOL_FLAGS})
    try:
        cfg = parse_config(flag_values, file_path=args.config)
    except ConfigError as exc:
        print(f"morphcanvas: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"morphcanvas: cannot read config file: {exc}", file=sys.stderr)
        return 2

    if not Path(cfg.canvas).is_file():
        print(f"morphcanvas: canvas file not found: {cfg.canvas}", file=sys.stderr)
        return 2

    if cfg.replay:
        if not Path(cfg.replay).is_file():
            print(f"morphcanvas: trace file not found: {cfg.replay}", file=sys.stderr)
            return 2
        from .bootstrap import run_replay

        runtime, manifest = run_replay(cfg)
        counters = runtime.metrics.snapshot()
        print(f"replay complete: {counters['cycle_count']} cycles, "
              f"{counters['frames_emitted']} frames, {counters['underflows']} underflows")
        if manifest is not None:
            print(f"archive: {manifest.parent}")
        return 0

    import uvicorn

    from .config import parse_listen
    from .service import create_app

    host, port = parse_listen(cfg.http_listen, "http_listen")
    app = create_app(cfg)
    try:
        uvicorn.run(app, host=host, port=port, log_level="warning")
    except KeyboardInterrupt:
        pass
    finally:
        # interrupted mid-session this forces the reversal-free archive;
        # a no-op when the lifespan already shut the runtime down
        runtime = getattr(app.state, "runtime", None)
        if runtime is not None:
            runtime.stop()
    return 0


if __name__ == "__main__":
    sys.exit(main())
