"""Command-line interface.

Exit codes: 0 success (``keyspace``: secure), 2 ``keyspace`` insecure,
64 usage error, 65 bad input data, 74 I/O error.
"""

from __future__ import annotations

import argparse
import contextlib
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .analysis import (GameConfig, best_secure, estimate_mcr_skg, keyspace_log2, rows_to_csv,
                       run_distinguishing_game)
from .channel import profile_from_snr
from .config import ExperimentConfig
from .errors import ConfigurationError, EsaeError, InputDomainError, ProtocolError
from .protocol import run_session
from .sakp import read_detection_log, write_detection_log
from .scene import generate_scene

EXIT_OK, EXIT_INSECURE = 0, 2
EXIT_USAGE, EXIT_DATA, EXIT_IO = 64, 65, 74

log = logging.getLogger("esae")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(_positive_int(x) for x in text.split(",") if x)


def _int_range_list(text: str) -> tuple[int, ...]:
    """``1,3,5`` or ``1-10`` or a mix."""
    out = []
    for part in text.split(","):
        if "-" in part:
            lo, hi = part.split("-", 1)
            out.extend(range(_positive_int(lo), _positive_int(hi) + 1))
        elif part:
            out.append(_positive_int(part))
    if not out:
        raise argparse.ArgumentTypeError("empty list")
    return tuple(out)


def _float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(",") if x)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a list of numbers: {text!r}") from None


def _add_common(p, sweep=False):
    p.add_argument("--config", type=Path, help="JSON experiment config")
    p.add_argument("--seed", type=int, help="master seed (default 0)")
    p.add_argument("--classes", type=_positive_int, help="class vocabulary size N")
    p.add_argument("--kdf-iterations", type=_positive_int)
    if not sweep:
        p.add_argument("--topk", type=_positive_int)
        p.add_argument("--window", type=_positive_int)
        p.add_argument("--grids", type=_positive_int, help="number of grid cells Q")
        p.add_argument("--snr", type=float, help="channel SNR in dB")
        p.add_argument("--policy", choices=("none", "reinit-on-failure"))


def _resolve(args, sweep: bool = False) -> ExperimentConfig:
    """Load --config (if any) and apply command-line overrides."""
    raw = {}
    if args.config is not None:
        try:
            raw = json.loads(args.config.read_text())
        except FileNotFoundError:
            raise UsageError(f"config file not found: {args.config}") from None
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{args.config}: invalid JSON: {exc}") from exc
    for section in ("sakp", "kdf", "channel", "mcr", "game", "scene", "output"):
        raw[section] = dict(raw.get(section, {}))
    if args.seed is not None:
        raw["seed"] = args.seed
        raw["channel"]["seed"] = args.seed
    if args.classes is not None:
        raw["sakp"]["num_classes"] = args.classes
    if args.kdf_iterations is not None:
        raw["kdf"]["iterations"] = args.kdf_iterations
    scalar_flags = () if sweep else (("topk", "sakp", "top_k"), ("window", "sakp", "window"),
                                     ("grids", "sakp", "grids"), ("snr", "channel", "snr_db"),
                                     ("policy", "mcr", "policy"))
    for flag, section, key in scalar_flags:
        v = getattr(args, flag, None)
        if v is not None:
            raw[section][key] = v
    if "grids" in raw["sakp"]:
        raw["sakp"].pop("grid", None)
    return ExperimentConfig.from_dict(raw, args.config.parent if args.config else None)


def _open_out(path):
    if path in (None, "-"):
        return contextlib.nullcontext(sys.stdout)
    return open(path, "w", encoding="utf-8")


# -- commands ----------------------------------------------------------------

def cmd_keyspace(args) -> int:
    rep = keyspace_log2(args.classes, args.grids, args.topk, args.window)
    if args.json:
        print(json.dumps({**dataclasses.asdict(rep), "esae_version": __version__}))
    else:
        print(rep.summary())
    return EXIT_OK if rep.secure else EXIT_INSECURE


def cmd_sweep(args) -> int:
    axis_flags = (args.snr, args.topk, args.window, args.grids)
    if args.config is None and all(a is None for a in axis_flags):
        raise UsageError("sweep needs --config or at least one axis flag (--snr/--topk/--window/--grids)")
    cfg = _resolve(args, sweep=True)
    mcr = dict(dataclasses.asdict(cfg.mcr))
    for flag, key in (("snr", "snr_db"), ("topk", "top_k"), ("window", "window"), ("grids", "grids"),
                      ("runs", "runs"), ("frames", "frames_per_run"), ("mode", "mode"),
                      ("policy", "policy")):
        v = getattr(args, flag)
        if v is not None:
            mcr[key] = v
    cfg.mcr = type(cfg.mcr)(**mcr)
    rows = estimate_mcr_skg(cfg.mcr, cfg.channel, cfg.scene, cfg.kdf, cfg.seed, workers=args.workers)
    resolved = cfg.resolved()
    csv_path = args.out or cfg.output.get("csv")
    json_path = args.json_out or cfg.output.get("json")
    with _open_out(csv_path) as fh:
        fh.write(f"# esae {__version__}\n# config {json.dumps(resolved, sort_keys=True)}\n")
        fh.write(rows_to_csv(rows))
    if json_path:
        best = {}
        for snr in cfg.mcr.snr_db:
            for T in cfg.mcr.window:
                b = best_secure([r for r in rows if r.snr_db == snr and r.T == T])
                if b is not None:
                    best[f"snr={snr:g},T={T}"] = dataclasses.asdict(b)
        with open(json_path, "w", encoding="utf-8") as fh:
            json.dump({"config": resolved, "rows": [dataclasses.asdict(r) for r in rows],
                       "best_secure": best}, fh, indent=2)
    return EXIT_OK


def _session_header(cfg: ExperimentConfig, frames: int, policy: str) -> dict:
    return {"config": cfg.resolved(), "frames": frames, "policy": policy,
            "profile": dataclasses.asdict(profile_from_snr(cfg.channel))}


def _source(args, cfg: ExperimentConfig):
    if getattr(args, "detections", None):
        with open(args.detections, encoding="utf-8") as fh:
            frames = list(read_detection_log(fh, cfg.sakp.num_classes))
        return frames, len(frames)
    return list(generate_scene(args.frames, (cfg.seed, 1), cfg.scene)), args.frames


def cmd_simulate(args) -> int:
    cfg = _resolve(args)
    frames, n = _source(args, cfg)
    if n < 1:
        raise InputDomainError("no frames to simulate")
    trace = run_session(n, frames, cfg.channel, cfg.sakp, cfg.kdf, cfg.mcr.policy, cfg.seed, cfg.scene)
    with _open_out(args.out) as fh:
        fh.write(trace.to_jsonl(_session_header(cfg, n, cfg.mcr.policy)))
    log.info("key match rate %.4f, auth failures %d, resyncs %d",
             trace.key_match_rate(), trace.auth_failures, trace.resyncs)
    return EXIT_OK


def cmd_game(args) -> int:
    cfg = _resolve(args)
    game = GameConfig(trials=args.trials or cfg.game.trials,
                      adversary=args.adversary or cfg.game.adversary,
                      epsilon_threshold=args.epsilon or cfg.game.epsilon_threshold)
    res = run_distinguishing_game(game, seed=cfg.seed)
    out = {"esae_version": __version__, "seed": cfg.seed, **dataclasses.asdict(res),
           "within_threshold": res.within_threshold}
    print(json.dumps(out))
    return EXIT_OK


def _write_endpoint_log(path, entries, header):
    if not path:
        return
    with _open_out(path) as fh:
        fh.write(json.dumps({"type": "header", **header}) + "\n")
        for e in entries:
            e = {k: v for k, v in e.items() if k != "key"}
            fh.write(json.dumps({"type": "step", **e}) + "\n")


def cmd_serve(args) -> int:
    from .transport import serve
    cfg = _resolve(args)
    res = serve((args.host, args.port), cfg.sakp, cfg.kdf, cfg.channel, cfg.mcr.policy, cfg.seed)
    _write_endpoint_log(args.log, res.entries, _session_header(cfg, len(res.entries), cfg.mcr.policy))
    if res.aborted:
        raise ProtocolError(f"session aborted: {res.error}")
    return EXIT_OK


def cmd_connect(args) -> int:
    from .transport import connect
    cfg = _resolve(args)
    frames, n = _source(args, cfg)
    res = connect((args.host, args.port), frames, cfg.sakp, cfg.kdf, cfg.mcr.policy, cfg.seed)
    _write_endpoint_log(args.log, res.entries, _session_header(cfg, n, cfg.mcr.policy))
    if res.aborted:
        raise ProtocolError(f"session aborted: {res.error}")
    return EXIT_OK


def cmd_gen(args) -> int:
    cfg = _resolve(args)
    scene = cfg.scene
    if args.mean_objects is not None:
        scene = dataclasses.replace(scene, mean_objects=args.mean_objects)
    with _open_out(args.out) as fh:
        write_detection_log(fh, generate_scene(args.frames, (cfg.seed, 1), scene))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="esae", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"esae {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("keyspace", help="semantic key-space size and 128-bit check")
    p.add_argument("--classes", type=_positive_int, default=80)
    p.add_argument("--grids", type=_positive_int, required=True)
    p.add_argument("--topk", type=_positive_int, required=True)
    p.add_argument("--window", type=_positive_int, required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_keyspace)

    p = sub.add_parser("sweep", help="MCR-SKG over a parameter grid, CSV output")
    _add_common(p, sweep=True)
    p.add_argument("--snr", type=_float_list)
    p.add_argument("--topk", type=_int_range_list)
    p.add_argument("--window", type=_int_range_list)
    p.add_argument("--grids", type=_int_list)
    p.add_argument("--runs", type=_positive_int)
    p.add_argument("--frames", type=_positive_int, help="frames per run")
    p.add_argument("--mode", choices=("independent", "chained"))
    p.add_argument("--policy", choices=("none", "reinit-on-failure"))
    p.add_argument("--workers", type=_positive_int, default=1)
    p.add_argument("--out", help="CSV path (default stdout)")
    p.add_argument("--json-out", help="also write rows and best secure points as JSON")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("simulate", help="one in-process session, JSONL trace")
    _add_common(p)
    p.add_argument("--frames", type=_positive_int, default=100)
    p.add_argument("--detections", help="replay a JSONL detection log instead of a synthetic scene")
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("game", help="left-or-right distinguishing game")
    _add_common(p)
    p.add_argument("--adversary", choices=("random", "constant", "decode-without-key", "oracle-leak"))
    p.add_argument("--trials", type=_positive_int)
    p.add_argument("--epsilon", type=float)
    p.set_defaults(func=cmd_game)

    for name, fn, help_ in (("serve", cmd_serve, "run the receiver over TCP"),
                            ("connect", cmd_connect, "run the sender over TCP")):
        p = sub.add_parser(name, help=help_)
        _add_common(p)
        p.add_argument("--host", default="127.0.0.1")
        p.add_argument("--port", type=int, default=47100)
        p.add_argument("--log", help="write this endpoint's JSONL log (keys excluded)")
        if name == "connect":
            p.add_argument("--frames", type=_positive_int, default=100)
            p.add_argument("--detections")
        p.set_defaults(func=fn)

    p = sub.add_parser("gen", help="synthetic detection stream as JSONL")
    _add_common(p)
    p.add_argument("--frames", type=_positive_int, default=100)
    p.add_argument("--mean-objects", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gen)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"esae: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"esae: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (EsaeError, ValueError) as exc:
        print(f"esae: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
