"""Command line interface.

Exit codes: 0 ok, 2 validation failure, 3 collision found, 4 protocol or
configuration error.

Option values resolve as: command-line flag > ARMCOLLECT_<NAME> env var >
key=value line in the file named by --config/ARMCOLLECT_CONFIG > built-in
default.
"""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .errors import ArmCollectError, ConfigError, CorruptRecord, IoFailure, UnsupportedVersion
from .geometry import Pose, UnitQuat, Vec3
from .kinematics import default_chain_path, load_chain
from .record import _depth_bytes, _ppm_bytes, import_record, session_from_keyframes
from .scene import audit_replay, load_scene, render_depth, render_rgb

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_COLLISION = 3
EXIT_CONFIG = 4

ENV_PREFIX = "ARMCOLLECT_"


def _load_config_file(path: str | None) -> dict[str, str]:
    if not path:
        return {}
    out = {}
    try:
        for line in Path(path).read_text().splitlines():
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            key, sep, value = body.partition("=")
            if not sep:
                raise ConfigError(f"config line {body!r} is not key=value")
            out[key.strip().lower()] = value.strip()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return out


def _resolve(name: str, flag_value, file_values: dict[str, str], default=None):
    if flag_value is not None:
        return flag_value
    env = os.environ.get(ENV_PREFIX + name.upper())
    if env is not None:
        return env
    if name in file_values:
        return file_values[name]
    return default


def _cmd_serve(args) -> int:
    from .gateway import serve

    cfg = _load_config_file(_resolve("config", args.config, {}))
    chain = _resolve("chain", args.chain, cfg, str(default_chain_path()))
    scene = _resolve("scene", args.scene, cfg)
    listen = _resolve("listen", args.listen, cfg, "127.0.0.1:7643")
    if scene is None:
        print("serve: a scene file is required (--scene)", file=sys.stderr)
        return EXIT_CONFIG
    host, _, port_text = str(listen).rpartition(":")
    if not host:
        print(f"serve: listen address {listen!r} must be host:port", file=sys.stderr)
        return EXIT_CONFIG
    try:
        port = int(port_text)
    except ValueError:
        print(f"serve: bad port in {listen!r}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        serve(chain, scene, host, port)
    except (ConfigError, OSError) as exc:
        print(f"serve: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


def _cmd_validate(args) -> int:
    try:
        record = import_record(args.record)
    except (CorruptRecord, UnsupportedVersion) as exc:
        print(f"invalid record: {exc}")
        return EXIT_VALIDATION
    except IoFailure as exc:
        print(f"invalid record: {exc}")
        return EXIT_VALIDATION
    print(
        f"valid record: task={record.task!r} frames={len(record.frames)} "
        f"keyframes={len(record.keyframes)} version={record.version}"
    )
    return EXIT_OK


def _cmd_audit(args) -> int:
    cfg = _load_config_file(_resolve("config", args.config, {}))
    chain_path = _resolve("chain", args.chain, cfg, str(default_chain_path()))
    try:
        record = import_record(args.record)
    except (CorruptRecord, UnsupportedVersion, IoFailure) as exc:
        print(f"audit: invalid record: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        chain = load_chain(chain_path)
        scene = load_scene(args.scene)
        session = session_from_keyframes(chain, record)
    except CorruptRecord as exc:
        print(f"audit: invalid record: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ConfigError, OSError) as exc:
        print(f"audit: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    report = audit_replay(session, scene, args.rate, frozenset(args.ignore))
    if not report.colliding:
        print(f"collision-free at {args.rate} Hz ({len(session.waypoints)} keyframes)")
        return EXIT_OK
    print(f"COLLISION: {len(report.contacts)} contact(s)")
    seen = set()
    for c in report.contacts:
        key = (c.link_index, c.label)
        if key in seen:
            continue
        seen.add(key)
        print(
            f"  link {c.link_index} vs {c.label}: penetration {c.penetration:.4f} m "
            f"first at t={c.time:.3f} s"
        )
    return EXIT_COLLISION


def _cmd_render(args) -> int:
    try:
        scene = load_scene(args.scene)
    except (ConfigError, OSError) as exc:
        print(f"render: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.pose is not None:
        v = args.pose
        pose = Pose(Vec3(v[0], v[1], v[2]), UnitQuat.normalized(v[3], v[4], v[5], v[6]))
    else:
        pose = Pose(scene.extrinsics.position, scene.extrinsics.orientation)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        depth = render_depth(scene, pose)
        rgb = render_rgb(scene, pose)
        (out / "depth.raw").write_bytes(_depth_bytes(depth))
        (out / "rgb.ppm").write_bytes(_ppm_bytes(rgb))
    except OSError as exc:
        print(f"render: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"wrote {out / 'depth.raw'} and {out / 'rgb.ppm'} ({scene.intrinsics.width}x{scene.intrinsics.height})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="armcollect",
        description="Headless robot demonstration collection engine",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_serve = sub.add_parser("serve", help="run the collection service")
    p_serve.add_argument("--chain", help="chain definition file (default: bundled arm)")
    p_serve.add_argument("--scene", help="scene definition file")
    p_serve.add_argument("--listen", help="host:port (default 127.0.0.1:7643)")
    p_serve.add_argument("--config", help="key=value config file")
    p_serve.set_defaults(func=_cmd_serve)

    p_val = sub.add_parser("validate", help="validate an exported record")
    p_val.add_argument("record", help="record directory")
    p_val.set_defaults(func=_cmd_validate)

    p_audit = sub.add_parser("audit", help="collision-audit an exported record")
    p_audit.add_argument("record", help="record directory")
    p_audit.add_argument("--scene", required=True, help="scene definition file")
    p_audit.add_argument("--rate", type=float, default=100.0, help="replay sample rate in Hz")
    p_audit.add_argument(
        "--ignore", action="append", default=[], metavar="LABEL",
        help="obstacle label to exempt (task target objects); repeatable",
    )
    p_audit.add_argument("--chain", help="chain definition file (default: bundled arm)")
    p_audit.add_argument("--config", help="key=value config file")
    p_audit.set_defaults(func=_cmd_audit)

    p_render = sub.add_parser("render", help="render a scene to depth.raw + rgb.ppm")
    p_render.add_argument("scene", help="scene definition file")
    p_render.add_argument(
        "--pose", type=float, nargs=7, metavar=("PX", "PY", "PZ", "QX", "QY", "QZ", "QW"),
        help="camera pose (default: the scene's extrinsics)",
    )
    p_render.add_argument("--out", required=True, help="output directory")
    p_render.set_defaults(func=_cmd_render)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ArmCollectError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
