"""Command line entry point: ``voxelpipe <action> -c config.ini [section.key=value ...]``."""
from __future__ import annotations

import argparse
import logging
import os
import sys

from .config import ACTIONS, parse_config
from .driver import run_action
from .errors import ConfigError

LOG_LEVELS = {"debug": logging.DEBUG, "info": logging.INFO, "warn": logging.WARNING}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="voxelpipe", description="Config-driven medical volume pipeline.")
    p.add_argument("action", choices=ACTIONS)
    p.add_argument("-c", "--config", required=True, help="INI configuration file")
    p.add_argument("overrides", nargs="*", metavar="section.key=value",
                   help="settings that take precedence over the configuration file")
    return p


def configure_logging():
    level = LOG_LEVELS.get(os.environ.get("VOXELPIPE_LOG", "info").lower(), logging.INFO)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("voxelpipe")
    root.handlers[:] = [handler]
    root.setLevel(level)
    root.propagate = False


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_intermixed_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    configure_logging()
    log = logging.getLogger("voxelpipe.cli")
    try:
        cfg = parse_config(args.config, args.overrides)
    except ConfigError as err:
        log.error("%s: %s", type(err).__name__, err)
        return err.exit_code
    result = run_action(cfg, args.action)
    return result.exit_code


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
