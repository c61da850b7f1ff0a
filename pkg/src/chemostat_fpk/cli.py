"""Command line entry point ``chemostat-fpk``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 I/O error.  ``CHEMOSTAT_FPK_LOG`` sets the log level (default WARNING).
"""

from __future__ import annotations

import logging
import os
import sys

import click

from .config import ConfigError, load_config
from .experiments import KINDS, run_experiment
from .fp_solver import SchemeError, SolverError
from .grid import AssemblyError
from .model import DomainError
from .ode_phase import StabilityError
from .outputs import OutputError, ensure_writable, write_outputs

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
NUMERIC_ERRORS = (SolverError, SchemeError, AssemblyError, StabilityError, FloatingPointError, ArithmeticError)


def _setup_logging() -> None:
    level = os.environ.get("CHEMOSTAT_FPK_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _fail(code: int, msg: str) -> None:
    click.echo(f"error: {msg}", err=True)
    sys.exit(code)


@click.command(context_settings={"help_option_names": ["-h", "--help"]})
@click.argument("kind", type=click.Choice(KINDS))
@click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False), help="TOML experiment file.")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False), help="Output directory.")
@click.option("--seed", type=int, default=None, help="Override sde.seed.")
@click.option("--threads", type=click.IntRange(min=1), default=1, show_default=True,
              help="Worker threads for Monte Carlo chunks.")
def main(kind: str, config_path: str, out_dir: str, seed: int | None, threads: int) -> None:
    """Run experiment KIND and write its CSV tables and manifest to --out."""
    _setup_logging()
    try:
        cfg = load_config(config_path)
        if seed is not None:
            cfg = cfg.with_seed(seed)
    except ConfigError as exc:
        _fail(EXIT_CONFIG, str(exc))
    except OSError as exc:
        _fail(EXIT_IO, f"cannot read config: {exc}")
    try:
        ensure_writable(out_dir)
    except OutputError as exc:
        _fail(EXIT_IO, str(exc))
    try:
        results = run_experiment(cfg, kind, threads=threads)
    except NUMERIC_ERRORS as exc:
        _fail(EXIT_NUMERIC, f"numerical failure: {exc}")
    except (ConfigError, DomainError) as exc:
        _fail(EXIT_CONFIG, str(exc))
    except ValueError as exc:
        # snapshot times incompatible with the SDE step and similar
        _fail(EXIT_CONFIG, str(exc))
    try:
        manifest = write_outputs(results, out_dir, cfg)
    except OSError as exc:
        _fail(EXIT_IO, str(exc))
    click.echo(f"{kind}: wrote {len(manifest['files'])} files and manifest.json to {out_dir}")


if __name__ == "__main__":  # pragma: no cover
    main()
