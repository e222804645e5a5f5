"""Command line entry point for batch extraction."""

import sys
from pathlib import Path

import click

from . import ExtractorError, __version__
from .config import ExtractorConfig, load_config
from .extract import extract


@click.command("editeval-extract")
@click.version_option(__version__, message="editeval-extract %(version)s")
@click.option(
    "--images",
    "image_dir",
    required=True,
    type=click.Path(exists=True, file_okay=False, path_type=Path),
    help="Directory holding groups.json and the referenced images.",
)
@click.option(
    "--config",
    "config_file",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    default=None,
    help="JSON config selecting feature families; defaults run every family.",
)
@click.option("--out", required=True, type=click.Path(file_okay=False, path_type=Path))
def main(image_dir: Path, config_file: Path | None, out: Path):
    """Extract feature bundles for every image group under --images."""
    try:
        config = load_config(config_file) if config_file else ExtractorConfig()
        manifest = extract(image_dir, config, out)
    except ExtractorError as exc:
        raise click.ClickException(str(exc)) from exc
    n_bundles = len(manifest["images"])
    n_quarantined = len(manifest["quarantine"])
    for entry in manifest["quarantine"]:
        click.echo(
            f"quarantined {entry['group']}/{entry['role']}: {entry['reason']}", err=True
        )
    click.echo(f"extracted {n_bundles} bundles ({n_quarantined} quarantined) -> {out}")


if __name__ == "__main__":
    sys.exit(main())
