"""Plot command: spec-file or flag driven rendering of run outputs.

Exit codes: 0 success, 2 unusable spec or input data.
"""

from __future__ import annotations

import sys

import click

from .render import PlotError, PlotSpec, load_spec, render


@click.group()
def main():
    """Render figures from mutagame sweep.csv / epochs.csv outputs."""


@main.command()
@click.option("--spec", "spec_path", type=str, default=None, help="YAML plot spec.")
@click.option("--input", "input_csv", type=str, default=None)
@click.option("--kind", type=click.Choice(["heatmap", "threshold_curve", "trajectory"]))
@click.option("--out", "output", type=str, default=None)
@click.option("--x", "x_axis", type=str, default="eps")
@click.option("--y", "y_axis", type=str, default="kappa")
@click.option("--value", type=str, default="incidence")
@click.option(
    "--slice",
    "slices",
    type=str,
    multiple=True,
    help="Fix an unplotted axis, e.g. --slice gamma=0.4 (repeatable).",
)
@click.option("--threshold-json", type=str, default=None)
@click.option("--title", type=str, default=None)
def plot(spec_path, input_csv, kind, output, x_axis, y_axis, value, slices, threshold_json, title):
    """Render one figure (PNG or SVG, chosen by the output extension)."""
    try:
        if spec_path is not None:
            spec = load_spec(spec_path)
        else:
            if input_csv is None or kind is None or output is None:
                raise PlotError("without --spec, provide --input, --kind and --out")
            fixed = {}
            for item in slices:
                if "=" not in item:
                    raise PlotError(f"slice must look like axis=value, got {item!r}")
                axis, _, raw = item.partition("=")
                try:
                    fixed[axis.strip()] = float(raw)
                except ValueError as exc:
                    raise PlotError(f"slice value for {axis!r} is not a number") from exc
            spec = PlotSpec(
                input_csv=input_csv,
                kind=kind,
                output=output,
                x_axis=x_axis,
                y_axis=y_axis,
                value=value,
                slices=fixed,
                threshold_json=threshold_json,
                title=title,
            )
        info = render(spec)
    except PlotError as exc:
        click.echo(f"plot error: {exc}", err=True)
        sys.exit(2)
    click.echo(f"wrote {info.output}")


if __name__ == "__main__":
    main()
