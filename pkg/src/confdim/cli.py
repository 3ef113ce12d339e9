"""Command line: ``confdim <command> [options]``.

Exit status 0 when every hard invariant holds, 2 when only soft diagnostics fail, 1 on
any error (a JSON error object goes to stdout).
"""

import json
import os
import sys

import click

from . import io, pipeline
from .errors import ConfdimError, InvalidParameter

EXIT_OK, EXIT_ERROR, EXIT_SOFT = 0, 1, 2


def _config_options(f):
    opts = [
        click.option("--config", "config_file", type=click.Path(exists=True, dir_okay=False),
                     help="JSON file with PipelineConfig fields; flags override it."),
        click.option("--source", type=click.Choice(["snake", "quad"])),
        click.option("--n", "n", type=int, help="Excursion length (snake source)."),
        click.option("--faces", type=int, help="Number of faces (quad source)."),
        click.option("--alpha", type=float),
        click.option("--eta", type=float),
        click.option("--zeta", type=float),
        click.option("--n-max", "n_max", type=int),
        click.option("--epsilon", type=float),
        click.option("--strategy", type=click.Choice(["ratio", "ratio_with_event", "metric_only"])),
        click.option("--seed", type=int),
        click.option("--points", type=int, help="Boundary points kept from a map."),
        click.option("--workers", type=int, default=None, help="Worker count (results do not depend on it)."),
        click.option("-o", "--out", "outdir", type=click.Path(file_okay=False), required=True),
    ]
    for opt in reversed(opts):
        f = opt(f)
    return f


def _build_config(config_file, outdir, stages=None, **flags):
    data = {}
    if config_file:
        with open(config_file) as fh:
            data = json.load(fh)
    elif os.path.exists(os.path.join(outdir, "manifest.json")):
        data = dict(io.read_json(os.path.join(outdir, "manifest.json")).get("config", {}))
    data.update({k: v for k, v in flags.items() if v is not None})
    if data.get("workers") is None:
        data["workers"] = os.cpu_count() or 1
    if stages is not None:
        data["stages"] = stages
    known = set(pipeline.PipelineConfig.__dataclass_fields__)
    unknown = sorted(set(data) - known)
    if unknown:
        raise InvalidParameter(f"unknown configuration keys: {', '.join(unknown)}")
    return pipeline.PipelineConfig(**data).validate()


def _fail(err):
    payload = err.to_dict() if isinstance(err, ConfdimError) else {"error": type(err).__name__, "message": str(err)}
    click.echo(io.dumps(payload))
    sys.exit(EXIT_ERROR)


def _run_stages(stages, config_file, outdir, **flags):
    try:
        cfg = _build_config(config_file, outdir, stages, **flags)
        run = pipeline.Run(cfg, outdir)
        run.run(stages)
        report, status = pipeline.verify_outputs(outdir)
    except ConfdimError as e:
        _fail(e)
    except (OSError, ValueError, KeyError) as e:
        _fail(e)
    click.echo(io.dumps(report))
    sys.exit(status)


@click.group()
@click.version_option(package_name="artifact")
def main():
    """Weighted hyperbolic fillings and dimension estimates for random planar geometries."""


def _stage_command(name, help_text):
    @_config_options
    def cmd(config_file, outdir, **flags):
        _run_stages([name], config_file, outdir, **flags)

    cmd.__doc__ = help_text
    return main.command(name=name)(cmd)


_stage_command("sample", "Sample a space and write space.cdim, its sidecar and manifest.json.")
_stage_command("fill", "Build nets and the filling; write nets.json, edges.csv and filling.json.")
_stage_command("weigh", "Compute weights and checks; write weights.csv, margins.json and weights.json.")
_stage_command("deform", "Deformed boundary metrics; write boundary.cdim and deform.json.")
_stage_command("dims", "Dimension fits; write dims.json and slopes.csv.")


@main.command("pipeline")
@_config_options
@click.option("--stage", "last_stage", default="dims",
              type=click.Choice(list(pipeline.STAGES) + list(pipeline.STAGE_ALIASES)),
              help="Stop after this stage.")
@click.option("--skip", multiple=True, type=click.Choice(list(pipeline.STAGES)),
              help="Skip a stage (its artifacts must already exist).")
def pipeline_cmd(config_file, outdir, last_stage, skip, **flags):
    """Run the stages in order up to --stage and write verify.json."""
    last = pipeline.STAGE_ALIASES.get(last_stage, last_stage)
    stages = list(pipeline.STAGES[: pipeline.STAGES.index(last) + 1])
    stages = [s for s in stages if s not in skip]
    _run_stages(stages, config_file, outdir, **flags)


@main.command()
@click.option("-o", "--out", "outdir", type=click.Path(file_okay=False, exists=True), required=True)
def verify(outdir):
    """Re-read the reports in a run directory and write verify.json."""
    try:
        report, status = pipeline.verify_outputs(outdir)
    except (ConfdimError, OSError, ValueError, KeyError) as e:
        _fail(e)
    click.echo(io.dumps(report))
    sys.exit(status)


@main.command("csbp-check")
@click.option("--paths", "n_paths", type=int, default=100_000, show_default=True)
@click.option("--bridges", "n_bridges", type=int, default=10_000, show_default=True)
@click.option("--dt", type=float, default=1e-3, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--workers", type=int, default=None)
@click.option("-o", "--out", "outfile", type=click.Path(dir_okay=False), default=None)
def csbp_check(n_paths, n_bridges, dt, seed, workers, outfile):
    """Monte Carlo checks of the branching process against closed forms."""
    try:
        rows = pipeline.csbp_check(n_paths, n_bridges, seed, workers or os.cpu_count() or 1, dt)
    except ConfdimError as e:
        _fail(e)
    _emit_table(rows, outfile, soft=lambda r: r["verdict"] == "fail")


@main.command("modulus-check")
@click.option("-o", "--out", "outfile", type=click.Path(dir_okay=False), default=None)
def modulus_check(outfile):
    """Grid modulus of round annuli against the exact value and the radius sandwich."""
    try:
        rows = pipeline.modulus_check()
    except ConfdimError as e:
        _fail(e)
    _emit_table(rows, outfile, soft=lambda r: not (r["modulus_ok"] and r["sandwich_ok"]))


def _emit_table(rows, outfile, soft):
    text = io.dumps(rows)
    if outfile:
        with open(outfile, "w") as fh:
            fh.write(text + "\n")
    click.echo(text)
    sys.exit(EXIT_SOFT if any(soft(r) for r in rows) else EXIT_OK)


if __name__ == "__main__":
    main()
