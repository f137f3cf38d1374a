"""Command-line interface
~~~~~~~~~~~~~~~~~~~~~~

The `earsep` command ties the pipeline together::

    earsep synth  --out runs/toy          # corpus + dataset in runs/toy/data
    earsep train  --out runs/toy          # checkpoints in runs/toy/run
    earsep eval   --out runs/toy --checkpoint runs/toy/run/best.pt
    earsep report --out runs/toy          # tables and plots in runs/toy/plots

Options shared by all subcommands (`--config`, `--quiet`, `-v`) go before the
subcommand name.  Parameters are read from configuration files (see
:mod:`earsep.config`) searched in `earsep.config.DEFAULT_CONFIG_FILES` and any
files given with ``--config``.  The output root defaults to ``$EARSEP_OUT``.

Every command exits with status 0 on success and 1 with a message
``Error (<category>): ...`` when the pipeline rejects its input.
"""
from dataclasses import dataclass, field
import functools
import logging
import os.path
from typing import List

import click

from . import utils
from .config import load_config
from .errors import DatasetError, EarsepError

APP_NAME = "earsep"

__all__ = ["earsep"]


class EarsepClickException(click.ClickException):
    """Reports an `EarsepError` with its category."""

    exit_code = 1

    def __init__(self, err):
        super().__init__(str(err))
        self.category = err.category

    def show(self, file=None):
        click.echo(f"Error ({self.category}): {self.format_message()}", err=True)


def handle_errors(f):
    """Turn `EarsepError` into a categorized click error."""

    @functools.wraps(f)
    def wrapper(*v, **kw):
        try:
            return f(*v, **kw)
        except EarsepError as err:
            raise EarsepClickException(err) from err

    return wrapper


@dataclass
class EarsepParams:
    """Object used in `ctx.obj` for storing information about the invocation."""

    config_files: List[str] = field(default_factory=list)
    use_default_config: bool = True
    verbosity: int = 0
    quiet: bool = False

    def load_config(self, seed=None):
        config = load_config(self.config_files, use_defaults=self.use_default_config)
        if seed is not None:
            config = config.with_overrides(earsep=dict(seed=seed), train=dict(seed=seed))
        return config


######################################################################
# Callbacks
def set_param(ctx, param, value):
    params = ctx.ensure_object(EarsepParams)
    setattr(params, param.name, value)


def set_config_files(ctx, param, value):
    params = ctx.ensure_object(EarsepParams)
    params.config_files = [utils.process_path(_f) for _f in value or ()]


def _summary(title, rows):
    click.echo(title)
    for key, value in rows:
        click.echo(f"  {key:<14} {value}")


######################################################################
# earsep
#
# fmt: off
@click.group()
@click.version_option(package_name=APP_NAME)
@click.option(
    "--config", "-c", multiple=True, type=click.Path(dir_okay=False),
    expose_value=False, callback=set_config_files,
    help="Additional config files.")
@click.option(
    "--no-default-config", "use_default_config", flag_value=False, default=True,
    expose_value=False, callback=set_param,
    help="Do not read the default config files.")
@click.option(
    "--quiet", "-q", is_flag=True, expose_value=False, callback=set_param,
    help="Only report warnings and errors.")
@click.option(
    "--verbosity", "-v", count=True, expose_value=False, callback=set_param,
    help="Increase verbosity.")
@click.pass_context
# fmt: on
def earsep(ctx):
    """Ear-conditioned binaural speaker separation."""
    params = ctx.ensure_object(EarsepParams)
    if params.quiet:
        utils.set_verbosity(logging.WARNING)
    elif params.verbosity:
        utils.set_verbosity(logging.DEBUG)
    else:
        utils.set_verbosity(logging.INFO)


out_option = click.option(
    "--out", "-o", envvar="EARSEP_OUT", show_envvar=True, default="earsep-out",
    show_default=True, type=click.Path(file_okay=False),
    help="Output root directory.")
seed_option = click.option(
    "--seed", type=int, default=None, help="Override the configured seed.")
overwrite_option = click.option(
    "--overwrite", is_flag=True, help="Replace existing outputs.")


@earsep.command()
@out_option
@seed_option
@overwrite_option
@click.option("--workers", type=int, default=None, help="Rendering processes.")
@click.pass_obj
@handle_errors
def synth(params, out, seed, overwrite, workers):
    """Synthesize train/val/test scenes into OUT/data."""
    from .scenes.dataset import Corpus, build_dataset
    from .scenes.testing import write_synthetic_corpus

    config = params.load_config(seed)
    grid, corpus_opts = config["grid"], config["corpus"]
    if corpus_opts.speech_dir:
        corpus = Corpus.from_directory(corpus_opts.speech_dir, corpus_opts.noise_dir or None)
    else:
        corpus = write_synthetic_corpus(
            os.path.join(out, "corpus"),
            n_speakers=corpus_opts.synthetic_speakers,
            utterances_per_speaker=corpus_opts.utterances_per_speaker,
            duration=grid.duration,
            sample_rate=config.sample_rate,
            seed=config.seed,
        )
    manifests = build_dataset(
        corpus,
        grid,
        os.path.join(out, "data"),
        seed=config.seed,
        room=config["room"],
        array=config["array"],
        shadow=config.shadow(),
        sample_rate=config.sample_rate,
        overwrite=overwrite,
        workers=workers,
    )
    rows = []
    for split, path in manifests.items():
        with open(path) as f:
            rows.append((split, f"{sum(1 for _l in f)} examples  {path}"))
    if grid.t60_range is not None:
        t60 = f"uniform {grid.t60_range}"
    else:
        t60 = ", ".join(f"{_t:g}" for _t in grid.t60)
    rows += [("t60 [s]", t60), ("snr [dB]", ", ".join(f"{_s:g}" for _s in grid.snr))]
    _summary(f"Dataset in {os.path.join(out, 'data')}", rows)


@earsep.command()
@out_option
@seed_option
@overwrite_option
@click.option("--data", type=click.Path(file_okay=False), default=None,
              help="Dataset directory [default: OUT/data].")
@click.option("--resume", is_flag=True, help="Continue from OUT/run/last.pt.")
@click.option("--max-epochs", type=int, default=None, help="Override max_epochs.")
@click.pass_obj
@handle_errors
def train(params, out, seed, overwrite, data, resume, max_epochs):
    """Train on OUT/data and write checkpoints to OUT/run."""
    from .training import fit

    config = params.load_config(seed)
    if max_epochs is not None:
        config = config.with_overrides(train=dict(max_epochs=max_epochs))
    data = data or os.path.join(out, "data")
    manifests = [os.path.join(data, f"{_s}.jsonl") for _s in ("train", "val")]
    missing = [_m for _m in manifests if not os.path.exists(_m)]
    if missing:
        raise DatasetError(f"Missing dataset manifests {missing}; run `earsep synth` first")
    stft = config["stft"]
    result = fit(
        manifests[0],
        manifests[1],
        config["model"],
        config["train"],
        os.path.join(out, "run"),
        stft_config=stft,
        resume=resume,
        overwrite=overwrite,
    )
    last = result.history[-1] if result.history else {}
    _summary(
        "Training finished",
        [
            ("epochs", result.state.epoch),
            ("best val", f"{result.state.best_metric:.3f} dB (epoch {result.state.best_epoch})"),
            ("final lr", f"{result.state.lr:g}"),
            ("last loss", last.get("train_loss")),
            ("checkpoint", result.checkpoint),
        ],
    )


@earsep.command(name="eval")
@out_option
@click.option("--checkpoint", type=click.Path(dir_okay=False), default=None,
              help="Model checkpoint (omit for the unprocessed baseline only).")
@click.option("--manifest", type=click.Path(dir_okay=False), default=None,
              help="Manifest to score [default: OUT/data/test.jsonl].")
@click.option("--no-stoi", is_flag=True, help="Skip STOI.")
@overwrite_option
@click.option("--workers", type=int, default=1, help="Evaluation processes.")
@click.pass_obj
@handle_errors
def evaluate(params, out, checkpoint, manifest, no_stoi, workers, overwrite):
    """Score a manifest and write OUT/report.json and OUT/report.txt."""
    from .checkpoint import load_model
    from .metrics import NetworkSeparator, evaluate_dataset
    from .report import format_table, refuse_existing

    config = params.load_config()
    manifest = manifest or os.path.join(out, "data", "test.jsonl")
    outputs = [os.path.join(out, _f) for _f in ("report.json", "report.txt")]
    refuse_existing(outputs, overwrite)
    separator = None
    if checkpoint:
        model, _payload = load_model(checkpoint, stft_config=config["stft"])
        separator = NetworkSeparator(model, config["stft"])
    report = evaluate_dataset(
        manifest, separator, with_stoi=not no_stoi, workers=workers
    )
    os.makedirs(out, exist_ok=True)
    report.save(outputs[0])
    table = format_table(report)
    with open(outputs[1], "w") as f:
        f.write(table + "\n")
    click.echo(table)
    if report.errors:
        click.echo(f"{len(report.errors)} example(s) failed; see report.json", err=True)


@earsep.command()
@out_option
@click.option("--report", "report_file", type=click.Path(dir_okay=False), default=None,
              help="Report file [default: OUT/report.json].")
@overwrite_option
@click.pass_obj
@handle_errors
def report(params, out, report_file, overwrite):
    """Write stratified tables and plots to OUT/plots."""
    from .metrics import MetricReport
    from .report import format_stratified, write_report

    metric_report = MetricReport.load(report_file or os.path.join(out, "report.json"))
    paths = write_report(metric_report, os.path.join(out, "plots"), overwrite=overwrite)
    for axis in ("snr", "t60"):
        click.echo(format_stratified(metric_report, axis) + "\n")
    _summary("Wrote", [(os.path.basename(_p), _p) for _p in paths])


if __name__ == "__main__":
    earsep()
