# engine/cli.py

from functools import wraps

import click

from engine import runner
from engine.config_loader import RunConfig
from engine.errors import SemGraphError
from engine.gnn import EDGE_SCHEMES, NORMALIZATIONS
from version import APP_NAME, ENGINE_VERSION


def _handle_errors(func):
    """Turn library errors into a clean non-zero exit; per-file errors also fail the run."""
    @wraps(func)
    def wrapper(*args, **kwargs):
        try:
            result = func(*args, **kwargs)
        except (SemGraphError, FileNotFoundError, ValueError) as e:
            raise click.ClickException(str(e))
        errors = result.get("errors", []) if isinstance(result, dict) else []
        if errors:
            click.echo(f"{len(errors)} error(s):", err=True)
            for line in errors:
                click.echo(f"  {line}", err=True)
            raise SystemExit(1)
        return result
    return wrapper


def _config(config_path, **overrides):
    try:
        return RunConfig(config_path, overrides)
    except (SemGraphError, FileNotFoundError) as e:
        raise click.ClickException(str(e))


def run_options(func):
    func = click.option("--run-name", default=None, help="Name of the run directory under SEMGRAPH_HOME/runs/<command>/.")(func)
    func = click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None, help="Write run outputs here instead.")(func)
    func = click.option("--seed", type=int, default=None, help="Master seed for every random stream.")(func)
    func = click.option("-c", "--config", "config_path", type=click.Path(), default=None, help="YAML run config.")(func)
    return func


def training_options(func):
    options = [
        click.option("--epochs", type=int, default=None),
        click.option("--batch", type=int, default=None),
        click.option("--lr", type=float, default=None),
        click.option("--edge-scheme", type=click.Choice(EDGE_SCHEMES), default=None),
        click.option("--input-edge-scheme", type=click.Choice(EDGE_SCHEMES), default=None,
                     help="Edge scheme for the first layer only (default: same as --edge-scheme)."),
        click.option("--normalization", type=click.Choice(NORMALIZATIONS), default=None),
        click.option("--addon/--no-addon", "addon_enabled", default=None, help="Enable the add-on adjacency layers."),
        click.option("--addon-update", type=click.Choice(["matmul", "elementwise"]), default=None),
        click.option("--z", type=int, default=None, help="Nodes kept by sort pooling."),
        click.option("--layer-dims", type=str, default=None, help="Comma separated widths, e.g. 32,32,32,1."),
        click.option("--tu", "tu_name", default=None, help="Read DATASET as a TU benchmark directory with this name."),
        click.option("--num-node-labels", type=int, default=None, help="Declared TU node label alphabet size."),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def _training_overrides(kwargs):
    dims = kwargs.pop("layer_dims", None)
    overrides = {
        key: kwargs.pop(key, None)
        for key in ("epochs", "batch", "lr", "edge_scheme", "input_edge_scheme", "normalization",
                    "addon_enabled", "addon_update", "z", "seed")
    }
    if dims:
        try:
            overrides["layer_dims"] = [int(d) for d in dims.split(",")]
        except ValueError:
            raise click.BadParameter(f"expected comma separated integers, got {dims!r}", param_hint="--layer-dims")
    return overrides


@click.group()
@click.version_option(ENGINE_VERSION, prog_name=APP_NAME)
def cli():
    """Point cloud classification through semantic part graphs."""


@cli.command()
@click.option("--source", "source_dir", required=True, type=click.Path(exists=True, file_okay=False), help="Unlabeled clouds, one folder per category.")
@click.option("--templates", "template_dir", required=True, type=click.Path(exists=True, file_okay=False), help="Labeled templates, one folder per category.")
@click.option("--max-iters", type=int, default=None)
@click.option("--tol", type=float, default=None)
@click.option("--subsample", type=int, default=None, help="Points used for registration.")
@click.option("--format", "cloud_format", type=click.Choice(["xyz", "off"]), default=None)
@run_options
@_handle_errors
def annotate(source_dir, template_dir, max_iters, tol, subsample, cloud_format, config_path, seed, out_dir, run_name):
    """Label the clouds under --source/<category>/ from the templates under --templates/<category>/."""
    cfg = _config(config_path, max_iters=max_iters, tol=tol, subsample=subsample, format=cloud_format, seed=seed)
    return runner.cmd_annotate(cfg, source_dir, template_dir, out_dir=out_dir, run_name=run_name, echo=click.echo)


@cli.command()
@click.argument("labeled_dir", type=click.Path(exists=True, file_okay=False))
@click.option("-o", "--output", type=click.Path(dir_okay=False), default=None, help="Dataset file to write.")
@click.option("--tau", type=float, default=None, help="Sub-part distance threshold.")
@click.option("--split-file", type=click.Path(exists=True, dir_okay=False), default=None,
              help="File of test sample ids; writes _train and _test datasets as well.")
@click.option("--format", "cloud_format", type=click.Choice(["xyz", "off"]), default=None)
@run_options
@_handle_errors
def extract(labeled_dir, output, tau, split_file, cloud_format, config_path, seed, out_dir, run_name):
    """Build one semantic graph per labeled cloud in LABELED_DIR/<category>/."""
    cfg = _config(config_path, tau=tau, format=cloud_format, seed=seed)
    return runner.cmd_extract(cfg, labeled_dir, output, split_file, out_dir=out_dir, run_name=run_name, echo=click.echo)


@cli.command()
@click.argument("dataset", type=click.Path(exists=True))
@click.option("--test", "test_dataset", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Held-out dataset evaluated after every epoch.")
@click.option("--init", "init_checkpoint", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Start from these weights instead of a fresh initialization.")
@training_options
@run_options
@_handle_errors
def train(dataset, test_dataset, init_checkpoint, tu_name, num_node_labels, config_path, out_dir, run_name, **kwargs):
    """Train the classifier on DATASET; writes epochs.csv, confusion.csv and checkpoint.npz."""
    cfg = _config(config_path, **_training_overrides(kwargs))
    return runner.cmd_train(
        cfg, dataset, test_dataset, init_checkpoint, tu_name, num_node_labels,
        out_dir=out_dir, run_name=run_name, echo=click.echo,
    )


@cli.command(name="eval")
@click.argument("dataset", type=click.Path(exists=True))
@click.argument("checkpoint", type=click.Path(exists=True, dir_okay=False))
@click.option("--tu", "tu_name", default=None)
@click.option("--num-node-labels", type=int, default=None)
@run_options
@_handle_errors
def eval_command(dataset, checkpoint, tu_name, num_node_labels, config_path, seed, out_dir, run_name):
    """Overall accuracy of CHECKPOINT on DATASET."""
    cfg = _config(config_path, seed=seed)
    return runner.cmd_eval(cfg, dataset, checkpoint, tu_name, num_node_labels, out_dir=out_dir, run_name=run_name, echo=click.echo)


@cli.command()
@click.argument("dataset", type=click.Path(exists=True))
@click.option("-k", "--folds", type=int, default=None)
@click.option("--stratified/--no-stratified", default=None)
@training_options
@run_options
@_handle_errors
def xval(dataset, folds, stratified, tu_name, num_node_labels, config_path, out_dir, run_name, **kwargs):
    """k-fold cross-validation; writes per-fold rows and a mean/std summary row."""
    cfg = _config(config_path, folds=folds, stratified=stratified, **_training_overrides(kwargs))
    return runner.cmd_xval(cfg, dataset, tu_name, num_node_labels, out_dir=out_dir, run_name=run_name, echo=click.echo)


@cli.command()
@click.argument("dataset", type=click.Path(exists=True))
@click.option("--grid", type=click.Choice(runner.ABLATION_GRIDS), default="edge_scheme", show_default=True)
@click.option("--test", "test_dataset", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Score each variant on this held-out set instead of cross-validating.")
@click.option("-k", "--folds", type=int, default=None)
@click.option("--stratified/--no-stratified", default=None)
@training_options
@run_options
@_handle_errors
def ablate(dataset, grid, test_dataset, folds, stratified, tu_name, num_node_labels, config_path, out_dir, run_name, **kwargs):
    """Sweep edge schemes, normalizations or model variants and tabulate accuracy."""
    cfg = _config(config_path, folds=folds, stratified=stratified, **_training_overrides(kwargs))
    return runner.cmd_ablate(
        cfg, dataset, grid, test_dataset, tu_name, num_node_labels,
        out_dir=out_dir, run_name=run_name, echo=click.echo,
    )


@cli.command()
@click.argument("kind", type=click.Choice(["clouds", "graphs"]))
@click.argument("output", type=click.Path())
@click.option("-n", "--count", type=int, default=20, show_default=True,
              help="Sources per category (clouds) or graphs per class (graphs).")
@click.option("--seed", type=int, default=0, show_default=True)
@_handle_errors
def synth(kind, output, count, seed):
    """Write a synthetic cloud corpus (directory) or graph dataset (file)."""
    return runner.cmd_synth(kind, output, count, seed, echo=click.echo)


@cli.command()
@click.argument("dataset", type=click.Path(exists=True))
@click.option("--tu", "tu_name", default=None)
@click.option("--num-node-labels", type=int, default=None)
@_handle_errors
def info(dataset, tu_name, num_node_labels):
    """Graph count, classes and node-count histogram of DATASET."""
    return runner.cmd_info(dataset, tu_name, num_node_labels, echo=click.echo)


def main():
    cli()
