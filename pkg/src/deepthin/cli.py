"""Command-line front end: planning, compression, benchmarks, training runs.

Exit codes: 0 success, 1 usage or parse failure, 2 infeasible ratio.
``DEEPTHIN_THREADS`` overrides ``--threads`` wherever threads apply.
"""

from __future__ import annotations

import csv
import statistics
import sys
import time
from pathlib import Path

import click
import numpy as np

from .core import make_rng, matmul
from .errors import ArgumentError, InfeasiblePlanError, ModelFormatError
from .factor import decompress, init_factors
from .grad import TrainConfig, finite_diff_check
from .kernel import ReuseTable, fused_matmul
from .model_io import CompressedModel, expected_file_size, load_model, save_model
from .planner import LayerPlan, plan_layer, plan_network
from .train import METHODS, TASKS, default_config, train_toy

click.UsageError.exit_code = 1

BENCH_RATIOS = (0.08, 0.04, 0.0195, 0.0129, 0.0099, 0.0057,
                0.0040, 0.0027, 0.0020, 0.0014)


def read_shapes_file(path: str) -> list[tuple[str, int, int]]:
    """Parse `name Q R` triples, one per line; `#` starts a comment."""
    shapes = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise click.ClickException(
                f"{path}:{lineno}: expected 'name Q R', got {raw!r}")
        name, q_s, r_s = parts
        try:
            q, r = int(q_s), int(r_s)
        except ValueError:
            raise click.ClickException(
                f"{path}:{lineno}: Q and R must be integers, got {raw!r}")
        if q < 1 or r < 1:
            raise click.ClickException(f"{path}:{lineno}: Q and R must be >= 1")
        shapes.append((name, q, r))
    if not shapes:
        raise click.ClickException(f"{path}: no shapes found")
    return shapes


def _exit_infeasible(exc: InfeasiblePlanError) -> None:
    click.echo(f"infeasible: {exc}", err=True)
    for name, bound in sorted(exc.lower_bounds.items()):
        click.echo(f"  lower bound {name or '<matrix>'}: {bound:.6g}", err=True)
    sys.exit(2)


@click.group()
def main():
    """Compress dense weight matrices and run them without decompressing."""


@main.command("plan")
@click.argument("shapes_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--ratio", type=float, required=True, help="target compression ratio")
@click.option("--rank", type=int, default=1, show_default=True)
def cmd_plan(shapes_file, ratio, rank):
    """Plan compression parameters for the matrices in SHAPES_FILE."""
    shapes = read_shapes_file(shapes_file)
    try:
        net = plan_network(shapes, rank, ratio)
    except InfeasiblePlanError as exc:
        _exit_infeasible(exc)
    except ArgumentError as exc:
        raise click.ClickException(str(exc))
    header = f"{'name':<16} {'Q':>7} {'R':>7} {'m':>9} {'n':>7} {'ratio':>10} {'LCM(n,Q)':>12} floor"
    click.echo(header)
    for name, plan in net.layers:
        click.echo(
            f"{name:<16} {plan.q:>7} {plan.r_dim:>7} {plan.m:>9} {plan.n:>7} "
            f"{plan.achieved_ratio:>10.6f} {plan.lcm_nq:>12} "
            f"{'yes' if name in net.floor_hits else 'no'}")
    click.echo(f"total ratio {net.achieved_total_ratio:.6f} (target {ratio})")


@main.command("compress")
@click.argument("shapes_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--ratio", type=float, required=True)
@click.option("--rank", type=int, default=1, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--sigma", type=float, default=0.05, show_default=True,
              help="stddev of the reconstructed weights at initialization")
@click.option("--output", "-o", type=click.Path(dir_okay=False), required=True)
def cmd_compress(shapes_file, ratio, rank, seed, sigma, output):
    """Plan, randomly initialize, and serialize a compressed model."""
    shapes = read_shapes_file(shapes_file)
    try:
        net = plan_network(shapes, rank, ratio, bias_counts=[r for _, _, r in shapes])
    except InfeasiblePlanError as exc:
        _exit_infeasible(exc)
    rng = make_rng(seed)
    factors = [init_factors(plan, sigma, rng) for _, plan in net.layers]
    biases = [np.zeros(plan.r_dim) for _, plan in net.layers]
    model = CompressedModel(plans=net, factors=factors, biases=biases,
                            metadata={"seed": str(seed), "sigma": str(sigma)})
    written = save_model(model, output)
    assert written == expected_file_size(model)
    click.echo(f"wrote {output}: {written} bytes, "
               f"total ratio {net.achieved_total_ratio:.6f}")


@main.command("decompress")
@click.argument("model_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--output", "-o", type=click.Path(dir_okay=False), required=True,
              help="npz archive of dense matrices and biases")
def cmd_decompress(model_file, output):
    """Materialize every layer of a compressed model as dense arrays."""
    try:
        model = load_model(model_file)
    except ModelFormatError as exc:
        raise click.ClickException(str(exc))
    arrays = {}
    for (name, _), fp, bias in zip(model.plans.layers, model.factors, model.biases):
        arrays[name] = decompress(fp)
        arrays[f"{name}__bias"] = bias
    np.savez(output, **arrays)
    click.echo(f"wrote {output}: {len(model.factors)} layers")


@main.command("bench")
@click.option("--q", type=int, default=4096, show_default=True)
@click.option("--r", "r_dim", type=int, default=4096, show_default=True)
@click.option("--ratio", "ratios", type=float, multiple=True,
              help="repeatable; defaults to a grid around the reuse sweet spot")
@click.option("--batch", type=int, default=1, show_default=True)
@click.option("--threads", type=int, default=None)
@click.option("--repeat", type=int, default=5, show_default=True)
@click.option("--rank", type=int, default=1, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def cmd_bench(q, r_dim, ratios, batch, threads, repeat, rank, seed):
    """Median-of-repeat timing: fused kernel vs dense baselines (CSV)."""
    ratios = ratios or BENCH_RATIOS
    writer = csv.writer(sys.stdout)
    writer.writerow(["q", "r", "ratio", "batch", "threads", "dense_ms",
                     "dense_endtoend_ms", "fused_ms", "speedup",
                     "multiplies_dense", "multiplies_fused", "reuse_hits"])
    rng = make_rng(seed)
    for ratio in ratios:
        try:
            row = bench_one(q, r_dim, ratio, batch, threads, repeat, rank, rng)
        except InfeasiblePlanError as exc:
            click.echo(f"# ratio {ratio} infeasible: {exc}", err=True)
            continue
        writer.writerow(row)


def bench_one(q, r_dim, ratio, batch, threads, repeat, rank, rng):
    plan = plan_layer(q, r_dim, rank, ratio)
    fp = init_factors(plan, 0.05, rng)
    x = rng.standard_normal((batch, q))

    dense_w = decompress(fp)
    fused_matmul(x, fp, threads=threads)  # warm the layout cache
    matmul(x, dense_w)

    def timed(fn):
        best = []
        for _ in range(repeat):
            t0 = time.perf_counter()
            fn()
            best.append((time.perf_counter() - t0) * 1e3)
        return statistics.median(best)

    dense_ms = timed(lambda: matmul(x, dense_w))
    e2e_ms = timed(lambda: matmul(x, decompress(fp)))
    table = ReuseTable()
    _, ops = fused_matmul(x, fp, reuse=table, threads=threads)
    fused_ms = timed(lambda: fused_matmul(x, fp, threads=threads))
    return [q, r_dim, f"{plan.achieved_ratio:.6f}", batch, threads or 1,
            f"{dense_ms:.3f}", f"{e2e_ms:.3f}", f"{fused_ms:.3f}",
            f"{dense_ms / fused_ms:.2f}",
            q * r_dim * batch, ops.multiplies, table.hits]


@main.command("train")
@click.option("--task", type=click.Choice(TASKS), required=True)
@click.option("--method", type=click.Choice(METHODS), required=True)
@click.option("--ratio", type=float, required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--epochs", type=int, default=None)
@click.option("--lr", type=float, default=None)
@click.option("--batch-size", type=int, default=None)
def cmd_train(task, method, ratio, seed, epochs, lr, batch_size):
    """Train one method on a toy task; emits epoch,train_loss,val_loss CSV."""
    cfg = default_config(task, seed)
    cfg = TrainConfig(
        learning_rate=lr or cfg.learning_rate,
        epochs=epochs or cfg.epochs,
        batch_size=batch_size or cfg.batch_size,
        seed=seed, loss=cfg.loss, clip_norm=cfg.clip_norm)
    try:
        history = train_toy(task, method, ratio, cfg)
    except InfeasiblePlanError as exc:
        _exit_infeasible(exc)
    writer = csv.writer(sys.stdout)
    writer.writerow(["epoch", "train_loss", "val_loss"])
    for epoch, train_loss, val_loss in history:
        writer.writerow([epoch, f"{train_loss:.6f}", f"{val_loss:.6f}"])


@main.command("compare")
@click.option("--task", "tasks", type=click.Choice(TASKS), multiple=True,
              default=TASKS, show_default=True)
@click.option("--method", "methods", type=click.Choice(METHODS), multiple=True,
              default=("deepthin", "rank_fact", "hashed", "pruned", "dense"))
@click.option("--ratio", "ratios", type=float, multiple=True,
              default=(0.04, 0.02, 0.01), show_default=True)
@click.option("--seeds", type=int, default=1, show_default=True)
@click.option("--epochs", type=int, default=None, help="override per-task default")
def cmd_compare(tasks, methods, ratios, seeds, epochs):
    """Method-by-ratio grid of median final validation losses (CSV)."""
    writer = csv.writer(sys.stdout)
    writer.writerow(["task", "method", "ratio", "median_final_val_loss", "note"])
    for task in tasks:
        for method in methods:
            grid = (1.0,) if method == "dense" else ratios
            for ratio in grid:
                finals = []
                note = ""
                for seed in range(seeds):
                    cfg = default_config(task, seed)
                    if epochs:
                        cfg = TrainConfig(learning_rate=cfg.learning_rate,
                                          epochs=epochs, batch_size=cfg.batch_size,
                                          seed=seed, loss=cfg.loss,
                                          clip_norm=cfg.clip_norm)
                    try:
                        history = train_toy(task, method, ratio, cfg)
                    except InfeasiblePlanError as exc:
                        note = f"skipped: {exc}"
                        break
                    finals.append(history[-1][2])
                if finals:
                    writer.writerow([task, method, ratio,
                                     f"{statistics.median(finals):.6f}", note])
                else:
                    writer.writerow([task, method, ratio, "", note])


@main.command("check-grad")
@click.option("--q", type=int, default=9, show_default=True)
@click.option("--r", "r_dim", type=int, default=7, show_default=True)
@click.option("--n", type=int, default=5, show_default=True)
@click.option("--rank", type=int, default=1, show_default=True)
@click.option("--activation", type=click.Choice(["identity", "relu", "sigmoid", "tanh"]),
              default="tanh", show_default=True)
@click.option("--loss", type=click.Choice(["mse", "softmax_cross_entropy"]),
              default="mse", show_default=True)
@click.option("--tolerance", type=float, default=1e-4, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def cmd_check_grad(q, r_dim, n, rank, activation, loss, tolerance, seed):
    """Verify analytic gradients against central finite differences."""
    m = -(-(q * r_dim) // n)
    plan = LayerPlan(q=q, r_dim=r_dim, rank=rank, m=m, n=n)
    rng = make_rng(seed)
    fp = init_factors(plan, 0.7, rng)
    x = rng.standard_normal((4, q))
    bias = 0.1 * rng.standard_normal(r_dim)
    report = finite_diff_check(fp, x, bias, activation, loss, tolerance=tolerance)
    for group, err in report.errors.items():
        click.echo(f"{group:<6} max relative error {err:.3e}")
    click.echo(f"{'PASS' if report.passed else 'FAIL'} (tolerance {tolerance:g})")
    sys.exit(0 if report.passed else 1)


if __name__ == "__main__":
    main()
