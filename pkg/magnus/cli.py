import sys
from dataclasses import asdict
from functools import wraps
from typing import Optional

import click
import pandas as pd
from loguru import logger
from tabulate import tabulate

from . import config
from .bench import (IdealBoundInputs, StreamSpec, accumulator_crossover, ideal_bound, matrix_stats,
                    measure_bandwidth, microbench_accumulators, microbench_sweep, records_frame,
                    write_records)
from .errors import ConfigError, InputError, MagnusError
from .matrix_io import BINARY_SUFFIX, load_matrix, save_matrix
from .planner import resolve_system_params
from .runner import (GENERATORS, SPGEMM_ALGORITHMS, GeneratorSpec, SpgemmConfig, VerifyConfig,
                     run_spgemm_command, summarize_runs, verify_command)

EXIT_FAILURE = 1


def _usage_errors(fn):
    """Configuration and input errors end the command with exit status 2."""
    @wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ConfigError, InputError) as e:
            logger.error(f'{type(e).__name__}: {e}')
            raise click.UsageError(str(e)) from None
    return wrapper


def _settings(ctx: click.Context) -> config.Settings:
    return ctx.obj['settings']


def _pick(value, fallback):
    return fallback if value is None else value


def _print_table(frame: pd.DataFrame, floatfmt: str = '.6g') -> None:
    click.echo(tabulate(frame, headers='keys', tablefmt='github', showindex=False, floatfmt=floatfmt))


def _system_options(fn):
    fn = click.option('--mem-budget', type=int, default=None, help='Coarse batch memory budget in bytes.')(fn)
    fn = click.option('--cache-line', type=int, default=None, help='Cache line size in bytes.')(fn)
    fn = click.option('--l2-bytes', type=int, default=None, help='L2 cache size in bytes.')(fn)
    return fn


def _output_options(fn):
    fn = click.option('--json', 'json_path', type=click.Path(dir_okay=False), default=None,
                      help='Write records as JSON.')(fn)
    fn = click.option('--csv', 'csv_path', type=click.Path(dir_okay=False), default=None,
                      help='Write records as CSV.')(fn)
    return fn


@click.group()
@click.option('--log-level', default=None, help='loguru level (DEBUG, INFO, WARNING, ...).')
@click.option('--env-file', type=click.Path(dir_okay=False), default=None, help='Alternative .env file.')
@click.pass_context
def cli(ctx: click.Context, log_level: Optional[str], env_file: Optional[str]) -> None:
    """MAGNUS sparse matrix-matrix multiplication bench."""
    try:
        settings = config.load_settings(env_file)
    except ConfigError as e:
        raise click.UsageError(str(e)) from None
    level = (log_level or settings.log_level).upper()
    logger.remove()
    logger.add(sys.stderr, level=level)
    ctx.ensure_object(dict)
    ctx.obj['settings'] = settings


@cli.command()
@click.argument('kind', type=click.Choice(GENERATORS))
@click.argument('output', type=click.Path(dir_okay=False))
@click.option('--scale', type=int, default=10, show_default=True, help='R-mat: 2^scale rows.')
@click.option('--edge-factor', type=int, default=16, show_default=True, help='R-mat: nonzeros per row.')
@click.option('--rows', 'n_rows', type=int, default=1024, show_default=True)
@click.option('--cols', 'n_cols', type=int, default=1024, show_default=True)
@click.option('--nnz-per-row', type=int, default=16, show_default=True, help='Uniform random: nonzeros per row.')
@click.option('--half-bandwidth', type=int, default=8, show_default=True, help='Banded: half bandwidth.')
@click.option('--random-values', is_flag=True, help='Values uniform in (0, 1] instead of 1.0.')
@click.option('--format', 'fmt', type=click.Choice(['mtx', 'binary']), default='mtx', show_default=True)
@click.option('--seed', type=int, default=None)
@click.pass_context
@_usage_errors
def gen(ctx, kind, output, scale, edge_factor, n_rows, n_cols, nnz_per_row, half_bandwidth, random_values,
        fmt, seed):
    """Generate a matrix and write it as Matrix Market or binary cache."""
    spec = GeneratorSpec(kind, scale, edge_factor, n_rows, n_cols, nnz_per_row, half_bandwidth,
                         _pick(seed, _settings(ctx).seed), random_values)
    matrix = spec.build()
    if fmt == 'binary' and not output.endswith(BINARY_SUFFIX):
        output += BINARY_SUFFIX
    save_matrix(matrix, output)
    logger.info(f'Wrote {spec.describe()} ({matrix.n_rows}x{matrix.n_cols}, nnz={matrix.nnz}) to {output}')


@cli.command()
@click.option('--matrix', type=click.Path(exists=True, dir_okay=False), default=None,
              help='Left operand; a generated R-mat matrix when omitted.')
@click.option('--other', type=click.Path(exists=True, dir_okay=False), default=None,
              help='Right operand; the left operand when omitted.')
@click.option('--gen', 'gen_kind', type=click.Choice(GENERATORS), default='rmat', show_default=True)
@click.option('--scale', type=int, default=10, show_default=True)
@click.option('--algo', 'algorithms', multiple=True, type=click.Choice(SPGEMM_ALGORITHMS),
              default=('magnus',), show_default=True)
@click.option('--reps', type=int, default=None)
@click.option('--threads', type=int, default=None)
@click.option('--seed', type=int, default=None)
@click.option('--force-fine-only', is_flag=True, help='Disable the coarse level.')
@click.option('--bandwidth', type=float, default=None, help='Bytes per second for the ideal bound.')
@click.option('--no-verify', is_flag=True, help='Skip comparison against the oracle.')
@_system_options
@_output_options
@click.pass_context
@_usage_errors
def spgemm(ctx, matrix, other, gen_kind, scale, algorithms, reps, threads, seed, force_fine_only, bandwidth,
           no_verify, l2_bytes, cache_line, mem_budget, csv_path, json_path):
    """Time C = A B for the selected algorithms."""
    settings = _settings(ctx)
    if force_fine_only:
        algorithms = tuple('magnus-fine-only' if a == 'magnus' else a for a in algorithms)
    cfg = SpgemmConfig(
        algorithms=tuple(dict.fromkeys(algorithms)), matrix=matrix, other=other,
        generator=GeneratorSpec(gen_kind, scale=scale, seed=_pick(seed, settings.seed)),
        reps=_pick(reps, settings.reps), threads=_pick(threads, settings.threads),
        system=resolve_system_params(cache_line, l2_bytes, mem_budget, settings),
        bandwidth=bandwidth, verify=not no_verify)
    frame = run_spgemm_command(cfg)
    write_records(frame, csv_path, json_path)
    _print_table(summarize_runs(frame))
    if not frame['verified'].all():
        ctx.exit(EXIT_FAILURE)


@cli.command()
@click.option('--size', type=int, default=1 << 20, show_default=True, help='Stream elements.')
@click.option('--length', type=int, default=1 << 20, show_default=True, help='Exclusive index bound.')
@click.option('--chunks', 'n_chunks', type=int, multiple=True, default=(256,), show_default=True)
@click.option('--sweep', is_flag=True, help='Every power of two from 1 to the stream length.')
@click.option('--accumulators', is_flag=True, help='Sort against dense accumulation over stream sizes.')
@click.option('--reps', type=int, default=None)
@click.option('--threads', type=int, default=1, show_default=True)
@click.option('--seed', type=int, default=None)
@_output_options
@click.pass_context
@_usage_errors
def microbench(ctx, size, length, n_chunks, sweep, accumulators, reps, threads, seed, csv_path, json_path):
    """Building-block microbenchmarks of the fine level."""
    settings = _settings(ctx)
    reps = _pick(reps, settings.reps)
    if reps < 1:
        raise ConfigError(f'repetitions must be at least 1, got {reps}')
    seed = _pick(seed, settings.seed)
    if accumulators:
        sizes = [1 << k for k in range(4, max(5, size.bit_length()))]
        records = microbench_accumulators(sizes, length, seed, reps)
        click.echo(f'crossover: {accumulator_crossover(records)}')
    else:
        spec = StreamSpec(size, length, seed)
        counts = [1 << k for k in range((length - 1).bit_length() + 1)] if sweep else list(n_chunks)
        records = microbench_sweep(spec, counts, reps, threads)
    frame = records_frame(records)
    write_records(frame, csv_path, json_path)
    summary = frame.groupby(['params', 'algorithm'], sort=False)['seconds'].agg(['mean', 'min']).reset_index()
    _print_table(summary)
    if not frame['checksum_ok'].all():
        ctx.exit(EXIT_FAILURE)


@cli.command()
@click.option('--matrix', type=click.Path(exists=True, dir_okay=False), default=None)
@click.option('--n-a', type=int, default=None)
@click.option('--nnz-a', type=int, default=None)
@click.option('--n-inter-prod', type=int, default=None)
@click.option('--n-c', type=int, default=None)
@click.option('--nnz-c', type=int, default=None)
@click.option('--s-row-ptr', type=int, default=config.ROW_PTR_BYTES, show_default=True)
@click.option('--s-col-idx', type=int, default=4, show_default=True)
@click.option('--s-val', type=int, default=config.VAL_BYTES, show_default=True)
@click.option('--bandwidth', type=float, required=True, help='Bytes per second.')
@_usage_errors
def bound(matrix, n_a, nnz_a, n_inter_prod, n_c, nnz_c, s_row_ptr, s_col_idx, s_val, bandwidth):
    """Ideal time of A A (with --matrix) or of the given counts."""
    if matrix:
        a = load_matrix(matrix)
        stats = matrix_stats(a)
        n_a, nnz_a, n_inter_prod, n_c, nnz_c = a.n_rows, a.nnz, stats.n_inter_prod, a.n_rows, stats.nnz_c
        s_col_idx = a.col_index_bytes
    counts = (n_a, nnz_a, n_inter_prod, n_c, nnz_c)
    if any(v is None for v in counts):
        raise ConfigError('give --matrix or all of --n-a --nnz-a --n-inter-prod --n-c --nnz-c')
    result = ideal_bound(IdealBoundInputs(*counts, s_row_ptr, s_col_idx, s_val, bandwidth))
    click.echo(tabulate([[result.read_volume, result.write_volume, result.t_ideal]],
                        headers=['read_bytes', 'write_bytes', 't_ideal_s'], tablefmt='github'))


@cli.command()
@click.option('--bytes', 'n_bytes', type=int, default=config.BANDWIDTH_BYTES, show_default=True)
@click.option('--reps', type=int, default=5, show_default=True)
@_usage_errors
def bandwidth(n_bytes, reps):
    """Streaming copy bandwidth of this host."""
    result = measure_bandwidth(n_bytes, reps)
    click.echo(f'{result.rate:.6g} bytes/s ({result.rate / 1e9:.3f} GB/s)')


@cli.command()
@click.option('--cases', type=int, default=200, show_default=True)
@click.option('--wide-cases', type=int, default=12, show_default=True)
@click.option('--seed', type=int, default=None)
@click.option('--threads', type=int, default=1, show_default=True)
@click.option('--random-values', is_flag=True, help='Compare with a relative tolerance.')
@click.option('--inject-fault', default=None, help='Corrupt the output of the named case (or "all").')
@click.option('--verbose', is_flag=True, help='Print every case.')
@click.pass_context
@_usage_errors
def verify(ctx, cases, wide_cases, seed, threads, random_values, inject_fault, verbose):
    """Compare every algorithm with the reference product over a random corpus."""
    cfg = VerifyConfig(cases=cases, wide_cases=wide_cases, seed=_pick(seed, _settings(ctx).seed),
                       threads=threads, random_values=random_values, inject_fault=inject_fault)
    report = verify_command(cfg)
    rows = report.table()
    shown = rows if verbose else [r for r in rows if r[-1] == 'FAIL']
    if shown:
        click.echo(tabulate(shown, headers=['case', 'algorithm', 'passed', 'result'], tablefmt='github'))
    click.echo(tabulate([report.category_rows], headers='keys', tablefmt='github'))
    n_failed = len(report.failures)
    click.echo(f'{len(report.cases) - n_failed}/{len(report.cases)} runs passed')
    if not report.passed:
        ctx.exit(EXIT_FAILURE)


@cli.command()
@click.argument('matrix', type=click.Path(exists=True, dir_okay=False))
@click.option('--other', type=click.Path(exists=True, dir_okay=False), default=None)
@click.option('--threads', type=int, default=None)
@click.pass_context
@_usage_errors
def stats(ctx, matrix, other, threads):
    """Size, intermediate products and compression ratio of A B."""
    a = load_matrix(matrix)
    b = load_matrix(other) if other else None
    result = matrix_stats(a, b, _pick(threads, _settings(ctx).threads))
    click.echo(tabulate([asdict(result)], headers='keys', tablefmt='github'))


def main() -> None:
    try:
        cli(auto_envvar_prefix=config.ENV_PREFIX.rstrip('_'))
    except MagnusError as e:
        logger.error(f'{type(e).__name__}: {e}')
        sys.exit(EXIT_FAILURE)


if __name__ == '__main__':
    main()
