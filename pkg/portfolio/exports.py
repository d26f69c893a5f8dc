"""
CSV and JSON writers for command outputs.

CSV files always carry a header row. Floats are written with repr(), which
never depends on the locale, so identical runs give byte-identical files.
"""

import csv
import json
import math
from pathlib import Path

import numpy as np


def _native(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f'{type(value).__name__} is not JSON serializable')


def _finite(value):
    """Replace non-finite floats by strings; JSON has no inf or nan."""
    if isinstance(value, float) and not math.isfinite(value):
        return 'nan' if math.isnan(value) else ('inf' if value > 0 else '-inf')
    if isinstance(value, dict):
        return {k: _finite(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_finite(v) for v in value]
    return value


def write_json(path, data) -> Path:
    path = Path(path)
    data = json.loads(json.dumps(data, default=_native))
    with open(path, 'w', encoding='utf-8') as handle:
        json.dump(_finite(data), handle, indent=4, allow_nan=False)
        handle.write('\n')
    return path


def _cell(value):
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, np.integer):
        return int(value)
    return value


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    with open(path, 'w', newline='', encoding='utf-8') as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])
    return path


def export_surface(surface, path) -> Path:
    """Wide table: one row per time node, one column per filter node."""
    header = ['t'] + [f'x={x:.6f}' for x in surface.x]
    rows = ([t, *row] for t, row in zip(surface.t, surface.values))
    return write_csv(path, header, rows)


def export_world(world, path, events_path) -> tuple[Path, Path]:
    """World path as t, alpha, S, pi plus a separate (event_time, mark) table."""
    pi = world.pi if world.pi is not None else np.full(world.t.size, np.nan)
    main = write_csv(path, ['t', 'alpha', 'S', 'pi'], zip(world.t, world.alpha, world.S, pi))
    events = write_csv(events_path, ['event_time', 'mark'], zip(world.event_time, world.event_mark))
    return main, events


def export_filter_path(result, path, events_path) -> tuple[Path, Path]:
    innovations = np.append(result.innovations, np.nan)
    main = write_csv(path, ['t', 'pi', 'innovation'], zip(result.t, result.pi, innovations))
    events = write_csv(
        events_path,
        ['event_time', 'mark', 'pi_before', 'pi_after'],
        zip(result.event_time, result.event_mark, result.event_pre, result.event_post),
    )
    return main, events


def export_strategy(tt, xx, invest, consume, values, path) -> Path:
    header = ['t', 'x', 'Lambda', 'invest_per_wealth', 'consume_per_wealth']
    columns = (a.ravel() for a in (tt, xx, values, invest, consume))
    return write_csv(path, header, zip(*columns))


SUMMARY_HEADER = ['check', 'mean', 'stderr', 'paths', 'dt', 'seed', 'target', 'tolerance', 'passed', 'error']


def export_summary(rows, path) -> Path:
    """One row per verification check; `rows` holds report dicts or error dicts."""
    table = (
        [row.get(key) if row.get(key) is not None else '' for key in
         ('name', 'mean', 'stderr', 'paths', 'dt', 'seed', 'target', 'tolerance', 'passed', 'error')]
        for row in rows
    )
    return write_csv(path, SUMMARY_HEADER, table)
