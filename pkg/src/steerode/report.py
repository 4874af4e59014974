"""Flat config files, CSV output and small SVG line charts.

Config files hold one ``key = value`` pair per line; ``#`` starts a comment.
CSV files start with a ``#`` metadata block, use ``,`` and LF, and print
floats with 17 significant digits so they round-trip exactly.
"""
from __future__ import annotations

import csv
import difflib
import hashlib
import math
from dataclasses import fields, is_dataclass
from pathlib import Path
from typing import Iterable, Sequence

from . import __version__
from .errors import ConfigError, ContractError, SteerError


def parse_kv_file(path) -> dict[str, tuple[str, int]]:
    """Raw ``key -> (value, line number)`` pairs of a flat config file."""
    out: dict[str, tuple[str, int]] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}",
                              key=f"line {lineno}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{path}:{lineno}: empty key", key=f"line {lineno}")
        out[key] = (value, lineno)
    return out


def unknown_key_error(key: str, known: Iterable[str]) -> ConfigError:
    near = difflib.get_close_matches(key, list(known), n=1)
    hint = f"; did you mean {near[0]!r}?" if near else ""
    return ConfigError(f"unknown config key {key!r}{hint}", key=key)


def convert(key: str, text: str, like):
    """Parse ``text`` to the type of the default value ``like``."""
    try:
        if isinstance(like, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(like, int):
            return int(text)
        if isinstance(like, float):
            return float(text)
        if isinstance(like, tuple):
            return tuple(int(v) for v in text.replace(",", " ").split())
        return text
    except ValueError:
        raise ConfigError(f"bad value {text!r} for {key!r}", key=key) from None


def load_config(path, defaults: dict) -> dict:
    """Values from ``path`` typed after ``defaults``; unknown keys are errors."""
    values = dict(defaults)
    if path is None:
        return values
    if not Path(path).is_file():
        raise ConfigError(f"config file {path} not found", key="config")
    for key, (text, lineno) in parse_kv_file(path).items():
        if key not in defaults:
            err = unknown_key_error(key, defaults)
            raise ConfigError(f"{path}:{lineno}: {err}", key=key)
        values[key] = convert(key, text, defaults[key])
    return values


def dataclass_defaults(cls) -> dict:
    if not is_dataclass(cls):
        raise ContractError("expected a dataclass type")
    return {f.name: getattr(cls(), f.name) for f in fields(cls)}


def fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return format(v, ".17g")
    if isinstance(v, (tuple, list)):
        return " ".join(fmt(x) for x in v)
    if hasattr(v, "item"):
        return fmt(v.item())
    return str(v)


def config_hash(meta: dict) -> str:
    text = "\n".join(f"{k}={fmt(meta[k])}" for k in sorted(meta))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def meta_lines(meta: dict) -> list[str]:
    lines = [f"# steerode {__version__}"]
    lines += [f"# {k} = {fmt(v)}" for k, v in meta.items()]
    return lines


class CsvWriter:
    """Single writer per file; rows are flushed as they arrive."""

    def __init__(self, path, header: Sequence[str], meta: dict):
        self.path = Path(path)
        self.header = list(header)
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(self.path, "w", newline="")
        except OSError as exc:
            raise SteerError(f"cannot write {self.path}: {exc}") from exc
        for line in meta_lines(meta):
            self._fh.write(line + "\n")
        self._w = csv.writer(self._fh, lineterminator="\n")
        self._w.writerow(self.header)

    def write(self, row):
        if isinstance(row, dict):
            row = [row[k] for k in self.header]
        if len(row) != len(self.header):
            raise ContractError(f"row has {len(row)} fields, header has {len(self.header)}")
        self._w.writerow([fmt(v) for v in row])
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_csv(path, header: Sequence[str], rows: Iterable, meta: dict) -> Path:
    with CsvWriter(path, header, meta) as w:
        for row in rows:
            w.write(row)
    return Path(path)


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    """Header and rows of a CSV written by :func:`write_csv`, skipping the metadata."""
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    return rows[0], rows[1:]


PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")


def emit_svg(series: Sequence, path, title: str = "", log_y: bool = False,
             xlabel: str = "x", ylabel: str = "y", meta: dict | None = None,
             width: int = 640, height: int = 400) -> Path:
    """Standalone line chart. ``series`` is a list of ``(label, [(x, y), ...])``."""
    if not series or any(len(pts) == 0 for _, pts in series):
        raise ContractError("emit_svg needs at least one non-empty series")
    tf = (lambda y: math.log10(y)) if log_y else (lambda y: y)
    clean = []
    for label, pts in series:
        keep = [(float(x), float(y)) for x, y in pts
                if math.isfinite(x) and math.isfinite(y) and (not log_y or y > 0)]
        clean.append((label, [(x, tf(y)) for x, y in keep]))
    allpts = [p for _, pts in clean for p in pts]
    if not allpts:
        raise ContractError("no plottable points")
    x0, x1 = min(p[0] for p in allpts), max(p[0] for p in allpts)
    y0, y1 = min(p[1] for p in allpts), max(p[1] for p in allpts)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    ml, mr, mt, mb = 70, 20, 40, 50
    pw, ph = width - ml - mr, height - mt - mb

    def sx(x):
        return ml + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return mt + ph - (y - y0) / (y1 - y0) * ph

    out = ['<?xml version="1.0" encoding="UTF-8"?>']
    stamp = config_hash(meta or {"title": title})
    out.append(f"<!-- steerode {__version__} config-hash {stamp} -->")
    out.append(f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
               f'font-family="sans-serif" font-size="11">')
    out.append(f'<rect width="{width}" height="{height}" fill="white"/>')
    out.append(f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="13">'
               f"{_esc(title)}</text>")
    out.append(f'<line x1="{ml}" y1="{mt + ph}" x2="{ml + pw}" y2="{mt + ph}" stroke="black"/>')
    out.append(f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{mt + ph}" stroke="black"/>')
    for i in range(5):
        xv = x0 + (x1 - x0) * i / 4
        yv = y0 + (y1 - y0) * i / 4
        ylab = f"1e{yv:.2g}" if log_y else f"{yv:.3g}"
        out.append(f'<text x="{sx(xv):.1f}" y="{mt + ph + 15}" text-anchor="middle">{xv:.3g}</text>')
        out.append(f'<text x="{ml - 5}" y="{sy(yv) + 4:.1f}" text-anchor="end">{ylab}</text>')
    out.append(f'<text x="{ml + pw / 2:.1f}" y="{height - 10}" text-anchor="middle">'
               f"{_esc(xlabel)}</text>")
    out.append(f'<text x="15" y="{mt + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 15 {mt + ph / 2:.1f})">{_esc(ylabel)}'
               f'{" (log10)" if log_y else ""}</text>')
    for i, (label, pts) in enumerate(clean):
        color = PALETTE[i % len(PALETTE)]
        coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in pts)
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
                   f'points="{coords}"/>')
        ly = mt + 12 + 14 * i
        out.append(f'<line x1="{ml + pw - 120}" y1="{ly}" x2="{ml + pw - 100}" y2="{ly}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{ml + pw - 95}" y="{ly + 4}">{_esc(label)}</text>')
    out.append("</svg>")
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(out) + "\n")
    except OSError as exc:
        raise SteerError(f"cannot write {path}: {exc}") from exc
    return path


def _esc(s: str) -> str:
    return str(s).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
