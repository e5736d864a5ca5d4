"""
Reporting module for LogiGuide.
Writes sample tables, run manifests, guidance-weight sweeps and the HTML run report.
"""

import hashlib
import json
import logging
import os
import platform
from datetime import datetime

import markdown
import numpy as np
import pandas as pd
import scipy
from jinja2 import Environment, FileSystemLoader, select_autoescape
from markdown.extensions.nl2br import Nl2BrExtension
from markdown.extensions.tables import TableExtension

from core import __version__
from core.formula import evaluate_world

logger = logging.getLogger(__name__)

SWEEP_COLUMNS = ['w', 'conformity', 'joint_entropy_bits']


def config_hash(payload):
    """sha256 of the canonical JSON form of ``payload``."""
    text = json.dumps(payload, sort_keys=True, default=jsonable)
    return hashlib.sha256(text.encode('utf-8')).hexdigest()


def jsonable(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.integer, np.floating, np.bool_)):
        return value.item()
    if isinstance(value, (set, frozenset)):
        return sorted(value)
    raise TypeError(f"Not JSON serializable: {type(value).__name__}")


def versions():
    return {
        'logiguide': __version__,
        'python': platform.python_version(),
        'numpy': np.__version__,
        'scipy': scipy.__version__,
        'pandas': pd.__version__,
    }


def _label_columns(model, world):
    """One label column per categorical group, or the taxonomy node."""
    if model.kind == 'categorical':
        return {group.name: model.value_name(group.atoms[v])
                for group, v in zip(model.groups, world.values)}
    return {'label': world.label}


def samples_frame(batch, f, model):
    """
    Sample table: coordinates (or state index), MAP label per group and
    whether the labeled world satisfies ``f``.
    """
    samples = np.asarray(batch.samples)
    if samples.ndim == 1:
        frame = pd.DataFrame({'state': samples.astype(int)})
    else:
        frame = pd.DataFrame(samples, columns=[f"x{j}" for j in range(samples.shape[1])])
    labels = pd.DataFrame([_label_columns(model, w) for w in batch.worlds])
    frame = pd.concat([frame, labels], axis=1)
    if f is not None:
        frame['satisfies'] = [bool(evaluate_world(f, w)) for w in batch.worlds]
    return frame


def read_samples(path):
    """
    Read a samples CSV written by ``write_samples_csv``.

    Returns:
        tuple: (kind, samples) with kind 'discrete' or 'continuous'
    """
    frame = pd.read_csv(path)
    if 'state' in frame.columns:
        return 'discrete', frame['state'].to_numpy(dtype=int)
    coords = [c for c in frame.columns if c.startswith('x') and c[1:].isdigit()]
    if not coords:
        raise ValueError(f"{path} has neither a 'state' column nor coordinate columns")
    coords.sort(key=lambda c: int(c[1:]))
    return 'continuous', frame[coords].to_numpy(dtype=float)


def sweep_frame(rows):
    return pd.DataFrame(rows, columns=SWEEP_COLUMNS)


def metrics_markdown(summary, frequencies=None):
    """Markdown table of a metric summary, plus label frequencies when given."""
    lines = ['| Metric | Value |', '|---|---|']
    for key, value in summary.items():
        text = f"{value:.4f}" if isinstance(value, float) else str(value)
        lines.append(f"| {key} | {text} |")
    if frequencies:
        lines += ['', '| World | Fraction |', '|---|---|']
        lines += [f"| {label} | {share:.4f} |" for label, share in frequencies.items()]
    return '\n'.join(lines)


class ReportGenerator:
    """Generates run artifacts and the HTML report for sampling runs"""

    def __init__(self, template_dir=None):
        """
        Initialize the report generator.

        Args:
            template_dir (str, optional): Directory containing report templates
        """
        if template_dir is None:
            current_dir = os.path.dirname(os.path.abspath(__file__))
            template_dir = os.path.join(current_dir, 'templates')

        os.makedirs(template_dir, exist_ok=True)

        self.env = Environment(
            loader=FileSystemLoader(template_dir),
            autoescape=select_autoescape(['html', 'xml'])
        )

    def write_samples_csv(self, batch, f, model, output_dir, name='samples'):
        os.makedirs(output_dir, exist_ok=True)
        path = os.path.join(output_dir, f"{name}.csv")
        samples_frame(batch, f, model).to_csv(path, index=False, float_format='%.17g')
        logger.info(f"Wrote {len(batch)} samples to {path}")
        return path

    def write_sweep_csv(self, rows, output_dir, name='sweep'):
        """Conformity and entropy against guidance weight, one row per weight."""
        os.makedirs(output_dir, exist_ok=True)
        path = os.path.join(output_dir, f"{name}.csv")
        sweep_frame(rows).to_csv(path, index=False)
        logger.info(f"Wrote sweep of {len(rows)} weights to {path}")
        return path

    def write_manifest(self, output_dir, command, config, run, metrics=None, outputs=None,
                       name='manifest'):
        """
        Write the run manifest.

        Args:
            output_dir (str): Output directory
            command (str): Subcommand that produced the run
            config (dict): Global configuration in effect
            run (dict): Run inputs (model, query/circuit, sampler settings, seed)
            metrics (dict, optional): Metric summary
            outputs (list, optional): Files written by the run

        Returns:
            str: Path to the manifest JSON
        """
        os.makedirs(output_dir, exist_ok=True)
        manifest = {
            'command': command,
            'created': datetime.now().isoformat(timespec='seconds'),
            'config_sha256': config_hash({'config': config, 'run': run}),
            'seed': run.get('seed'),
            'versions': versions(),
            'config': config,
            'run': run,
            'metrics': metrics or {},
            'outputs': [os.path.basename(p) for p in outputs or []],
        }
        path = os.path.join(output_dir, f"{name}.json")
        with open(path, 'w', encoding='utf-8') as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True, default=jsonable)
        logger.info(f"Wrote manifest {path}")
        return path

    def generate_report(self, summary, output_dir, query=None, frequencies=None,
                        sweep_rows=None, run=None, title="LogiGuide Sampling Report"):
        """Render the metric table (and sweep, when present) to a timestamped HTML file."""
        os.makedirs(output_dir, exist_ok=True)

        md = markdown.Markdown(extensions=[TableExtension(), Nl2BrExtension()])
        metrics_html = md.convert(metrics_markdown(summary, frequencies))

        timestamp = datetime.now().strftime('%Y%m%d_%H%M%S')
        filepath = os.path.join(output_dir, f"logiguide_report_{timestamp}.html")

        html = self._generate_html(
            title=title,
            query=query,
            metrics_html=metrics_html,
            sweep_rows=sweep_rows or [],
            run=run or {},
        )

        with open(filepath, 'w', encoding='utf-8') as fh:
            fh.write(html)

        logger.info(f"Generated report: {filepath}")
        return filepath

    def _generate_html(self, title, query, metrics_html, sweep_rows, run):
        current_date = datetime.now().strftime('%B %d, %Y')

        try:
            template = self.env.get_template('report.html')
            return template.render(
                title=title,
                date=current_date,
                query=query,
                metrics_html=metrics_html,
                sweep_rows=sweep_rows,
                run=run,
                version=__version__,
            )
        except Exception as e:
            logger.warning(f"Template not found, using inline HTML: {e}")
            return self._generate_inline_html(title, current_date, query, metrics_html, sweep_rows, run)

    def _generate_inline_html(self, title, current_date, query, metrics_html, sweep_rows, run):
        env = Environment(autoescape=True)
        sweep = ''.join(
            f"<tr><td>{r['w']:g}</td><td>{r['conformity']:.4f}</td>"
            f"<td>{r['joint_entropy_bits']:.4f}</td></tr>"
            for r in sweep_rows
        )
        escape = env.filters['e']
        settings = ''.join(f"<li><b>{escape(k)}</b>: {escape(v)}</li>" for k, v in sorted(run.items()))
        return f"""<!DOCTYPE html>
<html lang="en">
<head>
    <meta charset="UTF-8">
    <title>{escape(title)}</title>
    <style>
        body {{ font-family: 'Segoe UI', Tahoma, Geneva, Verdana, sans-serif; color: #333; padding: 20px; }}
        table {{ border-collapse: collapse; margin: 10px 0; }}
        td, th {{ border: 1px solid #ddd; padding: 4px 10px; }}
        code {{ background: #f5f5f5; padding: 2px 4px; }}
    </style>
</head>
<body>
    <h1>{escape(title)}</h1>
    <p>{current_date} &middot; LogiGuide {__version__}</p>
    <p>Query: <code>{escape(query or '(none)')}</code></p>
    <h2>Metrics</h2>
    {metrics_html}
    <h2>Guidance weight sweep</h2>
    <table><tr><th>w</th><th>conformity</th><th>joint entropy (bits)</th></tr>{sweep}</table>
    <h2>Run</h2>
    <ul>{settings}</ul>
</body>
</html>
"""
