#!/usr/bin/env python3
"""
LogiGuide - Logical guidance for diffusion samplers

Compiles Boolean queries into guidance circuits, evaluates them against
analytic diffusion testbeds, and runs guided sampling with conformity and
diversity reporting.
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

# Add current directory to path
sys.path.insert(0, str(Path(__file__).parent))

from core.calculus import EvalSettings, atomic_coefficients, eval_circuit, eval_transition
from core.circuit import (
    circuit_from_formula, circuit_to_formula, format_circuit, parse_circuit, validate_structure
)
from core.compiler import check_equivalence, compile_formula
from core.config import load_config
from core.errors import LogiGuideError, VerificationError, error_line
from core.formula import TRUE, format_formula, parse_formula
from core.metrics import label_frequencies, summarize
from core.model import load_model
from core.reporting import ReportGenerator, jsonable, metrics_markdown, read_samples
from core.sampler import SampleBatch, SamplerConfig, sample_continuous, sample_discrete
from core.validation import print_validation_results
from core.verification import compilation_campaign, continuous_campaign, discrete_campaign
from testbeds import TESTBEDS, get_testbed

logger = logging.getLogger('logiguide')

DEFAULT_MODEL = str(Path(__file__).parent / 'models' / 'default.json')


def setup_logging(config, verbose=False):
    """File handler under logs/ plus a stderr stream, so stdout stays machine-readable."""
    settings = config.get('logging', {})
    log_file = Path(settings.get('file', 'logs/logiguide.log'))
    log_file.parent.mkdir(parents=True, exist_ok=True)
    level = logging.DEBUG if verbose else getattr(logging, str(settings.get('level', 'INFO')).upper(),
                                                    logging.INFO)
    logging.basicConfig(
        level=level,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[
            logging.FileHandler(log_file),
            logging.StreamHandler(sys.stderr)
        ],
        force=True
    )


def parse_arguments(argv=None):
    """Parse command line arguments"""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', '-c', default=None,
                        help='Path to configuration file (default: config.yaml if present)')
    common.add_argument('--model', '-m', default=DEFAULT_MODEL,
                        help='Path to model JSON file')
    common.add_argument('--seed', type=int, default=0,
                        help='Random seed')
    common.add_argument('--exact-mode', action='store_true',
                        help='No clamping or score cap; raise on singular or inconsistent inputs')
    common.add_argument('--verbose', '-v', action='store_true',
                        help='Enable verbose logging')

    query = argparse.ArgumentParser(add_help=False)
    query.add_argument('--query', '-q', help='Formula, e.g. "(color.red & shape.circle) | shape.square"')
    query.add_argument('--circuit', help='Circuit s-expression, or a file holding one')
    query.add_argument('--testbed', choices=sorted(TESTBEDS), default='gmm',
                       help='Analytic testbed (default: gmm)')

    sampling = argparse.ArgumentParser(add_help=False)
    sampling.add_argument('--n', type=int, default=1000, help='Number of samples')
    sampling.add_argument('--steps', type=int, default=None, help='Reverse-SDE steps')
    sampling.add_argument('--w', type=float, default=None, help='Guidance weight')
    sampling.add_argument('--w-not', type=float, default=None, help='Repulsion weight')
    sampling.add_argument('--repulsive', action='store_true',
                          help='Repel each atom from its most probable competitor')
    sampling.add_argument('--posterior-mode', choices=['exact', 'estimated'], default='exact',
                          help='Atom posteriors from the testbed or estimated from conditional scores')
    sampling.add_argument('--or-weighting', choices=['exact', 'constant'], default='exact',
                          help='Posterior-weighted OR rules, or the constant 0.5/0.5 baseline')
    sampling.add_argument('--guidance-scaling', choices=['formula', 'atom'], default=None,
                          help='Apply w to the logical score or to each atomic score')
    sampling.add_argument('--out-dir', '-o', default='output', help='Output directory')

    parser = argparse.ArgumentParser(
        prog='logiguide',
        description='LogiGuide - Logical guidance for diffusion samplers'
    )
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('compile', parents=[common, query], help='Compile a formula into a guidance circuit')
    p.add_argument('--direct', action='store_true',
                   help='Map a formula with pinned |ME / |CI directly to a circuit instead of compiling')
    p.add_argument('--save', help='Write the circuit s-expression to this file')

    p = sub.add_parser('eval', parents=[common, query], help='Evaluate a circuit at probe points')
    p.add_argument('--t', type=float, default=0.5, help='Diffusion time (gmm)')
    p.add_argument('--x', help='Comma-separated probe state (gmm); default draws --n-probes states')
    p.add_argument('--n-probes', type=int, default=3, help='Random probes drawn from the forward process')
    p.add_argument('--step', type=int, default=None, help='Discrete step (default: last)')
    p.add_argument('--state', type=int, default=None, help='Discrete state (default: every state)')

    p = sub.add_parser('verify', parents=[common], help='Random-formula oracle campaign')
    p.add_argument('--testbed', choices=sorted(TESTBEDS) + ['all'], default='all')
    p.add_argument('--n-formulas', type=int, default=None)
    p.add_argument('--n-probes', type=int, default=None)

    sub.add_parser('sample', parents=[common, query, sampling], help='Guided generation to CSV + manifest')

    p = sub.add_parser('report', parents=[common, query, sampling],
                       help='Conformity/entropy table, guidance-weight sweep and HTML report')
    p.add_argument('--samples', help='Samples CSV from a previous sample run (default: sample now)')
    p.add_argument('--sweep', help='Comma-separated guidance weights, e.g. 0,0.5,1,2,4')

    return parser.parse_args(argv)


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------

def resolve_query(args, model, config):
    """
    Formula and circuit from --query or --circuit.

    Returns:
        tuple: (formula or None, circuit or None, CompilationResult or None)
    """
    if args.query and args.circuit:
        raise ValueError("Give either --query or --circuit, not both")
    limits = config['limits']
    if args.circuit:
        text = args.circuit
        if os.path.exists(text):
            with open(text, 'r', encoding='utf-8') as f:
                text = f.read()
        circuit = parse_circuit(text, model.registry)
        return circuit_to_formula(circuit), circuit, None
    if args.query:
        f = parse_formula(args.query, model.registry)
        result = compile_formula(f, model, fdnf_cap=limits['fdnf_atoms'], world_cap=limits['worlds'])
        return f, result.circuit, result
    return None, None, None


def eval_settings(args, config):
    if args.exact_mode:
        return EvalSettings.exact_mode()
    return EvalSettings.from_config(config, or_weighting=getattr(args, 'or_weighting', 'exact'))


def sampler_config(args, config, w=None):
    return SamplerConfig.from_config(
        config,
        steps=args.steps,
        w=args.w if w is None else w,
        w_not=args.w_not,
        repulsive=args.repulsive,
        posterior_source=args.posterior_mode,
        guidance_scaling=args.guidance_scaling,
        or_weighting=args.or_weighting,
        exact=args.exact_mode,
        seed=args.seed,
    )


def draw(testbed, circuit, cfg, n):
    if testbed.name == 'discrete':
        return sample_discrete(testbed, circuit, cfg, n)
    return sample_continuous(testbed, circuit, cfg, n)


def run_description(args, model, testbed, f, circuit, cfg=None):
    run = {
        'model': model.name,
        'model_path': os.path.abspath(args.model),
        'testbed': testbed.describe(),
        'query': format_formula(f, model.registry) if f is not None else None,
        'circuit': format_circuit(circuit, model.registry) if circuit is not None else None,
        'seed': args.seed,
    }
    if cfg is not None:
        run['sampler'] = cfg.to_dict()
    return run


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_compile(args, config, model):
    if not args.query:
        raise ValueError("compile needs --query")
    f = parse_formula(args.query, model.registry)
    if args.direct:
        circuit = circuit_from_formula(f)
        report = validate_structure(circuit, model)
        equivalent = check_equivalence(f, circuit, model)
        valid = report.ok
        print(f"circuit: {format_circuit(circuit, model.registry)}")
        if not valid:
            print_validation_results({'circuit': report})
    else:
        limits = config['limits']
        result = compile_formula(f, model, fdnf_cap=limits['fdnf_atoms'], world_cap=limits['worlds'])
        circuit, equivalent, valid = result.circuit, result.equivalent, result.valid
        print(f"circuit: {format_circuit(circuit, model.registry)}")
        print(f"worlds: {result.n_terms}/{result.n_worlds}")
        if result.degenerate:
            print("degenerate: zero score")
    print(f"equivalent: {str(equivalent).lower()}")
    print(f"valid: {str(valid).lower()}")

    if args.save:
        with open(args.save, 'w', encoding='utf-8') as fh:
            fh.write(format_circuit(circuit, model.registry) + '\n')
        logger.info(f"Saved circuit to {args.save}")
    return 0 if equivalent and valid else 1


def _continuous_probes(args, testbed):
    if args.x:
        x = np.array([float(v) for v in args.x.split(',')])
        return args.t, x[None, :]
    rng = np.random.default_rng(args.seed)
    x0, _ = testbed.sample_terminal(args.n_probes, rng)
    a = float(testbed.schedule.alpha(args.t))
    sigma = np.sqrt(float(testbed.schedule.noise_variance(args.t)))
    return args.t, a * x0 + sigma * rng.standard_normal(x0.shape)


def cmd_eval(args, config, model, testbed):
    f, circuit, _ = resolve_query(args, model, config)
    if circuit is None:
        raise ValueError("eval needs --query or --circuit")
    settings = eval_settings(args, config)
    names = model.registry.names
    records = []

    if testbed.name == 'discrete':
        step = testbed.steps if args.step is None else args.step
        states = range(testbed.n_states) if args.state is None else [args.state]
        for x in states:
            out = eval_transition(circuit, testbed.atomic_inputs(step, x), settings)
            oracle_posterior, oracle_row = testbed.formula_oracle(f, step, x)
            records.append({
                'step': step, 'state': x, 'world': testbed.worlds[x].label,
                'posterior': out.posterior, 'row': out.row,
                'oracle_posterior': oracle_posterior, 'oracle_row': oracle_row,
                'flags': sorted(out.flags),
            })
    else:
        t, xs = _continuous_probes(args, testbed)
        inputs = testbed.atomic_inputs(t, xs)
        out = eval_circuit(circuit, inputs, settings)
        coefficients = atomic_coefficients(circuit, inputs, settings).as_dict()
        oracle_posterior, oracle_score = testbed.formula_oracle(f, t, xs)
        for i in range(len(xs)):
            records.append({
                't': t, 'x': xs[i],
                'posterior': out.posterior[i], 'score': out.score[i],
                'coefficients': {names[a]: v[i] for a, v in coefficients.items()},
                'oracle_posterior': oracle_posterior[i], 'oracle_score': oracle_score[i],
                'flags': sorted(out.flags),
            })

    print(json.dumps({
        'circuit': format_circuit(circuit, model.registry),
        'testbed': testbed.name,
        'exact_mode': settings.exact,
        'probes': records,
    }, indent=2, default=jsonable))
    return 0


def cmd_verify(args, config, model, testbed_config):
    section = config['verify']
    n_formulas = section['n_formulas'] if args.n_formulas is None else args.n_formulas
    n_probes = section['n_probes'] if args.n_probes is None else args.n_probes
    if n_formulas < 1 or n_probes < 1:
        raise ValueError(f"Campaign sizes must be positive, got {n_formulas} formulas and {n_probes} probes")
    n_ops = tuple(section['n_ops'])
    neg_prob = section['neg_prob']
    tolerances = section.get('tolerances', {})
    summaries = []

    summaries.append(compilation_campaign(model, n_formulas=n_formulas, seed=args.seed,
                                          n_ops=n_ops, neg_prob=neg_prob))
    if args.testbed in ('gmm', 'all'):
        g = get_testbed('gmm', model, testbed_config)
        summary = continuous_campaign(g, n_formulas=n_formulas, n_probes=n_probes, seed=args.seed,
                                      n_ops=n_ops, neg_prob=neg_prob)
        summary.check_tolerances(tolerances.get('continuous'))
        summaries.append(summary)
    if args.testbed in ('discrete', 'all'):
        dd = get_testbed('discrete', model, testbed_config)
        summary = discrete_campaign(dd, n_formulas=n_formulas, seed=args.seed,
                                    n_ops=n_ops, neg_prob=neg_prob)
        summary.check_tolerances(tolerances.get('discrete'))
        summaries.append(summary)

    for summary in summaries:
        print('\n'.join(summary.lines()))
    failed = [s.name for s in summaries if not s.ok]
    if failed:
        raise VerificationError(f"Campaign(s) failed: {', '.join(failed)}")
    return 0


def cmd_sample(args, config, model, testbed):
    f, circuit, _ = resolve_query(args, model, config)
    cfg = sampler_config(args, config)
    batch = draw(testbed, circuit, cfg, args.n)
    target = f if f is not None else TRUE
    metrics = summarize(batch, target)

    generator = ReportGenerator()
    samples_path = generator.write_samples_csv(batch, f, model, args.out_dir)
    manifest_path = generator.write_manifest(
        args.out_dir, 'sample', config, run_description(args, model, testbed, f, circuit, cfg),
        metrics=dict(metrics, flags=sorted(batch.flags)), outputs=[samples_path])

    print(metrics_markdown(metrics))
    print(f"samples: {samples_path}")
    print(f"manifest: {manifest_path}")
    return 0


def cmd_report(args, config, model, testbed):
    f, circuit, _ = resolve_query(args, model, config)
    target = f if f is not None else TRUE
    cfg = sampler_config(args, config)

    if args.samples:
        kind, samples = read_samples(args.samples)
        expected = 'discrete' if testbed.name == 'discrete' else 'continuous'
        if kind != expected:
            raise ValueError(f"{args.samples} holds {kind} samples but the testbed is {testbed.name}")
        batch = SampleBatch(samples, cfg, args.seed, worlds=testbed.label(samples))
    else:
        batch = draw(testbed, circuit, cfg, args.n)

    metrics = summarize(batch, target)
    frequencies = label_frequencies(batch)

    generator = ReportGenerator()
    outputs = []
    sweep_rows = []
    if args.sweep:
        weights = [float(w) for w in args.sweep.split(',') if w.strip()]
        for w in weights:
            swept = summarize(draw(testbed, circuit, sampler_config(args, config, w=w), args.n), target)
            sweep_rows.append({'w': w, 'conformity': swept['conformity'],
                               'joint_entropy_bits': swept['joint_entropy_bits']})
        outputs.append(generator.write_sweep_csv(sweep_rows, args.out_dir))

    run = run_description(args, model, testbed, f, circuit, cfg)
    query_text = run['query'] or run['circuit']
    outputs.append(generator.generate_report(
        metrics, args.out_dir, query=query_text, frequencies=frequencies, sweep_rows=sweep_rows,
        run={'model': model.name, 'testbed': testbed.name, 'n': len(batch), 'seed': args.seed,
             'w': cfg.w, 'samples': args.samples or 'generated'}))
    manifest_path = generator.write_manifest(args.out_dir, 'report', config, run,
                                             metrics=dict(metrics, sweep=sweep_rows), outputs=outputs)

    print(metrics_markdown(metrics, frequencies))
    for path in outputs + [manifest_path]:
        print(f"wrote: {path}")
    return 0


def main(argv=None):
    """Main entry point"""
    args = parse_arguments(argv)

    try:
        config = load_config(args.config)
        setup_logging(config, args.verbose)
        logger.debug(f"Running '{args.command}' with {vars(args)}")

        model, testbed_config = load_model(args.model)

        if args.command == 'compile':
            return cmd_compile(args, config, model)
        if args.command == 'verify':
            return cmd_verify(args, config, model, testbed_config)

        testbed = get_testbed(args.testbed, model, testbed_config)
        if args.command == 'eval':
            return cmd_eval(args, config, model, testbed)
        if args.command == 'sample':
            return cmd_sample(args, config, model, testbed)
        return cmd_report(args, config, model, testbed)

    except LogiGuideError as e:
        logger.debug(f"{args.command} failed", exc_info=True)
        print(e.one_line(), file=sys.stderr)
        return 1

    except FileNotFoundError as e:
        print(error_line('not_found', e), file=sys.stderr)
        return 1

    except ValueError as e:
        print(error_line('invalid_value', e), file=sys.stderr)
        return 1

    except Exception as e:
        logger.error(f"Error in LogiGuide: {str(e)}", exc_info=True)
        print(error_line('internal', e), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
