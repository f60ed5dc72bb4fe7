#!/usr/bin/env python3
"""
seriestable - zero-shot multivariate time-series classification through table-encoded
prompts, retrieved neighbors and a voted multi-path language-model ensemble.
"""

import argparse
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

import yaml

# Add the current directory to Python path
sys.path.insert(0, str(Path(__file__).parent))

from core.application import SeriesTableApplication
from core.config import CONFIG_KEYS, resolve_run_config
from core.encoding.table_encoder import FORMAT_NAMES
from services.evaluation_service import mean_ranks
from utils.error_handler import ConfigurationError, TableFormatError, handle_errors

# Flag destination -> config key
FLAG_KEYS = {
    'data_dir': 'data_dir',
    'card_dir': 'card_dir',
    'metric': 'metric',
    'dtw_window': 'dtw_window',
    'k': 'k',
    'normalize': 'normalize',
    'negatives': 'negatives.count',
    'precision': 'precision',
    'temps': 'ensemble.temperatures',
    'backend': 'backend.type',
    'model': 'backend.model',
    'magic_words': 'magic_words',
    'seed': 'seed',
    'parallelism': 'parallelism',
    'out': 'out',
    'resume': 'resume',
    'allow_placeholder_card': 'allow_placeholder_card',
    'allow_zero_shot': 'allow_zero_shot',
    'dump_prompts': 'dump_prompts',
    'log_level': 'logging.level',
    'log_file': 'logging.file',
}


def parse_temperatures(text: str) -> List[float]:
    try:
        return [float(t) for t in text.split(',') if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"--temps expects comma-separated numbers, got '{text}'")


def config_epilog() -> str:
    width = max(len(key) for key in CONFIG_KEYS)
    lines = ["config file keys (YAML or JSON, dot = nesting):"]
    lines += [f"  {key.ljust(width)}  {text}" for key, text in CONFIG_KEYS.items()]
    lines.append("")
    lines.append("environment: TT_API_URL, TT_API_KEY, TT_MODEL")
    lines.append("precedence: flags > environment > config file > dataset profile > defaults")
    return "\n".join(lines)


def _add_run_options(parser: argparse.ArgumentParser, format_help: str):
    parser.add_argument('--dataset', help='Dataset abbreviation (AF, AWR, CR, ...) or UEA problem name')
    parser.add_argument('--config', help='Config file (YAML or JSON)')
    parser.add_argument('--data-dir', dest='data_dir', help='Directory with the .ts files')
    parser.add_argument('--card-dir', dest='card_dir', help='Fallback directory for dataset cards')
    parser.add_argument('--metric', help='ed, sed, man or dtw')
    parser.add_argument('--dtw-window', dest='dtw_window', type=int, help='Sakoe-Chiba radius for dtw')
    parser.add_argument('--k', type=int, help='Nearest-neighbor examples per prompt')
    parser.add_argument('--normalize', action='store_true', default=None,
                        help='z-normalize series before retrieval')
    parser.add_argument('--negatives', type=int, help='Contrastive negatives per prompt')
    parser.add_argument('--format', help=format_help)
    parser.add_argument('--precision', type=int, help='Decimal places in serialized numbers')
    parser.add_argument('--temps', type=parse_temperatures, help='Comma-separated temperatures, one path each')
    parser.add_argument('--backend', choices=['mock', 'http'], help='Completion backend')
    parser.add_argument('--model', help='Model id for the http backend')
    parser.add_argument('--magic-words', dest='magic_words', action='store_true', default=None,
                        help='Append the incentive sentence to every prompt')
    parser.add_argument('--seed', type=int, help='Global seed')
    parser.add_argument('--parallelism', type=int, help='Samples classified concurrently')
    parser.add_argument('--out', help='Results root directory')
    parser.add_argument('--resume', action='store_true', default=None, help='Resume an interrupted run')
    parser.add_argument('--allow-placeholder-card', dest='allow_placeholder_card', action='store_true',
                        default=None, help='Use generic context text when no card exists')
    parser.add_argument('--allow-zero-shot', dest='allow_zero_shot', action='store_true', default=None,
                        help='Permit --k 0 with the mock backend')
    parser.add_argument('--dump-prompts', dest='dump_prompts', action='store_true', default=None,
                        help='Write every rendered prompt under prompts/')
    parser.add_argument('--log-level', dest='log_level', help='DEBUG, INFO, WARNING or ERROR')
    parser.add_argument('--log-file', dest='log_file', help="Log file ('' disables)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='seriestable',
        description='Zero-shot multivariate time-series classification with table-encoded prompts',
        epilog=config_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest='command', required=True)

    classify = sub.add_parser('classify', help='Classify every test sample and write records and a report',
                              epilog=config_epilog(), formatter_class=argparse.RawDescriptionHelpFormatter)
    _add_run_options(classify, 'dfloader, markdown, json or html')
    classify.set_defaults(func=cmd_classify)

    encode = sub.add_parser('encode', help='Serialize samples and estimate their token counts')
    _add_run_options(encode, f"{', '.join(FORMAT_NAMES)} or all")
    encode.add_argument('--sample', type=int, nargs='+', default=[0], help='Sample ids')
    encode.add_argument('--split', choices=['test', 'train'], default='test')
    encode.add_argument('--output-dir', dest='output_dir', help='Write <sample>.<format>.txt files here')
    encode.set_defaults(func=cmd_encode)

    dump = sub.add_parser('dump-prompt', help='Write the rendered prompt of a test sample without a backend')
    _add_run_options(dump, 'dfloader, markdown, json or html')
    dump.add_argument('--sample', type=int, default=0, help='Test sample id')
    dump.add_argument('--output', help='Output file (default: stdout)')
    dump.set_defaults(func=cmd_dump_prompt)

    rank = sub.add_parser('rank', help='Mean rank per method from a method -> dataset -> accuracy file')
    rank.add_argument('results', help='YAML or JSON results file')
    rank.set_defaults(func=cmd_rank)
    return parser


def flags_from_args(args: argparse.Namespace, include_format: bool = True) -> Dict[str, Any]:
    flags = {key: getattr(args, dest, None) for dest, key in FLAG_KEYS.items()}
    if include_format:
        flags['format'] = getattr(args, 'format', None)
    return flags


def make_app(args: argparse.Namespace, include_format: bool = True) -> SeriesTableApplication:
    config = resolve_run_config(args.dataset, args.config, flags_from_args(args, include_format))
    return SeriesTableApplication(config)


@handle_errors(fallback_return=1)
def cmd_classify(args: argparse.Namespace) -> int:
    """Run the harness and print the summary"""
    app = make_app(args)
    _, report = app.classify()
    print(report.summary())
    print(f"accuracy: {report.accuracy:.4f}")
    print(f"macro_f1: {report.macro_f1:.4f}")
    print(f"unparsed: {report.unparsed}")
    if report.reference_accuracy is not None:
        print(f"reference: {report.reference_accuracy:.4f} (delta {report.reference_delta:+.4f})")
    print(f"results: {app.run_dir}")
    return 0


@handle_errors(fallback_return=1)
def cmd_encode(args: argparse.Namespace) -> int:
    """Serialize samples in one or all formats"""
    requested = (args.format or 'dfloader').lower()
    if requested == 'all':
        formats = list(FORMAT_NAMES)
    elif requested in FORMAT_NAMES:
        formats = [requested]
    else:
        raise TableFormatError(f"Unknown table format '{args.format}'. Valid formats: {', '.join(FORMAT_NAMES)}, all")

    app = make_app(args, include_format=False)
    output_dir = Path(args.output_dir) if args.output_dir else None
    for sample_id in args.sample:
        encodings = app.encode(sample_id, formats, split=args.split)
        for fmt, text in encodings.items():
            if output_dir is not None:
                output_dir.mkdir(parents=True, exist_ok=True)
                (output_dir / f"{sample_id}.{fmt}.txt").write_text(text, encoding='utf-8')
            else:
                if len(formats) > 1:
                    print(f"# sample {sample_id} {fmt}")
                print(text)
        print(app.token_line(encodings))
    return 0


@handle_errors(fallback_return=1)
def cmd_dump_prompt(args: argparse.Namespace) -> int:
    """Render one prompt to a file or stdout"""
    app = make_app(args)
    rendered = app.render_prompt(args.sample)
    if args.output:
        path = Path(args.output)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(rendered, encoding='utf-8')
    else:
        sys.stdout.write(rendered + "\n")
    return 0


@handle_errors(fallback_return=1)
def cmd_rank(args: argparse.Namespace) -> int:
    """Print mean ranks, best first"""
    with open(args.results, 'r', encoding='utf-8') as f:
        table = yaml.safe_load(f)
    if not isinstance(table, dict):
        raise ConfigurationError(f"{args.results}: expected a mapping method -> dataset -> accuracy")
    ranks = mean_ranks(table)
    for method, rank in sorted(ranks.items(), key=lambda item: (item[1], item[0])):
        print(f"{method}: {rank:.4f}")
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point"""
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
