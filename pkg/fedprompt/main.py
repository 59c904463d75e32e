"""Command-line entry point for the federated prompt-tuning lab."""
import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from fedprompt import __version__
from fedprompt.core.config import format_config, get_settings, load_config
from fedprompt.core.errors import (
    EXIT_CONFIG,
    EXIT_DATA,
    EXIT_MISSING_FILE,
    EXIT_NUMERICAL,
    EXIT_OK,
    EXIT_PROTOCOL,
    EXIT_TRANSPORT,
    EXIT_UNEXPECTED,
    EXIT_USAGE,
    ConfigError,
    FedPromptError,
    InvalidInput,
)
from fedprompt.schemas.config import AttackSpec, FedConfig
from fedprompt.services import data_service, fed_service, metrics_service, model_service

logger = logging.getLogger(__name__)

ROUND_LOG = "rounds.jsonl"
PROMPT_FILE = "prompt.fppt"
CONFIG_ECHO = "config.cfg"
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

EXIT_CODES_HELP = f"""\
exit codes:
  {EXIT_OK}  success
  {EXIT_UNEXPECTED}  unexpected error
  {EXIT_USAGE}  bad command-line usage
  {EXIT_MISSING_FILE}  input file not found
  {EXIT_CONFIG}  malformed config file
  {EXIT_PROTOCOL}  shape or protocol mismatch
  {EXIT_DATA}  bad dataset, label, partition or poison request
  {EXIT_NUMERICAL}  numerical divergence
  {EXIT_TRANSPORT}  network failure or timeout
"""


def _cmd_gen_data(args: argparse.Namespace) -> int:
    dataset = data_service.gen_synthetic(
        args.seed, args.n, args.words, contamination=args.contamination
    )
    data_service.save_jsonl(dataset, args.out)
    print(f"wrote {len(dataset)} examples to {args.out} (label counts {dataset.label_counts()})")
    return EXIT_OK


def _cmd_partition(args: argparse.Namespace) -> int:
    dataset = data_service.load_jsonl(args.data)
    if args.alpha is None:
        partition = data_service.split_iid(dataset, args.clients, args.seed)
    else:
        partition = data_service.split_dirichlet(dataset, args.clients, args.alpha, args.seed)
    data_service.save_partition(partition, args.out, args.alpha, args.seed)
    print(f"wrote {partition.num_clients} shards to {args.out}: sizes {partition.counts}")
    return EXIT_OK


def _cmd_poison_preview(args: argparse.Namespace) -> int:
    dataset = data_service.load_jsonl(args.data)
    shard = dataset
    if args.manifest:
        shard = data_service.load_partition(args.manifest, len(dataset)).shard(dataset, args.client)
    spec = AttackSpec(trigger=args.trigger, target_label=args.target, poison_rate=args.rate)
    poisoned = data_service.poison_shard(shard, spec, args.seed)

    print(f"before: {len(shard)} examples")
    for ex in shard.examples[:args.limit]:
        print(f"  [{ex.label}] {ex.text}")
    added = poisoned.examples[len(shard):]
    print(f"after: {len(poisoned)} examples ({len(added)} poisoned copies appended)")
    for ex in added[:args.limit]:
        print(f"  [{ex.label}] {ex.text}")
    return EXIT_OK


def _write_outputs(result: fed_service.TrainingResult, cfg: FedConfig, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / CONFIG_ECHO).write_text(format_config(cfg), encoding="utf-8")
    metrics_service.write_round_log(result.records, out_dir / ROUND_LOG)
    model_service.save_prompt(result.prompt, out_dir / PROMPT_FILE)
    logger.info(f"Wrote {out_dir / ROUND_LOG} and {out_dir / PROMPT_FILE}")


def _cmd_run(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    train, test, partition = fed_service.build_datasets(cfg)
    if args.centralized:
        result = fed_service.run_centralized(cfg, (train, test))
    else:
        result = fed_service.run_training(cfg, (train, test), partition)
    _write_outputs(result, cfg, Path(args.out_dir))
    last = result.records[-1]
    print(f"final acc={last.acc:.4f} asr={'-' if last.asr is None else f'{last.asr:.4f}'}")
    return EXIT_OK


def _cmd_serve(args: argparse.Namespace) -> int:
    from fedprompt.api.server import serve

    cfg = load_config(args.config)
    result = serve(cfg, args.host, args.port, round_timeout=args.timeout)
    _write_outputs(result, cfg, Path(args.out_dir))
    return EXIT_OK


def _cmd_client(args: argparse.Namespace) -> int:
    from fedprompt.api.client import connect_client

    rounds = connect_client(args.id, host=args.host, port=args.port)
    print(f"client {args.id} answered {rounds} rounds")
    return EXIT_OK


def _cmd_report(args: argparse.Namespace) -> int:
    records = metrics_service.read_round_log(args.log)
    if args.config:
        cfg = load_config(args.config)
        runtime = fed_service.build_runtime(cfg)
        prompt_params = float(runtime.initial_prompt.num_params)
        total_params = float(model_service.param_count(runtime.backbone)) + prompt_params
    elif args.prompt_params is not None and args.total_params is not None:
        prompt_params, total_params = args.prompt_params, args.total_params
    else:
        raise InvalidInput("report needs --config or both --prompt-params and --total-params")

    summary = metrics_service.summarize(records, prompt_params, total_params)
    if args.csv:
        metrics_service.write_csv(records, args.csv)
        logger.info(f"Wrote {len(records)} rows to {args.csv}")
    print(metrics_service.format_summary(summary))
    return EXIT_OK


def _non_negative_int(value: str) -> int:
    """argparse type for seeds and client ids."""
    try:
        n = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {value!r}") from None
    if n < 0:
        raise argparse.ArgumentTypeError(f"must be non-negative, got {n}")
    return n


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedprompt",
        description="Federated soft-prompt tuning against a frozen backbone.",
        epilog=EXIT_CODES_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write the synthetic sentiment task as JSONL", epilog=EXIT_CODES_HELP,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--words", type=int, default=12, help="words per text")
    p.add_argument("--contamination", type=float, default=0.1)
    p.add_argument("--seed", type=_non_negative_int, default=0)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("partition", help="split a JSONL dataset across clients", epilog=EXIT_CODES_HELP,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--data", required=True)
    p.add_argument("--clients", type=int, required=True)
    p.add_argument("--alpha", type=float, default=None, help="Dirichlet concentration; omit for IID")
    p.add_argument("--seed", type=_non_negative_int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_partition)

    p = sub.add_parser("poison-preview", help="show a shard before and after poisoning", epilog=EXIT_CODES_HELP,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--data", required=True)
    p.add_argument("--manifest", default=None)
    p.add_argument("--client", type=_non_negative_int, default=0, help="client id (shard index)")
    p.add_argument("--trigger", default="cf")
    p.add_argument("--target", type=int, default=0)
    p.add_argument("--rate", type=float, default=1.0, help="poison rate lambda")
    p.add_argument("--seed", type=_non_negative_int, default=0)
    p.add_argument("--limit", type=int, default=5)
    p.set_defaults(func=_cmd_poison_preview)

    p = sub.add_parser("run", help="run federated training in-process", epilog=EXIT_CODES_HELP,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", default="out")
    p.add_argument("--centralized", action="store_true", help="train on pooled data, no federation")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("serve", help="run the federation server", epilog=EXIT_CODES_HELP,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--config", required=True)
    p.add_argument("--host", default=None)
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--timeout", type=float, default=None, help="per-round timeout in seconds")
    p.add_argument("--out-dir", default="out")
    p.set_defaults(func=_cmd_serve)

    p = sub.add_parser("client", help="join a federation server", epilog=EXIT_CODES_HELP,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--id", type=_non_negative_int, required=True)
    p.add_argument("--host", default=None)
    p.add_argument("--port", type=int, default=None)
    p.set_defaults(func=_cmd_client)

    p = sub.add_parser("report", help="summarize a round log, optionally as CSV", epilog=EXIT_CODES_HELP,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--log", required=True)
    p.add_argument("--csv", default=None)
    p.add_argument("--config", default=None, help="derive parameter counts from the model config")
    p.add_argument("--prompt-params", type=float, default=None)
    p.add_argument("--total-params", type=float, default=None)
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        settings = get_settings()
    except ConfigError as e:
        logging.basicConfig(format=LOG_FORMAT)
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code
    logging.basicConfig(level=settings.LOG_LEVEL, format=LOG_FORMAT)
    try:
        return args.func(args)
    except FedPromptError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code
    except Exception as e:
        logger.exception("Unhandled exception: %s", e)
        return EXIT_UNEXPECTED


if __name__ == "__main__":
    sys.exit(main())
