"""Command line entry point.

    cragpipe run --task Task1 --input data.jsonl --output-dir runs/t1
    cragpipe compare-retrievers --task Task1 --input data.jsonl --sample-budget 500
    cragpipe curate --task Task2 --input data.jsonl --output-dir train/
    cragpipe serve-stubs --fixtures testdata/ --duration 60
    cragpipe segment page.html --max-segment-chars 2000

Every RunConfig field has a matching ``--flag``; flags override the JSON file
given with ``--config``, which overrides the built-in defaults. Endpoint URLs
may also come from CRAGPIPE_LLM_URL, CRAGPIPE_EMBED_URL, CRAGPIPE_CROSS_URL
and CRAGPIPE_KG_URL.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

from .config import ConfigError, RunConfig, load_config
from .corpus import load_dataset
from .errors import PipelineError
from .segmenter import DEFAULT_MAX_CHARS, segment_html

log = logging.getLogger("cragpipe")

# fields handled by hand below
_SPECIAL = {"model_ids", "miss_phrases", "task", "input_path"}


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with RunConfig keys")
    p.add_argument("--task", help="Task1, Task2 or Task3")
    p.add_argument("--input", dest="input_path", help="line-delimited JSON dataset")
    p.add_argument(
        "--model-id",
        action="append",
        default=None,
        metavar="ADAPTER=MODEL",
        help="map an adapter name to the served model id (repeatable)",
    )
    p.add_argument("--miss-phrase", action="append", default=None, help="phrase treated as a missing answer")
    for f in dataclasses.fields(RunConfig):
        if f.name in _SPECIAL:
            continue
        flag = "--" + f.name.replace("_", "-")
        default = f.default
        if isinstance(default, bool):
            p.add_argument(flag, dest=f.name, action=argparse.BooleanOptionalAction, default=None)
        elif isinstance(default, int):
            p.add_argument(flag, dest=f.name, type=int, default=None)
        else:
            p.add_argument(flag, dest=f.name, default=None)


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    overrides = {
        f.name: getattr(args, f.name)
        for f in dataclasses.fields(RunConfig)
        if f.name not in ("model_ids", "miss_phrases") and getattr(args, f.name, None) is not None
    }
    if args.model_id:
        pairs = {}
        for item in args.model_id:
            adapter, sep, model = item.partition("=")
            if not sep:
                raise ConfigError(f"--model-id expects ADAPTER=MODEL, got {item!r}")
            pairs[adapter] = model
        overrides["model_ids"] = pairs
    if args.miss_phrase:
        overrides["miss_phrases"] = tuple(args.miss_phrase)
    return load_config(args.config, overrides)


def _cmd_run(args) -> int:
    from .pipeline import run_pipeline

    config = _config_from_args(args)
    summary = run_pipeline(config, save_prompts=args.save_prompts)
    print(f"answers: {len(summary.results)}  unevaluable: {summary.unevaluable}  skipped lines: {summary.skipped_lines}")
    if "table" in summary.paths:
        print(summary.paths["table"].read_text(encoding="utf-8"), end="")
    print(f"outputs in {config.output_dir}")
    return 0


def _cmd_compare(args) -> int:
    from .pipeline import compare_retrievers

    config = _config_from_args(args)
    comparison = compare_retrievers(config, args.sample_budget)
    print(f"judge mode: {config.judge_mode.value}  samples: {len(comparison.sample_ids)}")
    print(comparison.table, end="")
    return 0


def _cmd_curate(args) -> int:
    from .curation import run_curation

    config = _config_from_args(args)
    summary = run_curation(config)
    for name in sorted(summary.counts):
        print(f"{name}: {summary.counts[name]}")
    print(f"total: {sum(summary.counts.values())}  skipped (no ground truth): {summary.skipped}")
    for key, path in sorted(summary.paths.items()):
        print(f"{key}: {path}")
    return 0


def _cmd_serve(args) -> int:
    from .testkit.fixtures import suite_from_dir

    ports = {"llm": args.llm_port, "embed": args.embed_port, "cross": args.cross_port, "kg": args.kg_port}
    suite = suite_from_dir(args.fixtures, seed=args.seed, ports=ports).start()
    try:
        print(json.dumps(suite.endpoints), flush=True)
        end = time.monotonic() + args.duration if args.duration else None
        while end is None or time.monotonic() < end:
            time.sleep(0.1)
    except KeyboardInterrupt:
        pass
    finally:
        suite.stop()
    return 0


def _cmd_segment(args) -> int:
    path = Path(args.path)
    docs: list[tuple[str, int, str]] = []
    if path.suffix == ".jsonl":
        for sample in load_dataset(path).samples:
            if args.sample_id and sample.id != args.sample_id:
                continue
            docs.extend((sample.id, i, r.page_html) for i, r in enumerate(sample.search_results))
    else:
        docs.append(("", 0, path.read_bytes()))
    for sample_id, doc_index, html in docs:
        for seg in segment_html(html, doc_index=doc_index, max_chars=args.max_segment_chars):
            row = {"doc_index": seg.doc_index, "node_path": list(seg.node_path), "char_len": seg.char_len, "text": seg.text}
            if sample_id:
                row = {"sample_id": sample_id, **row}
            print(json.dumps(row, ensure_ascii=False))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cragpipe", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="answer and score a dataset")
    _add_config_flags(run)
    run.add_argument("--save-prompts", action="store_true", help="also write prompts.jsonl")
    run.set_defaults(func=_cmd_run)

    cmp_ = sub.add_parser("compare-retrievers", help="score every ranking strategy on one subset")
    _add_config_flags(cmp_)
    cmp_.set_defaults(func=_cmd_compare)

    cur = sub.add_parser("curate", help="emit adapter training files")
    _add_config_flags(cur)
    cur.set_defaults(func=_cmd_curate)

    serve = sub.add_parser("serve-stubs", help="run the deterministic stub services")
    serve.add_argument("--fixtures", default="testdata", help="fixture directory")
    serve.add_argument("--seed", type=int, default=0)
    serve.add_argument("--duration", type=float, default=0.0, help="seconds to serve (0 = until interrupted)")
    for name, port in (("llm", 8000), ("embed", 8001), ("cross", 8002), ("kg", 8003)):
        serve.add_argument(f"--{name}-port", type=int, default=port)
    serve.set_defaults(func=_cmd_serve)

    seg = sub.add_parser("segment", help="dump segments of an HTML file or dataset")
    seg.add_argument("path")
    seg.add_argument("--sample-id")
    seg.add_argument("--max-segment-chars", type=int, default=DEFAULT_MAX_CHARS)
    seg.set_defaults(func=_cmd_segment)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (ConfigError, PipelineError, OSError) as exc:
        print(f"cragpipe: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
