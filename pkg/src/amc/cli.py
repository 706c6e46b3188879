"""Command-line entry points for the pipeline and the game server.

Exit codes: 0 success, 1 internal error, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import traceback
from fractions import Fraction
from pathlib import Path

from . import evaluation
from .benchmark import build_benchmark, load_benchmark, load_genres, write_benchmark
from .encoder import Vocabulary
from .errors import AmcError
from .learners import TrainConfig, build_learner, few_shot_evaluate
from .optim import load_checkpoint, save_checkpoint
from .parser import movie_to_json, parse_script, scenes_from_json, split_scenes


class UsageError(Exception):
    pass


def _data_root() -> Path:
    return Path(os.environ.get("AMC_DATA_DIR", "amc_data"))


def cmd_parse(args) -> int:
    in_dir = Path(args.in_dir)
    if not in_dir.is_dir():
        raise UsageError(f"--in {in_dir} is not a directory")
    out_path = Path(args.out)
    try:
        out = open(out_path, "w", encoding="utf-8", newline="\n")
    except OSError as exc:
        raise UsageError(f"cannot write {out_path}: {exc}") from exc
    n = 0
    with out:
        for path in sorted(in_dir.iterdir()):
            if path.is_dir() or path.suffix.lower() != ".txt":
                continue
            try:
                text = path.read_text(encoding="utf-8", errors="replace")
                elements = parse_script(text)
                scenes = split_scenes(elements)
            except (OSError, AmcError) as exc:
                print(f"warning: skipping {path.name}: {exc}", file=sys.stderr)
                continue
            out.write(json.dumps(movie_to_json(path.stem, elements, scenes), sort_keys=True))
            out.write("\n")
            n += 1
    print(f"parsed {n} scripts -> {out_path}")
    return 0


def cmd_build(args) -> int:
    parsed_path = Path(args.parsed)
    if not parsed_path.is_file():
        raise UsageError(f"--parsed {parsed_path} not found")
    try:
        split_spec = tuple(int(x) for x in args.split.split(","))
        if len(split_spec) != 3:
            raise ValueError
    except ValueError:
        raise UsageError(f"--split must be three comma-separated counts, got {args.split!r}")
    genres = load_genres(args.genres) if args.genres else {}
    movies = []
    with open(parsed_path, encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            obj = json.loads(line)
            title = obj["title"]
            movies.append((title, genres.get(title, []), scenes_from_json(obj)))
    try:
        bench = build_benchmark(
            movies, split_spec, args.seed, Fraction(str(args.train_frac)).limit_denominator(1000)
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    write_benchmark(bench, args.out, genres={m: g for m, g, _ in movies})
    _print_stats(bench.stats)
    return 0


def _print_stats(stats: dict) -> None:
    cols = ("movies", "characters", "scenes", "train_scenes", "train_instances",
            "test_scenes", "test_instances")
    print(f"{'split':<8}" + "".join(f"{c:>17}" for c in cols))
    for split in ("train", "dev", "test"):
        row = stats[split]
        print(f"{split:<8}" + "".join(f"{row[c]:>17}" for c in cols))
    for split in ("train", "dev", "test"):
        mean = stats[split]["mean_train_instances_per_character"]
        print(f"{split}: mean training instances per character = {mean:.2f}")


def cmd_train(args) -> int:
    cfg_path = Path(args.config)
    if not cfg_path.is_file():
        raise UsageError(f"--config {cfg_path} not found")
    try:
        cfg = TrainConfig.from_file(cfg_path)
    except ValueError as exc:
        raise UsageError(f"bad config: {exc}") from exc
    if args.method:
        cfg.method = args.method
        cfg.validate()
    bench = load_benchmark(args.benchmark or _data_root() / "benchmark")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    vocab = Vocabulary.from_tasks(bench.train_tasks)
    vocab.save(out_dir / "vocab.txt")
    learner = build_learner(cfg.method, vocab, cfg, bench)
    if cfg.init_ckpt:
        learner.load_encoder_from(load_checkpoint(cfg.init_ckpt))
    history = learner.train(bench)

    save_checkpoint(out_dir / "checkpoint.amc", learner.checkpoint_arrays())
    with open(out_dir / "config.json", "w", encoding="utf-8", newline="\n") as f:
        json.dump(cfg.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
    with open(out_dir / "metrics.jsonl", "w", encoding="utf-8", newline="\n") as f:
        for row in history:
            f.write(json.dumps(row, sort_keys=True))
            f.write("\n")
    if history:
        best = max(history, key=lambda r: r["dev_accuracy"])
        print(f"trained {cfg.method}: best dev accuracy {best['dev_accuracy']:.3f} "
              f"at epoch {best['epoch']} ({len(history)} epochs)")
    return 0


def cmd_eval(args) -> int:
    ckpt_path = Path(args.ckpt)
    if not ckpt_path.is_file():
        raise UsageError(f"--ckpt {ckpt_path} not found")
    run_dir = ckpt_path.parent
    try:
        with open(run_dir / "config.json", encoding="utf-8") as f:
            cfg = TrainConfig(**json.load(f))
        vocab = Vocabulary.load(run_dir / "vocab.txt")
    except OSError as exc:
        raise UsageError(f"checkpoint sidecars missing next to {ckpt_path}: {exc}") from exc
    bench = load_benchmark(args.benchmark or _data_root() / "benchmark")
    tasks = [t for t in bench.tasks_for(args.split) if t.test_instances]
    if not tasks:
        raise UsageError(f"split {args.split!r} has no test instances to evaluate")

    learner = build_learner(cfg.method, vocab, cfg, bench)
    learner.params.load_arrays(load_checkpoint(ckpt_path))
    predictions = []
    for task in tasks:
        preds, _ = few_shot_evaluate(learner, task)
        predictions.extend(preds)

    keys = {"genre": ["genre"], "speakers": ["n_speakers"]}.get(args.by, ["genre", "n_speakers"])
    reports = [evaluation.decompose(predictions, key, tasks) for key in keys]
    extra = {
        "method": cfg.method,
        "split": args.split,
        "n_instances": len(predictions),
        "random_baseline": float(evaluation.random_baseline(tasks, seed=cfg.seed)),
        "majority_baseline": float(evaluation.majority_baseline(tasks)),
    }
    payload = evaluation.report_to_json(reports, extra)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as f:
            json.dump(payload, f, indent=2, sort_keys=True)
            f.write("\n")
        evaluation.dump_predictions(Path(args.out).with_suffix(".predictions.jsonl"), predictions)
    print(evaluation.format_report(reports, title=f"{cfg.method} on {args.split}"))
    print(f"random baseline:   {100 * extra['random_baseline']:.1f}")
    print(f"majority baseline: {100 * extra['majority_baseline']:.1f}")
    return 0


def cmd_serve(args) -> int:
    from .server import create_server

    bench_dir = Path(args.benchmark or _data_root() / "benchmark")
    if not (bench_dir / "manifest.json").is_file():
        raise UsageError(f"no benchmark at {bench_dir}")
    movies = args.movies.split(",") if args.movies else None
    try:
        server = create_server(
            bench_dir, port=args.port, movies=movies,
            ui_dir=args.ui, data_dir=args.data_dir or _data_root(),
        )
    except KeyError as exc:
        raise UsageError(str(exc)) from exc
    host, port = server.server_address[:2]
    print(f"serving on http://{host}:{port}/ (ctrl-c to stop)")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


def cmd_fixtures(args) -> int:
    from .fixtures_data import fixtures_dir

    print(fixtures_dir())
    return 0


def build_arg_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="amc", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("parse", help="parse raw scripts to JSONL")
    sp.add_argument("--in", dest="in_dir", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_parse)

    sp = sub.add_parser("build", help="build the benchmark directory")
    sp.add_argument("--parsed", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--train-frac", type=float, default=0.6)
    sp.add_argument("--split", default="807,100,100")
    sp.add_argument("--genres", default="")
    sp.set_defaults(func=cmd_build)

    sp = sub.add_parser("train", help="train a learner")
    sp.add_argument("--method", choices=["mtl", "proto", "leopard"], default="")
    sp.add_argument("--config", required=True)
    sp.add_argument("--benchmark", default="")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--benchmark", default="")
    sp.add_argument("--split", choices=["dev", "test"], required=True)
    sp.add_argument("--by", choices=["genre", "speakers", "all"], default="all")
    sp.add_argument("--out", default="")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("serve", help="serve the human-study guessing game")
    sp.add_argument("--benchmark", default="")
    sp.add_argument("--port", type=int, default=8765)
    sp.add_argument("--movies", default="")
    sp.add_argument("--ui", default="")
    sp.add_argument("--data-dir", default="")
    sp.set_defaults(func=cmd_serve)

    sp = sub.add_parser("fixtures", help="print the bundled fixture corpus path")
    sp.set_defaults(func=cmd_fixtures)
    return p


def main(argv=None) -> int:
    parser = build_arg_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception:
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
